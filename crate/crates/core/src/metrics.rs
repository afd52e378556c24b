//! Generation-quality metrics: COV, MMD, JSD, Novel, Unique and PV.
//!
//! COV and MMD compare sets of point clouds under the chamfer distance
//! (mean squared nearest-neighbour distance, summed over both directions).
//! JSD compares the occupancy histograms of the pooled points of each set.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec;
use crate::geometry::{render_solid, sample_point_cloud, PointCloud, RenderConfig, Segments};
use crate::mask::infill;
use crate::model::ModelDigest;

/// Reported values of MMD and JSD are multiplied by this.
pub const REPORT_SCALE: f64 = 100.0;
pub const DEFAULT_JSD_BINS: usize = 28;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("{0} has no renderable models")]
    NothingRendered(&'static str),
    #[error("predictions ({predictions}) and contexts ({contexts}) differ in length")]
    LengthMismatch { predictions: usize, contexts: usize },
}

fn sq_dist(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Exact nearest-neighbour search over a uniform grid of buckets.
///
/// Candidate distances are computed with the same expression as a brute-force
/// scan, so the minimum found is bit-identical to it.
pub struct NearestNeighbors<'a> {
    points: &'a [Point3<f64>],
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<u32>>,
}

impl<'a> NearestNeighbors<'a> {
    pub fn new(points: &'a [Point3<f64>]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-12);
        // About two points per occupied cell for a surface-like cloud.
        let per_axis = ((points.len() as f64 / 2.0).sqrt().ceil() as usize).clamp(1, 64);
        let cell = extent / per_axis as f64;
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).floor() as usize + 1).min(per_axis + 1));
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut nn = Self { points, origin: lo, cell, dims, buckets: Vec::new() };
        for (i, p) in points.iter().enumerate() {
            let c = nn.cell_of(p);
            buckets[nn.flat(c)].push(i as u32);
        }
        nn.buckets = buckets;
        nn
    }

    fn cell_of(&self, p: &Point3<f64>) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let v = ((p[a] - self.origin[a]) / self.cell).floor();
            v.clamp(0.0, (self.dims[a] - 1) as f64) as usize
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Squared distance from `q` to its nearest point.
    pub fn nearest_sq(&self, q: &Point3<f64>) -> f64 {
        let center = self.cell_of(q);
        let mut best = f64::INFINITY;
        let max_ring = *self.dims.iter().max().unwrap_or(&1);
        for ring in 0..=max_ring {
            let lo = center.map(|c| c.saturating_sub(ring));
            let hi = [0, 1, 2].map(|a| (center[a] + ring).min(self.dims[a] - 1));
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let on_shell = i.abs_diff(center[0]) == ring
                            || j.abs_diff(center[1]) == ring
                            || k.abs_diff(center[2]) == ring;
                        if !on_shell {
                            continue;
                        }
                        for &idx in &self.buckets[self.flat([i, j, k])] {
                            let d = sq_dist(q, &self.points[idx as usize]);
                            if d < best {
                                best = d;
                            }
                        }
                    }
                }
            }
            // Anything outside the searched block is at least this far away.
            let mut gap = f64::INFINITY;
            let mut covers_all = true;
            for a in 0..3 {
                if lo[a] > 0 {
                    covers_all = false;
                    gap = gap.min(q[a] - (self.origin[a] + lo[a] as f64 * self.cell));
                }
                if hi[a] < self.dims[a] - 1 {
                    covers_all = false;
                    gap = gap.min(self.origin[a] + (hi[a] + 1) as f64 * self.cell - q[a]);
                }
            }
            if covers_all || (gap > 0.0 && gap * gap > best) {
                break;
            }
        }
        best
    }
}

fn directed_mean(from: &PointCloud, to: &PointCloud) -> f64 {
    let index = NearestNeighbors::new(&to.points);
    let sum: f64 = from.points.iter().map(|p| index.nearest_sq(p)).sum();
    sum / from.len() as f64
}

/// Symmetric chamfer distance with squared distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    Ok(directed_mean(a, b) + directed_mean(b, a))
}

/// `matrix[g][r]` = chamfer(gen[g], ref[r]), computed in parallel.
pub fn chamfer_matrix(gen: &[PointCloud], refs: &[PointCloud]) -> Result<Vec<Vec<f64>>, MetricError> {
    if gen.is_empty() {
        return Err(MetricError::EmptySet("generated"));
    }
    if refs.is_empty() {
        return Err(MetricError::EmptySet("reference"));
    }
    if gen.iter().chain(refs).any(PointCloud::is_empty) {
        return Err(MetricError::EmptyCloud);
    }
    let gen_idx: Vec<NearestNeighbors> = gen.iter().map(|c| NearestNeighbors::new(&c.points)).collect();
    let ref_idx: Vec<NearestNeighbors> = refs.iter().map(|c| NearestNeighbors::new(&c.points)).collect();
    Ok(gen
        .par_iter()
        .enumerate()
        .map(|(g, gc)| {
            refs.iter()
                .enumerate()
                .map(|(r, rc)| {
                    let fwd: f64 = gc.points.iter().map(|p| ref_idx[r].nearest_sq(p)).sum::<f64>() / gc.len() as f64;
                    let back: f64 = rc.points.iter().map(|p| gen_idx[g].nearest_sq(p)).sum::<f64>() / rc.len() as f64;
                    fwd + back
                })
                .collect()
        })
        .collect())
}

/// Fraction of references that are the nearest reference of some generated
/// cloud; ties go to the lowest reference index.
pub fn coverage_from_matrix(matrix: &[Vec<f64>], n_ref: usize) -> f64 {
    let mut covered = HashSet::new();
    for row in matrix {
        let mut best = 0;
        for (r, &d) in row.iter().enumerate() {
            if d < row[best] {
                best = r;
            }
        }
        covered.insert(best);
    }
    covered.len() as f64 / n_ref as f64
}

/// Mean over references of the minimum chamfer distance to any generated
/// cloud (unscaled).
pub fn mmd_from_matrix(matrix: &[Vec<f64>], n_ref: usize) -> f64 {
    let sum: f64 = (0..n_ref)
        .map(|r| matrix.iter().map(|row| row[r]).fold(f64::INFINITY, f64::min))
        .sum();
    sum / n_ref as f64
}

pub fn coverage(gen: &[PointCloud], refs: &[PointCloud]) -> Result<f64, MetricError> {
    Ok(coverage_from_matrix(&chamfer_matrix(gen, refs)?, refs.len()))
}

/// Unscaled MMD; multiply by [`REPORT_SCALE`] for reporting.
pub fn mmd(gen: &[PointCloud], refs: &[PointCloud]) -> Result<f64, MetricError> {
    Ok(mmd_from_matrix(&chamfer_matrix(gen, refs)?, refs.len()))
}

/// Normalized histogram of all points of a set over `bins^3` cells of the
/// cube `[-0.5, 0.5]^3`; points outside are clamped to the border cells.
pub fn occupancy_histogram(set: &[PointCloud], bins: usize) -> Vec<f64> {
    let mut hist = vec![0.0; bins.pow(3)];
    let mut total = 0usize;
    let bin = |v: f64| (((v + 0.5) * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    for cloud in set {
        for p in &cloud.points {
            hist[(bin(p.z) * bins + bin(p.y)) * bins + bin(p.x)] += 1.0;
            total += 1;
        }
    }
    if total > 0 {
        hist.iter_mut().for_each(|h| *h /= total as f64);
    }
    hist
}

/// Jensen-Shannon divergence of two distributions, natural log. Rounding
/// can push the sum past its bounds, so it is clamped to `[0, ln 2]`.
pub fn jsd_of(p: &[f64], q: &[f64]) -> f64 {
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let sum: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = (a + b) / 2.0;
            term(a, m) + term(b, m)
        })
        .sum();
    (sum / 2.0).clamp(0.0, std::f64::consts::LN_2)
}

/// Unscaled JSD between the pooled occupancy histograms of two sets.
pub fn jsd(gen: &[PointCloud], refs: &[PointCloud], bins: usize) -> Result<f64, MetricError> {
    if gen.is_empty() {
        return Err(MetricError::EmptySet("generated"));
    }
    if refs.is_empty() {
        return Err(MetricError::EmptySet("reference"));
    }
    Ok(jsd_of(&occupancy_histogram(gen, bins), &occupancy_histogram(refs, bins)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NovelUnique {
    pub novel: f64,
    pub unique: f64,
    /// Texts that failed to parse; excluded from both fractions.
    pub excluded: usize,
    pub counted: usize,
}

/// Novel: share of parsed texts whose digest is not in `train`. Unique:
/// share whose digest occurs exactly once among the parsed texts.
pub fn novel_unique<S: AsRef<str>>(gen: &[S], train: &HashSet<ModelDigest>) -> Result<NovelUnique, MetricError> {
    if gen.is_empty() {
        return Err(MetricError::EmptySet("generated"));
    }
    let digests: Vec<ModelDigest> = gen
        .iter()
        .filter_map(|t| codec::parse_str(t.as_ref()).ok())
        .map(|m| ModelDigest::of_canonical_text(codec::serialize(&m).expect("parsed").as_str()))
        .collect();
    let excluded = gen.len() - digests.len();
    if digests.is_empty() {
        return Ok(NovelUnique { novel: 0.0, unique: 0.0, excluded, counted: 0 });
    }
    let mut counts: HashMap<ModelDigest, usize> = HashMap::new();
    for d in &digests {
        *counts.entry(*d).or_default() += 1;
    }
    let n = digests.len() as f64;
    let novel = digests.iter().filter(|d| !train.contains(d)).count() as f64 / n;
    let unique = digests.iter().filter(|d| counts[d] == 1).count() as f64 / n;
    Ok(NovelUnique { novel, unique, excluded, counted: digests.len() })
}

/// Why a text or prediction does not count as valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invalidity {
    Infill,
    Parse,
    Geometry,
    ZeroThickness,
    EmptyOccupancy,
}

/// Checks that a full CAD text renders into a non-empty solid.
pub fn text_validity(text: &str, cfg: &RenderConfig) -> Result<(), Invalidity> {
    let model = codec::parse_str(text).map_err(|_| Invalidity::Parse)?;
    match render_solid(&model, cfg) {
        Ok(_) => Ok(()),
        Err(e) if e.is_zero_thickness() => Err(Invalidity::ZeroThickness),
        Err(crate::geometry::GeometryError::EmptySolid) => Err(Invalidity::EmptyOccupancy),
        Err(_) => Err(Invalidity::Geometry),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvReport {
    pub pv: f64,
    pub valid: usize,
    pub total: usize,
    pub failures: Vec<Option<Invalidity>>,
}

fn pv_report(failures: Vec<Option<Invalidity>>) -> PvReport {
    let total = failures.len();
    let valid = failures.iter().filter(|f| f.is_none()).count();
    let pv = if total == 0 { 0.0 } else { valid as f64 / total as f64 };
    PvReport { pv, valid, total, failures }
}

/// Prediction validity: infill each prediction into its masked context and
/// require the result to render into a non-empty solid.
pub fn pv<P: AsRef<str> + Sync, C: AsRef<str> + Sync>(
    predictions: &[P],
    contexts: &[C],
    cfg: &RenderConfig,
) -> Result<PvReport, MetricError> {
    if predictions.len() != contexts.len() {
        return Err(MetricError::LengthMismatch { predictions: predictions.len(), contexts: contexts.len() });
    }
    let failures = predictions
        .par_iter()
        .zip(contexts.par_iter())
        .map(|(p, c)| match infill(c.as_ref(), p.as_ref()) {
            Ok(text) => text_validity(text.as_str(), cfg).err(),
            Err(crate::mask::InfillError::InvalidPrediction(_)) => Some(Invalidity::Parse),
            Err(_) => Some(Invalidity::Infill),
        })
        .collect();
    Ok(pv_report(failures))
}

/// Validity of complete texts (no masks).
pub fn pv_texts<S: AsRef<str> + Sync>(texts: &[S], cfg: &RenderConfig) -> PvReport {
    pv_report(texts.par_iter().map(|t| text_validity(t.as_ref(), cfg).err()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub point_count: usize,
    /// Voxel resolution used to render models before sampling.
    pub resolution: usize,
    pub jsd_bins: usize,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            point_count: crate::geometry::DEFAULT_POINT_COUNT,
            resolution: crate::geometry::voxel::DEFAULT_RESOLUTION,
            jsd_bins: DEFAULT_JSD_BINS,
            seed: 0,
        }
    }
}

impl MetricsConfig {
    fn render(&self) -> RenderConfig {
        RenderConfig { resolution: self.resolution, segments: Segments::Auto }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cov: f64,
    /// Scaled by [`REPORT_SCALE`].
    pub mmd: f64,
    /// Scaled by [`REPORT_SCALE`].
    pub jsd: f64,
    pub novel: f64,
    pub unique: f64,
    pub pv: f64,
    pub n_gen: usize,
    pub n_ref: usize,
    pub gen_rendered: usize,
    pub ref_rendered: usize,
    pub gen_unparsed: usize,
    pub config: MetricsConfig,
}

impl MetricsReport {
    /// `key=value` lines, one per field.
    pub fn to_key_value(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        for (k, v) in [
            ("cov", self.cov.to_string()),
            ("mmd", self.mmd.to_string()),
            ("jsd", self.jsd.to_string()),
            ("novel", self.novel.to_string()),
            ("unique", self.unique.to_string()),
            ("pv", self.pv.to_string()),
            ("n_gen", self.n_gen.to_string()),
            ("n_ref", self.n_ref.to_string()),
            ("gen_rendered", self.gen_rendered.to_string()),
            ("ref_rendered", self.ref_rendered.to_string()),
            ("gen_unparsed", self.gen_unparsed.to_string()),
            ("point_count", c.point_count.to_string()),
            ("resolution", c.resolution.to_string()),
            ("jsd_bins", c.jsd_bins.to_string()),
            ("seed", c.seed.to_string()),
        ] {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn table(&self) -> String {
        format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n{:>7.1}% {:>8.3} {:>8.3} {:>7.1}% {:>7.1}% {:>7.1}%\n",
            "COV", "MMD", "JSD", "Novel", "Unique", "PV",
            self.cov * 100.0, self.mmd, self.jsd, self.novel * 100.0, self.unique * 100.0, self.pv * 100.0
        )
    }
}

/// Deterministic per-text sampling seed: identical texts get identical clouds.
fn cloud_seed(base: u64, text: &str) -> u64 {
    let d = ModelDigest::of_canonical_text(text);
    base ^ u64::from_le_bytes(d.0[..8].try_into().expect("8 bytes"))
}

/// Renders and samples each text; invalid texts yield `None`.
pub fn render_clouds<S: AsRef<str> + Sync>(texts: &[S], cfg: &MetricsConfig) -> Vec<Option<PointCloud>> {
    let render = cfg.render();
    texts
        .par_iter()
        .map(|t| {
            let model = codec::parse_str(t.as_ref()).ok()?;
            let canonical = codec::serialize(&model).ok()?;
            let rendered = render_solid(&model, &render).ok()?;
            sample_point_cloud(&rendered.grid, cfg.point_count, cloud_seed(cfg.seed, canonical.as_str())).ok()
        })
        .collect()
}

/// Computes all six metrics for a generated set against a reference set.
pub fn evaluate<G: AsRef<str> + Sync, R: AsRef<str> + Sync>(
    gen_texts: &[G],
    ref_texts: &[R],
    train: &HashSet<ModelDigest>,
    cfg: &MetricsConfig,
) -> Result<MetricsReport, MetricError> {
    if gen_texts.is_empty() {
        return Err(MetricError::EmptySet("generated"));
    }
    if ref_texts.is_empty() {
        return Err(MetricError::EmptySet("reference"));
    }
    let gen: Vec<PointCloud> = render_clouds(gen_texts, cfg).into_iter().flatten().collect();
    let refs: Vec<PointCloud> = render_clouds(ref_texts, cfg).into_iter().flatten().collect();
    if gen.is_empty() {
        return Err(MetricError::NothingRendered("generated set"));
    }
    if refs.is_empty() {
        return Err(MetricError::NothingRendered("reference set"));
    }
    let matrix = chamfer_matrix(&gen, &refs)?;
    let nu = novel_unique(gen_texts, train)?;
    Ok(MetricsReport {
        cov: coverage_from_matrix(&matrix, refs.len()),
        mmd: mmd_from_matrix(&matrix, refs.len()) * REPORT_SCALE,
        jsd: jsd(&gen, &refs, cfg.jsd_bins)? * REPORT_SCALE,
        novel: nu.novel,
        unique: nu.unique,
        pv: gen.len() as f64 / gen_texts.len() as f64,
        n_gen: gen_texts.len(),
        n_ref: ref_texts.len(),
        gen_rendered: gen.len(),
        ref_rendered: refs.len(),
        gen_unparsed: nu.excluded,
        config: *cfg,
    })
}
