//! Source ingestion, deduplication, train/val/test splits and corpus emission.
//!
//! Source records are JSON objects in a DeepCAD-style layout:
//!
//! ```json
//! {"id": "0001",
//!  "bodies": [{
//!    "sketch": {"profiles": [{"loops": [{"curves": [
//!       {"type": "Line", "start": [0, 0], "end": [1, 0]},
//!       {"type": "Arc", "start": [1, 0], "mid": [1.5, 0.5], "end": [1, 1]},
//!       {"type": "Circle", "center": [0, 0], "radius": 0.2}]}]}]},
//!    "extrude": {"operation": "NewBody", "extent_type": "OneSide",
//!                "extent_one": 0.5, "extent_two": 0.0,
//!                "origin": [0, 0, 0], "x_axis": [1, 0, 0],
//!                "y_axis": [0, 1, 0], "z_axis": [0, 0, 1]}}]}
//! ```
//!
//! Each profile becomes a face whose first loop is the outer boundary. Sketch
//! coordinates are normalized per sketch by the bounding box (center `c`,
//! half-size `s`), quantized onto the grid, and `c`, `s` are stored as the
//! extrusion's scale center and scale.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{extrude, Segments};
use crate::mask::{
    build_prompt, build_prompt_with_preamble, enumerate_selections, random_span_mask,
    unconditional_prompt, Level, PreparedModel, RANDOM_SPAN_PREAMBLE,
};
use crate::model::{
    canonical_hash, quantize, ranges, validate_model, BooleanOp, CadModel, Curve, Extrusion,
    ExtrusionParams, Face, GridCoord, Loop, ModelDigest, Sketch, SketchExtrusion,
};

/// Relative tolerance for matching a curve's end to the next curve's start.
const CLOSURE_TOLERANCE: f64 = 1e-6;
const MIN_SPLIT_IDS: usize = 20;
const HOLDOUT_FRACTION: f64 = 0.05;
const MAX_REDRAWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: String,
    pub bodies: Vec<SourceBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBody {
    pub sketch: SourceSketch,
    pub extrude: SourceExtrude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSketch {
    pub profiles: Vec<SourceProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    pub loops: Vec<SourceLoop>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceLoop {
    pub curves: Vec<SourceCurve>,
}

/// A curve in source units. Which fields are required depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCurve {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mid: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtentType {
    OneSide,
    Symmetric,
    TwoSides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceExtrude {
    pub operation: String,
    #[serde(default)]
    pub extent_type: Option<ExtentType>,
    pub extent_one: f64,
    #[serde(default)]
    pub extent_two: f64,
    pub origin: [f64; 3],
    pub x_axis: [f64; 3],
    pub y_axis: [f64; 3],
    pub z_axis: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum RejectReason {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unsupported curve kind {0:?}")]
    UnsupportedCurve(String),
    #[error("record has no bodies")]
    NoBodies,
    #[error("sketch of body {0} is empty")]
    EmptySketch(usize),
    #[error("loop is not closed at {0}")]
    OpenLoop(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("duplicate of {0}")]
    Duplicate(String),
    #[error("id {0:?} already used")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: RejectReason,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.id, self.reason)
    }
}

/// Parses one JSON record. `fallback_id` names the rejection when the id
/// itself cannot be read.
pub fn parse_record(json: &str, fallback_id: &str) -> Result<SourceRecord, Rejection> {
    serde_json::from_str(json).map_err(|e| {
        let id = serde_json::from_str::<serde_json::Value>(json)
            .ok()
            .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string))
            .unwrap_or_else(|| fallback_id.to_string());
        Rejection { id, reason: RejectReason::Schema(e.to_string()) }
    })
}

fn schema(msg: impl Into<String>) -> RejectReason {
    RejectReason::Schema(msg.into())
}

fn need(p: Option<[f64; 2]>, what: &str, kind: &str) -> Result<[f64; 2], RejectReason> {
    p.ok_or_else(|| schema(format!("{kind} curve is missing `{what}`")))
}

/// Curve converted to source-unit points in the stored-point convention.
enum RawCurve {
    Line { start: [f64; 2], end: [f64; 2] },
    Arc { start: [f64; 2], mid: [f64; 2], end: [f64; 2] },
    Circle { points: [[f64; 2]; 4] },
}

impl RawCurve {
    fn from_source(c: &SourceCurve) -> Result<Self, RejectReason> {
        let k = c.kind.as_str();
        match k {
            "Line" => Ok(RawCurve::Line { start: need(c.start, "start", k)?, end: need(c.end, "end", k)? }),
            "Arc" => Ok(RawCurve::Arc {
                start: need(c.start, "start", k)?,
                mid: need(c.mid, "mid", k)?,
                end: need(c.end, "end", k)?,
            }),
            "Circle" => {
                let [x, y] = need(c.center, "center", k)?;
                let r = c.radius.ok_or_else(|| schema("Circle curve is missing `radius`"))?;
                if !(r > 0.0) {
                    return Err(RejectReason::Degenerate(format!("circle radius {r}")));
                }
                // Bottom, right, top, left.
                Ok(RawCurve::Circle { points: [[x, y - r], [x + r, y], [x, y + r], [x - r, y]] })
            }
            other => Err(RejectReason::UnsupportedCurve(other.to_string())),
        }
    }

    fn points(&self) -> Vec<[f64; 2]> {
        match self {
            RawCurve::Line { start, end } => vec![*start, *end],
            RawCurve::Arc { start, mid, end } => vec![*start, *mid, *end],
            RawCurve::Circle { points } => points.to_vec(),
        }
    }

    fn start(&self) -> Option<[f64; 2]> {
        match self {
            RawCurve::Line { start, .. } | RawCurve::Arc { start, .. } => Some(*start),
            RawCurve::Circle { .. } => None,
        }
    }

    fn end(&self) -> Option<[f64; 2]> {
        match self {
            RawCurve::Line { end, .. } | RawCurve::Arc { end, .. } => Some(*end),
            RawCurve::Circle { .. } => None,
        }
    }
}

/// Per-sketch frame: `p_norm = (p - center) / half_size`.
struct Frame {
    center: [f64; 2],
    half_size: f64,
}

impl Frame {
    fn of(points: &[[f64; 2]]) -> Option<Self> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let half_size = (hi[0] - lo[0]).max(hi[1] - lo[1]) / 2.0;
        (half_size > 0.0 && half_size.is_finite()).then(|| Frame {
            center: [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0],
            half_size,
        })
    }

    fn grid(&self, p: [f64; 2]) -> GridCoord {
        let (lo, hi) = ranges::SKETCH;
        let q = |a: usize| quantize((p[a] - self.center[a]) / self.half_size, lo, hi).expect("static range");
        GridCoord { x: q(0), y: q(1) }
    }
}

fn check_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<(), RejectReason> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(RejectReason::OutOfRange(format!("{name} = {v} outside [{lo}, {hi}]")))
    }
}

fn close_enough(a: [f64; 2], b: [f64; 2], scale: f64) -> bool {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() <= CLOSURE_TOLERANCE * scale.max(1.0)
}

fn convert_loop(raw: &[RawCurve], frame: &Frame, at: &str) -> Result<Loop, RejectReason> {
    if raw.is_empty() {
        return Err(RejectReason::Degenerate(format!("{at} has no curves")));
    }
    let has_circle = raw.iter().any(|c| matches!(c, RawCurve::Circle { .. }));
    if has_circle && raw.len() > 1 {
        return Err(RejectReason::Degenerate(format!("{at} mixes a circle with other curves")));
    }
    for (i, c) in raw.iter().enumerate() {
        let next = &raw[(i + 1) % raw.len()];
        if let (Some(end), Some(start)) = (c.end(), next.start()) {
            if !close_enough(end, start, frame.half_size) {
                return Err(RejectReason::OpenLoop(format!("{at}.curve[{i}]")));
            }
        }
    }
    let curves = raw
        .iter()
        .map(|c| match c {
            RawCurve::Line { start, .. } => Curve::line(frame.grid(*start)),
            RawCurve::Arc { start, mid, .. } => Curve::arc(frame.grid(*start), frame.grid(*mid)),
            RawCurve::Circle { points } => Curve {
                kind: crate::model::CurveKind::Circle,
                points: points.iter().map(|&p| frame.grid(p)).collect(),
            },
        })
        .collect();
    Ok(Loop::new(curves))
}

fn convert_extrusion(e: &SourceExtrude, frame: &Frame, b: usize) -> Result<Extrusion, RejectReason> {
    let op = match e.operation.as_str() {
        "NewBody" | "Join" => BooleanOp::Add,
        "Cut" => BooleanOp::Cut,
        "Intersect" => BooleanOp::Intersect,
        other => return Err(schema(format!("unknown extrude operation {other:?}"))),
    };
    let extent = match e.extent_type.unwrap_or(ExtentType::TwoSides) {
        ExtentType::OneSide => [e.extent_one, 0.0],
        ExtentType::Symmetric => [e.extent_one, -e.extent_one],
        ExtentType::TwoSides => [e.extent_one, -e.extent_two],
    };
    let mut rotation = [0.0; 9];
    for (col, axis) in [e.x_axis, e.y_axis, e.z_axis].iter().enumerate() {
        for (row, &v) in axis.iter().enumerate() {
            rotation[row * 3 + col] = v;
        }
    }
    let params = ExtrusionParams {
        extent,
        translation: e.origin,
        rotation,
        scale: frame.half_size,
        scale_center: frame.center,
    };
    let at = |f: &str| format!("body[{b}].{f}");
    for (i, &v) in params.extent.iter().enumerate() {
        check_range(&at(&format!("extent[{i}]")), v, ranges::EXTENT)?;
    }
    for (i, &v) in params.translation.iter().enumerate() {
        check_range(&at(&format!("origin[{i}]")), v, ranges::TRANSLATION)?;
    }
    for (i, &v) in params.rotation.iter().enumerate() {
        check_range(&at(&format!("axis[{i}]")), v, ranges::ROTATION)?;
    }
    check_range(&at("scale"), params.scale, ranges::SCALE)?;
    for (i, &v) in params.scale_center.iter().enumerate() {
        check_range(&at(&format!("sketch_center[{i}]")), v, ranges::SCALE_CENTER)?;
    }
    Ok(Extrusion::quantized(op, &params))
}

fn ingest_inner(r: &SourceRecord) -> Result<CadModel, RejectReason> {
    if r.bodies.is_empty() {
        return Err(RejectReason::NoBodies);
    }
    let mut bodies = Vec::with_capacity(r.bodies.len());
    for (b, body) in r.bodies.iter().enumerate() {
        if body.sketch.profiles.is_empty() || body.sketch.profiles.iter().all(|p| p.loops.is_empty()) {
            return Err(RejectReason::EmptySketch(b));
        }
        let raw: Vec<Vec<Vec<RawCurve>>> = body
            .sketch
            .profiles
            .iter()
            .map(|p| {
                p.loops
                    .iter()
                    .map(|l| l.curves.iter().map(RawCurve::from_source).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        let all_points: Vec<[f64; 2]> = raw.iter().flatten().flatten().flat_map(RawCurve::points).collect();
        if all_points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RejectReason::OutOfRange(format!("body[{b}] has non-finite coordinates")));
        }
        let frame = Frame::of(&all_points)
            .ok_or_else(|| RejectReason::Degenerate(format!("body[{b}] sketch has zero extent")))?;
        let mut faces = Vec::with_capacity(raw.len());
        for (f, loops) in raw.iter().enumerate() {
            if loops.is_empty() {
                return Err(RejectReason::Degenerate(format!("body[{b}].face[{f}] has no loops")));
            }
            let loops = loops
                .iter()
                .enumerate()
                .map(|(l, curves)| convert_loop(curves, &frame, &format!("body[{b}].face[{f}].loop[{l}]")))
                .collect::<Result<Vec<_>, _>>()?;
            faces.push(Face::new(loops));
        }
        let extrusion = convert_extrusion(&body.extrude, &frame, b)?;
        bodies.push(SketchExtrusion { sketch: Sketch::new(faces), extrusion });
    }
    let model = CadModel::new(bodies);
    let report = validate_model(&model);
    if !report.is_ok() {
        return Err(RejectReason::Degenerate(report.to_string()));
    }
    for (b, body) in model.bodies.iter().enumerate() {
        extrude(&body.sketch, &body.extrusion, Segments::Auto)
            .map_err(|e| RejectReason::Degenerate(format!("body[{b}]: {e}")))?;
    }
    Ok(model)
}

/// Converts one record into a quantized model, or explains why it cannot be.
pub fn ingest(r: &SourceRecord) -> Result<CadModel, Rejection> {
    ingest_inner(r).map_err(|reason| Rejection { id: r.id.clone(), reason })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupStats {
    pub total: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub invalid: usize,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    /// Accepted models in input order.
    pub models: Vec<(String, CadModel)>,
    pub rejections: Vec<Rejection>,
    pub stats: DedupStats,
}

/// Ingests records in parallel, then drops duplicates (same canonical text)
/// and reused ids in input order: the first occurrence wins.
pub fn ingest_all(records: Vec<Result<SourceRecord, Rejection>>) -> IngestOutcome {
    let converted: Vec<Result<(String, CadModel, ModelDigest), Rejection>> = records
        .into_par_iter()
        .map(|r| {
            let r = r?;
            let m = ingest(&r)?;
            let digest = canonical_hash(&m).map_err(|e| Rejection {
                id: r.id.clone(),
                reason: RejectReason::Degenerate(e.to_string()),
            })?;
            Ok((r.id, m, digest))
        })
        .collect();
    let mut out = IngestOutcome::default();
    out.stats.total = converted.len();
    let mut seen_digest: HashMap<ModelDigest, String> = HashMap::new();
    let mut seen_id: HashSet<String> = HashSet::new();
    for item in converted {
        match item {
            Err(rej) => {
                out.stats.invalid += 1;
                out.rejections.push(rej);
            }
            Ok((id, model, digest)) => {
                if !seen_id.insert(id.clone()) {
                    out.stats.invalid += 1;
                    out.rejections.push(Rejection { reason: RejectReason::DuplicateId(id.clone()), id });
                } else if let Some(first) = seen_digest.get(&digest) {
                    out.stats.duplicates += 1;
                    out.rejections.push(Rejection { id, reason: RejectReason::Duplicate(first.clone()) });
                } else {
                    seen_digest.insert(digest, id.clone());
                    out.models.push((id, model));
                }
            }
        }
    }
    out.stats.accepted = out.models.len();
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatasetError {
    #[error("need at least {MIN_SPLIT_IDS} ids to split, got {0}")]
    TooFewIds(usize),
    #[error("id {0:?} appears more than once")]
    DuplicateId(String),
    #[error("unknown corpus mode {0:?}")]
    UnknownMode(String),
    #[error("no models to emit")]
    NoModels,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub dedup: DedupStats,
}

impl SplitManifest {
    pub fn split_of(&self, id: &str) -> Option<&'static str> {
        let has = |v: &[String]| v.iter().any(|x| x == id);
        if has(&self.train) {
            Some("train")
        } else if has(&self.val) {
            Some("val")
        } else if has(&self.test) {
            Some("test")
        } else {
            None
        }
    }
}

/// Shuffles the sorted ids with `seed` and cuts them 90/5/5; validation and
/// test each get `round(n * 0.05)` ids. The result depends only on the set
/// of ids, not their order.
pub fn split(ids: &[String], seed: u64) -> Result<SplitManifest, DatasetError> {
    if ids.len() < MIN_SPLIT_IDS {
        return Err(DatasetError::TooFewIds(ids.len()));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(DatasetError::DuplicateId(w[0].clone()));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = sorted.len();
    let holdout = (n as f64 * HOLDOUT_FRACTION).round() as usize;
    let test = sorted.split_off(n - holdout);
    let val = sorted.split_off(n - 2 * holdout);
    Ok(SplitManifest { seed, train: sorted, val, test, dedup: DedupStats::default() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorpusMode {
    /// One of the seven hierarchy levels, uniformly.
    Unified,
    /// A random contiguous span with the generic mask token.
    RandomMasking,
    /// Hierarchy levels, but every mask token is the generic `[mask]`.
    GenericToken,
    SingleLevel(Level),
    /// The seven levels plus unconditional generation, uniformly.
    UnconditionalAugmented,
}

impl CorpusMode {
    fn levels(self) -> Vec<Level> {
        match self {
            CorpusMode::Unified | CorpusMode::GenericToken => Level::HIERARCHY.to_vec(),
            CorpusMode::RandomMasking => Vec::new(),
            CorpusMode::SingleLevel(l) => vec![l],
            CorpusMode::UnconditionalAugmented => {
                Level::HIERARCHY.iter().copied().chain([Level::Unconditional]).collect()
            }
        }
    }
}

impl fmt::Display for CorpusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusMode::Unified => f.write_str("unified"),
            CorpusMode::RandomMasking => f.write_str("random-masking"),
            CorpusMode::GenericToken => f.write_str("generic-token"),
            CorpusMode::SingleLevel(l) => write!(f, "single-level:{l}"),
            CorpusMode::UnconditionalAugmented => f.write_str("unconditional-augmented"),
        }
    }
}

impl FromStr for CorpusMode {
    type Err = DatasetError;

    /// Accepts the display names; the single-level form is `single-level:L`
    /// or `single-level(L)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || DatasetError::UnknownMode(s.to_string());
        Ok(match s {
            "unified" => CorpusMode::Unified,
            "random-masking" => CorpusMode::RandomMasking,
            "generic-token" => CorpusMode::GenericToken,
            "unconditional-augmented" => CorpusMode::UnconditionalAugmented,
            _ => {
                let rest = s.strip_prefix("single-level").ok_or_else(unknown)?;
                let name = rest
                    .strip_prefix(':')
                    .or_else(|| rest.strip_prefix('(').and_then(|r| r.strip_suffix(')')))
                    .ok_or_else(unknown)?;
                CorpusMode::SingleLevel(name.parse().map_err(|_| unknown())?)
            }
        })
    }
}

/// Level label used for random-span examples.
pub const RANDOM_SPAN_LABEL: &str = "random-span";

/// One fine-tuning example. `level` is a level name or [`RANDOM_SPAN_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusExample {
    pub id: String,
    pub level: String,
    pub instruction: String,
    pub answer: String,
}

/// Draws one example per model per epoch. Deterministic per
/// `(models, epochs, mode, seed)`.
pub fn emit_corpus(
    models: &[(String, CadModel)],
    epochs: usize,
    mode: CorpusMode,
    seed: u64,
) -> Result<Vec<CorpusExample>, DatasetError> {
    if models.is_empty() {
        return Err(DatasetError::NoModels);
    }
    let prepared: Vec<Option<PreparedModel>> =
        models.par_iter().map(|(_, m)| PreparedModel::new(m).ok()).collect();
    let levels = mode.levels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(models.len() * epochs);
    for _ in 0..epochs {
        for ((id, model), prep) in models.iter().zip(&prepared) {
            let Some(prep) = prep else {
                log::warn!("skipping {id}: model does not serialize");
                continue;
            };
            if mode == CorpusMode::RandomMasking {
                let mt = random_span_mask(&prep.tokens, &mut rng);
                let ex = build_prompt_with_preamble(&mt, RANDOM_SPAN_PREAMBLE);
                out.push(example(id, RANDOM_SPAN_LABEL, ex));
                continue;
            }
            match draw_example(model, prep, &levels, mode, &mut rng) {
                Some((level, ex)) => out.push(example(id, level.name(), ex)),
                None => log::warn!("skipping {id}: no selection after {MAX_REDRAWS} draws"),
            }
        }
    }
    Ok(out)
}

fn example(id: &str, level: &str, ex: crate::mask::PromptExample) -> CorpusExample {
    CorpusExample { id: id.to_string(), level: level.to_string(), instruction: ex.instruction, answer: ex.answer }
}

fn draw_example<R: Rng>(
    model: &CadModel,
    prep: &PreparedModel,
    levels: &[Level],
    mode: CorpusMode,
    rng: &mut R,
) -> Option<(Level, crate::mask::PromptExample)> {
    for _ in 0..MAX_REDRAWS {
        let level = levels[rng.gen_range(0..levels.len())];
        if level == Level::Unconditional {
            return Some((level, unconditional_prompt(&prep.text())));
        }
        let sels = enumerate_selections(model, level);
        if sels.is_empty() {
            continue;
        }
        let sel = &sels[rng.gen_range(0..sels.len())];
        let Ok(mut mt) = prep.apply(sel) else { continue };
        if mode == CorpusMode::GenericToken {
            mt = mt.into_generic();
        }
        return Some((level, build_prompt(&mt, level)));
    }
    None
}

/// Writes examples as JSON lines.
pub fn write_corpus<W: Write>(examples: &[CorpusExample], mut w: W) -> io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Ids of examples whose model is not in `allowed`.
pub fn leaked_ids<'a>(examples: &'a [CorpusExample], allowed: &[String]) -> Vec<&'a str> {
    let allowed: HashSet<&str> = allowed.iter().map(String::as_str).collect();
    examples.iter().map(|e| e.id.as_str()).filter(|id| !allowed.contains(id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::serialize;
    use crate::fixtures;
    use crate::mask::infill;
    use crate::model::CurveKind;

    fn line(a: [f64; 2], b: [f64; 2]) -> SourceCurve {
        SourceCurve { kind: "Line".into(), start: Some(a), end: Some(b), mid: None, center: None, radius: None }
    }

    fn square(lo: f64, hi: f64) -> SourceLoop {
        SourceLoop {
            curves: vec![
                line([lo, lo], [hi, lo]),
                line([hi, lo], [hi, hi]),
                line([hi, hi], [lo, hi]),
                line([lo, hi], [lo, lo]),
            ],
        }
    }

    fn extrude_src(op: &str) -> SourceExtrude {
        SourceExtrude {
            operation: op.into(),
            extent_type: Some(ExtentType::OneSide),
            extent_one: 0.5,
            extent_two: 0.0,
            origin: [0.0; 3],
            x_axis: [1.0, 0.0, 0.0],
            y_axis: [0.0, 1.0, 0.0],
            z_axis: [0.0, 0.0, 1.0],
        }
    }

    fn record(id: &str, loops: Vec<SourceLoop>) -> SourceRecord {
        SourceRecord {
            id: id.into(),
            bodies: vec![SourceBody {
                sketch: SourceSketch { profiles: vec![SourceProfile { loops }] },
                extrude: extrude_src("NewBody"),
            }],
        }
    }

    #[test]
    fn unit_square_becomes_four_lines() {
        let m = ingest(&record("a", vec![square(0.0, 1.0)])).unwrap();
        let l = &m.bodies[0].sketch.faces[0].loops[0];
        assert_eq!(l.curves.len(), 4);
        assert!(l.curves.iter().all(|c| c.kind == CurveKind::Line));
        let xs: Vec<(u8, u8)> = l.curves.iter().map(|c| (c.points[0].x, c.points[0].y)).collect();
        assert_eq!(xs, vec![(0, 0), (63, 0), (63, 63), (0, 63)]);
        let e = m.bodies[0].extrusion.dequantized().unwrap();
        assert!((e.scale - 0.5).abs() <= 1.0 / 32.0);
        assert!((e.scale_center[0] - 0.5).abs() < 1.0 / 32.0);
    }

    #[test]
    fn circle_is_four_points() {
        let c = SourceCurve { kind: "Circle".into(), center: Some([0.0, 0.0]), radius: Some(0.5), start: None, mid: None, end: None };
        let m = ingest(&record("c", vec![SourceLoop { curves: vec![c] }])).unwrap();
        let pts: Vec<(u8, u8)> = m.bodies[0].sketch.faces[0].loops[0].curves[0].points.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(pts, vec![(31, 0), (63, 31), (31, 63), (0, 31)]);
    }

    #[test]
    fn rejections() {
        let spline = SourceCurve { kind: "Spline".into(), start: None, mid: None, end: None, center: None, radius: None };
        let r = ingest(&record("s", vec![SourceLoop { curves: vec![spline] }])).unwrap_err();
        assert_eq!(r.reason, RejectReason::UnsupportedCurve("Spline".into()));

        let mut open = square(0.0, 1.0);
        open.curves[3].end = Some([0.0, 0.5]);
        assert!(matches!(ingest(&record("o", vec![open])).unwrap_err().reason, RejectReason::OpenLoop(_)));

        let empty = SourceRecord { id: "e".into(), bodies: vec![SourceBody { sketch: SourceSketch { profiles: vec![] }, extrude: extrude_src("NewBody") }] };
        assert_eq!(ingest(&empty).unwrap_err().reason, RejectReason::EmptySketch(0));

        let mut flat = record("f", vec![square(0.0, 1.0)]);
        flat.bodies[0].extrude.extent_one = 0.0;
        assert!(matches!(ingest(&flat).unwrap_err().reason, RejectReason::Degenerate(_)));

        let mut far = record("t", vec![square(0.0, 1.0)]);
        far.bodies[0].extrude.origin = [3.0, 0.0, 0.0];
        assert!(matches!(ingest(&far).unwrap_err().reason, RejectReason::OutOfRange(_)));

        let bad = parse_record(r#"{"id": "x", "bodies": 3}"#, "line 1").unwrap_err();
        assert_eq!(bad.id, "x");
        assert!(matches!(bad.reason, RejectReason::Schema(_)));
        assert_eq!(parse_record("{", "line 7").unwrap_err().id, "line 7");
    }

    #[test]
    fn duplicates_are_dropped_in_order() {
        let recs = vec![
            Ok(record("a", vec![square(0.0, 1.0)])),
            Ok(record("b", vec![square(0.0, 2.0)])),
            Ok(record("c", vec![square(-0.5, 0.5)])),
            Err(Rejection { id: "d".into(), reason: RejectReason::Schema("x".into()) }),
        ];
        let out = ingest_all(recs);
        // A square normalizes to the same grid square regardless of size, but
        // scale and center differ, so only exact repeats are duplicates.
        assert_eq!(out.stats.total, 4);
        assert_eq!(out.stats.invalid, 1);
        let again = ingest_all(vec![Ok(record("a", vec![square(0.0, 1.0)])), Ok(record("b", vec![square(0.0, 1.0)]))]);
        assert_eq!(again.stats.duplicates, 1);
        assert_eq!(again.rejections[0].reason, RejectReason::Duplicate("a".into()));
        assert_eq!(again.models.len(), 1);
    }

    #[test]
    fn ingested_models_survive_the_codec() {
        let m = ingest(&record("a", vec![square(0.0, 1.0), square(0.25, 0.75)])).unwrap();
        let t = serialize(&m).unwrap();
        assert_eq!(crate::codec::parse(&t).unwrap(), m);
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i:05}")).collect()
    }

    #[test]
    fn split_ratios_and_determinism() {
        let m = split(&ids(1000), 3).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (900, 50, 50));
        assert_eq!(m, split(&ids(1000), 3).unwrap());
        let mut rev = ids(1000);
        rev.reverse();
        assert_eq!(m, split(&rev, 3).unwrap());
        let all: HashSet<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
        assert_eq!(all.len(), 1000);
        assert_eq!(split(&ids(19), 0), Err(DatasetError::TooFewIds(19)));
        let mut dup = ids(30);
        dup.push("id00003".into());
        assert!(matches!(split(&dup, 0), Err(DatasetError::DuplicateId(_))));
    }

    #[test]
    fn corpus_modes() {
        let models = vec![("a".to_string(), fixtures::two_body_model()), ("b".to_string(), fixtures::cube_model())];
        for mode in [
            CorpusMode::Unified,
            CorpusMode::RandomMasking,
            CorpusMode::GenericToken,
            CorpusMode::SingleLevel(Level::Sketch),
            CorpusMode::UnconditionalAugmented,
        ] {
            let ex = emit_corpus(&models, 20, mode, 1).unwrap();
            assert_eq!(ex.len(), 40);
            assert_eq!(ex, emit_corpus(&models, 20, mode, 1).unwrap());
            assert_eq!(mode.to_string().parse::<CorpusMode>().unwrap(), mode);
            for e in &ex {
                if e.level == "unconditional" {
                    crate::codec::parse_str(&e.answer).unwrap();
                    continue;
                }
                let masked = e.instruction.split_once('\n').unwrap().1;
                infill(masked, &e.answer).unwrap();
                match mode {
                    CorpusMode::SingleLevel(_) => assert_eq!(e.level, "sketch"),
                    CorpusMode::GenericToken | CorpusMode::RandomMasking => {
                        assert!(!masked.contains(" mask]"), "{masked}")
                    }
                    _ => {}
                }
            }
        }
        assert_eq!("single-level(loop)".parse::<CorpusMode>().unwrap(), CorpusMode::SingleLevel(Level::Loop));
        assert!("nope".parse::<CorpusMode>().is_err());
    }

    #[test]
    fn leakage_check() {
        let models = vec![("a".to_string(), fixtures::cube_model())];
        let ex = emit_corpus(&models, 2, CorpusMode::Unified, 0).unwrap();
        assert!(leaked_ids(&ex, &["a".to_string()]).is_empty());
        assert_eq!(leaked_ids(&ex, &[]).len(), 2);
    }
}
