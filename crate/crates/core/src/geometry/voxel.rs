use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::extrude::{extrude, ExtrudedBody};
use super::tessellate::Segments;
use super::GeometryError;
use crate::model::{BooleanOp, CadModel};

pub const DEFAULT_RESOLUTION: usize = 64;

/// Axis-aligned cube the voxel grid spans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeBounds {
    pub min: [f64; 3],
    pub size: f64,
}

impl CubeBounds {
    /// Cube centered on the box `lo..hi`, padded by one voxel on every side.
    /// Along the longest axis the box faces then fall on voxel boundaries
    /// rather than on voxel centers.
    pub fn enclosing(lo: Point3<f64>, hi: Point3<f64>, resolution: usize) -> Self {
        let extent = (hi - lo).max().max(1e-9);
        let size = extent * resolution as f64 / (resolution.max(3) as f64 - 2.0);
        let center = nalgebra::center(&lo, &hi);
        Self { min: [center.x - size / 2.0, center.y - size / 2.0, center.z - size / 2.0], size }
    }
}

/// Dense occupancy grid of `resolution^3` cells, x varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    bounds: CubeBounds,
    bits: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(resolution: usize, bounds: CubeBounds) -> Result<Self, GeometryError> {
        if resolution == 0 || !(bounds.size > 0.0) {
            return Err(GeometryError::DegenerateBounds);
        }
        Ok(Self { resolution, bounds, bits: vec![false; resolution.pow(3)] })
    }

    pub fn from_bits(resolution: usize, bounds: CubeBounds, bits: Vec<bool>) -> Result<Self, GeometryError> {
        let mut g = Self::empty(resolution, bounds)?;
        if bits.len() != g.bits.len() {
            return Err(GeometryError::DegenerateBounds);
        }
        g.bits = bits;
        Ok(g)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> CubeBounds {
        self.bounds
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn voxel_size(&self) -> f64 {
        self.bounds.size / self.resolution as f64
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let r = self.resolution;
        (idx % r, (idx / r) % r, idx / (r * r))
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.index(i, j, k);
        self.bits[idx] = v;
    }

    /// Occupancy at signed coordinates; outside the grid is empty.
    pub fn get_signed(&self, i: i64, j: i64, k: i64) -> bool {
        let r = self.resolution as i64;
        if [i, j, k].iter().any(|&c| c < 0 || c >= r) {
            return false;
        }
        self.get(i as usize, j as usize, k as usize)
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        let h = self.voxel_size();
        let m = self.bounds.min;
        Point3::new(
            m[0] + (i as f64 + 0.5) * h,
            m[1] + (j as f64 + 0.5) * h,
            m[2] + (k as f64 + 0.5) * h,
        )
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn check_compatible(&self, other: &VoxelGrid) {
        assert_eq!(self.resolution, other.resolution, "voxel grids differ in resolution");
    }

    pub fn union_with(&mut self, other: &VoxelGrid) {
        self.check_compatible(other);
        self.bits.iter_mut().zip(&other.bits).for_each(|(a, &b)| *a |= b);
    }

    pub fn subtract(&mut self, other: &VoxelGrid) {
        self.check_compatible(other);
        self.bits.iter_mut().zip(&other.bits).for_each(|(a, &b)| *a &= !b);
    }

    pub fn intersect_with(&mut self, other: &VoxelGrid) {
        self.check_compatible(other);
        self.bits.iter_mut().zip(&other.bits).for_each(|(a, &b)| *a &= b);
    }

    pub fn combine(&mut self, op: BooleanOp, other: &VoxelGrid) {
        match op {
            BooleanOp::Add => self.union_with(other),
            BooleanOp::Cut => self.subtract(other),
            BooleanOp::Intersect => self.intersect_with(other),
        }
    }

    /// Index range of voxels whose centers may lie in `lo..=hi` along one axis.
    fn axis_range(&self, axis: usize, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let h = self.voxel_size();
        let m = self.bounds.min[axis];
        let first = ((lo - m) / h - 0.5).floor().max(0.0) as usize;
        let last = (((hi - m) / h - 0.5).ceil() + 1.0).clamp(0.0, self.resolution as f64) as usize;
        first.min(self.resolution)..last
    }
}

/// Marks every voxel whose center lies inside `body`.
pub fn voxelize_body(body: &ExtrudedBody, resolution: usize, bounds: CubeBounds) -> Result<VoxelGrid, GeometryError> {
    let mut grid = VoxelGrid::empty(resolution, bounds)?;
    let Some((lo, hi)) = body.bounds() else {
        return Ok(grid);
    };
    let (xs, ys, zs) = (grid.axis_range(0, lo.x, hi.x), grid.axis_range(1, lo.y, hi.y), grid.axis_range(2, lo.z, hi.z));
    for k in zs {
        for j in ys.clone() {
            for i in xs.clone() {
                if body.contains(&grid.center(i, j, k)) {
                    grid.set(i, j, k, true);
                }
            }
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub resolution: usize,
    #[serde(skip)]
    pub segments: Segments,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { resolution: DEFAULT_RESOLUTION, segments: Segments::Auto }
    }
}

/// Bodies of a model with the voxel grid of their boolean composition.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub bodies: Vec<ExtrudedBody>,
    pub grid: VoxelGrid,
}

impl Rendered {
    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Extrudes every body, tagging errors with the body index.
pub fn extrude_model(m: &CadModel, segments: Segments) -> Result<Vec<ExtrudedBody>, GeometryError> {
    if m.bodies.is_empty() {
        return Err(GeometryError::EmptyModel);
    }
    m.bodies
        .iter()
        .enumerate()
        .map(|(b, body)| {
            extrude(&body.sketch, &body.extrusion, segments)
                .map_err(|e| GeometryError::Body { body: b, source: Box::new(e) })
        })
        .collect()
}

/// Bounding cube of all body meshes.
pub fn model_bounds(bodies: &[ExtrudedBody], resolution: usize) -> Result<CubeBounds, GeometryError> {
    let mut acc: Option<(Point3<f64>, Point3<f64>)> = None;
    for (lo, hi) in bodies.iter().filter_map(ExtrudedBody::bounds) {
        acc = Some(match acc {
            None => (lo, hi),
            Some((a, b)) => (a.inf(&lo), b.sup(&hi)),
        });
    }
    let (lo, hi) = acc.ok_or(GeometryError::EmptyModel)?;
    Ok(CubeBounds::enclosing(lo, hi, resolution))
}

/// Voxelizes bodies into fixed bounds and combines them left to right.
pub fn compose(bodies: &[ExtrudedBody], resolution: usize, bounds: CubeBounds) -> Result<VoxelGrid, GeometryError> {
    let mut acc = VoxelGrid::empty(resolution, bounds)?;
    for body in bodies {
        let g = voxelize_body(body, resolution, bounds)?;
        acc.combine(body.op, &g);
    }
    Ok(acc)
}

/// Renders a model into its normalized bounding cube.
pub fn render_model(m: &CadModel, cfg: &RenderConfig) -> Result<Rendered, GeometryError> {
    let bodies = extrude_model(m, cfg.segments)?;
    let bounds = model_bounds(&bodies, cfg.resolution)?;
    let grid = compose(&bodies, cfg.resolution, bounds)?;
    Ok(Rendered { bodies, grid })
}

/// Renders a model into caller-chosen bounds.
pub fn render_model_in(m: &CadModel, cfg: &RenderConfig, bounds: CubeBounds) -> Result<Rendered, GeometryError> {
    let bodies = extrude_model(m, cfg.segments)?;
    let grid = compose(&bodies, cfg.resolution, bounds)?;
    Ok(Rendered { bodies, grid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{BooleanOp, Face};

    fn bounds() -> CubeBounds {
        CubeBounds { min: [-1.0; 3], size: 2.0 }
    }

    fn box_model(lo: u8, hi: u8, top: u8, bottom: u8, op: BooleanOp) -> CadModel {
        CadModel::new(vec![fixtures::body(
            vec![Face::new(vec![fixtures::square_loop(lo, hi)])],
            fixtures::extrusion(op, top, bottom),
        )])
    }

    fn occupancy(m: &CadModel) -> Vec<bool> {
        render_model_in(m, &RenderConfig::default(), bounds()).unwrap().grid.bits().to_vec()
    }

    #[test]
    fn single_add_body_equals_its_own_voxels() {
        let m = fixtures::cube_model();
        let r = render_model_in(&m, &RenderConfig::default(), bounds()).unwrap();
        let alone = voxelize_body(&r.bodies[0], 64, bounds()).unwrap();
        assert_eq!(r.grid, alone);
        assert!(r.grid.count() > 0);
    }

    #[test]
    fn disjoint_adds_sum() {
        let a = box_model(2, 20, 40, 20, BooleanOp::Add);
        let b = box_model(40, 60, 40, 20, BooleanOp::Add);
        let both = CadModel::new(vec![a.bodies[0].clone(), b.bodies[0].clone()]);
        let count = |m: &CadModel| occupancy(m).iter().filter(|&&x| x).count();
        assert_eq!(count(&both), count(&a) + count(&b));
        let swapped = CadModel::new(vec![b.bodies[0].clone(), a.bodies[0].clone()]);
        assert_eq!(occupancy(&both), occupancy(&swapped));
    }

    #[test]
    fn interior_cut_removes_exactly_its_voxels() {
        let outer = box_model(4, 60, 60, 4, BooleanOp::Add);
        let inner = box_model(20, 40, 40, 20, BooleanOp::Cut);
        let m = CadModel::new(vec![outer.bodies[0].clone(), inner.bodies[0].clone()]);
        let count = |m: &CadModel| occupancy(m).iter().filter(|&&x| x).count();
        let inner_solid = box_model(20, 40, 40, 20, BooleanOp::Add);
        assert_eq!(count(&inner), 0);
        assert_eq!(count(&m), count(&outer) - count(&inner_solid));
        let r = render_model(&m, &RenderConfig::default()).unwrap();
        assert!(!r.is_empty());
    }

    #[test]
    fn cut_everything_leaves_nothing() {
        let a = box_model(8, 56, 40, 20, BooleanOp::Add);
        let b = box_model(8, 56, 40, 20, BooleanOp::Cut);
        let m = CadModel::new(vec![a.bodies[0].clone(), b.bodies[0].clone()]);
        assert!(render_model(&m, &RenderConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn translation_by_one_voxel_shifts_occupancy() {
        // With bounds of side 2 and R = 64 one translation bin equals one voxel.
        let m = fixtures::cube_model();
        let mut shifted = m.clone();
        shifted.bodies[0].extrusion.params[2] += 1;
        let a = render_model_in(&m, &RenderConfig::default(), bounds()).unwrap().grid;
        let b = render_model_in(&shifted, &RenderConfig::default(), bounds()).unwrap().grid;
        let mut mismatched = 0;
        for k in 0..64 {
            for j in 0..64 {
                for i in 0..63 {
                    if a.get(i, j, k) != b.get(i + 1, j, k) {
                        mismatched += 1;
                    }
                }
            }
        }
        // Only boundary-plane voxels may differ through rounding.
        assert!(mismatched <= 2 * 64 * 64, "{mismatched}");
        assert!((a.count() as i64 - b.count() as i64).abs() <= 64 * 64);
    }

    #[test]
    fn body_errors_carry_index() {
        let mut m = fixtures::two_body_model();
        m.bodies[1].extrusion.params[1] = m.bodies[1].extrusion.params[0];
        let err = render_model(&m, &RenderConfig::default()).unwrap_err();
        assert!(matches!(err, GeometryError::Body { body: 1, .. }));
        assert!(err.is_zero_thickness());
    }

    #[test]
    fn grid_bookkeeping() {
        let mut g = VoxelGrid::empty(4, bounds()).unwrap();
        g.set(1, 2, 3, true);
        let idx = g.index(1, 2, 3);
        assert_eq!(g.coords(idx), (1, 2, 3));
        assert!(g.get_signed(1, 2, 3));
        assert!(!g.get_signed(-1, 2, 3));
        assert_eq!(g.count(), 1);
        assert!(VoxelGrid::empty(0, bounds()).is_err());
        assert!(VoxelGrid::empty(4, CubeBounds { min: [0.0; 3], size: 0.0 }).is_err());
    }
}
