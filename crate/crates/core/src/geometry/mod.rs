//! Evaluation of CAD models into 3D geometry.
//!
//! Sketch coordinates are tessellated in grid units, mapped onto the
//! normalized sketch frame, extruded into prisms and composed on a voxel grid.
//! Booleans are evaluated on voxels only; there is no exact mesh CSG.

pub mod export;
pub mod extrude;
pub mod pointcloud;
pub mod polygon;
pub mod tessellate;
pub mod voxel;

use thiserror::Error;

pub use extrude::{extrude, extrude_profiles, ExtrudedBody, TriMesh};
pub use pointcloud::{sample_point_cloud, PointCloud, DEFAULT_POINT_COUNT};
pub use polygon::{face_to_polygons, PolygonWithHoles};
pub use tessellate::{tessellate_curve, tessellate_loop, Polyline2D, Segments};
pub use voxel::{render_model, render_model_in, CubeBounds, RenderConfig, Rendered, VoxelGrid};

use crate::model::CadModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("curve has the wrong number of points for its kind")]
    PointCount,
    #[error("arc points are collinear; no circumcircle exists")]
    DegenerateArc,
    #[error("circle has zero radius")]
    DegenerateCircle,
    #[error("at least 8 segments are needed for arcs and circles, got {0}")]
    TooFewSegments(usize),
    #[error("loop has no curves")]
    EmptyLoop,
    #[error("loop encloses no area")]
    DegenerateLoop,
    #[error("loop intersects itself")]
    SelfIntersection,
    #[error("face has no loops")]
    EmptyFace,
    #[error("sketch has no faces")]
    EmptySketch,
    #[error("model has no bodies")]
    EmptyModel,
    #[error("hole {0} is not strictly inside the outer loop")]
    HoleOutside(usize),
    #[error("holes {0} and {1} overlap")]
    HolesOverlap(usize, usize),
    #[error("top and bottom extrusion planes coincide")]
    ZeroThickness,
    #[error("scale factor must be positive")]
    NonPositiveScale,
    #[error("extrusion parameter outside the quantization grid")]
    ParamOutOfRange,
    #[error("voxel grid bounds are degenerate")]
    DegenerateBounds,
    #[error("solid has no occupied voxels")]
    EmptySolid,
    #[error("face {face}: {source}")]
    Face { face: usize, source: Box<GeometryError> },
    #[error("body {body}: {source}")]
    Body { body: usize, source: Box<GeometryError> },
}

impl GeometryError {
    /// The innermost error, without body/face wrappers.
    pub fn root(&self) -> &GeometryError {
        match self {
            GeometryError::Face { source, .. } | GeometryError::Body { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_zero_thickness(&self) -> bool {
        matches!(self.root(), GeometryError::ZeroThickness)
    }
}

/// Renders `m` and requires a non-empty solid: every face valid, every body
/// with non-zero thickness and at least one occupied voxel after booleans.
pub fn render_solid(m: &CadModel, cfg: &RenderConfig) -> Result<Rendered, GeometryError> {
    let rendered = render_model(m, cfg)?;
    if rendered.is_empty() {
        return Err(GeometryError::EmptySolid);
    }
    Ok(rendered)
}
