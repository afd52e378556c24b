use std::collections::HashMap;

use nalgebra::{Matrix3, Point2, Point3, Vector3};

use super::polygon::{face_to_polygons, PolygonWithHoles};
use super::tessellate::Segments;
use super::GeometryError;
use crate::model::{ranges, BooleanOp, Extrusion, ExtrusionParams, Sketch};

/// Top and bottom planes closer than this are treated as coincident.
pub const MIN_THICKNESS: f64 = 1e-9;

/// Indexed triangle mesh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Signed volume by the divergence theorem (positive for outward winding).
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize].coords);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Every undirected edge is used by exactly two triangles, once in each
    /// direction.
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
    }

    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }
}

/// Nearest orthonormal matrix (polar factor via SVD).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => u * v_t,
        _ => Matrix3::identity(),
    }
}

/// One extruded sketch before boolean composition.
#[derive(Debug, Clone)]
pub struct ExtrudedBody {
    pub op: BooleanOp,
    /// Profiles in sketch-plane coordinates (after scaling and placement).
    pub profiles: Vec<PolygonWithHoles>,
    /// Lower and upper offsets along the plane normal.
    pub z_range: (f64, f64),
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Closed prism mesh, one shell per face.
    pub mesh: TriMesh,
}

impl ExtrudedBody {
    pub fn thickness(&self) -> f64 {
        self.z_range.1 - self.z_range.0
    }

    /// Exact inside test against the prism definition.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let local = self.rotation.transpose() * (p.coords - self.translation);
        if local.z < self.z_range.0 || local.z > self.z_range.1 {
            return false;
        }
        let q = Point2::new(local.x, local.y);
        self.profiles.iter().any(|poly| poly.contains(q))
    }

    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        self.mesh.bounds()
    }

    fn to_world(&self, p: Point2<f64>, z: f64) -> Point3<f64> {
        Point3::from(self.rotation * Vector3::new(p.x, p.y, z) + self.translation)
    }
}

fn prism_mesh(body: &ExtrudedBody) -> TriMesh {
    let mirrored = body.rotation.determinant() < 0.0;
    let (z0, z1) = body.z_range;
    let mut mesh = TriMesh::default();
    for poly in &body.profiles {
        let verts = poly.vertices();
        let n = verts.len() as u32;
        let base = mesh.vertices.len() as u32;
        mesh.vertices.extend(verts.iter().map(|&p| body.to_world(p, z0)));
        mesh.vertices.extend(verts.iter().map(|&p| body.to_world(p, z1)));
        let mut tris = Vec::new();
        for t in poly.triangulate() {
            let [a, b, c] = t.map(|i| i as u32 + base);
            tris.push([a, c, b]);
            tris.push([a + n, b + n, c + n]);
        }
        for (start, len) in poly.rings() {
            for k in 0..len {
                let a = base + (start + k) as u32;
                let b = base + (start + (k + 1) % len) as u32;
                tris.push([a, b, b + n]);
                tris.push([a, b + n, a + n]);
            }
        }
        if mirrored {
            for t in &mut tris {
                t.swap(1, 2);
            }
        }
        mesh.triangles.extend(tris);
    }
    mesh
}

/// Extrudes already-placed profiles with real-valued parameters. Profiles
/// are scaled by `params.scale` about the origin and moved to
/// `params.scale_center`.
pub fn extrude_profiles(
    profiles: &[PolygonWithHoles],
    op: BooleanOp,
    params: &ExtrusionParams,
) -> Result<ExtrudedBody, GeometryError> {
    let [a, b] = params.extent;
    if (a - b).abs() < MIN_THICKNESS {
        return Err(GeometryError::ZeroThickness);
    }
    if params.scale <= 0.0 {
        return Err(GeometryError::NonPositiveScale);
    }
    let s = params.scale;
    let [ox, oy] = params.scale_center;
    let placed = profiles
        .iter()
        .map(|p| p.map(|q| Point2::new(ox + s * q.x, oy + s * q.y)))
        .collect();
    let mut body = ExtrudedBody {
        op,
        profiles: placed,
        z_range: (a.min(b), a.max(b)),
        rotation: orthonormalize(&Matrix3::from_row_slice(&params.rotation)),
        translation: Vector3::from(params.translation),
        mesh: TriMesh::default(),
    };
    body.mesh = prism_mesh(&body);
    Ok(body)
}

/// Maps grid units onto the normalized sketch frame `[-1, 1]^2` using bin
/// centers.
pub fn grid_to_sketch(p: Point2<f64>) -> Point2<f64> {
    let (lo, hi) = ranges::SKETCH;
    let w = (hi - lo) / 64.0;
    Point2::new(lo + (p.x + 0.5) * w, lo + (p.y + 0.5) * w)
}

/// Tessellates every face of `s` and extrudes it with the dequantized
/// parameters of `e`.
pub fn extrude(s: &Sketch, e: &Extrusion, segments: Segments) -> Result<ExtrudedBody, GeometryError> {
    if e.is_flat() {
        return Err(GeometryError::ZeroThickness);
    }
    let profiles = s
        .faces
        .iter()
        .enumerate()
        .map(|(i, f)| {
            face_to_polygons(f, segments)
                .map(|p| p.map(grid_to_sketch))
                .map_err(|err| GeometryError::Face { face: i, source: Box::new(err) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if profiles.is_empty() {
        return Err(GeometryError::EmptySketch);
    }
    let params = e.dequantized().map_err(|_| GeometryError::ParamOutOfRange)?;
    extrude_profiles(&profiles, e.op, &params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn unit_square() -> PolygonWithHoles {
        PolygonWithHoles::new(
            vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn unit_square_prism_volume() {
        let h = 0.37;
        let body = extrude_profiles(&[unit_square()], BooleanOp::Add, &ExtrusionParams::identity([0.0, h])).unwrap();
        assert!((body.mesh.volume() - h).abs() < 1e-12);
        assert!(body.mesh.is_watertight());
    }

    #[test]
    fn scaling_by_two_quadruples_volume() {
        let h = 0.37;
        let mut p = ExtrusionParams::identity([0.0, h]);
        p.scale = 2.0;
        let body = extrude_profiles(&[unit_square()], BooleanOp::Add, &p).unwrap();
        assert!((body.mesh.volume() - 4.0 * h).abs() < 1e-12);
    }

    #[test]
    fn rotation_and_translation_preserve_volume() {
        let h = 0.5;
        let mut p = ExtrusionParams::identity([-h, 0.0]);
        // Plane normal along +x: columns are (0,1,0), (0,0,1), (1,0,0).
        p.rotation = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        p.translation = [0.2, -0.3, 0.1];
        let body = extrude_profiles(&[unit_square()], BooleanOp::Add, &p).unwrap();
        assert!((body.mesh.volume() - h).abs() < 1e-12);
        assert!(body.contains(&Point3::new(0.2 - 0.25, -0.3 + 0.5, 0.1 + 0.5)));
        assert!(!body.contains(&Point3::new(0.2 + 0.25, -0.3 + 0.5, 0.1 + 0.5)));
    }

    #[test]
    fn mirrored_rotation_keeps_outward_winding() {
        let mut p = ExtrusionParams::identity([0.0, 1.0]);
        p.rotation = [-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let body = extrude_profiles(&[unit_square()], BooleanOp::Add, &p).unwrap();
        assert!((body.mesh.volume() - 1.0).abs() < 1e-12);
        assert!(body.mesh.is_watertight());
    }

    #[test]
    fn zero_thickness_is_rejected() {
        let err = extrude_profiles(&[unit_square()], BooleanOp::Add, &ExtrusionParams::identity([0.2, 0.2]));
        assert_eq!(err.unwrap_err(), GeometryError::ZeroThickness);
        let m = fixtures::cube_model();
        let mut e = m.bodies[0].extrusion;
        e.params[1] = e.params[0];
        assert_eq!(extrude(&m.bodies[0].sketch, &e, Segments::Auto).unwrap_err(), GeometryError::ZeroThickness);
    }

    #[test]
    fn quantized_rotation_is_orthonormalized() {
        let m = fixtures::cube_model();
        let body = extrude(&m.bodies[0].sketch, &m.bodies[0].extrusion, Segments::Auto).unwrap();
        let r = body.rotation;
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
        assert!((r - Matrix3::identity()).norm() < 1e-12);
        assert!(body.mesh.is_watertight());
        assert!(body.mesh.volume() > 0.0);
    }

    #[test]
    fn holed_faces_make_watertight_prisms() {
        for m in [fixtures::two_face_model(), fixtures::two_body_model()] {
            for b in &m.bodies {
                let body = extrude(&b.sketch, &b.extrusion, Segments::Auto).unwrap();
                assert!(body.mesh.is_watertight());
                let expected: f64 = body.profiles.iter().map(|p| p.area()).sum::<f64>() * body.thickness();
                assert!((body.mesh.volume() - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bad_face_reports_index() {
        let mut m = fixtures::two_face_model();
        m.bodies[0].sketch.faces[1].loops[0] = crate::model::Loop::polygon(&[(0, 0), (10, 10), (10, 0), (0, 10)]);
        let err = extrude(&m.bodies[0].sketch, &m.bodies[0].extrusion, Segments::Auto).unwrap_err();
        assert!(matches!(err, GeometryError::Face { face: 1, .. }));
    }
}
