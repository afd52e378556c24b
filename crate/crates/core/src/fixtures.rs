//! Small hand-built models and a random model generator, shared by tests,
//! benchmarks and the acceptance suite.

use rand::Rng;

use crate::model::{
    BooleanOp, CadModel, Curve, CurveKind, Extrusion, ExtrusionParams, Face, GridCoord, Loop,
    Sketch, SketchExtrusion, EXTRUSION_PARAM_COUNT, MAX_INDEX,
};

/// Extrusion with identity rotation, unit-ish scale and planes at the given
/// extent indices.
pub fn extrusion(op: BooleanOp, top: u8, bottom: u8) -> Extrusion {
    let mut e = Extrusion::quantized(op, &ExtrusionParams::identity([0.0, 0.0]));
    e.params[0] = top;
    e.params[1] = bottom;
    e
}

pub fn square_loop(lo: u8, hi: u8) -> Loop {
    Loop::polygon(&[(lo, lo), (hi, lo), (hi, hi), (lo, hi)])
}

pub fn circle_loop(cx: u8, cy: u8, r: u8) -> Loop {
    Loop::new(vec![Curve::circle([(cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)])])
}

/// Arc-line-arc-line stadium loop.
pub fn slot_loop() -> Loop {
    Loop::new(vec![
        Curve::arc((16, 24), (8, 32)),
        Curve::line((16, 40)),
        Curve::arc((48, 40), (56, 32)),
        Curve::line((48, 24)),
    ])
}

pub fn body(faces: Vec<Face>, extrusion: Extrusion) -> SketchExtrusion {
    SketchExtrusion { sketch: Sketch::new(faces), extrusion }
}

/// One square face extruded into a box.
pub fn cube_model() -> CadModel {
    CadModel::new(vec![body(
        vec![Face::new(vec![square_loop(8, 56)])],
        extrusion(BooleanOp::Add, 47, 15),
    )])
}

/// One body, two faces, three loops: a square with a circular hole next to a
/// plain square.
pub fn two_face_model() -> CadModel {
    let left = Face::new(vec![
        Loop::polygon(&[(4, 16), (30, 16), (30, 48), (4, 48)]),
        circle_loop(17, 32, 8),
    ]);
    let right = Face::new(vec![Loop::polygon(&[(34, 16), (60, 16), (60, 48), (34, 48)])]);
    CadModel::new(vec![body(vec![left, right], extrusion(BooleanOp::Add, 40, 31))])
}

/// Two bodies: a plate with a hole, then a stadium-shaped boss.
pub fn two_body_model() -> CadModel {
    let plate = Face::new(vec![square_loop(4, 59), circle_loop(31, 31, 12)]);
    let boss = Face::new(vec![slot_loop()]);
    CadModel::new(vec![
        body(vec![plate], extrusion(BooleanOp::Add, 36, 31)),
        body(vec![boss], extrusion(BooleanOp::Add, 50, 36)),
    ])
}

/// Structural limits for [`random_model`].
#[derive(Debug, Clone, Copy)]
pub struct RandomLimits {
    pub max_bodies: usize,
    pub max_faces: usize,
    pub max_loops: usize,
    pub max_curves: usize,
}

impl Default for RandomLimits {
    fn default() -> Self {
        Self { max_bodies: 3, max_faces: 3, max_loops: 3, max_curves: 6 }
    }
}

fn coord<R: Rng + ?Sized>(rng: &mut R) -> GridCoord {
    GridCoord { x: rng.gen_range(0..=MAX_INDEX), y: rng.gen_range(0..=MAX_INDEX) }
}

fn random_loop<R: Rng + ?Sized>(rng: &mut R, limits: &RandomLimits) -> Loop {
    if rng.gen_bool(0.25) {
        return Loop::new(vec![Curve {
            kind: CurveKind::Circle,
            points: (0..4).map(|_| coord(rng)).collect(),
        }]);
    }
    let n = rng.gen_range(1..=limits.max_curves.max(1));
    let curves = (0..n)
        .map(|_| {
            let kind = if rng.gen_bool(0.7) { CurveKind::Line } else { CurveKind::Arc };
            Curve { kind, points: (0..kind.point_count()).map(|_| coord(rng)).collect() }
        })
        .collect();
    Loop::new(curves)
}

/// A structurally valid model with random coordinates. Geometry is not
/// guaranteed to be renderable.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, limits: &RandomLimits) -> CadModel {
    let bodies = (0..rng.gen_range(1..=limits.max_bodies))
        .map(|_| {
            let faces = (0..rng.gen_range(1..=limits.max_faces))
                .map(|_| {
                    Face::new(
                        (0..rng.gen_range(1..=limits.max_loops))
                            .map(|_| random_loop(rng, limits))
                            .collect(),
                    )
                })
                .collect();
            let op = match rng.gen_range(0..3) {
                0 => BooleanOp::Add,
                1 => BooleanOp::Cut,
                _ => BooleanOp::Intersect,
            };
            let mut params = [0u8; EXTRUSION_PARAM_COUNT];
            for p in params.iter_mut() {
                *p = rng.gen_range(0..=MAX_INDEX);
            }
            body(faces, Extrusion::new(op, params))
        })
        .collect();
    CadModel::new(bodies)
}
