//! The sketch-and-extrude domain model.
//!
//! A [`CadModel`] is an ordered list of sketch-extrusion bodies. Each body
//! pairs a [`Sketch`] (faces, loops, curves on a 64x64 grid) with an
//! [`Extrusion`] command carrying a boolean operation and 17 quantized
//! numeric parameters.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Number of quantization bins per axis.
pub const GRID_BINS: u32 = 64;
/// Largest valid grid index.
pub const MAX_INDEX: u8 = 63;
/// Number of numeric extrusion parameters (the boolean op is the 18th).
pub const EXTRUSION_PARAM_COUNT: usize = 17;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid quantization range: lo ({lo}) must be less than hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("grid index {0} is outside [0, 63]")]
    IndexOutOfRange(u32),
    #[error("model failed validation: {0}")]
    Invalid(ValidationReport),
}

/// Maps `value` onto one of 64 bins spanning `[lo, hi]`.
///
/// Bins are closed on the right: bin `i` covers `(lo + i*w, lo + (i+1)*w]`
/// with `w = (hi - lo) / 64`, and `lo` itself falls into bin 0. The
/// midpoint of the range therefore lands on index 31.
pub fn quantize(value: f64, lo: f64, hi: f64) -> Result<u8, ModelError> {
    if !(lo < hi) {
        return Err(ModelError::InvalidRange { lo, hi });
    }
    let v = if value.is_nan() { lo } else { value.clamp(lo, hi) };
    let scaled = (v - lo) / (hi - lo) * f64::from(GRID_BINS);
    let idx = scaled.ceil() as i64 - 1;
    Ok(idx.clamp(0, i64::from(MAX_INDEX)) as u8)
}

/// Returns the center of bin `index` within `[lo, hi]`.
pub fn dequantize(index: u8, lo: f64, hi: f64) -> Result<f64, ModelError> {
    if !(lo < hi) {
        return Err(ModelError::InvalidRange { lo, hi });
    }
    if index > MAX_INDEX {
        return Err(ModelError::IndexOutOfRange(index.into()));
    }
    let width = (hi - lo) / f64::from(GRID_BINS);
    Ok(lo + (f64::from(index) + 0.5) * width)
}

/// A point on the 64x64 sketch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCoord {
    pub x: u8,
    pub y: u8,
}

impl GridCoord {
    pub fn new(x: u8, y: u8) -> Result<Self, ModelError> {
        for v in [x, y] {
            if v > MAX_INDEX {
                return Err(ModelError::IndexOutOfRange(v.into()));
            }
        }
        Ok(Self { x, y })
    }

    pub fn in_range(self) -> bool {
        self.x <= MAX_INDEX && self.y <= MAX_INDEX
    }
}

impl From<(u8, u8)> for GridCoord {
    fn from((x, y): (u8, u8)) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Line,
    Arc,
    Circle,
}

impl CurveKind {
    /// Number of stored points. A line keeps only its start and an arc its
    /// start and midpoint; both end where the next curve of the loop begins.
    pub fn point_count(self) -> usize {
        match self {
            CurveKind::Line => 1,
            CurveKind::Arc => 2,
            CurveKind::Circle => 4,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            CurveKind::Line => "line",
            CurveKind::Arc => "arc",
            CurveKind::Circle => "circle",
        }
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub points: Vec<GridCoord>,
}

impl Curve {
    pub fn line(start: impl Into<GridCoord>) -> Self {
        Self { kind: CurveKind::Line, points: vec![start.into()] }
    }

    pub fn arc(start: impl Into<GridCoord>, mid: impl Into<GridCoord>) -> Self {
        Self { kind: CurveKind::Arc, points: vec![start.into(), mid.into()] }
    }

    pub fn circle(points: [(u8, u8); 4]) -> Self {
        Self { kind: CurveKind::Circle, points: points.into_iter().map(GridCoord::from).collect() }
    }

    pub fn start(&self) -> Option<GridCoord> {
        self.points.first().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Loop {
    pub curves: Vec<Curve>,
}

impl Loop {
    pub fn new(curves: Vec<Curve>) -> Self {
        Self { curves }
    }

    /// Closed polygon made of lines through `corners`.
    pub fn polygon(corners: &[(u8, u8)]) -> Self {
        Self { curves: corners.iter().map(|&c| Curve::line(c)).collect() }
    }
}

/// A 2D region: the first loop is the outer boundary, the rest are holes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Face {
    pub loops: Vec<Loop>,
}

impl Face {
    pub fn new(loops: Vec<Loop>) -> Self {
        Self { loops }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sketch {
    pub faces: Vec<Face>,
}

impl Sketch {
    pub fn new(faces: Vec<Face>) -> Self {
        Self { faces }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BooleanOp {
    Add,
    Cut,
    Intersect,
}

impl BooleanOp {
    pub fn keyword(self) -> &'static str {
        match self {
            BooleanOp::Add => "add",
            BooleanOp::Cut => "cut",
            BooleanOp::Intersect => "intersect",
        }
    }
}

impl fmt::Display for BooleanOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Real-valued ranges each extrusion parameter is quantized over.
pub mod ranges {
    pub const EXTENT: (f64, f64) = (-1.0, 1.0);
    pub const TRANSLATION: (f64, f64) = (-1.0, 1.0);
    pub const ROTATION: (f64, f64) = (-1.0, 1.0);
    pub const SCALE: (f64, f64) = (0.0, 2.0);
    pub const SCALE_CENTER: (f64, f64) = (-1.0, 1.0);
    pub const SKETCH: (f64, f64) = (-1.0, 1.0);
}

/// Parameter offsets inside the 17-entry block, in `VVTTTRRRRRRRRRSOO` order.
const EXTENT_AT: usize = 0;
const TRANSLATION_AT: usize = 2;
const ROTATION_AT: usize = 5;
const SCALE_AT: usize = 14;
const SCALE_CENTER_AT: usize = 15;

fn range_of(slot: usize) -> (f64, f64) {
    match slot {
        s if s < TRANSLATION_AT => ranges::EXTENT,
        s if s < ROTATION_AT => ranges::TRANSLATION,
        s if s < SCALE_AT => ranges::ROTATION,
        s if s < SCALE_CENTER_AT => ranges::SCALE,
        _ => ranges::SCALE_CENTER,
    }
}

/// Dequantized extrusion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrusionParams {
    /// Offsets of the top and bottom planes along the extrusion axis.
    pub extent: [f64; 2],
    pub translation: [f64; 3],
    /// Row-major 3x3 matrix whose columns are the sketch plane's x, y and
    /// normal axes.
    pub rotation: [f64; 9],
    pub scale: f64,
    pub scale_center: [f64; 2],
}

impl ExtrusionParams {
    pub fn identity(extent: [f64; 2]) -> Self {
        Self {
            extent,
            translation: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            scale: 1.0,
            scale_center: [0.0; 2],
        }
    }

    fn flatten(&self) -> [f64; EXTRUSION_PARAM_COUNT] {
        let mut out = [0.0; EXTRUSION_PARAM_COUNT];
        out[EXTENT_AT..TRANSLATION_AT].copy_from_slice(&self.extent);
        out[TRANSLATION_AT..ROTATION_AT].copy_from_slice(&self.translation);
        out[ROTATION_AT..SCALE_AT].copy_from_slice(&self.rotation);
        out[SCALE_AT] = self.scale;
        out[SCALE_CENTER_AT..].copy_from_slice(&self.scale_center);
        out
    }
}

/// The 18-parameter extrusion command: a boolean op plus 17 grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Extrusion {
    pub op: BooleanOp,
    pub params: [u8; EXTRUSION_PARAM_COUNT],
}

impl Extrusion {
    pub fn new(op: BooleanOp, params: [u8; EXTRUSION_PARAM_COUNT]) -> Self {
        Self { op, params }
    }

    pub fn quantized(op: BooleanOp, params: &ExtrusionParams) -> Self {
        let mut out = [0u8; EXTRUSION_PARAM_COUNT];
        for (slot, value) in params.flatten().into_iter().enumerate() {
            let (lo, hi) = range_of(slot);
            out[slot] = quantize(value, lo, hi).expect("static ranges are ordered");
        }
        Self { op, params: out }
    }

    pub fn dequantized(&self) -> Result<ExtrusionParams, ModelError> {
        let mut vals = [0.0; EXTRUSION_PARAM_COUNT];
        for (slot, &idx) in self.params.iter().enumerate() {
            let (lo, hi) = range_of(slot);
            vals[slot] = dequantize(idx, lo, hi)?;
        }
        let mut p = ExtrusionParams::identity([0.0; 2]);
        p.extent.copy_from_slice(&vals[EXTENT_AT..TRANSLATION_AT]);
        p.translation.copy_from_slice(&vals[TRANSLATION_AT..ROTATION_AT]);
        p.rotation.copy_from_slice(&vals[ROTATION_AT..SCALE_AT]);
        p.scale = vals[SCALE_AT];
        p.scale_center.copy_from_slice(&vals[SCALE_CENTER_AT..]);
        Ok(p)
    }

    /// True when the top and bottom planes coincide after quantization.
    pub fn is_flat(&self) -> bool {
        self.params[EXTENT_AT] == self.params[EXTENT_AT + 1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SketchExtrusion {
    pub sketch: Sketch,
    pub extrusion: Extrusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CadModel {
    pub bodies: Vec<SketchExtrusion>,
}

impl CadModel {
    pub fn new(bodies: Vec<SketchExtrusion>) -> Self {
        Self { bodies }
    }

    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }
}

/// Location of an element inside the construction hierarchy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HierarchyPath {
    pub body: Option<usize>,
    pub face: Option<usize>,
    pub loop_: Option<usize>,
    pub curve: Option<usize>,
    pub param: Option<usize>,
}

impl HierarchyPath {
    pub fn body(b: usize) -> Self {
        Self { body: Some(b), ..Self::default() }
    }

    pub fn face(b: usize, f: usize) -> Self {
        Self { face: Some(f), ..Self::body(b) }
    }

    pub fn loop_(b: usize, f: usize, l: usize) -> Self {
        Self { loop_: Some(l), ..Self::face(b, f) }
    }

    pub fn curve(b: usize, f: usize, l: usize, c: usize) -> Self {
        Self { curve: Some(c), ..Self::loop_(b, f, l) }
    }

    pub fn param(b: usize, p: usize) -> Self {
        Self { param: Some(p), ..Self::body(b) }
    }
}

impl fmt::Display for HierarchyPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts = [
            ("body", self.body),
            ("face", self.face),
            ("loop", self.loop_),
            ("curve", self.curve),
            ("param", self.param),
        ];
        let mut first = true;
        for (name, idx) in parts {
            if let Some(i) = idx {
                if !first {
                    f.write_str(".")?;
                }
                write!(f, "{name}[{i}]")?;
                first = false;
            }
        }
        if first {
            f.write_str("model")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    NoBodies,
    EmptySketch,
    EmptyFace,
    EmptyLoop,
    PointCount { kind: CurveKind, expected: usize, found: usize },
    CoordOutOfRange { x: u8, y: u8 },
    CircleInMultiCurveLoop,
    ParamOutOfRange { value: u8 },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::NoBodies => write!(f, "model has no sketch-extrusion bodies"),
            ViolationKind::EmptySketch => write!(f, "sketch has no faces"),
            ViolationKind::EmptyFace => write!(f, "face has no loops"),
            ViolationKind::EmptyLoop => write!(f, "loop has no curves"),
            ViolationKind::PointCount { kind, expected, found } => {
                write!(f, "{kind} needs {expected} point(s), found {found}")
            }
            ViolationKind::CoordOutOfRange { x, y } => {
                write!(f, "point ({x}, {y}) is outside the 64x64 grid")
            }
            ViolationKind::CircleInMultiCurveLoop => {
                write!(f, "circle shares its loop with other curves")
            }
            ViolationKind::ParamOutOfRange { value } => {
                write!(f, "extrusion parameter {value} is outside [0, 63]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: HierarchyPath,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: HierarchyPath, kind: ViolationKind) {
        self.violations.push(Violation { path, kind });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&msgs.join("; "))
    }
}

/// Checks every structural rule of the hierarchy and collects violations.
pub fn validate_model(m: &CadModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    if m.bodies.is_empty() {
        report.push(HierarchyPath::default(), ViolationKind::NoBodies);
    }
    for (b, body) in m.bodies.iter().enumerate() {
        if body.sketch.faces.is_empty() {
            report.push(HierarchyPath::body(b), ViolationKind::EmptySketch);
        }
        for (fi, face) in body.sketch.faces.iter().enumerate() {
            if face.loops.is_empty() {
                report.push(HierarchyPath::face(b, fi), ViolationKind::EmptyFace);
            }
            for (li, lp) in face.loops.iter().enumerate() {
                if lp.curves.is_empty() {
                    report.push(HierarchyPath::loop_(b, fi, li), ViolationKind::EmptyLoop);
                }
                let multi = lp.curves.len() > 1;
                for (ci, curve) in lp.curves.iter().enumerate() {
                    let path = HierarchyPath::curve(b, fi, li, ci);
                    let expected = curve.kind.point_count();
                    if curve.points.len() != expected {
                        report.push(
                            path,
                            ViolationKind::PointCount {
                                kind: curve.kind,
                                expected,
                                found: curve.points.len(),
                            },
                        );
                    }
                    for p in curve.points.iter().filter(|p| !p.in_range()) {
                        report.push(path, ViolationKind::CoordOutOfRange { x: p.x, y: p.y });
                    }
                    if multi && curve.kind == CurveKind::Circle {
                        report.push(path, ViolationKind::CircleInMultiCurveLoop);
                    }
                }
            }
        }
        for (slot, &value) in body.extrusion.params.iter().enumerate() {
            if value > MAX_INDEX {
                report.push(HierarchyPath::param(b, slot), ViolationKind::ParamOutOfRange { value });
            }
        }
    }
    report
}

/// SHA-256 digest of a model's canonical text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelDigest(pub [u8; 32]);

impl ModelDigest {
    pub fn of_canonical_text(text: &str) -> Self {
        Self(Sha256::digest(text.as_bytes()).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for ModelDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Digest of the canonical serialized text; equal models give equal digests.
pub fn canonical_hash(m: &CadModel) -> Result<ModelDigest, ModelError> {
    let text = crate::codec::serialize(m).map_err(|e| match e {
        crate::codec::CodecError::Invalid(r) => ModelError::Invalid(r),
    })?;
    Ok(ModelDigest::of_canonical_text(text.as_str()))
}
