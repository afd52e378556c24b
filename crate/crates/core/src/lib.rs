//! Sketch-and-extrude CAD models as structured text.
//!
//! * [`model`]: the construction hierarchy, quantization and hashing.
//! * [`codec`]: canonical text serialization, tokenizer and parser.
//! * [`mask`]: hierarchy-aware masking, prompt templates and infilling.
//! * [`geometry`]: tessellation, extrusion, voxel booleans and exports.
//! * [`metrics`]: COV, MMD, JSD, Novel, Unique and prediction validity.
//! * [`dataset`]: source ingestion, dedup, splits and corpus emission.

pub mod codec;
pub mod dataset;
pub mod fixtures;
pub mod geometry;
pub mod mask;
pub mod metrics;
pub mod model;

pub use codec::{parse, parse_str, serialize, tokenize, validate_text, CadText, ParseError};
pub use mask::{
    apply_mask, build_prompt, enumerate_selections, infill, user_mask, Level, MaskSelection,
    MaskedText, PromptExample,
};
pub use model::{
    canonical_hash, quantize, validate_model, BooleanOp, CadModel, Curve, CurveKind, Extrusion,
    Face, GridCoord, Loop, ModelDigest, Sketch, SketchExtrusion, ValidationReport,
};
