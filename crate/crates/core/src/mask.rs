//! Hierarchy-aware masking, prompt templates and infilling.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    self, render_tokens, serialize_with_layout, BodyLayout, CadText, CodecError, LexError,
    MaskKind, ParseError, TokenKind, SEPARATOR,
};
use crate::model::CadModel;

/// Preamble of the unconditional-generation template.
pub const UNCONDITIONAL_PREAMBLE: &str = "Below is a description of a CAD sequence:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Cad,
    SketchExtrusion,
    Sketch,
    Extrusion,
    Face,
    Loop,
    Curve,
    Unconditional,
}

impl Level {
    /// The seven construction levels a mask can target.
    pub const HIERARCHY: [Level; 7] = [
        Level::Cad,
        Level::SketchExtrusion,
        Level::Sketch,
        Level::Extrusion,
        Level::Face,
        Level::Loop,
        Level::Curve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Level::Cad => "cad",
            Level::SketchExtrusion => "sketch-extrusion",
            Level::Sketch => "sketch",
            Level::Extrusion => "extrusion",
            Level::Face => "face",
            Level::Loop => "loop",
            Level::Curve => "curve",
            Level::Unconditional => "unconditional",
        }
    }

    /// Number of path indices a selection at this level carries.
    pub fn path_depth(self) -> usize {
        match self {
            Level::Cad | Level::Unconditional => 0,
            Level::SketchExtrusion | Level::Sketch | Level::Extrusion | Level::Face => 1,
            Level::Loop => 2,
            Level::Curve => 3,
        }
    }

    /// Instruction preamble for masked prompts at this level.
    pub fn preamble(self) -> String {
        match self {
            Level::Unconditional => UNCONDITIONAL_PREAMBLE.to_string(),
            l => format!("Below is a CAD sequence with masked {} fields. Infill them:", l.name()),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Level::HIERARCHY
            .into_iter()
            .chain([Level::Unconditional])
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown level {s:?}"))
    }
}

/// Preamble used for random-span masks, which do not align with any level.
pub const RANDOM_SPAN_PREAMBLE: &str = "Below is a CAD sequence with masked fields. Infill them:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("selection path {path:?} does not fit level {level}")]
    PathDepth { level: Level, path: Vec<usize> },
    #[error("selection path {0:?} is out of range for this model")]
    OutOfRange(Vec<usize>),
    #[error("the unconditional level has no maskable field")]
    Unconditional,
    #[error("token range {start}..{end} does not cover one complete field")]
    Alignment { start: usize, end: usize },
}

/// A set of sibling fields to mask, addressed by a hierarchy path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskSelection {
    pub level: Level,
    pub path: Vec<usize>,
}

impl MaskSelection {
    pub fn new(level: Level, path: Vec<usize>) -> Result<Self, MaskError> {
        if level == Level::Unconditional {
            return Err(MaskError::Unconditional);
        }
        if path.len() != level.path_depth() {
            return Err(MaskError::PathDepth { level, path });
        }
        Ok(Self { level, path })
    }
}

/// Every selection at `level`, in document order.
pub fn enumerate_selections(m: &CadModel, level: Level) -> Vec<MaskSelection> {
    let sel = |path: Vec<usize>| MaskSelection { level, path };
    match level {
        Level::Unconditional => Vec::new(),
        Level::Cad => vec![sel(vec![])],
        Level::SketchExtrusion | Level::Sketch | Level::Extrusion | Level::Face => {
            (0..m.bodies.len()).map(|b| sel(vec![b])).collect()
        }
        Level::Loop => m
            .bodies
            .iter()
            .enumerate()
            .flat_map(|(b, body)| (0..body.sketch.faces.len()).map(move |f| vec![b, f]))
            .map(sel)
            .collect(),
        Level::Curve => m
            .bodies
            .iter()
            .enumerate()
            .flat_map(|(b, body)| {
                body.sketch.faces.iter().enumerate().flat_map(move |(f, face)| {
                    (0..face.loops.len()).map(move |l| vec![b, f, l])
                })
            })
            .map(sel)
            .collect(),
    }
}

/// A masked token stream and the original spans its masks replaced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedText {
    pub tokens: Vec<TokenKind>,
    pub answer_spans: Vec<Vec<TokenKind>>,
}

impl MaskedText {
    pub fn text(&self) -> String {
        render_tokens(&self.tokens)
    }

    pub fn mask_count(&self) -> usize {
        self.tokens.iter().filter(|t| matches!(t, TokenKind::Mask(_))).count()
    }

    /// Answer spans joined by the separator token.
    pub fn answer(&self) -> String {
        self.answer_spans
            .iter()
            .map(|s| render_tokens(s))
            .collect::<Vec<_>>()
            .join(&format!(" {SEPARATOR} "))
    }

    /// Replaces every level-specific mask token with the generic `[mask]`.
    pub fn into_generic(mut self) -> Self {
        for t in &mut self.tokens {
            if let TokenKind::Mask(_) = t {
                *t = TokenKind::Mask(MaskKind::Generic);
            }
        }
        self
    }
}

fn replace_spans(tokens: &[TokenKind], spans: &[(Range<usize>, MaskKind)]) -> MaskedText {
    let mut out = Vec::with_capacity(tokens.len());
    let mut answers = Vec::with_capacity(spans.len());
    let mut cursor = 0;
    for (span, kind) in spans {
        out.extend_from_slice(&tokens[cursor..span.start]);
        out.push(TokenKind::Mask(*kind));
        answers.push(tokens[span.clone()].to_vec());
        cursor = span.end;
    }
    out.extend_from_slice(&tokens[cursor..]);
    MaskedText { tokens: out, answer_spans: answers }
}

fn selection_spans(
    layout: &[BodyLayout],
    sel: &MaskSelection,
) -> Result<Vec<(Range<usize>, MaskKind)>, MaskError> {
    let oob = || MaskError::OutOfRange(sel.path.clone());
    let body = |i: usize| layout.get(i).ok_or_else(oob);
    Ok(match sel.level {
        Level::Unconditional => return Err(MaskError::Unconditional),
        Level::Cad => layout.iter().map(|b| (b.span.clone(), MaskKind::SketchExtrusion)).collect(),
        Level::SketchExtrusion => vec![(body(sel.path[0])?.span.clone(), MaskKind::SketchExtrusion)],
        Level::Sketch => vec![(body(sel.path[0])?.sketch.clone(), MaskKind::Sketch)],
        Level::Extrusion => vec![(body(sel.path[0])?.extrusion.clone(), MaskKind::Extrusion)],
        Level::Face => body(sel.path[0])?
            .faces
            .iter()
            .map(|f| (f.span.clone(), MaskKind::Face))
            .collect(),
        Level::Loop => body(sel.path[0])?
            .faces
            .get(sel.path[1])
            .ok_or_else(oob)?
            .loops
            .iter()
            .map(|l| (l.span.clone(), MaskKind::Loop))
            .collect(),
        Level::Curve => body(sel.path[0])?
            .faces
            .get(sel.path[1])
            .ok_or_else(oob)?
            .loops
            .get(sel.path[2])
            .ok_or_else(oob)?
            .curves
            .iter()
            .map(|(k, s)| (s.clone(), MaskKind::Curve(*k)))
            .collect(),
    })
}

/// Canonical tokens and field layout of a model, computed once and reused
/// across many selections.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub tokens: Vec<TokenKind>,
    pub layout: Vec<BodyLayout>,
}

impl PreparedModel {
    pub fn new(m: &CadModel) -> Result<Self, CodecError> {
        let (tokens, layout) = serialize_with_layout(m)?;
        Ok(Self { tokens, layout })
    }

    pub fn text(&self) -> String {
        render_tokens(&self.tokens)
    }

    pub fn apply(&self, sel: &MaskSelection) -> Result<MaskedText, MaskError> {
        if sel.path.len() != sel.level.path_depth() {
            return Err(MaskError::PathDepth { level: sel.level, path: sel.path.clone() });
        }
        let spans = selection_spans(&self.layout, sel)?;
        Ok(replace_spans(&self.tokens, &spans))
    }

    /// Every complete field as (token range, mask kind), outermost first.
    fn fields(&self) -> Vec<(Range<usize>, MaskKind)> {
        let mut out = Vec::new();
        for b in &self.layout {
            out.push((b.span.clone(), MaskKind::SketchExtrusion));
            out.push((b.sketch.clone(), MaskKind::Sketch));
            out.push((b.extrusion.clone(), MaskKind::Extrusion));
            for f in &b.faces {
                out.push((f.span.clone(), MaskKind::Face));
                for l in &f.loops {
                    out.push((l.span.clone(), MaskKind::Loop));
                    out.extend(l.curves.iter().map(|(k, s)| (s.clone(), MaskKind::Curve(*k))));
                }
            }
        }
        out
    }

    /// Masks exactly the one field covering `range`.
    pub fn mask_range(&self, range: Range<usize>) -> Result<MaskedText, MaskError> {
        let field = self
            .fields()
            .into_iter()
            .find(|(span, _)| *span == range)
            .ok_or(MaskError::Alignment { start: range.start, end: range.end })?;
        Ok(replace_spans(&self.tokens, &[field]))
    }
}

/// Replaces the selected sibling fields of `serialize(m)` with mask tokens.
pub fn apply_mask(m: &CadModel, sel: &MaskSelection) -> Result<MaskedText, MaskError> {
    PreparedModel::new(m)?.apply(sel)
}

/// Masks the single field spanning `range` (token indices, half-open) of a
/// mask-free text, even when it has siblings.
pub fn user_mask(t: &CadText, range: Range<usize>) -> Result<MaskedText, MaskError> {
    let model = codec::parse(t)?;
    PreparedModel::new(&model)?.mask_range(range)
}

/// Masks a random contiguous span covering 15-50% of the tokens with `[mask]`.
pub fn random_span_mask<R: Rng + ?Sized>(tokens: &[TokenKind], rng: &mut R) -> MaskedText {
    let n = tokens.len();
    let lo = ((n as f64) * 0.15).ceil().max(1.0) as usize;
    let hi = (((n as f64) * 0.5).floor() as usize).max(lo).min(n);
    let len = rng.gen_range(lo..=hi);
    let start = rng.gen_range(0..=n - len);
    replace_spans(tokens, &[(start..start + len, MaskKind::Generic)])
}

/// An instruction/answer training pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub instruction: String,
    pub answer: String,
}

impl PromptExample {
    /// The masked text carried by the instruction (everything after the
    /// preamble line).
    pub fn masked_text(&self) -> &str {
        self.instruction.split_once('\n').map_or("", |(_, rest)| rest)
    }
}

pub fn build_prompt(mt: &MaskedText, level: Level) -> PromptExample {
    build_prompt_with_preamble(mt, &level.preamble())
}

pub fn build_prompt_with_preamble(mt: &MaskedText, preamble: &str) -> PromptExample {
    PromptExample { instruction: format!("{preamble}\n{}", mt.text()), answer: mt.answer() }
}

/// Unconditional template: the fixed preamble and the whole text as answer.
pub fn unconditional_prompt(text: &str) -> PromptExample {
    PromptExample { instruction: UNCONDITIONAL_PREAMBLE.to_string(), answer: text.to_string() }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InfillError {
    #[error("masked text is not lexically valid: {0}")]
    MaskedText(LexError),
    #[error("prediction has {found} segment(s) but the text has {expected} mask(s)")]
    SegmentCount { expected: usize, found: usize },
    #[error("invalid prediction: {0}")]
    InvalidPrediction(ParseError),
}

/// Substitutes the `<sep>`-separated segments of `prediction` for the mask
/// tokens of `masked` in order, and returns the completed canonical text.
pub fn infill(masked: &str, prediction: &str) -> Result<CadText, InfillError> {
    let tokens = codec::tokenize(masked).map_err(InfillError::MaskedText)?;
    let masks = tokens.iter().filter(|t| matches!(t.kind, TokenKind::Mask(_))).count();
    let segments: Vec<&str> = prediction.split(SEPARATOR).collect();
    if segments.len() != masks {
        return Err(InfillError::SegmentCount { expected: masks, found: segments.len() });
    }
    let mut filled = String::with_capacity(masked.len() + prediction.len());
    let mut seg = segments.into_iter();
    for t in &tokens {
        let piece = match t.kind {
            TokenKind::Mask(_) => seg.next().unwrap_or_default().to_string(),
            k => k.text(),
        };
        filled.push(' ');
        filled.push_str(&piece);
    }
    let invalid = |e: ParseError| InfillError::InvalidPrediction(e);
    let text = CadText::new(filled).map_err(|e| invalid(ParseError { index: 0, kind: e.into() }))?;
    let model = codec::parse(&text).map_err(invalid)?;
    Ok(codec::serialize(&model).expect("parsed models are valid"))
}
