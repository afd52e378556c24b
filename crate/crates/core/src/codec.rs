//! Structured CAD text: serialization, tokenization and parsing.
//!
//! Grammar of a canonical text (tokens separated by single spaces):
//!
//! ```text
//! model     := body+
//! body      := sketch extrusion
//! sketch    := face+ "sketch_end"
//! face      := loop+ "face_end"
//! loop      := curve+ "loop_end"
//! curve     := ("line" | "arc" | "circle") number* "curve_end"
//! extrusion := ("add" | "cut" | "intersect") number{17} "extrusion_end"
//! number    := 0..=63 in decimal, no leading zeros
//! ```
//!
//! A masked text may replace any field (including its end marker) with the
//! matching mask token, e.g. `[loop mask]`.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_model, BooleanOp, CadModel, Curve, CurveKind, Extrusion, Face, GridCoord, Loop,
    Sketch, SketchExtrusion, ValidationReport, EXTRUSION_PARAM_COUNT, MAX_INDEX,
};

pub const SEPARATOR: &str = "<sep>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EndMarker {
    Curve,
    Loop,
    Face,
    Sketch,
    Extrusion,
}

impl EndMarker {
    pub fn as_str(self) -> &'static str {
        match self {
            EndMarker::Curve => "curve_end",
            EndMarker::Loop => "loop_end",
            EndMarker::Face => "face_end",
            EndMarker::Sketch => "sketch_end",
            EndMarker::Extrusion => "extrusion_end",
        }
    }
}

/// The field a mask token stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskKind {
    SketchExtrusion,
    Sketch,
    Extrusion,
    Face,
    Loop,
    Curve(CurveKind),
    /// Level-agnostic `[mask]`.
    Generic,
}

impl MaskKind {
    pub fn token(self) -> &'static str {
        match self {
            MaskKind::SketchExtrusion => "[sketch-extrusion mask]",
            MaskKind::Sketch => "[sketch mask]",
            MaskKind::Extrusion => "[extrusion mask]",
            MaskKind::Face => "[face mask]",
            MaskKind::Loop => "[loop mask]",
            MaskKind::Curve(CurveKind::Line) => "[line mask]",
            MaskKind::Curve(CurveKind::Arc) => "[arc mask]",
            MaskKind::Curve(CurveKind::Circle) => "[circle mask]",
            MaskKind::Generic => "[mask]",
        }
    }

    fn from_inner(inner: &str) -> Option<Self> {
        Some(match inner {
            "sketch-extrusion mask" => MaskKind::SketchExtrusion,
            "sketch mask" => MaskKind::Sketch,
            "extrusion mask" => MaskKind::Extrusion,
            "face mask" => MaskKind::Face,
            "loop mask" => MaskKind::Loop,
            "line mask" => MaskKind::Curve(CurveKind::Line),
            "arc mask" => MaskKind::Curve(CurveKind::Arc),
            "circle mask" => MaskKind::Curve(CurveKind::Circle),
            "mask" => MaskKind::Generic,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    CurveKeyword(CurveKind),
    Number(u8),
    End(EndMarker),
    Op(BooleanOp),
    Mask(MaskKind),
    Separator,
}

impl TokenKind {
    /// Canonical surface form.
    pub fn text(&self) -> String {
        match self {
            TokenKind::CurveKeyword(k) => k.keyword().to_string(),
            TokenKind::Number(n) => n.to_string(),
            TokenKind::End(e) => e.as_str().to_string(),
            TokenKind::Op(op) => op.keyword().to_string(),
            TokenKind::Mask(m) => m.token().to_string(),
            TokenKind::Separator => SEPARATOR.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Byte offset of the token in the source string.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("lexical error at byte {offset}: {reason} ({found:?})")]
pub struct LexError {
    pub offset: usize,
    pub found: String,
    pub reason: &'static str,
}

fn classify(word: &str) -> Result<TokenKind, &'static str> {
    Ok(match word {
        "line" => TokenKind::CurveKeyword(CurveKind::Line),
        "arc" => TokenKind::CurveKeyword(CurveKind::Arc),
        "circle" => TokenKind::CurveKeyword(CurveKind::Circle),
        "curve_end" => TokenKind::End(EndMarker::Curve),
        "loop_end" => TokenKind::End(EndMarker::Loop),
        "face_end" => TokenKind::End(EndMarker::Face),
        "sketch_end" => TokenKind::End(EndMarker::Sketch),
        "extrusion_end" => TokenKind::End(EndMarker::Extrusion),
        "add" => TokenKind::Op(BooleanOp::Add),
        "cut" => TokenKind::Op(BooleanOp::Cut),
        "intersect" => TokenKind::Op(BooleanOp::Intersect),
        SEPARATOR => TokenKind::Separator,
        w if !w.is_empty() && w.bytes().all(|b| b.is_ascii_digit()) => {
            if w.len() > 1 && w.starts_with('0') {
                return Err("number has a leading zero");
            }
            match w.parse::<u32>() {
                Ok(n) if n <= u32::from(MAX_INDEX) => TokenKind::Number(n as u8),
                _ => return Err("number outside [0, 63]"),
            }
        }
        _ => return Err("unknown token"),
    })
}

/// Splits on whitespace and classifies each token. Bracketed mask tokens
/// such as `[loop mask]` are read as a single token.
pub fn tokenize(raw: &str) -> Result<Vec<Token>, LexError> {
    let bytes = raw.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if bytes[i] == b'[' {
            let Some(close) = raw[start..].find(']') else {
                return Err(LexError {
                    offset: start,
                    found: raw[start..].to_string(),
                    reason: "unterminated mask token",
                });
            };
            let end = start + close + 1;
            let inner: Vec<&str> = raw[start + 1..end - 1].split_ascii_whitespace().collect();
            let kind = MaskKind::from_inner(&inner.join(" ")).ok_or_else(|| LexError {
                offset: start,
                found: raw[start..end].to_string(),
                reason: "unknown mask token",
            })?;
            tokens.push(Token { kind: TokenKind::Mask(kind), offset: start });
            i = end;
            continue;
        }
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let word = &raw[start..i];
        let kind = classify(word).map_err(|reason| LexError {
            offset: start,
            found: word.to_string(),
            reason,
        })?;
        tokens.push(Token { kind, offset: start });
    }
    Ok(tokens)
}

/// Joins token surface forms with single spaces.
pub fn render_tokens<'a>(kinds: impl IntoIterator<Item = &'a TokenKind>) -> String {
    let mut out = String::new();
    for (i, k) in kinds.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&k.text());
    }
    out
}

/// A CAD text together with its token stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CadText {
    raw: String,
    tokens: Vec<Token>,
}

impl CadText {
    pub fn new(raw: impl Into<String>) -> Result<Self, LexError> {
        let raw = raw.into();
        let tokens = tokenize(&raw)?;
        Ok(Self { raw, tokens })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn kinds(&self) -> Vec<TokenKind> {
        self.tokens.iter().map(|t| t.kind).collect()
    }

    /// Single-space separated form of the token stream.
    pub fn normalized(&self) -> String {
        render_tokens(self.tokens.iter().map(|t| &t.kind))
    }

    pub fn into_string(self) -> String {
        self.raw
    }
}

impl fmt::Display for CadText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("model failed validation: {0}")]
    Invalid(ValidationReport),
}

/// Half-open token index range.
pub type Span = Range<usize>;

/// Token spans of every field of one body in its canonical serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyLayout {
    pub span: Span,
    pub sketch: Span,
    pub extrusion: Span,
    pub faces: Vec<FaceLayout>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceLayout {
    pub span: Span,
    pub loops: Vec<LoopLayout>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopLayout {
    pub span: Span,
    pub curves: Vec<(CurveKind, Span)>,
}

fn push_curve(out: &mut Vec<TokenKind>, c: &Curve) {
    out.push(TokenKind::CurveKeyword(c.kind));
    for p in &c.points {
        out.push(TokenKind::Number(p.x));
        out.push(TokenKind::Number(p.y));
    }
    out.push(TokenKind::End(EndMarker::Curve));
}

/// Canonical token stream of `m` plus the span of every field.
pub fn serialize_with_layout(
    m: &CadModel,
) -> Result<(Vec<TokenKind>, Vec<BodyLayout>), CodecError> {
    let report = validate_model(m);
    if !report.is_ok() {
        return Err(CodecError::Invalid(report));
    }
    let mut out = Vec::new();
    let mut layout = Vec::with_capacity(m.bodies.len());
    for body in &m.bodies {
        let body_start = out.len();
        let mut faces = Vec::with_capacity(body.sketch.faces.len());
        for face in &body.sketch.faces {
            let face_start = out.len();
            let mut loops = Vec::with_capacity(face.loops.len());
            for lp in &face.loops {
                let loop_start = out.len();
                let mut curves = Vec::with_capacity(lp.curves.len());
                for c in &lp.curves {
                    let s = out.len();
                    push_curve(&mut out, c);
                    curves.push((c.kind, s..out.len()));
                }
                out.push(TokenKind::End(EndMarker::Loop));
                loops.push(LoopLayout { span: loop_start..out.len(), curves });
            }
            out.push(TokenKind::End(EndMarker::Face));
            faces.push(FaceLayout { span: face_start..out.len(), loops });
        }
        out.push(TokenKind::End(EndMarker::Sketch));
        let sketch = body_start..out.len();
        let ext_start = out.len();
        out.push(TokenKind::Op(body.extrusion.op));
        out.extend(body.extrusion.params.iter().map(|&p| TokenKind::Number(p)));
        out.push(TokenKind::End(EndMarker::Extrusion));
        layout.push(BodyLayout {
            span: body_start..out.len(),
            sketch,
            extrusion: ext_start..out.len(),
            faces,
        });
    }
    Ok((out, layout))
}

/// Canonical text of a valid model.
pub fn serialize(m: &CadModel) -> Result<CadText, CodecError> {
    let (kinds, _) = serialize_with_layout(m)?;
    let raw = render_tokens(&kinds);
    let mut offset = 0;
    let tokens = kinds
        .into_iter()
        .map(|kind| {
            let t = Token { kind, offset };
            offset += kind.text().len() + 1;
            t
        })
        .collect();
    Ok(CadText { raw, tokens })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("empty text: a model needs at least one sketch-extrusion")]
    Empty,
    #[error("text ended early; expected {expected}")]
    Truncated { expected: &'static str },
    #[error("expected {expected}, found {found:?}")]
    Unexpected { expected: &'static str, found: String },
    #[error("{kind} takes {expected} coordinate numbers, found {found}")]
    Arity { kind: CurveKind, expected: usize, found: usize },
    #[error("extrusion takes {EXTRUSION_PARAM_COUNT} numbers, found {found}")]
    ExtrusionArity { found: usize },
    #[error("mask token {0:?} is not allowed here")]
    MaskPresent(String),
    #[error("trailing tokens after the last extrusion_end")]
    Trailing,
    #[error("structural rule violated: {0}")]
    Structure(ValidationReport),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at token {index}: {kind}")]
pub struct ParseError {
    /// Token index the error refers to (the token count when the text ended early).
    pub index: usize,
    pub kind: ParseErrorKind,
}

/// Parsed value, or a placeholder for a masked field.
enum Node<T> {
    Full(T),
    Masked,
}

impl<T> Node<T> {
    fn full(self) -> Option<T> {
        match self {
            Node::Full(t) => Some(t),
            Node::Masked => None,
        }
    }
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    allow_masks: bool,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<TokenKind> {
        self.tokens.get(self.pos).map(|t| t.kind)
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { index: self.pos, kind }
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        match self.peek() {
            None => self.err(ParseErrorKind::Truncated { expected }),
            Some(k) => self.err(ParseErrorKind::Unexpected { expected, found: k.text() }),
        }
    }

    fn expect_end(&mut self, marker: EndMarker) -> Result<(), ParseError> {
        if self.peek() == Some(TokenKind::End(marker)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(marker.as_str()))
        }
    }

    /// Consumes a mask token if the current position holds one that fits.
    fn take_mask(&mut self, accepts: impl Fn(MaskKind) -> bool) -> Result<bool, ParseError> {
        match self.peek() {
            Some(TokenKind::Mask(m)) if accepts(m) || m == MaskKind::Generic => {
                if !self.allow_masks {
                    return Err(self.err(ParseErrorKind::MaskPresent(m.token().to_string())));
                }
                self.pos += 1;
                Ok(true)
            }
            Some(TokenKind::Mask(m)) if !self.allow_masks => {
                Err(self.err(ParseErrorKind::MaskPresent(m.token().to_string())))
            }
            _ => Ok(false),
        }
    }

    fn numbers(&mut self) -> Vec<u8> {
        let mut out = Vec::new();
        while let Some(TokenKind::Number(n)) = self.peek() {
            out.push(n);
            self.pos += 1;
        }
        out
    }

    fn model(&mut self) -> Result<Node<CadModel>, ParseError> {
        if self.tokens.is_empty() {
            return Err(self.err(ParseErrorKind::Empty));
        }
        let mut bodies = Vec::new();
        let mut masked = false;
        while self.pos < self.tokens.len() {
            match self.body()? {
                Node::Full(b) => bodies.push(b),
                Node::Masked => masked = true,
            }
        }
        Ok(if masked { Node::Masked } else { Node::Full(CadModel::new(bodies)) })
    }

    fn body(&mut self) -> Result<Node<SketchExtrusion>, ParseError> {
        if self.take_mask(|m| m == MaskKind::SketchExtrusion)? {
            return Ok(Node::Masked);
        }
        let sketch = self.sketch()?;
        let extrusion = self.extrusion()?;
        Ok(match (sketch.full(), extrusion.full()) {
            (Some(sketch), Some(extrusion)) => Node::Full(SketchExtrusion { sketch, extrusion }),
            _ => Node::Masked,
        })
    }

    fn sketch(&mut self) -> Result<Node<Sketch>, ParseError> {
        if self.take_mask(|m| m == MaskKind::Sketch)? {
            return Ok(Node::Masked);
        }
        let mut faces = Vec::new();
        let mut masked = false;
        loop {
            match self.face()? {
                Node::Full(f) => faces.push(f),
                Node::Masked => masked = true,
            }
            if self.peek() == Some(TokenKind::End(EndMarker::Sketch)) {
                self.pos += 1;
                break;
            }
        }
        Ok(if masked { Node::Masked } else { Node::Full(Sketch::new(faces)) })
    }

    fn face(&mut self) -> Result<Node<Face>, ParseError> {
        if self.take_mask(|m| m == MaskKind::Face)? {
            return Ok(Node::Masked);
        }
        let mut loops = Vec::new();
        let mut masked = false;
        loop {
            match self.loop_()? {
                Node::Full(l) => loops.push(l),
                Node::Masked => masked = true,
            }
            if self.peek() == Some(TokenKind::End(EndMarker::Face)) {
                self.pos += 1;
                break;
            }
        }
        Ok(if masked { Node::Masked } else { Node::Full(Face::new(loops)) })
    }

    fn loop_(&mut self) -> Result<Node<Loop>, ParseError> {
        if self.take_mask(|m| m == MaskKind::Loop)? {
            return Ok(Node::Masked);
        }
        let mut curves = Vec::new();
        let mut masked = false;
        loop {
            match self.curve()? {
                Node::Full(c) => curves.push(c),
                Node::Masked => masked = true,
            }
            if self.peek() == Some(TokenKind::End(EndMarker::Loop)) {
                self.pos += 1;
                break;
            }
        }
        Ok(if masked { Node::Masked } else { Node::Full(Loop::new(curves)) })
    }

    fn curve(&mut self) -> Result<Node<Curve>, ParseError> {
        if self.take_mask(|m| matches!(m, MaskKind::Curve(_)))? {
            return Ok(Node::Masked);
        }
        let Some(TokenKind::CurveKeyword(kind)) = self.peek() else {
            return Err(self.unexpected("a curve (line, arc or circle)"));
        };
        let at = self.pos;
        self.pos += 1;
        let nums = self.numbers();
        let expected = kind.point_count() * 2;
        if nums.len() != expected {
            return Err(ParseError {
                index: at,
                kind: ParseErrorKind::Arity { kind, expected, found: nums.len() },
            });
        }
        self.expect_end(EndMarker::Curve)?;
        let points = nums.chunks(2).map(|xy| GridCoord { x: xy[0], y: xy[1] }).collect();
        Ok(Node::Full(Curve { kind, points }))
    }

    fn extrusion(&mut self) -> Result<Node<Extrusion>, ParseError> {
        if self.take_mask(|m| m == MaskKind::Extrusion)? {
            return Ok(Node::Masked);
        }
        let Some(TokenKind::Op(op)) = self.peek() else {
            return Err(self.unexpected("an extrusion operation (add, cut or intersect)"));
        };
        let at = self.pos;
        self.pos += 1;
        let nums = self.numbers();
        let params: [u8; EXTRUSION_PARAM_COUNT] = nums.as_slice().try_into().map_err(|_| ParseError {
            index: at,
            kind: ParseErrorKind::ExtrusionArity { found: nums.len() },
        })?;
        self.expect_end(EndMarker::Extrusion)?;
        Ok(Node::Full(Extrusion::new(op, params)))
    }
}

fn parse_tokens(tokens: &[Token], allow_masks: bool) -> Result<Node<CadModel>, ParseError> {
    let mut p = Parser { tokens, pos: 0, allow_masks };
    let node = p.model()?;
    if p.pos != tokens.len() {
        return Err(p.err(ParseErrorKind::Trailing));
    }
    if let Node::Full(m) = &node {
        let report = validate_model(m);
        if !report.is_ok() {
            return Err(ParseError { index: 0, kind: ParseErrorKind::Structure(report) });
        }
    }
    Ok(node)
}

/// Parses a mask-free CAD text into a model.
pub fn parse(t: &CadText) -> Result<CadModel, ParseError> {
    match parse_tokens(t.tokens(), false)? {
        Node::Full(m) => Ok(m),
        Node::Masked => unreachable!("strict parsing rejects masks"),
    }
}

/// Tokenizes and parses a raw string.
pub fn parse_str(raw: &str) -> Result<CadModel, ParseError> {
    let text = CadText::new(raw).map_err(|e| ParseError { index: 0, kind: e.into() })?;
    parse(&text)
}

/// Outcome of [`validate_text`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextReport {
    pub error: Option<ParseError>,
    pub mask_count: usize,
}

impl TextReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Checks that `raw` parses; with `allow_masks`, mask tokens may stand in
/// for whole fields at structurally legal positions.
pub fn validate_text(raw: &str, allow_masks: bool) -> TextReport {
    let tokens = match tokenize(raw) {
        Ok(t) => t,
        Err(e) => return TextReport { error: Some(ParseError { index: 0, kind: e.into() }), mask_count: 0 },
    };
    let mask_count = tokens.iter().filter(|t| matches!(t.kind, TokenKind::Mask(_))).count();
    let error = parse_tokens(&tokens, allow_masks).err();
    TextReport { error, mask_count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::BooleanOp;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kinds(raw: &str) -> Vec<TokenKind> {
        tokenize(raw).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn circle_body_serializes_exactly() {
        let m = CadModel::new(vec![fixtures::body(
            vec![Face::new(vec![Loop::new(vec![Curve::circle([(31, 15), (47, 31), (31, 47), (15, 31)])])])],
            Extrusion::new(BooleanOp::Add, [31; 17]),
        )]);
        let expected = format!(
            "circle 31 15 47 31 31 47 15 31 curve_end loop_end face_end sketch_end add {} extrusion_end",
            vec!["31"; 17].join(" ")
        );
        assert_eq!(serialize(&m).unwrap().as_str(), expected);
    }

    #[test]
    fn bodies_concatenate() {
        let m = fixtures::two_body_model();
        let a = serialize(&CadModel::new(vec![m.bodies[0].clone()])).unwrap();
        let b = serialize(&CadModel::new(vec![m.bodies[1].clone()])).unwrap();
        assert_eq!(serialize(&m).unwrap().as_str(), format!("{} {}", a.as_str(), b.as_str()));
    }

    #[test]
    fn tokenize_classifies() {
        assert_eq!(
            kinds("line 5 9 curve_end"),
            vec![
                TokenKind::CurveKeyword(CurveKind::Line),
                TokenKind::Number(5),
                TokenKind::Number(9),
                TokenKind::End(EndMarker::Curve)
            ]
        );
        assert_eq!(kinds("[loop mask]"), vec![TokenKind::Mask(MaskKind::Loop)]);
        assert_eq!(kinds("[sketch-extrusion   mask] <sep>"), vec![TokenKind::Mask(MaskKind::SketchExtrusion), TokenKind::Separator]);
    }

    #[test]
    fn tokenize_rejects_out_of_range_with_offset() {
        let err = tokenize("line 64 0 curve_end").unwrap_err();
        assert_eq!(err.offset, 5);
        assert_eq!(err.found, "64");
        assert!(tokenize("line 07 0").is_err());
        assert!(tokenize("[loop mask").is_err());
        assert!(tokenize("[banana mask]").is_err());
        assert_eq!(tokenize("spline").unwrap_err().offset, 0);
    }

    #[test]
    fn missing_loop_end_names_marker() {
        let raw = "line 0 0 curve_end line 9 0 curve_end line 9 9 curve_end face_end sketch_end";
        let err = parse_str(raw).unwrap_err();
        // After the third curve the parser expects another curve or loop_end.
        assert!(matches!(err.kind, ParseErrorKind::Unexpected { .. }));
        let truncated = "line 0 0 curve_end line 9 0 curve_end line 9 9 curve_end";
        let err = parse_str(truncated).unwrap_err();
        assert_eq!(err.index, 12);
        assert!(matches!(err.kind, ParseErrorKind::Truncated { .. }));

        let text = serialize(&fixtures::cube_model()).unwrap().into_string();
        let broken = text.replacen(" loop_end", "", 1);
        let err = parse_str(&broken).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Unexpected { expected: "a curve (line, arc or circle)", found: "face_end".into() });
    }

    #[test]
    fn arc_with_three_numbers_is_arity_error() {
        let err = parse_str("arc 1 2 3 curve_end loop_end face_end sketch_end").unwrap_err();
        assert_eq!(err.index, 0);
        assert_eq!(err.kind, ParseErrorKind::Arity { kind: CurveKind::Arc, expected: 4, found: 3 });
    }

    #[test]
    fn distinct_errors() {
        assert_eq!(parse_str("").unwrap_err().kind, ParseErrorKind::Empty);
        let good = serialize(&fixtures::cube_model()).unwrap().into_string();
        assert_eq!(parse_str(&format!("{good} curve_end")).unwrap_err().kind, ParseErrorKind::Unexpected {
            expected: "a curve (line, arc or circle)",
            found: "curve_end".into()
        });
        let masked = good.replacen("line 8 8 curve_end", "[line mask]", 1);
        assert!(matches!(parse_str(&masked).unwrap_err().kind, ParseErrorKind::MaskPresent(_)));
        let short_ext = good.replacen(" extrusion_end", "", 1).replacen("add 47", "add", 1);
        assert!(matches!(parse_str(&format!("{short_ext} extrusion_end")).unwrap_err().kind, ParseErrorKind::ExtrusionArity { found: 16 }));
        let mixed = "line 0 0 curve_end circle 1 1 2 2 3 3 4 4 curve_end loop_end face_end sketch_end add 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 extrusion_end";
        assert!(matches!(parse_str(mixed).unwrap_err().kind, ParseErrorKind::Structure(_)));
    }

    #[test]
    fn validate_text_cases() {
        let good = serialize(&fixtures::two_body_model()).unwrap().into_string();
        assert!(validate_text(&good, false).is_ok());
        assert!(!validate_text("", true).is_ok());
        // One whole sketch-extrusion masked, the other kept.
        let model = fixtures::two_body_model();
        let first = serialize(&CadModel::new(vec![model.bodies[0].clone()])).unwrap().into_string();
        let masked = good.replacen(&first, "[sketch-extrusion mask]", 1);
        let r = validate_text(&masked, true);
        assert!(r.is_ok(), "{:?}", r.error);
        assert_eq!(r.mask_count, 1);
        assert!(!validate_text(&masked, false).is_ok());
        // Mask in an illegal position.
        assert!(!validate_text("[extrusion mask] [sketch mask]", true).is_ok());
        assert!(validate_text("[sketch mask] [extrusion mask]", true).is_ok());
        assert!(validate_text("[loop mask] face_end sketch_end [extrusion mask]", true).is_ok());
    }

    #[test]
    fn whitespace_is_normalized() {
        let good = serialize(&fixtures::cube_model()).unwrap().into_string();
        let messy = good.replace(' ', " \n\t ");
        let m = parse_str(&messy).unwrap();
        assert_eq!(serialize(&m).unwrap().as_str(), good);
        assert_eq!(CadText::new(messy).unwrap().normalized(), good);
    }

    #[test]
    fn random_models_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let m = fixtures::random_model(&mut rng, &fixtures::RandomLimits::default());
            let t = serialize(&m).unwrap();
            assert_eq!(parse(&t).unwrap(), m);
        }
    }

    #[test]
    fn layout_spans_match_tokens() {
        let m = fixtures::two_body_model();
        let (kinds, layout) = serialize_with_layout(&m).unwrap();
        for b in &layout {
            assert_eq!(kinds[b.sketch.end - 1], TokenKind::End(EndMarker::Sketch));
            assert_eq!(kinds[b.extrusion.end - 1], TokenKind::End(EndMarker::Extrusion));
            assert_eq!(b.extrusion.len(), 19);
            for f in &b.faces {
                assert_eq!(kinds[f.span.end - 1], TokenKind::End(EndMarker::Face));
                for l in &f.loops {
                    assert_eq!(kinds[l.span.end - 1], TokenKind::End(EndMarker::Loop));
                    for (k, c) in &l.curves {
                        assert_eq!(kinds[c.start], TokenKind::CurveKeyword(*k));
                    }
                }
            }
        }
        assert_eq!(layout.last().unwrap().span.end, kinds.len());
    }

    proptest! {
        #[test]
        fn parser_never_panics(s in "\\PC{0,200}") {
            let _ = parse_str(&s);
            let _ = validate_text(&s, true);
        }

        #[test]
        fn token_soup_never_panics(words in proptest::collection::vec(
            prop_oneof![
                Just("line"), Just("arc"), Just("circle"), Just("curve_end"), Just("loop_end"),
                Just("face_end"), Just("sketch_end"), Just("add"), Just("extrusion_end"), Just("3"),
                Just("63"), Just("[loop mask]"), Just("[mask]"), Just("[sketch mask]"), Just("<sep>")
            ], 0..80)) {
            let s = words.join(" ");
            let _ = parse_str(&s);
            let _ = validate_text(&s, true);
        }

        #[test]
        fn canonical_text_round_trips(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = fixtures::random_model(&mut rng, &fixtures::RandomLimits::default());
            let text = serialize(&m).unwrap();
            let back = parse(&text).unwrap();
            prop_assert_eq!(&back, &m);
            let again = serialize(&back).unwrap();
            prop_assert_eq!(again.as_str(), text.as_str());
        }
    }
}
