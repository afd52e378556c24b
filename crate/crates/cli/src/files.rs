//! File formats shared by the subcommands.
//!
//! A `.cadtxt` file holds one CAD text per line, optionally prefixed by an
//! id and a tab. Blank lines are skipped.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    /// 1-based line number in the source file.
    pub line: usize,
    pub id: String,
    pub text: String,
}

pub fn read_to_string(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn parse_cadtxt(content: &str) -> Vec<Entry> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (id, text) = match l.split_once('\t') {
                Some((id, text)) => (id.trim().to_string(), text),
                None => (format!("line-{}", i + 1), l),
            };
            Entry { line: i + 1, id, text: text.trim().to_string() }
        })
        .collect()
}

pub fn read_cadtxt(path: &Path) -> CliResult<Vec<Entry>> {
    Ok(parse_cadtxt(&read_to_string(path)?))
}

pub fn write_cadtxt(path: &Path, entries: &[(String, String)]) -> CliResult<()> {
    let mut w = create(path)?;
    for (id, text) in entries {
        writeln!(w, "{id}\t{text}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// A masked prompt line is either a bare masked text or a JSON object with
/// an `instruction` field whose second line onward is the masked text.
pub fn masked_text_of(line: &str) -> String {
    let trimmed = line.trim();
    if trimmed.starts_with('{') {
        if let Ok(serde_json::Value::Object(obj)) = serde_json::from_str::<serde_json::Value>(trimmed) {
            if let Some(instr) = obj.get("instruction").and_then(|v| v.as_str()) {
                return instr.split_once('\n').map_or(instr, |(_, rest)| rest).trim().to_string();
            }
        }
    }
    trimmed.to_string()
}

pub fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Destination for line-oriented output: a file, or stdout when absent.
pub struct Output {
    path: Option<PathBuf>,
    inner: Box<dyn Write>,
}

impl Output {
    pub fn open(path: Option<&Path>) -> CliResult<Self> {
        Ok(match path {
            Some(p) => Self { path: Some(p.to_path_buf()), inner: Box::new(create(p)?) },
            None => Self { path: None, inner: Box::new(BufWriter::new(io::stdout().lock())) },
        })
    }

    fn err(&self, e: io::Error) -> CliError {
        match &self.path {
            Some(p) => CliError::io(p, e),
            None => CliError::io(Path::new("<stdout>"), e),
        }
    }

    pub fn line(&mut self, s: &str) -> CliResult<()> {
        writeln!(self.inner, "{s}").map_err(|e| self.err(e))
    }

    pub fn json<T: Serialize>(&mut self, value: &T) -> CliResult<()> {
        let s = serde_json::to_string(value).expect("serializable");
        self.line(&s)
    }

    pub fn bytes(&mut self, b: &[u8]) -> CliResult<()> {
        self.inner.write_all(b).map_err(|e| self.err(e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| self.err(e))
    }
}
