mod commands;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{CliError, ErrorKind};

/// Structured-text toolkit for sketch-and-extrude CAD models.
///
/// Every command prints a one-line JSON run record to stderr on success and
/// a JSON error record on failure. Exit codes: 0 ok, 2 usage, 3 I/O,
/// 4 invalid input, 5 validation failed.
#[derive(Debug, Parser, Serialize)]
#[command(name = "cadtext", version)]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, env = "CADTEXT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Ingest source records into canonical texts, dedup and split them.
    Convert(ConvertArgs),
    /// Check that every line of each .cadtxt file parses.
    Validate(ValidateArgs),
    /// Mask fields of CAD texts and emit prompts.
    Mask(MaskArgs),
    /// Substitute predictions into masked texts.
    Infill(InfillArgs),
    /// Render one CAD text to a mesh, voxel grid or point cloud.
    Render(RenderArgs),
    /// Emit a fine-tuning corpus from a .cadtxt file.
    Corpus(CorpusArgs),
    /// Score a generated set against a reference set.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    /// JSON-lines file of records, a JSON file, or a directory of .json files.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Directory for the split files, manifest and rejection log.
    #[arg(long, short)]
    pub out_dir: PathBuf,
    /// Write a single all.cadtxt instead of train/val/test splits.
    #[arg(long)]
    pub no_split: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Accept mask tokens in place of whole fields.
    #[arg(long)]
    pub allow_masks: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelArg {
    Cad,
    SketchExtrusion,
    Sketch,
    Extrusion,
    Face,
    Loop,
    Curve,
    Unconditional,
}

#[derive(Debug, Args, Serialize)]
pub struct MaskArgs {
    /// .cadtxt file; every text in it is masked.
    #[arg(long, short, conflicts_with = "text")]
    pub input: Option<PathBuf>,
    /// A single CAD text.
    #[arg(long)]
    pub text: Option<String>,
    /// Hierarchy level to mask. Without path indices every selection at the
    /// level is emitted.
    #[arg(long, value_enum)]
    pub level: Option<LevelArg>,
    #[arg(long)]
    pub body: Option<usize>,
    #[arg(long)]
    pub face: Option<usize>,
    #[arg(long = "loop")]
    pub loop_: Option<usize>,
    #[arg(long)]
    pub curve: Option<usize>,
    /// Half-open token range `start..end` covering exactly one field.
    #[arg(long, conflicts_with = "level")]
    pub range: Option<String>,
    /// Replace level-specific mask tokens by the generic `[mask]`.
    #[arg(long)]
    pub generic: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct InfillArgs {
    /// One masked text per line, or JSON prompt lines with an `instruction`.
    #[arg(long, short)]
    pub masked: PathBuf,
    /// One prediction per line; `per-prompt` consecutive lines per prompt.
    #[arg(long, short)]
    pub predictions: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub per_prompt: usize,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenderFormat {
    Obj,
    Stl,
    Voxels,
    Points,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    #[arg(long, short, conflicts_with = "text")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<String>,
    /// Which non-blank entry of the input file to render.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, short, value_enum)]
    pub format: RenderFormat,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = cadtext_core::geometry::voxel::DEFAULT_RESOLUTION)]
    pub resolution: usize,
    #[arg(long, default_value_t = cadtext_core::geometry::DEFAULT_POINT_COUNT)]
    pub points: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CorpusArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// unified, random-masking, generic-token, single-level:<level> or
    /// unconditional-augmented.
    #[arg(long, default_value = "unified")]
    pub mode: String,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Refuse to emit examples whose id is outside `split` in this manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "train", requires = "manifest")]
    pub split: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Kv,
    Table,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Generated texts. Omit when scoring `--predictions`.
    #[arg(long, required_unless_present = "predictions")]
    pub gen: Option<PathBuf>,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Training texts for the Novel metric.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Masked prompts matching `--predictions`; PV is measured by infilling.
    #[arg(long, requires = "predictions", conflicts_with = "gen")]
    pub masked: Option<PathBuf>,
    #[arg(long, requires = "masked")]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub per_prompt: usize,
    #[arg(long, default_value_t = cadtext_core::geometry::DEFAULT_POINT_COUNT)]
    pub points: usize,
    #[arg(long, default_value_t = cadtext_core::geometry::voxel::DEFAULT_RESOLUTION)]
    pub resolution: usize,
    #[arg(long, default_value_t = cadtext_core::metrics::DEFAULT_JSD_BINS)]
    pub jsd_bins: usize,
    #[arg(long, value_enum, default_value = "kv")]
    pub format: ReportFormat,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    status: &'static str,
    config: &'a Cli,
    result: serde_json::Value,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    status: &'static str,
    code: i32,
    error: &'a CliError,
}

fn report_error(e: &CliError) -> ExitCode {
    let code = e.kind.exit_code();
    let record = ErrorRecord { status: "error", code, error: e };
    eprintln!("{}", serde_json::to_string(&record).expect("serializable"));
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report_error(&CliError::new(ErrorKind::Usage, e.to_string().trim())),
    };
    match commands::run(&cli) {
        Ok(result) => {
            let record = RunRecord { status: "ok", config: &cli, result };
            eprintln!("{}", serde_json::to_string(&record).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => report_error(&e),
    }
}
