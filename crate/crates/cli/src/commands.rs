use std::collections::HashSet;
use std::fs;
use std::path::Path;

use cadtext_core::codec::{self, CadText};
use cadtext_core::dataset::{
    emit_corpus, ingest_all, leaked_ids, parse_record, split, write_corpus, CorpusMode,
    SplitManifest,
};
use cadtext_core::geometry::export::{
    voxel_surface_mesh, voxels_to_rle, write_obj, write_stl, write_xyz,
};
use cadtext_core::geometry::{render_solid, sample_point_cloud, RenderConfig, Segments};
use cadtext_core::mask::{
    build_prompt, enumerate_selections, infill, unconditional_prompt, Level, MaskSelection,
    MaskedText, PreparedModel, RANDOM_SPAN_PREAMBLE,
};
use cadtext_core::metrics::{evaluate, pv, MetricsConfig};
use cadtext_core::model::{CadModel, ModelDigest};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult, ErrorKind};
use crate::files::{self, Entry, Output};
use crate::{
    Cli, Command, ConvertArgs, CorpusArgs, EvalArgs, InfillArgs, LevelArg, MaskArgs, RenderArgs,
    RenderFormat, ReportFormat, ValidateArgs,
};

pub fn run(cli: &Cli) -> CliResult<Value> {
    match &cli.command {
        Command::Convert(a) => convert(a, cli.seed),
        Command::Validate(a) => validate(a),
        Command::Mask(a) => mask(a),
        Command::Infill(a) => infill_cmd(a),
        Command::Render(a) => render(a, cli.seed),
        Command::Corpus(a) => corpus(a, cli.seed),
        Command::Eval(a) => eval(a, cli.seed),
    }
}

fn source_lines(input: &Path) -> CliResult<Vec<(String, String)>> {
    let meta = fs::metadata(input).map_err(|e| CliError::io(input, e))?;
    if meta.is_dir() {
        let mut paths: Vec<_> = fs::read_dir(input)
            .map_err(|e| CliError::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        return paths
            .into_iter()
            .map(|p| Ok((p.display().to_string(), files::read_to_string(&p)?)))
            .collect();
    }
    let content = files::read_to_string(input)?;
    let trimmed = content.trim_start();
    if trimmed.starts_with('[') {
        let items: Vec<Value> = serde_json::from_str(trimmed)
            .map_err(|e| CliError::invalid(format!("not a JSON array of records: {e}")).at(input))?;
        return Ok(items.iter().enumerate().map(|(i, v)| (format!("record {i}"), v.to_string())).collect());
    }
    Ok(content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (format!("line {}", i + 1), l.to_string()))
        .collect())
}

fn convert(a: &ConvertArgs, seed: u64) -> CliResult<Value> {
    let records = source_lines(&a.input)?
        .into_iter()
        .map(|(origin, text)| parse_record(&text, &origin))
        .collect();
    let outcome = ingest_all(records);
    if outcome.models.is_empty() {
        return Err(CliError::invalid("no record could be ingested").at(&a.input));
    }
    let texts: Vec<(String, String)> = outcome
        .models
        .iter()
        .map(|(id, m)| (id.clone(), codec::serialize(m).expect("ingested models are valid").into_string()))
        .collect();
    let mut rej = files::create(&a.out_dir.join("rejections.jsonl"))?;
    for r in &outcome.rejections {
        serde_json::to_writer(&mut rej, r).expect("serializable");
        std::io::Write::write_all(&mut rej, b"\n").map_err(|e| CliError::io(&a.out_dir, e))?;
    }
    std::io::Write::flush(&mut rej).map_err(|e| CliError::io(&a.out_dir, e))?;
    let mut result = json!({ "stats": outcome.stats, "rejections": outcome.rejections.len() });
    if a.no_split {
        files::write_cadtxt(&a.out_dir.join("all.cadtxt"), &texts)?;
        return Ok(result);
    }
    let ids: Vec<String> = texts.iter().map(|(id, _)| id.clone()).collect();
    let mut manifest = split(&ids, seed).map_err(|e| CliError::invalid(e.to_string()))?;
    manifest.dedup = outcome.stats;
    for (name, part) in [("train", &manifest.train), ("val", &manifest.val), ("test", &manifest.test)] {
        let wanted: Vec<(String, String)> = part
            .iter()
            .map(|id| texts.iter().find(|(i, _)| i == id).cloned().expect("split ids come from texts"))
            .collect();
        files::write_cadtxt(&a.out_dir.join(format!("{name}.cadtxt")), &wanted)?;
    }
    let path = a.out_dir.join("manifest.json");
    let mut w = files::create(&path)?;
    serde_json::to_writer_pretty(&mut w, &manifest).expect("serializable");
    std::io::Write::flush(&mut w).map_err(|e| CliError::io(&path, e))?;
    result["split"] = json!({
        "train": manifest.train.len(),
        "val": manifest.val.len(),
        "test": manifest.test.len(),
    });
    Ok(result)
}

#[derive(Serialize)]
struct LineFailure<'a> {
    path: &'a str,
    line: usize,
    id: &'a str,
    token: usize,
    error: String,
}

fn validate(a: &ValidateArgs) -> CliResult<Value> {
    let mut out = Output::open(None)?;
    let (mut total, mut failed) = (0usize, 0usize);
    let mut per_file = Vec::new();
    for path in &a.files {
        let entries = files::read_cadtxt(path)?;
        let shown = path.display().to_string();
        let mut bad = 0;
        for e in &entries {
            let report = codec::validate_text(&e.text, a.allow_masks);
            if let Some(err) = report.error {
                bad += 1;
                out.json(&LineFailure { path: &shown, line: e.line, id: &e.id, token: err.index, error: err.kind.to_string() })?;
            }
        }
        total += entries.len();
        failed += bad;
        per_file.push(json!({ "path": shown, "texts": entries.len(), "invalid": bad }));
    }
    out.finish()?;
    if failed > 0 {
        return Err(CliError::new(ErrorKind::ValidationFailed, format!("{failed} of {total} texts failed to parse")));
    }
    Ok(json!({ "texts": total, "invalid": 0, "files": per_file }))
}

fn level_of(l: LevelArg) -> Level {
    match l {
        LevelArg::Cad => Level::Cad,
        LevelArg::SketchExtrusion => Level::SketchExtrusion,
        LevelArg::Sketch => Level::Sketch,
        LevelArg::Extrusion => Level::Extrusion,
        LevelArg::Face => Level::Face,
        LevelArg::Loop => Level::Loop,
        LevelArg::Curve => Level::Curve,
        LevelArg::Unconditional => Level::Unconditional,
    }
}

fn parse_range(s: &str) -> CliResult<std::ops::Range<usize>> {
    let bad = || CliError::usage(format!("--range must look like START..END, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a >= b {
        return Err(bad());
    }
    Ok(a..b)
}

fn text_inputs(input: &Option<std::path::PathBuf>, text: &Option<String>) -> CliResult<Vec<Entry>> {
    match (input, text) {
        (Some(p), _) => files::read_cadtxt(p),
        (None, Some(t)) => Ok(vec![Entry { line: 1, id: "text".into(), text: t.trim().to_string() }]),
        (None, None) => Err(CliError::usage("one of --input or --text is required")),
    }
}

fn parse_entry(e: &Entry) -> CliResult<CadModel> {
    codec::parse_str(&e.text).map_err(|err| CliError::invalid(format!("{} (line {}): {err}", e.id, e.line)))
}

/// Token span of the single field addressed by `level` and a path one index
/// deeper than the level's selections.
fn field_span(prep: &PreparedModel, level: Level, path: &[usize]) -> Option<std::ops::Range<usize>> {
    let body = prep.layout.get(path[0])?;
    match (level, path.len()) {
        (Level::Cad, 1) => Some(body.span.clone()),
        (Level::Face, 2) => Some(body.faces.get(path[1])?.span.clone()),
        (Level::Loop, 3) => Some(body.faces.get(path[1])?.loops.get(path[2])?.span.clone()),
        (Level::Curve, 4) => Some(body.faces.get(path[1])?.loops.get(path[2])?.curves.get(path[3])?.1.clone()),
        _ => None,
    }
}

#[derive(Serialize)]
struct MaskRecord<'a> {
    id: &'a str,
    level: &'a str,
    path: Vec<usize>,
    instruction: String,
    answer: String,
}

fn mask(a: &MaskArgs) -> CliResult<Value> {
    let entries = text_inputs(&a.input, &a.text)?;
    let given = [a.body, a.face, a.loop_, a.curve];
    let depth = given.iter().take_while(|x| x.is_some()).count();
    if given[depth..].iter().any(Option::is_some) {
        return Err(CliError::usage("path indices must be given outermost first without gaps"));
    }
    let path: Vec<usize> = given.iter().flatten().copied().collect();
    let range = a.range.as_deref().map(parse_range).transpose()?;
    let level = a.level.map(level_of);
    if level.is_none() && range.is_none() {
        return Err(CliError::usage("one of --level or --range is required"));
    }
    let mut out = Output::open(a.out.as_deref())?;
    let mut emitted = 0usize;
    for e in &entries {
        let model = parse_entry(e)?;
        let prep = PreparedModel::new(&model).map_err(|err| CliError::invalid(err.to_string()))?;
        let mut masked: Vec<(String, Vec<usize>, MaskedText)> = Vec::new();
        if let Some(r) = &range {
            let mt = prep.mask_range(r.clone()).map_err(|err| CliError::invalid(err.to_string()))?;
            masked.push((cadtext_core::dataset::RANDOM_SPAN_LABEL.into(), vec![r.start, r.end], mt));
        } else if level == Some(Level::Unconditional) {
            let p = unconditional_prompt(&prep.text());
            out.json(&MaskRecord { id: &e.id, level: "unconditional", path: vec![], instruction: p.instruction, answer: p.answer })?;
            emitted += 1;
            continue;
        } else if let Some(level) = level {
            let name = level.name().to_string();
            if path.is_empty() && level.path_depth() > 0 {
                for sel in enumerate_selections(&model, level) {
                    let mt = prep.apply(&sel).map_err(|err| CliError::invalid(err.to_string()))?;
                    masked.push((name.clone(), sel.path, mt));
                }
            } else if path.len() == level.path_depth() {
                let sel = MaskSelection::new(level, path.clone()).map_err(|err| CliError::usage(err.to_string()))?;
                let mt = prep.apply(&sel).map_err(|err| CliError::invalid(err.to_string()))?;
                masked.push((name, path.clone(), mt));
            } else if path.len() == level.path_depth() + 1 {
                let span = field_span(&prep, level, &path)
                    .ok_or_else(|| CliError::invalid(format!("path {path:?} is out of range at level {level}")))?;
                let mt = prep.mask_range(span).map_err(|err| CliError::invalid(err.to_string()))?;
                masked.push((name, path.clone(), mt));
            } else {
                return Err(CliError::usage(format!(
                    "level {level} takes {} or {} path indices, got {}",
                    level.path_depth(),
                    level.path_depth() + 1,
                    path.len()
                )));
            }
        }
        for (name, p, mut mt) in masked {
            if a.generic {
                mt = mt.into_generic();
            }
            let prompt = match level {
                Some(l) if range.is_none() => build_prompt(&mt, l),
                _ => cadtext_core::mask::build_prompt_with_preamble(&mt, RANDOM_SPAN_PREAMBLE),
            };
            out.json(&MaskRecord { id: &e.id, level: &name, path: p, instruction: prompt.instruction, answer: prompt.answer })?;
            emitted += 1;
        }
    }
    out.finish()?;
    Ok(json!({ "texts": entries.len(), "prompts": emitted }))
}

#[derive(Serialize)]
struct InfillRecord {
    prompt: usize,
    sample: usize,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Masked contexts repeated `per_prompt` times, aligned with predictions.
fn aligned_contexts(masked: &Path, predictions: &Path, per_prompt: usize) -> CliResult<(Vec<String>, Vec<String>)> {
    if per_prompt == 0 {
        return Err(CliError::usage("--per-prompt must be at least 1"));
    }
    let contexts: Vec<String> = files::read_to_string(masked)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(files::masked_text_of)
        .collect();
    let preds: Vec<String> = files::read_to_string(predictions)?.lines().map(|l| l.trim().to_string()).collect();
    if preds.len() != contexts.len() * per_prompt {
        return Err(CliError::invalid(format!(
            "{} predictions for {} prompts at {per_prompt} per prompt",
            preds.len(),
            contexts.len()
        ))
        .at(predictions));
    }
    let expanded = contexts.iter().flat_map(|c| std::iter::repeat(c.clone()).take(per_prompt)).collect();
    Ok((expanded, preds))
}

fn infill_cmd(a: &InfillArgs) -> CliResult<Value> {
    let (contexts, preds) = aligned_contexts(&a.masked, &a.predictions, a.per_prompt)?;
    let mut out = Output::open(a.out.as_deref())?;
    let mut ok = 0usize;
    for (i, (c, p)) in contexts.iter().zip(&preds).enumerate() {
        let rec = match infill(c, p) {
            Ok(t) => {
                ok += 1;
                InfillRecord { prompt: i / a.per_prompt, sample: i % a.per_prompt, ok: true, text: Some(t.into_string()), error: None }
            }
            Err(e) => InfillRecord { prompt: i / a.per_prompt, sample: i % a.per_prompt, ok: false, text: None, error: Some(e.to_string()) },
        };
        out.json(&rec)?;
    }
    out.finish()?;
    let n = preds.len();
    Ok(json!({ "predictions": n, "parsed": ok, "parse_rate": if n == 0 { 0.0 } else { ok as f64 / n as f64 } }))
}

fn render(a: &RenderArgs, seed: u64) -> CliResult<Value> {
    let entries = text_inputs(&a.input, &a.text)?;
    let e = entries
        .get(a.index)
        .ok_or_else(|| CliError::usage(format!("--index {} but input has {} texts", a.index, entries.len())))?;
    let model = parse_entry(e)?;
    if a.resolution < 3 {
        return Err(CliError::usage("--resolution must be at least 3"));
    }
    let cfg = RenderConfig { resolution: a.resolution, segments: Segments::Auto };
    let rendered = render_solid(&model, &cfg).map_err(|err| CliError::invalid(err.to_string()))?;
    let mut out = Output::open(Some(&a.out))?;
    let io = |err: std::io::Error| CliError::io(&a.out, err);
    let mut buf = Vec::new();
    let mut result = json!({ "id": e.id, "occupied_voxels": rendered.grid.count() });
    match a.format {
        RenderFormat::Obj | RenderFormat::Stl => {
            let mesh = voxel_surface_mesh(&rendered.grid);
            if matches!(a.format, RenderFormat::Obj) {
                write_obj(&mesh, &mut buf).map_err(io)?;
            } else {
                write_stl(&mesh, &mut buf).map_err(io)?;
            }
            result["triangles"] = json!(mesh.triangles.len());
        }
        RenderFormat::Voxels => buf = voxels_to_rle(&rendered.grid).into_bytes(),
        RenderFormat::Points => {
            let cloud = sample_point_cloud(&rendered.grid, a.points, seed).map_err(|err| CliError::invalid(err.to_string()))?;
            write_xyz(&cloud, &mut buf).map_err(io)?;
            result["points"] = json!(cloud.len());
        }
    }
    out.bytes(&buf)?;
    out.finish()?;
    Ok(result)
}

fn read_models(path: &Path) -> CliResult<Vec<(String, CadModel)>> {
    let entries = files::read_cadtxt(path)?;
    let mut seen = HashSet::new();
    entries
        .iter()
        .map(|e| {
            if !seen.insert(e.id.clone()) {
                return Err(CliError::invalid(format!("id {:?} appears twice", e.id)).at(path));
            }
            Ok((e.id.clone(), parse_entry(e).map_err(|err| err.at(path))?))
        })
        .collect()
}

fn corpus(a: &CorpusArgs, seed: u64) -> CliResult<Value> {
    let mode: CorpusMode = a.mode.parse().map_err(|e: cadtext_core::dataset::DatasetError| CliError::usage(e.to_string()))?;
    let models = read_models(&a.input)?;
    let examples = emit_corpus(&models, a.epochs, mode, seed).map_err(|e| CliError::invalid(e.to_string()))?;
    if let Some(path) = &a.manifest {
        let manifest: SplitManifest = serde_json::from_str(&files::read_to_string(path)?)
            .map_err(|e| CliError::invalid(format!("bad manifest: {e}")).at(path))?;
        let allowed = match a.split.as_str() {
            "train" => &manifest.train,
            "val" => &manifest.val,
            "test" => &manifest.test,
            other => return Err(CliError::usage(format!("unknown split {other:?}"))),
        };
        let leaked = leaked_ids(&examples, allowed);
        if let Some(first) = leaked.first() {
            return Err(CliError::new(
                ErrorKind::ValidationFailed,
                format!("{} examples fall outside the {} split, first {first:?}", leaked.len(), a.split),
            ));
        }
    }
    let mut w = files::create(&a.out)?;
    write_corpus(&examples, &mut w).map_err(|e| CliError::io(&a.out, e))?;
    std::io::Write::flush(&mut w).map_err(|e| CliError::io(&a.out, e))?;
    Ok(json!({ "models": models.len(), "examples": examples.len(), "mode": mode.to_string() }))
}

fn digests(path: &Path) -> CliResult<HashSet<ModelDigest>> {
    Ok(files::read_cadtxt(path)?
        .iter()
        .filter_map(|e| codec::parse_str(&e.text).ok())
        .filter_map(|m| codec::serialize(&m).ok())
        .map(|t: CadText| ModelDigest::of_canonical_text(t.as_str()))
        .collect())
}

fn eval(a: &EvalArgs, seed: u64) -> CliResult<Value> {
    let cfg = MetricsConfig { point_count: a.points, resolution: a.resolution, jsd_bins: a.jsd_bins, seed };
    if cfg.point_count == 0 || cfg.jsd_bins == 0 || cfg.resolution < 3 {
        return Err(CliError::usage("--points and --jsd-bins must be positive and --resolution at least 3"));
    }
    let refs: Vec<String> = files::read_cadtxt(&a.reference)?.into_iter().map(|e| e.text).collect();
    let train = match &a.train {
        Some(p) => digests(p)?,
        None => HashSet::new(),
    };
    let (gen, pv_report) = match (&a.gen, &a.masked, &a.predictions) {
        (Some(g), _, _) => (files::read_cadtxt(g)?.into_iter().map(|e| e.text).collect::<Vec<_>>(), None),
        (None, Some(m), Some(p)) => {
            let (contexts, preds) = aligned_contexts(m, p, a.per_prompt)?;
            let render = RenderConfig { resolution: a.resolution, segments: Segments::Auto };
            let report = pv(&preds, &contexts, &render).map_err(|e| CliError::invalid(e.to_string()))?;
            // Failed infills stay in the set as raw text; they do not parse.
            let gen = contexts
                .iter()
                .zip(&preds)
                .map(|(c, p)| infill(c, p).map(CadText::into_string).unwrap_or_else(|_| p.clone()))
                .collect();
            (gen, Some(report))
        }
        _ => return Err(CliError::usage("give --gen, or --masked with --predictions")),
    };
    let mut report = evaluate(&gen, &refs, &train, &cfg).map_err(|e| CliError::invalid(e.to_string()))?;
    if let Some(r) = &pv_report {
        report.pv = r.pv;
    }
    let text = match a.format {
        ReportFormat::Kv => report.to_key_value(),
        ReportFormat::Table => report.table(),
        ReportFormat::Json => serde_json::to_string_pretty(&report).expect("serializable") + "\n",
    };
    let mut out = Output::open(a.out.as_deref())?;
    out.bytes(text.as_bytes())?;
    out.finish()?;
    Ok(serde_json::to_value(&report).expect("serializable"))
}
