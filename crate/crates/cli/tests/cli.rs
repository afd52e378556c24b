use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cadtext(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadtext"))
        .current_dir(dir)
        .env_remove("CADTEXT_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr_record(out: &Output) -> Value {
    let s = String::from_utf8_lossy(&out.stderr);
    let last = s.lines().last().expect("stderr record");
    serde_json::from_str(last).expect("json record")
}

fn record(id: &str, extent: f64) -> String {
    let s = 0.4;
    serde_json::json!({
        "id": id,
        "bodies": [{
            "sketch": {"profiles": [{"loops": [
                {"curves": [
                    {"type": "Line", "start": [0, 0], "end": [s, 0]},
                    {"type": "Arc", "start": [s, 0], "mid": [s * 1.5, s / 2.0], "end": [s, s]},
                    {"type": "Line", "start": [s, s], "end": [0, s]},
                    {"type": "Line", "start": [0, s], "end": [0, 0]}
                ]},
                {"curves": [{"type": "Circle", "center": [0.2, 0.2], "radius": 0.1}]}
            ]}]},
            "extrude": {"operation": "NewBody", "extent_type": "OneSide", "extent_one": extent,
                "origin": [0, 0, 0], "x_axis": [1, 0, 0], "y_axis": [0, 1, 0], "z_axis": [0, 0, 1]}
        }]
    })
    .to_string()
}

/// Converts 30 distinct records plus one duplicate and one empty record.
fn converted() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut lines: Vec<String> = (1..=30).map(|i| record(&format!("r{i:02}"), i as f64 * 0.033)).collect();
    lines.push(record("dup", 0.033));
    lines.push(r#"{"id":"empty","bodies":[]}"#.to_string());
    fs::write(dir.path().join("src.jsonl"), lines.join("\n")).unwrap();
    let out = cadtext(dir.path(), &["convert", "-i", "src.jsonl", "-o", "out"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn cadtxt_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn convert_writes_splits_manifest_and_rejections() {
    let dir = converted();
    let out = dir.path().join("out");
    let rec = stderr_record(&cadtext(dir.path(), &["convert", "-i", "src.jsonl", "-o", "out"]));
    assert_eq!(rec["status"], "ok");
    assert_eq!(rec["result"]["stats"]["accepted"], 30);
    assert_eq!(rec["result"]["stats"]["duplicates"], 1);
    assert_eq!(rec["result"]["stats"]["invalid"], 1);

    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let n = |k: &str| manifest[k].as_array().unwrap().len();
    assert_eq!((n("train"), n("val"), n("test")), (26, 2, 2));
    assert_eq!(cadtxt_lines(&out.join("train.cadtxt")).len(), 26);
    assert_eq!(cadtxt_lines(&out.join("val.cadtxt")).len(), 2);
    assert_eq!(cadtxt_lines(&out.join("test.cadtxt")).len(), 2);
    assert_eq!(cadtxt_lines(&out.join("rejections.jsonl")).len(), 2);
}

#[test]
fn convert_without_split() {
    let dir = converted();
    let out = cadtext(dir.path(), &["convert", "-i", "src.jsonl", "-o", "all", "--no-split"]);
    assert_eq!(code(&out), 0);
    assert_eq!(cadtxt_lines(&dir.path().join("all/all.cadtxt")).len(), 30);
}

#[test]
fn validate_flags_bad_lines() {
    let dir = converted();
    assert_eq!(code(&cadtext(dir.path(), &["validate", "out/train.cadtxt", "out/test.cadtxt"])), 0);
    fs::write(dir.path().join("bad.cadtxt"), "a\tline 1\nb\tline 1 2 curve_end").unwrap();
    let out = cadtext(dir.path(), &["validate", "bad.cadtxt"]);
    assert_eq!(code(&out), 5);
    let failures: Vec<Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(failures.len(), 2);
    assert_eq!(failures[0]["id"], "a");
}

#[test]
fn mask_then_infill_restores_texts() {
    let dir = converted();
    let originals: Vec<String> = cadtxt_lines(&dir.path().join("out/val.cadtxt"))
        .iter()
        .map(|l| l.split_once('\t').unwrap().1.to_string())
        .collect();
    for level in ["cad", "sketch-extrusion", "sketch", "extrusion", "face", "loop", "curve"] {
        let out = cadtext(dir.path(), &["mask", "-i", "out/val.cadtxt", "--level", level, "-o", "m.jsonl"]);
        assert_eq!(code(&out), 0, "{level}");
        let prompts: Vec<Value> = cadtxt_lines(&dir.path().join("m.jsonl"))
            .iter()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert!(!prompts.is_empty());
        let answers: Vec<&str> = prompts.iter().map(|p| p["answer"].as_str().unwrap()).collect();
        fs::write(dir.path().join("p.txt"), answers.join("\n")).unwrap();
        let out = cadtext(dir.path(), &["infill", "-m", "m.jsonl", "-p", "p.txt", "-o", "f.jsonl"]);
        assert_eq!(code(&out), 0, "{level}");
        for (line, prompt) in cadtxt_lines(&dir.path().join("f.jsonl")).iter().zip(&prompts) {
            let filled: Value = serde_json::from_str(line).unwrap();
            assert_eq!(filled["ok"], true);
            let text = filled["text"].as_str().unwrap();
            let id = prompt["id"].as_str().unwrap();
            let idx = cadtxt_lines(&dir.path().join("out/val.cadtxt")).iter().position(|l| l.starts_with(id)).unwrap();
            assert_eq!(text, originals[idx], "{level}");
        }
    }
}

#[test]
fn mask_single_path_and_seed_env() {
    let dir = converted();
    let text = cadtxt_lines(&dir.path().join("out/val.cadtxt"))[0].split_once('\t').unwrap().1.to_string();
    let out = cadtext(dir.path(), &["mask", "--text", &text, "--level", "curve", "--body", "0", "--face", "0", "--loop", "0", "--curve", "1"]);
    assert_eq!(code(&out), 0);
    let prompt: Value = serde_json::from_str(String::from_utf8_lossy(&out.stdout).lines().next().unwrap()).unwrap();
    assert!(prompt["instruction"].as_str().unwrap().contains("[arc mask]"));
    assert!(prompt["answer"].as_str().unwrap().starts_with("arc "));

    let out = Command::new(env!("CARGO_BIN_EXE_cadtext"))
        .current_dir(dir.path())
        .env("CADTEXT_SEED", "17")
        .args(["mask", "--text", &text, "--level", "face"])
        .output()
        .unwrap();
    assert_eq!(stderr_record(&out)["config"]["seed"], 17);
}

#[test]
fn render_every_format() {
    let dir = converted();
    for (format, head) in [("obj", "v "), ("stl", "binary stl"), ("voxels", ""), ("points", "")] {
        let file = format!("m.{format}");
        let out = cadtext(dir.path(), &["render", "-i", "out/train.cadtxt", "-f", format, "-o", &file, "--resolution", "24", "--points", "100"]);
        assert_eq!(code(&out), 0, "{format}: {}", String::from_utf8_lossy(&out.stderr));
        let bytes = fs::read(dir.path().join(&file)).unwrap();
        assert!(!bytes.is_empty(), "{format}");
        assert!(String::from_utf8_lossy(&bytes).starts_with(head), "{format}");
    }
    let stl = fs::read(dir.path().join("m.stl")).unwrap();
    let triangles = u32::from_le_bytes(stl[80..84].try_into().unwrap()) as usize;
    assert_eq!(stl.len(), 84 + 50 * triangles);
    let points = fs::read_to_string(dir.path().join("m.points")).unwrap();
    assert_eq!(points.lines().count(), 100);
}

#[test]
fn corpus_respects_manifest() {
    let dir = converted();
    let out = cadtext(dir.path(), &["corpus", "-i", "out/train.cadtxt", "-o", "c.jsonl", "--epochs", "2", "--manifest", "out/manifest.json"]);
    assert_eq!(code(&out), 0);
    assert_eq!(cadtxt_lines(&dir.path().join("c.jsonl")).len(), 52);
    let out = cadtext(dir.path(), &["corpus", "-i", "out/test.cadtxt", "-o", "leak.jsonl", "--manifest", "out/manifest.json"]);
    assert_eq!(code(&out), 5);
    let out = cadtext(dir.path(), &["corpus", "-i", "out/train.cadtxt", "-o", "x.jsonl", "--mode", "nonsense"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_reports_key_values() {
    let dir = converted();
    let out = cadtext(dir.path(), &["eval", "--gen", "out/val.cadtxt", "--ref", "out/val.cadtxt", "--train", "out/train.cadtxt", "--points", "200", "--resolution", "24"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let kv: std::collections::HashMap<&str, &str> = stdout.lines().filter_map(|l| l.split_once('=')).collect();
    for key in ["cov", "mmd", "jsd", "novel", "unique", "pv"] {
        assert!(kv.contains_key(key), "{key}");
    }
    assert_eq!(kv["cov"].parse::<f64>().unwrap(), 1.0);
    assert_eq!(kv["mmd"].parse::<f64>().unwrap(), 0.0);
    assert_eq!(kv["novel"].parse::<f64>().unwrap(), 1.0);
    assert_eq!(kv["pv"].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cadtext(dir.path(), &["frobnicate"]);
    assert_eq!(code(&out), 2);
    assert_eq!(stderr_record(&out)["error"]["kind"], "usage");
    assert_eq!(code(&cadtext(dir.path(), &["validate", "missing.cadtxt"])), 3);
    assert_eq!(code(&cadtext(dir.path(), &["render", "--text", "line 1", "-f", "obj", "-o", "x.obj"])), 4);
    assert_eq!(code(&cadtext(dir.path(), &["--help"])), 0);
}
