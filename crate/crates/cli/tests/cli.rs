//! Process-level tests of the `cabingaze` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cabingaze_cli::PipelineConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cabingaze"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cabingaze")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Small dataset, short training.
fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = PipelineConfig::default();
    cfg.synth.dataset.frames = 24;
    cfg.synth.dataset.subjects = 3;
    cfg.training.epochs = 1;
    let p = dir.join("config.json");
    fs::write(&p, cfg.to_json()).unwrap();
    p
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn error_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&o.stderr)))
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let (a, b, c) = (d.path().join("a"), d.path().join("b"), d.path().join("c"));
    let c_str = cfg.to_str().unwrap();
    ok(&["--config", c_str, "--seed", "7", "simulate", "--out", a.to_str().unwrap()]);
    ok(&["--config", c_str, "--seed", "7", "simulate", "--out", b.to_str().unwrap()]);
    ok(&["--config", c_str, "--seed", "8", "simulate", "--out", c.to_str().unwrap()]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() > 24);
    assert_eq!(ta, tb);
    assert_ne!(ta, tree(&c));
}

#[test]
fn full_pipeline_is_idempotent() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let c = cfg.to_str().unwrap();
    let sim = d.path().join("sim");
    ok(&["--config", c, "simulate", "--out", sim.to_str().unwrap()]);
    let calib = d.path().join("calib.json");
    ok(&["--config", c, "calibrate", "--corners", sim.join("corners").to_str().unwrap(), "--out", calib.to_str().unwrap()]);

    // Depth-frame captures annotated through the recovered calibration
    // reproduce the direct DMS-frame labels.
    let annotated = sim.join("annotated.jsonl");
    ok(&[
        "annotate",
        "--captures",
        sim.join("captures.jsonl").to_str().unwrap(),
        "--calibration",
        calib.to_str().unwrap(),
        "--out",
        annotated.to_str().unwrap(),
    ]);
    let read = |p: &Path| -> Vec<serde_json::Value> {
        fs::read_to_string(p).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    };
    let (direct, via) = (read(&sim.join("dataset.jsonl")), read(&annotated));
    assert_eq!(direct.len(), via.len());
    for (a, b) in direct.iter().zip(&via) {
        assert_eq!(a["zone"], b["zone"]);
        for k in 0..3 {
            let (x, y) = (a["gaze"]["direction"][k].as_f64().unwrap(), b["gaze"]["direction"][k].as_f64().unwrap());
            assert!((x - y).abs() < 1e-9);
        }
    }

    let stages = |tag: &str| {
        let norm = d.path().join(format!("norm_{tag}"));
        let ckpt = d.path().join(format!("ckpt_{tag}"));
        let eval = d.path().join(format!("eval_{tag}"));
        ok(&["--config", c, "normalize", "--dataset", sim.join("dataset.jsonl").to_str().unwrap(), "--out", norm.to_str().unwrap()]);
        let ds = norm.join("dataset.jsonl");
        ok(&["--config", c, "train", "--dataset", ds.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]);
        ok(&["--config", c, "eval", "--dataset", ds.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--out", eval.to_str().unwrap()]);
        (tree(&norm), tree(&ckpt), tree(&eval))
    };
    let first = stages("1");
    assert_eq!(first, stages("2"));
    assert!(first.1.contains_key(Path::new("checkpoint.bin")));
    assert!(first.2.contains_key(Path::new("gaze_bins.svg")));
}

#[test]
fn perfect_predictions_score_full_ap() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let sim = d.path().join("sim");
    ok(&["--config", cfg.to_str().unwrap(), "simulate", "--out", sim.to_str().unwrap()]);
    let preds: String = fs::read_to_string(sim.join("dataset.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let r: serde_json::Value = serde_json::from_str(l).unwrap();
            serde_json::json!({"gaze": r["gaze"]["direction"], "zone": r["zone"]}).to_string() + "\n"
        })
        .collect();
    let pfile = d.path().join("perfect.jsonl");
    fs::write(&pfile, preds).unwrap();
    let out = d.path().join("eval");
    ok(&[
        "eval",
        "--dataset",
        sim.join("dataset.jsonl").to_str().unwrap(),
        "--predictions",
        pfile.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["ap"][0]["threshold_deg"], 2.0);
    assert_eq!(report["ap"][0]["value"], 1.0);
    assert_eq!(report["zones"]["macro_precision"], 1.0);
}

#[test]
fn gradcheck_tiny_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("grad.json");
    ok(&["--preset", "tiny", "gradcheck", "--out", out.to_str().unwrap()]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(r["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert!(r["entries"].as_array().unwrap().len() >= 200);
    assert_eq!(r["stop_gradient"]["nonzero"], 0);
}

#[test]
fn report_matches_golden_svg() {
    let d = tempfile::tempdir().unwrap();
    let table = ok(&["report", "--report", fixture("report.json").to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
    let svg = fs::read(d.path().join("gaze_bins.svg")).unwrap();
    assert_eq!(svg, fs::read(fixture("gaze_bins.golden.svg")).unwrap());
    // One table row per bin: four ranges plus the overflow row.
    let rows = table.lines().skip_while(|l| !l.starts_with("gaze range")).skip(1).take_while(|l| !l.is_empty()).count();
    assert_eq!(rows, 5);
}

#[test]
fn malformed_report_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(fixture("report.json")).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("mean_error_deg");
    let p = d.path().join("bad.json");
    fs::write(&p, v.to_string()).unwrap();
    let o = run(&["report", "--report", p.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["error"], "malformed_report");
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("c.json");
    fs::write(&p, r#"{"training": {"epochs": 2, "warmup": 1}}"#).unwrap();
    let o = run(&["--config", p.to_str().unwrap(), "config"]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_json(&o);
    assert_eq!(e["error"], "config");
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains("warmup"));
}

#[test]
fn data_errors_exit_3() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope.jsonl");
    let o = run(&["train", "--dataset", missing.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["error"], "data");
}

#[test]
fn unnormalized_dataset_cannot_train() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let sim = d.path().join("sim");
    ok(&["--config", cfg.to_str().unwrap(), "simulate", "--out", sim.to_str().unwrap()]);
    let o = run(&["train", "--dataset", sim.join("dataset.jsonl").to_str().unwrap(), "--out", d.path().join("ck").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(error_json(&o)["message"].as_str().unwrap().contains("normalize"));
}

#[test]
fn config_round_trips_through_the_binary() {
    let d = tempfile::tempdir().unwrap();
    let first = ok(&["--seed", "5", "--preset", "paper", "config"]);
    let p = d.path().join("eff.json");
    fs::write(&p, &first).unwrap();
    let second = ok(&["--config", p.to_str().unwrap(), "config"]);
    assert_eq!(first, second);
    let cfg = PipelineConfig::from_json(&second).unwrap();
    assert_eq!((cfg.seed, cfg.model.image_width), (5, 224));
}
