use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn oasis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oasis"))
        .args(args)
        .env_remove("OASIS_SEED")
        .output()
        .expect("binary runs")
}

fn json_line(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout.clone()).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1, "expected one JSON line, got {stdout:?}");
    serde_json::from_str(lines[0]).unwrap()
}

fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let digest = Sha256::digest(std::fs::read(&p).unwrap());
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let v = json_line(&oasis(&["gen", "--seed", "7", "--sequences", "2", "--out", s(d)]));
        assert_eq!(v["sequences"], 2);
    }
    let (ha, hb) = (tree_hashes(&a), tree_hashes(&b));
    assert_eq!(ha.len(), 2 * 8 * 2);
    assert_eq!(ha, hb);

    let c = dir.path().join("c");
    json_line(&oasis(&["gen", "--seed", "8", "--sequences", "2", "--out", s(&c)]));
    assert_ne!(ha, tree_hashes(&c));
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    json_line(&oasis(&["gen", "--sequences", "2", "--out", s(&data)]));
    let v = json_line(&oasis(&["eval", "--data", s(&data), "--pred", s(&data), "--out", s(&dir.path().join("ev"))]));
    assert_eq!(v["JF"], 100.0);
    assert_eq!(v["J"], 100.0);
    assert_eq!(v["F"], 100.0);
    assert!(dir.path().join("ev/results.csv").is_file());
    assert!(dir.path().join("ev/summary.json").is_file());
}

#[test]
fn usage_and_input_errors_exit_one() {
    let out = oasis(&["gen", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = oasis(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = oasis(&["bench", "--device", "cuda:0", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let out = oasis(&["eval", "--data", "/nonexistent/data", "--pred", "/nonexistent", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert_eq!(oasis(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_overrides_preset_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "data.n_sequences = 1\ndata.scene.n_frames = 5\n").unwrap();
    let out = oasis(&["gen", "--preset", "desk", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]);
    let v = json_line(&out);
    assert_eq!(v["sequences"], 1);
    assert_eq!(v["frames_per_sequence"], 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn seed_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_oasis"))
        .args(["gen", "--sequences", "1", "--out", s(dir.path())])
        .env("OASIS_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(json_line(&out)["seed"], 11);
    let out = Command::new(env!("CARGO_BIN_EXE_oasis"))
        .args(["gen", "--sequences", "1", "--seed", "3", "--out", s(dir.path())])
        .env("OASIS_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(json_line(&out)["seed"], 3);
}

#[test]
fn pipeline_writes_only_under_out() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    json_line(&oasis(&["gen", "--sequences", "1", "--out", s(&data)]));
    let before = tree_hashes(&data);

    let run = dir.path().join("run");
    let v = json_line(&oasis(&["train", "--data", s(&data), "--iters", "2", "--out", s(&run)]));
    assert_eq!(v["iterations"], 2);
    let ck = run.join("model.safetensors");
    assert!(ck.is_file());
    assert!(run.join("train_log.jsonl").is_file());

    let pred = dir.path().join("pred");
    let v = json_line(&oasis(&["infer", "--data", s(&data), "--checkpoint", s(&ck), "--zip", "--out", s(&pred)]));
    assert_eq!(v["sequences"], 1);
    assert!(pred.join("submission.zip").is_file());
    assert_eq!(std::fs::read_dir(pred.join("Annotations/synth000")).unwrap().count(), 8);

    let v = json_line(&oasis(&["eval", "--data", s(&data), "--pred", s(&pred), "--out", s(&dir.path().join("ev"))]));
    let jf = v["JF"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&jf));

    let sweep = dir.path().join("sweep");
    json_line(&oasis(&[
        "sweep", "--data", s(&data), "--checkpoint", s(&ck), "--beta", "0,0.5,1,2,5", "--out", s(&sweep),
    ]));
    let csv = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "epsilon,beta,JF,J,F");
    let betas: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(betas, vec![0.0, 0.5, 1.0, 2.0, 5.0]);

    let viz = dir.path().join("viz");
    let v = json_line(&oasis(&["viz", "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&viz)]));
    assert_eq!(v["frames"], 8);
    assert!(viz.join("viz/synth000/00003_panel.png").is_file());

    assert_eq!(before, tree_hashes(&data), "input dataset was modified");
}

#[test]
fn edges_and_structure_maps() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    json_line(&oasis(&["gen", "--sequences", "1", "--out", s(&data)]));
    let frame = data.join("JPEGImages/synth000/00002.png");
    let mask = data.join("Annotations/synth000/00002.png");
    let out = dir.path().join("o");
    let v = json_line(&oasis(&["edges", "--out", s(&out), s(&frame)]));
    assert_eq!(v["files"].as_array().unwrap().len(), 1);
    json_line(&oasis(&["structmap", "--out", s(&out), s(&mask)]));
    assert!(out.join("00002_edges.png").is_file());
    assert!(out.join("00002_structure.png").is_file());
}

#[test]
fn fake_bench_reports_its_clock() {
    let dir = tempfile::tempdir().unwrap();
    let v = json_line(&oasis(&["bench", "--fake-ms", "20", "--warmup", "2", "--frames", "10", "--out", s(dir.path())]));
    let fps = v["fps"].as_f64().unwrap();
    assert!((fps - 50.0).abs() / 50.0 < 0.05, "fps {fps}");
    assert!(!v["hardware"].as_str().unwrap().is_empty());
}
