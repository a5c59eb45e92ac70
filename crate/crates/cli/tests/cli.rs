use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cnf_core::io::sha256_file;
use cnf_core::rl::{AgentCheckpoint, Squash};
use serde_json::Value;

const CONFIG: &str = r#"{
  "flow": {"train": {"steps": 200, "eval_interval": 50, "batch_size": 128, "layers": 2, "hidden": 16}},
  "rl": {"steps": 100, "hidden": [16, 16], "batch_size": 32, "eval_interval": 50, "eval_episodes": 2, "log_interval": 50},
  "moons": {
    "data": {"n": 600},
    "flow": {"steps": 100, "eval_interval": 50, "batch_size": 128, "layers": 2, "hidden": 16},
    "sweep": {"samples": 200},
    "seeds": [0],
    "mass_resolution": 50,
    "figure_resolution": 50,
    "base_samples": 200
  }
}"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_cnf"));
        c.args(args)
            .current_dir(self.dir.path())
            .env_remove("CNF_OUTPUT_ROOT")
            .env("RUST_LOG", "warn");
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
        out
    }

    fn data(&self) -> &Self {
        if !self.path("d.cnfd").exists() {
            self.ok(&["gen-data", "--n", "500", "--seed", "1", "--out", "d.cnfd"]);
        }
        self
    }

    fn encoder(&self, kind: &str) -> String {
        let out = format!("{kind}.cnfm");
        if !self.path(&out).exists() {
            self.data().ok(&[
                "pretrain-flow",
                "--data",
                "d.cnfd",
                "--kind",
                kind,
                "--config",
                "cfg.json",
                "--out",
                &out,
            ]);
        }
        out
    }

    fn manifest(&self, rel: &str) -> Value {
        serde_json::from_slice(&std::fs::read(self.path(rel)).unwrap()).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_hashes_match(m: &Value, base: &Path) {
    for section in ["inputs", "outputs"] {
        for (p, h) in m[section].as_object().unwrap() {
            let path = base.join(p);
            assert_eq!(&sha256_file(&path).unwrap(), h.as_str().unwrap(), "{p}");
        }
    }
}

#[test]
fn gen_data_size_follows_format_arithmetic() {
    let sb = Sandbox::new();
    sb.ok(&["gen-data", "--env", "point-nav", "--tier", "medium", "--n", "10000", "--seed", "0", "--out", "d.cnfd"]);
    let size = std::fs::metadata(sb.path("d.cnfd")).unwrap().len();
    assert_eq!(size, 24 + 10_000 * (4 * (2 + 2 + 1 + 2) + 1));
    let m = sb.manifest("d.cnfd.manifest.json");
    assert_eq!(m["status"], "complete");
    assert_eq!(m["seed"], 0);
    assert_hashes_match(&m, sb.dir.path());
}

#[test]
fn gen_data_reruns_hash_identically() {
    let (a, b) = (Sandbox::new(), Sandbox::new());
    for sb in [&a, &b] {
        sb.ok(&["gen-data", "--tier", "expert", "--n", "300", "--seed", "9", "--out", "d.cnfd"]);
    }
    let ha = &a.manifest("d.cnfd.manifest.json")["outputs"]["d.cnfd"];
    let hb = &b.manifest("d.cnfd.manifest.json")["outputs"]["d.cnfd"];
    assert!(ha.is_string());
    assert_eq!(ha, hb);
}

#[test]
fn unknown_tier_and_env_are_usage_errors() {
    let sb = Sandbox::new();
    let out = sb.run(&["gen-data", "--tier", "great", "--out", "d.cnfd"]);
    assert_eq!(code(&out), 2);
    let msg = stderr(&out);
    assert!(["random", "medium", "expert"].iter().all(|t| msg.contains(t)), "{msg}");
    let out = sb.run(&["gen-data", "--env", "maze", "--out", "d.cnfd"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("point-nav"));
    assert!(!sb.path("d.cnfd").exists());
}

#[test]
fn outputs_are_write_once_unless_forced() {
    let sb = Sandbox::new();
    sb.data();
    let before = std::fs::read(sb.path("d.cnfd")).unwrap();
    let out = sb.run(&["gen-data", "--n", "400", "--seed", "1", "--out", "d.cnfd"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--force"));
    assert_eq!(std::fs::read(sb.path("d.cnfd")).unwrap(), before);
    sb.ok(&["gen-data", "--n", "400", "--seed", "1", "--out", "d.cnfd", "--force"]);
    assert_eq!(std::fs::metadata(sb.path("d.cnfd")).unwrap().len(), 24 + 400 * 29);
}

#[test]
fn bad_config_is_usage_error_and_missing_config_runtime() {
    let sb = Sandbox::new();
    std::fs::write(sb.path("bad.json"), r#"{"rl": {"lamda": 0.3}}"#).unwrap();
    let out = sb.run(&["gen-data", "--config", "bad.json", "--out", "d.cnfd"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = sb.run(&["gen-data", "--config", "nope.json", "--out", "d.cnfd"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn single_trial_pretraining_logs_one_trial() {
    let sb = Sandbox::new();
    let enc = sb.encoder("cnf");
    let m = sb.manifest(&format!("{enc}.manifest.json"));
    assert_eq!(m["extra"]["trials"].as_array().unwrap().len(), 1);
    assert_eq!(m["args"]["trials"], "1");
    let csv = std::fs::read_to_string(sb.path(&format!("{enc}.trial-0.csv"))).unwrap();
    // header plus steps / eval_interval + 1 evaluations
    assert_eq!(csv.lines().count(), 1 + 200 / 50 + 1);
    assert_hashes_match(&m, sb.dir.path());
}

#[test]
fn search_keeps_best_validation_trial() {
    let sb = Sandbox::new();
    sb.data().ok(&["pretrain-flow", "--data", "d.cnfd", "--trials", "3", "--config", "cfg.json", "--out", "f.cnfm"]);
    let m = sb.manifest("f.cnfm.manifest.json");
    let trials = m["extra"]["trials"].as_array().unwrap();
    assert_eq!(trials.len(), 3);
    let best = m["extra"]["best_index"].as_u64().unwrap() as usize;
    let val = |t: &Value| t["best_val_loss"].as_f64().unwrap();
    let b = trials.iter().find(|t| t["index"].as_u64() == Some(best as u64)).unwrap();
    assert!(trials.iter().all(|t| val(b) <= val(t)));
    for i in 0..3 {
        assert!(sb.path(&format!("f.cnfm.trial-{i}.csv")).exists());
    }
}

#[test]
fn variant_checkpoint_mismatch_names_both_kinds() {
    let sb = Sandbox::new();
    let enc = sb.encoder("nf-normal");
    let out = sb.run(&["train-rl", "--data", "d.cnfd", "--flow", &enc, "--variant", "cnf", "--out", "a.cnfa"]);
    assert_eq!(code(&out), 2);
    let msg = stderr(&out);
    assert!(msg.contains("cnf") && msg.contains("nf-normal"), "{msg}");
    assert!(!sb.path("a.cnfa").exists());
    let out = sb.run(&["train-rl", "--data", "d.cnfd", "--flow", &enc, "--variant", "bogus", "--out", "a.cnfa"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn clipped_variant_sets_policy_amplitude() {
    let sb = Sandbox::new();
    let enc = sb.encoder("nf-normal");
    sb.ok(&[
        "train-rl",
        "--data",
        "d.cnfd",
        "--flow",
        &enc,
        "--variant",
        "nf-clipped:2",
        "--config",
        "cfg.json",
        "--out",
        "a.cnfa",
    ]);
    let ck = AgentCheckpoint::<f64>::load(&sb.path("a.cnfa")).unwrap();
    assert_eq!(ck.agent.policy.squash, Squash::Amplitude { a: 2.0 });
}

#[test]
fn training_writes_checkpoint_metrics_and_curve_reproducibly() {
    let sb = Sandbox::new();
    let enc = sb.encoder("cnf");
    for out in ["a.cnfa", "b.cnfa"] {
        sb.ok(&["train-rl", "--data", "d.cnfd", "--flow", &enc, "--config", "cfg.json", "--out", out]);
    }
    let read = |p: &str| std::fs::read(sb.path(p)).unwrap();
    assert_eq!(read("a.cnfa.metrics.jsonl"), read("b.cnfa.metrics.jsonl"));
    assert_eq!(read("a.cnfa"), read("b.cnfa"));
    let metrics = String::from_utf8(read("a.cnfa.metrics.jsonl")).unwrap();
    let evals = metrics.lines().filter(|l| l.contains("\"eval\"")).count();
    assert_eq!(evals, 3);
    roxmltree::Document::parse(&String::from_utf8(read("a.cnfa.curve.svg")).unwrap()).unwrap();
    let m = sb.manifest("a.cnfa.manifest.json");
    assert_eq!(m["status"], "complete");
    assert!(m["overrides"].as_array().unwrap().iter().any(|o| o["field"] == "rl.steps"));
    assert_hashes_match(&m, sb.dir.path());
}

#[test]
fn eval_is_deterministic_json() {
    let sb = Sandbox::new();
    let enc = sb.encoder("cnf");
    sb.ok(&["train-rl", "--data", "d.cnfd", "--flow", &enc, "--config", "cfg.json", "--out", "a.cnfa"]);
    let a = sb.ok(&["eval", "--agent", "a.cnfa", "--seed", "4"]).stdout;
    let b = sb.ok(&["eval", "--agent", "a.cnfa", "--seed", "4"]).stdout;
    assert_eq!(a, b);
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["episodes"], 10);
    assert!(v["mean_return"].is_f64() && v["std_return"].is_f64());
    assert!(v.get("support_violation_rate").is_some());
}

#[test]
fn eval_rejects_missing_or_modified_artifacts() {
    let sb = Sandbox::new();
    assert_eq!(code(&sb.run(&["eval", "--agent", "none.cnfa"])), 1);
    assert_eq!(
        code(&sb.run(&["train-rl", "--data", "none.cnfd", "--flow", "none.cnfm", "--out", "a.cnfa"])),
        1
    );
    let enc = sb.encoder("cnf");
    sb.ok(&["train-rl", "--data", "d.cnfd", "--flow", &enc, "--config", "cfg.json", "--out", "a.cnfa"]);
    let other = sb.encoder("nf-normal");
    let out = sb.run(&["eval", "--agent", "a.cnfa", "--flow", &other]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn toy_moons_emits_panel_set() {
    let sb = Sandbox::new();
    sb.ok(&["toy-moons", "--config", "cfg.json", "--out", "moons"]);
    let mut names: Vec<String> = std::fs::read_dir(sb.path("moons"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for want in [
        "density_nf_normal.svg",
        "density_nf_uniform.svg",
        "samples_nf_normal.svg",
        "samples_nf_uniform.svg",
        "amplitude_1.svg",
        "amplitude_2.svg",
        "amplitude_4.svg",
        "amplitude_10.svg",
        "amplitude_30.svg",
        "sweep.csv",
        "normalization.csv",
        "report.json",
        "manifest.json",
    ] {
        assert!(names.iter().any(|n| n == want), "missing {want} in {names:?}");
    }
    for n in names.iter().filter(|n| n.ends_with(".svg")) {
        let text = std::fs::read_to_string(sb.path("moons").join(n)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{n}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
    let sweep = std::fs::read_to_string(sb.path("moons/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 5);
    let m = sb.manifest("moons/manifest.json");
    assert_eq!(m["status"], "complete");
}

#[test]
fn ablate_writes_one_row_per_cell() {
    let sb = Sandbox::new();
    sb.data().ok(&[
        "ablate", "--data", "d.cnfd", "--suite", "clipping", "--seeds", "2", "--config", "cfg.json", "--out", "abl",
    ]);
    let csv = std::fs::read_to_string(sb.path("abl/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4 * 2);
    for v in ["nf-clipped:1", "nf-clipped:2", "nf-clipped:3", "cnf"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{v},"))).count(), 2, "{v}");
    }
    let svg = std::fs::read_to_string(sb.path("abl/ablation.svg")).unwrap();
    roxmltree::Document::parse(&svg).unwrap();
    assert!(sb.path("abl/nf-clipped-2-seed1.cnfa").exists());
    let out = sb.run(&["ablate", "--data", "d.cnfd", "--suite", "everything", "--out", "abl2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn output_root_variable_redirects_relative_outputs() {
    let sb = Sandbox::new();
    let root = sb.path("root");
    let out = sb
        .cmd(&["gen-data", "--n", "50", "--out", "sub/d.cnfd"])
        .env("CNF_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(root.join("sub/d.cnfd").exists());
    assert!(root.join("sub/d.cnfd.manifest.json").exists());
    assert!(!sb.path("sub/d.cnfd").exists());
}
