use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairforge::data::{dataset_stats, load_manifest};
use fairforge::synth::write_dataset;
use fairforge::toy::toy_real_faces;
use fairforge::{DemographicGroup, Label, Split};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairforge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY_CONFIG: &str = r#"{
  "model": {
    "input_size": [16, 16],
    "conv_blocks": [{"out_channels": 2, "stride": 2}],
    "embedding_dim": 4,
    "head_real": [4, 1],
    "head_dem": [4, 8]
  },
  "train": {"epochs": 2, "batch_size": 8, "lr": 0.01}
}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let faces = toy_real_faces([3, 2, 4, 1, 2, 2, 3, 1], 16, 5).unwrap();
        write_dataset(&faces.manifest, &faces.images, &root.join("raw")).unwrap();
        std::fs::write(root.join("config.json"), TINY_CONFIG).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }

    fn run(&self, args: &[&str]) -> Output {
        let cfg = self.path("config.json");
        let mut all = vec!["--config", cfg.as_str()];
        all.extend_from_slice(args);
        let out = run(&all);
        assert!(
            matches!(code(&out), 0..=2),
            "unexpected status for {args:?}: {}",
            stderr(&out)
        );
        out
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert_eq!(code(&out), 0, "{args:?} failed: {}", stderr(&out));
        out
    }
}

fn read(path: &str) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

#[test]
fn help_lists_subcommands_and_errors() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["synth", "balance", "train", "predict", "evaluate"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let train_help = String::from_utf8_lossy(&run(&["train", "--help"]).stdout).into_owned();
    assert!(train_help.contains("non-finite"));
    assert_eq!(code(&run(&["train", "--bogus"])), 1);
    assert_eq!(code(&run(&[])), 1);
}

#[test]
fn config_typos_and_missing_inputs_exit_one() {
    let fx = Fixture::new();
    std::fs::write(fx.root.join("bad.json"), r#"{"train": {"epoch": 3}}"#).unwrap();
    let out = run(&["--config", &fx.path("bad.json"), "--out", &fx.path("o"), "train", "--manifest", &fx.path("raw/manifest.jsonl")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("epoch"), "{}", stderr(&out));

    let out = fx.run(&["--out", &fx.path("o"), "train", "--manifest", &fx.path("nope.jsonl")]);
    assert_eq!(code(&out), 1);
    let out = fx.run(&["train", "--manifest", &fx.path("raw/manifest.jsonl")]);
    assert_eq!(code(&out), 1, "missing --out");
    let out = fx.run(&["--out", &fx.path("raw"), "synth", "--manifest", &fx.path("raw/manifest.jsonl")]);
    assert_eq!(code(&out), 1, "output over the input dataset");
}

#[test]
fn dry_run_prints_effective_config_without_side_effects() {
    let fx = Fixture::new();
    let out = fx.ok(&["--seed", "9", "--out", &fx.path("dry"), "--dry-run", "train", "--manifest", &fx.path("raw/manifest.jsonl")]);
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["train"]["seed"], 9);
    assert_eq!(cfg["train"]["epochs"], 2);
    assert_eq!(cfg["train"]["rho"], 0.05);
    assert!(!fx.root.join("dry").exists());
}

#[test]
fn synth_pairs_every_real() {
    let fx = Fixture::new();
    fx.ok(&["--seed", "1", "--out", &fx.path("s"), "synth", "--manifest", &fx.path("raw/manifest.jsonl")]);
    let m = load_manifest(Path::new(&fx.path("s/manifest.jsonl"))).unwrap();
    assert_eq!(m.len(), 2 * 18);
    let stats = dataset_stats(&m);
    for g in DemographicGroup::ALL {
        assert_eq!(stats.get(g, Label::Real), stats.get(g, Label::Fake));
    }
    assert!(fx.root.join("s/effective_config.json").is_file());
    assert!(m.records().iter().all(|r| fx.root.join("s").join(&r.image_path).is_file()));
}

#[test]
fn balance_equalizes_groups_and_leaves_input_untouched() {
    let fx = Fixture::new();
    let before = read(&fx.path("raw/manifest.jsonl"));
    fx.ok(&["--seed", "1", "--out", &fx.path("b"), "balance", "--manifest", &fx.path("raw/manifest.jsonl")]);
    assert_eq!(read(&fx.path("raw/manifest.jsonl")), before);
    let stats = dataset_stats(&load_manifest(Path::new(&fx.path("b/manifest.jsonl"))).unwrap());
    for g in DemographicGroup::ALL {
        assert_eq!(stats.group_total(g), 8);
    }
}

#[test]
fn full_pipeline_is_deterministic_and_consistent() {
    let fx = Fixture::new();
    let raw = fx.path("raw/manifest.jsonl");
    for run_dir in ["r1", "r2"] {
        let p = |s: &str| fx.path(&format!("{run_dir}/{s}"));
        fx.ok(&["--seed", "7", "--out", &p("bal"), "balance", "--manifest", &raw]);
        fx.ok(&["--seed", "7", "--out", &p("train"), "train", "--manifest", &p("bal/manifest.jsonl")]);
        fx.ok(&[
            "--seed", "7", "--out", &p("pred"), "predict",
            "--manifest", &p("bal/manifest.jsonl"),
            "--checkpoint", &p("train/checkpoint.ffg"),
        ]);
        fx.ok(&[
            "--seed", "7", "--out", &p("eval"), "evaluate",
            "--manifest", &p("bal/manifest.jsonl"),
            "--predictions", &p("pred/predictions.csv"),
        ]);
    }
    for file in ["bal/manifest.jsonl", "train/checkpoint.ffg", "train/train_log.jsonl", "pred/predictions.csv", "eval/report.json"] {
        assert_eq!(read(&fx.path(&format!("r1/{file}"))), read(&fx.path(&format!("r2/{file}"))), "{file} differs");
    }

    let log = String::from_utf8(read(&fx.path("r1/train/train_log.jsonl"))).unwrap();
    let first = log.lines().next().unwrap();
    let positions: Vec<usize> = ["epoch", "step", "l_real", "l_dem", "var_acc", "total", "grad_norm", "eps_norm"]
        .iter()
        .map(|k| first.find(&format!("\"{k}\":")).unwrap_or_else(|| panic!("{k} missing")))
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{first}");

    let manifest = load_manifest(Path::new(&fx.path("r1/bal/manifest.jsonl"))).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&read(&fx.path("r1/eval/report.json"))).unwrap();
    assert_eq!(report["per_group"].as_object().unwrap().len(), 8);
    for g in DemographicGroup::ALL {
        let expected = manifest.split(Split::Test).filter(|r| r.group == g).count();
        assert_eq!(report["per_group"][g.code()]["count"], expected, "{}", g.code());
    }
}

#[test]
fn checkpoint_errors_map_to_exit_codes() {
    let fx = Fixture::new();
    let raw = fx.path("raw/manifest.jsonl");
    let out = fx.run(&["--out", &fx.path("p"), "predict", "--manifest", &raw, "--checkpoint", &fx.path("none.ffg")]);
    assert_eq!(code(&out), 1);
    std::fs::write(fx.root.join("junk.ffg"), b"not a checkpoint").unwrap();
    let out = fx.run(&["--out", &fx.path("p"), "predict", "--manifest", &raw, "--checkpoint", &fx.path("junk.ffg")]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn evaluate_rejects_predictions_that_disagree_with_the_manifest() {
    let fx = Fixture::new();
    let raw = fx.path("raw/manifest.jsonl");
    std::fs::write(
        fx.root.join("p.csv"),
        "sample_id,score,true_label,gender,race\nface-B-M-0003,0.9,1,M,Black\n",
    )
    .unwrap();
    let out = fx.run(&["--out", &fx.path("e"), "evaluate", "--manifest", &raw, "--predictions", &fx.path("p.csv")]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let out = fx.ok(&["--out", &fx.path("e"), "evaluate", "--predictions", &fx.path("p.csv")]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&read(&fx.path("e/report.json"))).unwrap();
    assert_eq!(report["dataset"], "p");
    assert!(report["overall"]["auc"].is_null());
}
