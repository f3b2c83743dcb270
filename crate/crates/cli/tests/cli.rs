use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medfuse_core::experiments::ExperimentSpec;
use medfuse_core::manifest::RunManifest;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_medfuse"));
    c.env_remove("MEDFUSE_OUT_ROOT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// synth → tokenize on the smoke cohort; returns the tokenized directory.
fn smoke_data(root: &Path) -> PathBuf {
    let raw = root.join("raw");
    let tok = root.join("tok");
    let synth = configs().join("synth-smoke.toml");
    let cfg = configs().join("smoke.toml");
    ok(&[
        "synth",
        "--spec",
        p(&synth),
        "--seed",
        "3",
        "--out",
        p(&raw),
    ]);
    ok(&[
        "tokenize",
        "--events",
        p(&raw.join("events.csv")),
        "--labels",
        p(&raw.join("labels.csv")),
        "--config",
        p(&cfg),
        "--out",
        p(&tok),
    ]);
    tok
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "synth",
        "train",
        "evaluate",
        "ksweep",
        "dump-embeddings",
        "rerun",
    ] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn unknown_subcommand_exits_two_with_suggestion() {
    let out = run(&["trian"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

#[test]
fn config_errors_exit_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "[train]\nlearning_rate = 1e-3\nmax_epochs = \"many\"\n",
    )
    .unwrap();
    let out = run(&[
        "gradcheck",
        "--config",
        p(&bad),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml") && err.contains("line 3"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn experiment_kind_must_match_subcommand() {
    let out = run(&[
        "ksweep",
        "--spec",
        p(&configs().join("ablation.toml")),
        "--out",
        "/dev/null/x",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ksweep_rejects_non_divisors_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = std::fs::read_to_string(configs().join("ksweep.toml"))
        .unwrap()
        .replace("[eval]", "[grid]\nk_values = [4, 5]\n\n[eval]");
    let path = dir.path().join("k.toml");
    std::fs::write(&path, spec).unwrap();
    let out = run(&[
        "ksweep",
        "--spec",
        p(&path),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[5]"));
    let left: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(left.len(), 1, "only the spec file remains");
}

#[test]
fn example_specs_parse() {
    for name in ["ablation", "ksweep", "transfer", "timefusion"] {
        let spec = ExperimentSpec::load(&configs().join(format!("{name}.toml")))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(spec.kind.as_str(), name);
    }
}

#[test]
fn train_then_evaluate_then_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let tok = smoke_data(root);
    let cfg = configs().join("smoke.toml");
    let model = root.join("model");
    ok(&[
        "train",
        "--data",
        p(&tok),
        "--config",
        p(&cfg),
        "--seed",
        "2",
        "--out",
        p(&model),
    ]);
    assert!(model.join("model.ckpt").exists());
    assert!(model.join("trace.csv").exists());

    let eval = root.join("eval");
    let stdout = ok(&[
        "evaluate",
        "--ckpt",
        p(&model),
        "--data",
        p(&tok),
        "--config",
        p(&cfg),
        "--out",
        p(&eval),
    ]);
    assert!(stdout.contains("AUPRC"));
    let report = std::fs::read_to_string(eval.join("report.csv")).unwrap();
    assert!(report.starts_with("metric,point,ci_low,ci_high\nauprc,"));
    let scores = std::fs::read_to_string(eval.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 30);

    for (dir, again) in [(&model, "model2"), (&eval, "eval2")] {
        let out = ok(&["rerun", "--manifest", p(dir), "--out", p(&root.join(again))]);
        assert!(out.contains("byte-identical"), "{out}");
        let a = RunManifest::load(dir).unwrap();
        let b = RunManifest::load(&root.join(again)).unwrap();
        assert_eq!(a.outputs, b.outputs);
        assert_eq!(a.config, b.config);
    }

    let out = run(&[
        "train",
        "--data",
        p(&tok),
        "--config",
        p(&cfg),
        "--out",
        p(&model),
    ]);
    assert_eq!(out.status.code(), Some(2), "existing output is refused");
}

#[test]
fn default_output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("MEDFUSE_OUT_ROOT", dir.path())
        .args(["gradcheck", "--config", p(&configs().join("smoke.toml"))])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let made: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(made.len(), 1);
    assert!(made[0].starts_with("gradcheck-"));
    assert!(dir.path().join(&made[0]).join("gradcheck.csv").exists());
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--data",
        p(&dir.path().join("nope")),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
