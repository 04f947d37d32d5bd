use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_symscale"));
    c.env_remove("SYMSCALE_SEED").env("RUST_LOG", "warn");
    c
}

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn run(root: &Path, args: &[&str]) -> Output {
    bin().arg("--config").arg(toy_config()).arg("--out-root").arg(root).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "status {:?}\nstdout: {}\nstderr: {}", out.status, String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn prepare_corpus(root: &Path) {
    ok(run(root, &["generate-expressions"]));
    ok(run(root, &["sample-data"]));
}

#[test]
fn reproduce_paper_fits_prints_extrapolation() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(bin().args(["reproduce-paper-fits", "--out-dir"]).arg(dir.path()).output().unwrap());
    let line = out.lines().find(|l| l.contains("predicted Acc_solved at 3.8e21")).expect(&out);
    let value: f64 = line.rsplit(": ").next().unwrap().trim().parse().unwrap();
    assert!((0.75..=0.85).contains(&value), "{value}");
    for f in ["fits.json", "pareto.csv", "loss_vs_flops.svg", "acc_solved_vs_flops.svg", "acc_r2_vs_flops.csv", "hparams_vs_params.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn usage_and_config_errors_exit_one() {
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(toy_config()).unwrap().replace("[data]\n", "[data]\nmystery_knob = 3\n");
    std::fs::write(&cfg, text).unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("generate-expressions").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mystery_knob") && err.contains("bad.toml"), "{err}");
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["sample-data"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(dir.path(), &["fit-scaling", "--input", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_mismatch_is_rejected_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    ok(run(dir.path(), &["generate-expressions"]));
    let out = bin()
        .env("SYMSCALE_SEED", "99")
        .arg("--config")
        .arg(toy_config())
        .arg("--out-root")
        .arg(dir.path())
        .arg("sample-data")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    ok(run(dir.path(), &["--seed", "99", "--force", "sample-data"]));
}

#[test]
fn dry_run_reports_budget_without_training() {
    let dir = tempfile::tempdir().unwrap();
    prepare_corpus(dir.path());
    let out = ok(run(dir.path(), &["train", "--dry-run", "--ratio", "2", "--batch-size", "8"]));
    let plan: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(plan["steps"], 40);
    assert!(plan["flops"].as_f64().unwrap() > 0.0);
    assert!(!dir.path().join("train").exists());
}

#[test]
fn toy_pipeline_is_deterministic_and_fits() {
    let summaries: Vec<String> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            prepare_corpus(dir.path());
            ok(run(dir.path(), &["train"]));
            let printed = ok(run(dir.path(), &["evaluate"]));
            let csv = std::fs::read_to_string(dir.path().join("train/eval/eval_summary.csv")).unwrap();
            assert_eq!(printed, csv);
            let record: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(dir.path().join("train/run.json")).unwrap()).unwrap();
            assert!(record["metrics"]["test_loss"].as_f64().unwrap().is_finite());

            let short = dir.path().join("runs/short");
            ok(run(dir.path(), &["train", "--max-steps", "10", "--out-dir", short.to_str().unwrap()]));
            std::fs::rename(dir.path().join("train"), dir.path().join("runs/long")).unwrap();
            let fit = ok(run(dir.path(), &["fit-scaling", "--input", dir.path().join("runs").to_str().unwrap()]));
            assert!(fit.contains("2 runs"), "{fit}");
            assert!(dir.path().join("scaling/fits.json").exists());
            csv
        })
        .collect();
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn sweep_writes_grid_and_optimum() {
    let dir = tempfile::tempdir().unwrap();
    prepare_corpus(dir.path());
    let out = ok(run(dir.path(), &["sweep", "--sizes", "d16l1h2", "--batch-sizes", "8,16", "--lrs", "3e-4,1e-3,3e-3", "--parallel", "2"]));
    assert_eq!(out.lines().filter(|l| l.contains("val loss")).count(), 6, "{out}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep/sweep.json")).unwrap()).unwrap();
    assert_eq!(summary["grid"]["points"].as_array().unwrap().len(), 6);
    let optimum = &summary["hparams"]["optima"][0];
    let b = optimum["batch_size"].as_f64().unwrap();
    let lr = optimum["learning_rate"].as_f64().unwrap();
    assert!((8.0..=16.0).contains(&b) && (3e-4..=3e-3).contains(&lr), "{optimum}");
}

#[test]
#[ignore = "full-size generation; run with --ignored"]
fn default_generation_writes_full_expression_set() {
    let dir = tempfile::tempdir().unwrap();
    ok(bin().arg("-q").arg("--out-root").arg(dir.path()).arg("generate-expressions").output().unwrap());
    let text = std::fs::read_to_string(dir.path().join("expressions/expressions.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 100_000);
}
