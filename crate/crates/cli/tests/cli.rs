//! End-to-end checks of the `ham` binary on a small synthetic problem.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use ham_cli::run_dir::read_metrics_without_timing;

fn ham() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ham"))
}

fn smoke_config() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/gaussians-smoke.toml");
    std::fs::read_to_string(path).expect("smoke config")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn ham");
    assert!(
        out.status.success(),
        "ham failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn train(config: &Path, out: &Path) -> Output {
    run_ok(ham().args(["train", "-q", "--config"]).arg(config).arg("--out").arg(out))
}

#[test]
fn train_writes_the_run_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &smoke_config());
    let run = tmp.path().join("run");
    let out = train(&config, &run);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Worst"));
    for f in [
        "config.toml",
        "metrics.jsonl",
        "checkpoints/latest.ckpt",
        "checkpoints/final.ckpt",
        "reports/fairness.json",
        "reports/summary.csv",
        "reports/per_class.csv",
        "reports/overconfidence.csv",
        "plot-data/scatter.txt",
        "plot-data/step_histogram.txt",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let records = read_metrics_without_timing(&run.join("metrics.jsonl")).unwrap();
    let epochs = records.iter().filter(|r| r["kind"] == "epoch").count();
    assert_eq!(epochs, 5);
    assert_eq!(records.last().unwrap()["kind"], "run_end");
    let snapshot = ham_cli::RunDirectory::load_config(&run).unwrap();
    assert_eq!(snapshot, ham_cli::ExperimentConfig::from_toml(&smoke_config(), "smoke").unwrap());
}

#[test]
fn identical_invocations_give_identical_logs_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &smoke_config());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&config, &a);
    train(&config, &b);
    assert_eq!(
        read_metrics_without_timing(&a.join("metrics.jsonl")).unwrap(),
        read_metrics_without_timing(&b.join("metrics.jsonl")).unwrap()
    );
    let ckpt = |d: &Path| std::fs::read(d.join("checkpoints/final.ckpt")).unwrap();
    assert_eq!(ckpt(&a), ckpt(&b));
}

#[test]
fn killed_run_resumes_to_the_uninterrupted_result() {
    let tmp = tempfile::tempdir().unwrap();
    // Large enough that an epoch takes a noticeable moment.
    let text = smoke_config()
        .replace("train_per_class = 200", "train_per_class = 3000")
        .replace("epochs = 5", "epochs = 6");
    let config = write_config(tmp.path(), &text);
    let full = tmp.path().join("full");
    train(&config, &full);

    let cut = tmp.path().join("cut");
    let mut child = ham()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&cut)
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let stderr = child.stderr.take().unwrap();
    for line in BufReader::new(stderr).lines() {
        if line.unwrap().contains("epoch   2/6") {
            break;
        }
    }
    child.kill().ok();
    child.wait().unwrap();

    run_ok(ham().args(["train", "-q", "--resume"]).arg(&cut));
    let records = read_metrics_without_timing(&cut.join("metrics.jsonl")).unwrap();
    let resumed_at = records.iter().find(|r| r["kind"] == "resume").unwrap()["epoch"].as_u64().unwrap();
    assert!((2..6).contains(&resumed_at), "run was not interrupted mid-way ({resumed_at})");
    let ckpt = |d: &Path| std::fs::read(d.join("checkpoints/final.ckpt")).unwrap();
    assert_eq!(ckpt(&full), ckpt(&cut));
    assert_eq!(
        std::fs::read_to_string(full.join("reports/fairness.json")).unwrap(),
        std::fs::read_to_string(cut.join("reports/fairness.json")).unwrap()
    );
}

#[test]
fn a_finished_run_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &smoke_config());
    let run = tmp.path().join("run");
    train(&config, &run);
    let out = ham().args(["train", "--config"]).arg(&config).arg("--out").arg(&run).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--resume"));
}

#[test]
fn missing_dataset_fails_before_creating_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = ham()
        .args(["train", "--preset", "mnist-desk", "--out"])
        .arg(&run)
        .env("HAM_DATA_ROOT", tmp.path().join("nothing-here"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fetch_mnist.sh"), "{err}");
    assert!(!run.exists());
}

#[test]
fn unknown_config_keys_are_reported_with_their_path() {
    let tmp = tempfile::tempdir().unwrap();
    let text = smoke_config().replace("[train.mining]\n", "[train.mining]\nearly_stop = 3\n");
    let config = write_config(tmp.path(), &text);
    let out = ham().args(["train", "--config"]).arg(&config).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.mining") && err.contains("early_stop"), "{err}");
}

#[test]
fn evaluate_reproduces_the_final_training_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &smoke_config());
    let run = tmp.path().join("run");
    train(&config, &run);
    let out = tmp.path().join("eval");
    run_ok(
        ham()
            .arg("evaluate")
            .arg(run.join("checkpoints/final.ckpt"))
            .arg("--out")
            .arg(&out),
    );
    for f in ["fairness.json", "summary.csv", "per_class.csv"] {
        assert_eq!(
            std::fs::read_to_string(run.join("reports").join(f)).unwrap(),
            std::fs::read_to_string(out.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn diagnose_plot_and_report_work_on_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &smoke_config());
    let run = tmp.path().join("run");
    train(&config, &run);
    let out = run_ok(ham().arg("diagnose").arg(run.join("checkpoints/final.ckpt")));
    assert!(String::from_utf8_lossy(&out.stdout).contains("easy after 3 steps"));
    run_ok(ham().arg("plot").arg(&run));
    for f in ["scatter.svg", "per_class.svg", "step_histogram.svg"] {
        let svg = std::fs::read_to_string(run.join("plots").join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<text"), "{f}");
    }
    let table = run_ok(ham().arg("report").arg(&run));
    let table = String::from_utf8_lossy(&table.stdout);
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(table.contains("| ham |"));

    std::fs::remove_file(run.join("plot-data/step_histogram.txt")).unwrap();
    let out = ham().arg("plot").arg(&run).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("step histogram"));
}

#[test]
fn ablation_runs_every_value_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &smoke_config());
    let sweep = tmp.path().join("sweep.toml");
    std::fs::write(&sweep, "parameter = \"mode\"\nvalues = [\"none\", \"ham\"]\n").unwrap();
    let out = tmp.path().join("abl");
    run_ok(
        ham()
            .args(["ablate", "-q", "--jobs", "2", "--config"])
            .arg(&config)
            .arg("--sweep")
            .arg(&sweep)
            .arg("--out")
            .arg(&out),
    );
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    // Two values times the config's two seeds, in sweep order.
    assert_eq!(rows.len(), 4, "{summary}");
    assert!(rows[0].starts_with("mode,none,0,") && rows[3].starts_with("mode,ham,1,"));
    run_ok(ham().arg("plot").arg(out.join("summary.csv")));
    assert!(out.join("plots/ablation.svg").is_file());
}

#[test]
fn empty_sweep_writes_a_header_only_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &smoke_config());
    let sweep = tmp.path().join("sweep.toml");
    std::fs::write(&sweep, "parameter = \"drop_rate\"\nvalues = []\n").unwrap();
    let out = tmp.path().join("abl");
    run_ok(ham().args(["ablate", "--config"]).arg(&config).arg("--sweep").arg(&sweep).arg("--out").arg(&out));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);

    std::fs::write(&sweep, "parameter = \"depth\"\nvalues = [1]\n").unwrap();
    let bad = ham().args(["ablate", "--config"]).arg(&config).arg("--sweep").arg(&sweep).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("depth"));
}
