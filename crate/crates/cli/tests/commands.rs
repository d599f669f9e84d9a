use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tacalign_core::encoder::load_checkpoint;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tacalign"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn tacalign")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "tacalign {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small dataset shared by every test in this binary.
fn dataset() -> &'static Path {
    static DATA: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        ok(&["generate", "--out", p(&data), "--seed", "5", "--set", "count=160"]);
        (dir, data)
    });
    path
}

fn loss_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,l_t2l,l_t2i,total,tau"));
    lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn generate_prints_counts_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let stdout = ok(&["generate", "--out", p(&out), "--set", "count=19"]);
    assert!(stdout.contains("shape: "), "{stdout}");
    assert!(stdout.contains("cone=1 "), "{stdout}");
    assert!(out.join("manifest.jsonl").exists());
    assert!(out.join("config.resolved").exists());

    let again = run(&["generate", "--out", p(&out), "--set", "count=19"]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["generate", "--out", p(&out), "--set", "count=19", "--force"]);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--out", p(&dir.path().join("d")), "--set", "cuont=5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cuont"));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&["generate", "--out", p(&a), "--seed", "9", "--set", "count=20", "--set", "jitter=false"]);
    let b = dir.path().join("b");
    let cfg = a.join("config.resolved");
    ok(&["generate", "--config", p(&cfg), "--out", p(&b)]);
    assert_eq!(
        fs::read(a.join("manifest.jsonl")).unwrap(),
        fs::read(b.join("manifest.jsonl")).unwrap()
    );
}

#[test]
fn no_image_loss_zeroes_the_image_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--data", p(dataset()), "--out", p(&out), "--no-image-loss", "--set", "epochs=2"]);
    let rows = loss_rows(&out.join("loss.csv"));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r[2], 0.0);
        assert!(r[1] > 0.0);
        assert_eq!(r[3], r[1]);
    }
}

#[test]
fn zero_learning_rate_keeps_the_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--data", p(dataset()), "--out", p(&out), "--set", "epochs=1", "--set", "learning_rate=0"]);
    assert_eq!(
        fs::read(out.join("init.tclc")).unwrap(),
        fs::read(out.join("checkpoint.tclc")).unwrap()
    );
}

#[test]
fn resume_continues_the_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let data = p(dataset());
    ok(&["train", "--data", data, "--out", p(&first), "--set", "epochs=6", "--set", "batch_size=32"]);
    let before = loss_rows(&first.join("loss.csv"));
    let resumed = dir.path().join("resumed");
    let ckpt = first.join("checkpoint.tclc");
    ok(&[
        "train", "--data", data, "--out", p(&resumed), "--resume", p(&ckpt), "--set", "epochs=1", "--set",
        "batch_size=32",
    ]);
    let after = loss_rows(&resumed.join("loss.csv"));
    let (pre, post) = (before.last().unwrap()[3], after[0][3]);
    let fresh = before[0][3];
    assert!(((post - pre) / pre).abs() < 0.05, "pre {pre} post {post}");
    assert!(post < fresh, "resumed {post} should be below a fresh start {fresh}");
}

#[test]
fn existing_checkpoint_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = ["train", "--data", p(dataset()), "--out", p(&out), "--set", "epochs=1"];
    ok(&args);
    let again = run(&args);
    assert!(!again.status.success());
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn oracle_encoder_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let stdout = ok(&["eval-zeroshot", "--data", p(dataset()), "--oracle-encoder", "--out", p(&out)]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(stdout, report);
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("dimension,accuracy,n"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[1], "100.0", "{r}");
        assert_eq!(f[2], "160");
    }
    assert!(out.join("confusion_shape.csv").exists());
}

#[test]
fn trained_eval_uses_the_held_out_split() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let data = p(dataset());
    ok(&["train", "--data", data, "--out", p(&run_dir), "--set", "epochs=1", "--set", "test_count=40"]);
    let ckpt = run_dir.join("checkpoint.tclc");
    let eval = dir.path().join("eval");
    ok(&["eval-zeroshot", "--data", data, "--checkpoint", p(&ckpt), "--out", p(&eval)]);
    let report = fs::read_to_string(eval.join("report.csv")).unwrap();
    assert!(report.lines().skip(1).all(|l| l.ends_with(",40")), "{report}");

    let probe = dir.path().join("probe");
    ok(&["eval-probe", "--data", data, "--checkpoint", p(&ckpt), "--out", p(&probe), "--set", "probe_epochs=2"]);
    let report = fs::read_to_string(probe.join("probe_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 6);

    let overlap = dir.path().join("overlap.txt");
    fs::copy(run_dir.join("train_ids.txt"), &overlap).unwrap();
    let bad = run(&[
        "eval-zeroshot", "--data", data, "--checkpoint", p(&ckpt), "--out", p(&dir.path().join("bad")), "--set",
        &format!("test_ids={}", p(&overlap)),
    ]);
    assert!(!bad.status.success());
}

#[test]
fn missing_checkpoint_is_a_file_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.tclc");
    let out = run(&["eval-zeroshot", "--data", p(dataset()), "--checkpoint", p(&missing), "--out", p(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("absent.tclc"), "{err}");
    assert!(load_checkpoint(&missing, None).is_err());
}

#[test]
fn gradcheck_passes_by_default() {
    let stdout = ok(&["gradcheck"]);
    let enc: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("encoder max relative error "))
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(enc < 1e-4);
    assert!(stdout.trim_end().ends_with("PASS"));
}

#[test]
fn fig6_demo_trace() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["grasp-demo", "--scenario", "fig6", "--out", p(dir.path())]);
    let text = fs::read_to_string(dir.path().join("trace.txt")).unwrap();
    assert_eq!(stdout, text);
    let outcomes: Vec<&str> = text.lines().map(|l| l.rsplit('\t').next().unwrap()).collect();
    assert_eq!(outcomes, ["move_down", "decrease_force", "Stable"]);
    assert!(dir.path().join("trace.json").exists());
    assert!(dir.path().join("clouds/step01.tclp").exists());
}

#[test]
fn external_reasoner_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("requests.jsonl");
    let script = dir.path().join("reasoner.sh");
    fs::write(
        &script,
        format!(
            "n=0\nwhile read -r line; do\n  echo \"$line\" >> {}\n  n=$((n+1))\n  if [ $n -eq 1 ]; then echo 'I would move_down now.'; else echo 'Contact is Stable.'; fi\ndone\n",
            p(&log)
        ),
    )
    .unwrap();
    let out = dir.path().join("demo");
    let reasoner = format!("sh {}", p(&script));
    let stdout = ok(&["grasp-demo", "--scenario", "fig6", "--out", p(&out), "--reasoner", &reasoner]);
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    let requests = fs::read_to_string(&log).unwrap();
    let first: serde_json::Value = serde_json::from_str(requests.lines().next().unwrap()).unwrap();
    assert!(first["cloud_path"].as_str().unwrap().ends_with("step01.tclp"));
    assert!(first["instruction"].is_string());
    assert!(first["state"].is_object());

    let silent = dir.path().join("silent.sh");
    fs::write(&silent, "read -r line\n").unwrap();
    let failed = run(&[
        "grasp-demo", "--scenario", "fig6", "--out", p(&dir.path().join("x")), "--reasoner",
        &format!("sh {}", p(&silent)),
    ]);
    assert!(!failed.status.success());
}
