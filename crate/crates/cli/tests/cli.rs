use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
# tiny run for tests
steps = 10
batch_size = 8
d = 6
k = 4
encoder_hidden = 16
decoder_hidden = 16
eval.samples = 400
eval.score_batch = 8
eval.score_train = 60
eval.score_test = 40
eval.score_iters = 50
eval.def2_pairs = 50
verify.steps = 300
verify.seeds = 2
";

fn pmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmdp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn train(dir: &Path, cfg: &Path, out: &str) -> PathBuf {
    let out = dir.join(out);
    let o = pmdp(&["train", "--config", s(cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmdp(&[
        "train",
        "--config",
        s(&dir.path().join("nope.txt")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_key_exits_2_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", "steps = 10\nlearning_rate = 0.1\n");
    let o = pmdp(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn train_writes_checkpoint_and_one_loss_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", SMALL);
    let out = train(dir.path(), &cfg, "run");
    assert!(out.join("checkpoint.pmdp").is_file());
    let rows = csv_rows(&out.join("loss.csv"));
    assert_eq!(rows[0][0], "step");
    assert_eq!(rows.len(), 11);
    for row in &rows[1..] {
        for v in &row[1..] {
            let x: f64 = v.parse().unwrap();
            assert!(x.is_finite());
        }
    }
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("config_hash = "));
    assert!(manifest.contains(" ok checkpoint_sha256 "));
}

#[test]
fn same_config_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", SMALL);
    let a = train(dir.path(), &cfg, "a");
    let b = train(dir.path(), &cfg, "b");
    let read = |p: PathBuf| std::fs::read(p.join("checkpoint.pmdp")).unwrap();
    assert_eq!(read(a), read(b));
}

#[test]
fn seed_sweep_writes_subdirectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", SMALL);
    let out = dir.path().join("sweep");
    let o = pmdp(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--seeds",
        "1,2",
    ]);
    assert!(o.status.success());
    let a = std::fs::read(out.join("seed-1/checkpoint.pmdp")).unwrap();
    let b = std::fs::read(out.join("seed-2/checkpoint.pmdp")).unwrap();
    assert_ne!(a, b);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seeds = 1,2"));
    assert_eq!(manifest.matches(" ok ").count(), 2);
}

#[test]
fn eval_reports_scores_in_range_and_leaves_checkpoint_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", SMALL);
    let run = train(dir.path(), &cfg, "run");
    let ck = run.join("checkpoint.pmdp");
    let before = std::fs::read(&ck).unwrap();
    let out = dir.path().join("eval");
    let o = pmdp(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&ck).unwrap(), before);

    let report = csv_rows(&out.join("report.csv"));
    assert_eq!(report[0], ["run", "checkpoint", "metric", "value"]);
    assert_eq!(report.len(), 7);
    for row in &report[1..] {
        let v: f64 = row[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&v), "{row:?}");
    }
    assert_eq!(csv_rows(&out.join("activity.csv")).len(), 1 + 4);
    let codes = csv_rows(&out.join("codes.csv"));
    // run, 2 factors, k*d = 4*6 code entries.
    assert_eq!(codes[0].len(), 1 + 2 + 24);
    assert_eq!(codes.len(), 1 + 400);
}

#[test]
fn eval_of_several_checkpoints_adds_median_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", SMALL);
    let out = dir.path().join("sweep");
    assert!(pmdp(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--seeds",
        "1,2,3"
    ])
    .status
    .success());
    let cks: Vec<PathBuf> = (1..=3)
        .map(|i| out.join(format!("seed-{i}/checkpoint.pmdp")))
        .collect();
    let eval = dir.path().join("eval");
    let mut args = vec!["eval", "--config", s(&cfg), "--out", s(&eval)];
    for c in &cks {
        args.extend(["--checkpoint", s(c)]);
    }
    assert!(pmdp(&args).status.success());
    let report = csv_rows(&eval.join("report.csv"));
    assert_eq!(report.len(), 1 + 3 * 6 + 6);
    for row in report.iter().filter(|r| r[0] == "median") {
        let per_seed: Vec<f64> = report
            .iter()
            .filter(|r| r[0] != "median" && r[2] == row[2])
            .map(|r| r[3].parse().unwrap())
            .collect();
        let mut sorted = per_seed.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(row[3].parse::<f64>().unwrap(), sorted[1]);
    }
}

#[test]
fn eval_with_mismatched_shape_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", SMALL);
    let run = train(dir.path(), &cfg, "run");
    let other = write_config(dir.path(), "d.txt", &SMALL.replace("d = 6", "d = 5"));
    let o = pmdp(&[
        "eval",
        "--config",
        s(&other),
        "--checkpoint",
        s(&run.join("checkpoint.pmdp")),
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_unknown_mode_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmdp(&["verify", "--mode", "bogus", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_spar_writes_overlap_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", SMALL);
    let out = dir.path().join("v");
    let o = pmdp(&[
        "verify",
        "--mode",
        "spar",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("overlap.csv"));
    assert_eq!(rows[0], ["seed", "step", "overlap"]);
    assert!(rows[1..].iter().any(|r| r[0] == "1"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final overlap"));
}

#[test]
fn verify_def2_reports_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", SMALL);
    let run = train(dir.path(), &cfg, "run");
    let out = dir.path().join("v");
    let o = pmdp(&[
        "verify",
        "--mode",
        "def2",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&run.join("checkpoint.pmdp")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("def2.csv"));
    let get = |k: &str| -> f64 { rows.iter().find(|r| r[0] == k).unwrap()[1].parse().unwrap() };
    for k in ["hit_rate", "leak_rate", "oracle_agreement"] {
        assert!((0.0..=1.0).contains(&get(k)));
    }
}

#[test]
fn verify_def2_without_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmdp(&["verify", "--mode", "def2", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_writes_every_term() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmdp(&["gradcheck", "--out", s(dir.path())]);
    assert!(o.status.success());
    let rows = csv_rows(&dir.path().join("gradcheck.csv"));
    assert_eq!(rows.len(), 1 + 6);
    assert!(
        rows[1..].iter().all(|r| r.last().unwrap() == "true"),
        "{rows:?}"
    );
}
