use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
synthetic.n_samples = 40
split.initial = 8
split.unlabeled = 20
split.test = 12
al.iterations = 2
al.k_strong = 4
al.k_weak = 3
al.pseudo_start_iter = 1
train.base.epochs = 2
train.finetune.epochs = 1
ensemble.rounds = 1
";

fn dsal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsal"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_a_loadable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(&dsal(&[
        "generate",
        "--out",
        s(&out),
        "--n-samples",
        "5",
        "--image-size",
        "16",
        "--seed",
        "3",
    ]));
    let samples = dsal_core::dataset::load_dir(&out).unwrap();
    assert_eq!(samples.len(), 5);
    assert_eq!(samples[0].image.dims(), (16, 16));
}

#[test]
fn run_score_refine_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    let res = dsal(&["run", "--config", s(&cfg), "--out", s(&out), "--seed", "5"]);
    ok(&res);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(
        stdout.contains("dsal") && stdout.contains("random"),
        "{stdout}"
    );
    for f in [
        "config.txt",
        "summary.csv",
        "base.ckpt",
        "dsal/run_log.csv",
        "dsal/scores.csv",
        "dsal/heldout.csv",
        "dsal/ensemble.txt",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(fs::read_to_string(out.join("config.txt"))
        .unwrap()
        .contains("seed = 5"));

    let data = dir.path().join("data");
    ok(&dsal(&["generate", "--out", s(&data), "--n-samples", "6"]));
    let scored = dir.path().join("scored");
    ok(&dsal(&[
        "score",
        "--checkpoint",
        s(&out.join("base.ckpt")),
        "--data",
        s(&data),
        "--out",
        s(&scored),
    ]));
    assert_eq!(
        fs::read_to_string(scored.join("scores.csv"))
            .unwrap()
            .lines()
            .count(),
        7
    );

    let first = fs::read_to_string(data.join("manifest.txt"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    let mask = dir.path().join("refined.pgm");
    ok(&dsal(&[
        "refine",
        "--image",
        s(&data.join("images").join(format!("{first}.pgm"))),
        "--prob",
        s(&data.join("masks").join(format!("{first}.pgm"))),
        "--ensemble",
        s(&out.join("dsal/ensemble.txt")),
        "--output",
        s(&mask),
    ]));
    assert!(mask.is_file());

    let summary = out.join("dsal/correlation_summary.csv");
    let before = fs::read(&summary).unwrap();
    fs::remove_file(&summary).unwrap();
    ok(&dsal(&["report", "--out", s(&out)]));
    assert_eq!(fs::read(&summary).unwrap(), before);
}

#[test]
fn errors_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "al.bogus = 1\n").unwrap();
    let res = dsal(&["run", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.starts_with("dsal: error:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let res = dsal(&["run"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("--out"));
}
