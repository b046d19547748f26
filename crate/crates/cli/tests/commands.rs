use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn propkd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_propkd"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PSS_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const QUICK: [&str; 12] = [
    "--hidden-dim", "8", "--pe-dim", "8", "--refiner-hidden", "4", "--max-epochs", "20", "--lr-student", "0.01", "--lr-pt",
    "0.01",
];

#[test]
fn gen_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    ok(&propkd(&["gen", "--news", "20", "--seed", "1", "--out", "d.jsonl"], dir.path()));
    let out = propkd(&["validate", "d.jsonl"], dir.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("20 news"));
}

#[test]
fn validate_reports_broken_file() {
    let dir = tempfile::tempdir().unwrap();
    ok(&propkd(&["gen", "--news", "12", "--out", "d.jsonl"], dir.path()));
    let text = fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    fs::write(dir.path().join("bad.jsonl"), text.replacen("\"label\":0", "\"label\":7", 1)).unwrap();
    let out = propkd(&["validate", "bad.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("label"));
}

#[test]
fn train_is_byte_reproducible_and_eval_matches() {
    let dir = tempfile::tempdir().unwrap();
    ok(&propkd(&["gen", "--news", "40", "--users", "60", "--seed", "2", "--out", "d.jsonl"], dir.path()));
    for run in ["a", "b"] {
        let mut args = vec!["train", "--data", "d.jsonl", "--seed", "5", "--out", run];
        args.extend(QUICK);
        ok(&propkd(&args, dir.path()));
    }
    for file in ["metrics.csv", "history.csv", "student.json", "content_teacher.json", "propagation_teacher.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let out = propkd(&["eval", "--run", "a"], dir.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("matches recorded metrics"));
}

#[test]
fn seed_environment_variable_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    ok(&propkd(&["gen", "--news", "20", "--out", "d.jsonl"], dir.path()));
    fs::write(dir.path().join("c.json"), r#"{"seed": 1, "max_epochs": 2, "hidden_dim": 4, "pe_dim": 4}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_propkd"))
        .args(["train", "--config", "c.json", "--data", "d.jsonl", "--out", "r"])
        .current_dir(dir.path())
        .env("PSS_SEED", "9")
        .output()
        .unwrap();
    ok(&out);
    let cfg = fs::read_to_string(dir.path().join("r/config.json")).unwrap();
    assert!(cfg.contains("\"seed\": 9"), "{cfg}");
}

#[test]
fn grad_check_on_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = propkd(&["grad-check"], dir.path());
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for model in ["content teacher", "propagation teacher", "student"] {
        assert!(text.contains(model), "{text}");
    }
}

#[test]
fn errors_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = propkd(&["train", "--lambda", "1.5", "--data", "x.jsonl", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
    let out = propkd(&["train", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let out = propkd(&["validate", "missing.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let out = propkd(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweeps_write_expected_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    ok(&propkd(&["gen", "--news", "20", "--users", "30", "--out", "d.jsonl"], dir.path()));
    let tiny = ["--hidden-dim", "4", "--pe-dim", "4", "--refiner-hidden", "2", "--max-epochs", "2"];
    let rows = |sub: &str| fs::read_to_string(dir.path().join(sub).join("metrics.csv")).unwrap().lines().count() - 1;

    let mut args = vec!["ablate", "--data", "d.jsonl", "--seeds", "0,1", "--out", "abl"];
    args.extend(tiny);
    ok(&propkd(&args, dir.path()));
    assert_eq!(rows("abl"), 12);

    let mut args = vec!["noise-sweep", "--data", "d.jsonl", "--ratios", "0,0.5", "--seeds", "0", "--out", "ns"];
    args.extend(tiny);
    ok(&propkd(&args, dir.path()));
    assert_eq!(rows("ns"), 6);

    let mut args = vec![
        "param-sweep", "--data", "d.jsonl", "--lambdas", "0.1,0.9", "--betas", "0.5", "--rhos", "1,2", "--out", "ps",
    ];
    args.extend(tiny);
    ok(&propkd(&args, dir.path()));
    assert_eq!(rows("ps"), 4);
}
