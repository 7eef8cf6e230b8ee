//! Subcommand behaviour on tiny problems: exit codes, determinism and
//! flag precedence.

use std::path::{Path, PathBuf};

use cadavae_cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

const TINY: &[&str] = &[
    "--set", "epochs=3",
    "--set", "latent_dim=4",
    "--set", "image_encoder_hidden=16",
    "--set", "image_decoder_hidden=16",
    "--set", "aux_encoder_hidden=8",
    "--set", "aux_decoder_hidden=8",
    "--set", "per_seen_class=10",
    "--set", "per_unseen_class=20",
    "--set", "cls_epochs=3",
];

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("cadavae").chain(args.iter().copied()))
}

fn synth(dir: &Path, name: &str, feat_dim: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let (feat, seed) = (feat_dim.to_string(), seed.to_string());
    let code = cli(&[
        "synth", "--seen", "4", "--unseen", "2", "--feat-dim", &feat, "--attr-dim", "5", "--samples", "12",
        "--seed", &seed, "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    out
}

fn train(data: &Path, out: &Path) -> i32 {
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    cli(&args)
}

fn eval(data: &Path, model: &Path, report: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        "eval", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap(),
        "--out", report.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    cli(&args)
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = std::fs::read(synth(dir.path(), "a.gzc", 8, 1)).unwrap();
    let b = std::fs::read(synth(dir.path(), "b.gzc", 8, 1)).unwrap();
    let c = std::fs::read(synth(dir.path(), "c.gzc", 8, 2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn usage_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["train"]), EXIT_USAGE);
    assert_eq!(cli(&["summary", "--data", dir.path().join("missing.gzc").to_str().unwrap()]), EXIT_USAGE);
    let data = synth(dir.path(), "d.gzc", 8, 1);
    let out = dir.path().join("m");
    let d = data.to_str().unwrap();
    let o = out.to_str().unwrap();
    assert_eq!(cli(&["train", "--data", d, "--out", o, "--variant", "nope"]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--data", d, "--out", o, "--set", "no_such_key=1"]), EXIT_USAGE);
    assert_eq!(cli(&["sweep", "--data", d, "--sweep", "shots", "--values", ""]), EXIT_USAGE);
}

#[test]
fn zero_shots_flag_matches_default_and_mismatched_model_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.gzc", 8, 1);
    let out = dir.path().join("m");
    assert_eq!(train(&data, &out), EXIT_OK);
    let model = out.join("model.cvae");
    assert!(out.join("loss.csv").exists());

    let (r0, r1) = (dir.path().join("r0.csv"), dir.path().join("r1.csv"));
    assert_eq!(eval(&data, &model, &r0, &[]), EXIT_OK);
    assert_eq!(eval(&data, &model, &r1, &["--shots", "0"]), EXIT_OK);
    let (a, b) = (std::fs::read_to_string(&r0).unwrap(), std::fs::read_to_string(&r1).unwrap());
    assert_eq!(a, b);
    assert!(a.starts_with("dataset,variant,seed,shots,S,U,H\n"));

    let wider = synth(dir.path(), "w.gzc", 10, 1);
    assert_eq!(eval(&wider, &model, &dir.path().join("r2.csv"), &[]), EXIT_RUNTIME);
}

#[test]
fn shots_sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.gzc", 8, 1);
    let report = dir.path().join("sweep.csv");
    let mut args = vec![
        "sweep", "--data", data.to_str().unwrap(), "--sweep", "shots", "--values", "0,1,2,3",
        "--out", report.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    assert_eq!(cli(&args), EXIT_OK);
    let text = std::fs::read_to_string(report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "{text}");
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")), "{text}");
}
