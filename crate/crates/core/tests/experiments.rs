use std::fs;
use std::path::Path;
use std::process::Command;

use sgmcmc::experiment::{error_exit_code, run, ConfigFile, ExperimentKind, RESOLVED_CONFIG};
use sgmcmc::Error;

fn config(text: &str) -> ConfigFile {
    ConfigFile::parse(text).unwrap()
}

fn rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

fn cli(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_sgmcmc"))
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn synthetic_1d_writes_one_metric_row_per_chain() {
    let out = tempfile::tempdir().unwrap();
    let outcome = run(ExperimentKind::Synthetic1d, config("steps = 3000\n"), out.path()).unwrap();
    assert_eq!(outcome.exit_code(), 0);
    let metrics = rows(&out.path().join("metrics.csv"));
    assert_eq!(metrics[0], "preset,target,chain,n_steps,kl,autocorr_time");
    assert_eq!(metrics.len(), 1 + 4 * 2 * 3);
    assert!(out.path().join(RESOLVED_CONFIG).exists());
    assert!(out.path().join("timings.csv").exists());
}

#[test]
fn synthetic_2d_writes_ten_point_paths() {
    let out = tempfile::tempdir().unwrap();
    run(ExperimentKind::Synthetic2d, config("steps = 3000\nchains = 1\n"), out.path()).unwrap();
    for preset in ["sgld", "sghmc", "gsgrhmc"] {
        let path = rows(&out.path().join("paths").join(format!("{preset}_chain0.csv")));
        assert_eq!(path[0], "theta_0,theta_1");
        assert_eq!(path.len(), 11, "{preset}");
    }
}

#[test]
fn empty_corpus_gives_header_only_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (train, heldout) = (dir.path().join("train.txt"), dir.path().join("heldout.txt"));
    fs::write(&train, "").unwrap();
    fs::write(&heldout, "").unwrap();
    let text = format!("corpus = {}\nheldout = {}\nvocab = 10\n", train.display(), heldout.display());
    let out = dir.path().join("out");
    let outcome = run(ExperimentKind::Lda, config(&text), &out).unwrap();
    assert_eq!(outcome.exit_code(), 0);
    assert_eq!(rows(&out.join("lda_summary.csv")).len(), 1);
}

#[test]
fn malformed_corpus_aborts_before_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let (train, heldout) = (dir.path().join("train.txt"), dir.path().join("heldout.txt"));
    fs::write(&train, "0 1:2 3:1\n1 4:x\n").unwrap();
    fs::write(&heldout, "0 1:1\n").unwrap();
    let text = format!("corpus = {}\nheldout = {}\nvocab = 10\n", train.display(), heldout.display());
    let out = dir.path().join("out");
    let err = run(ExperimentKind::Lda, config(&text), &out).unwrap_err();
    assert_eq!(error_exit_code(&err), 1, "{err}");
    assert!(!out.join("perplexity").exists());
}

#[test]
fn unknown_keys_and_presets_are_config_errors() {
    let out = tempfile::tempdir().unwrap();
    for text in ["stepz = 10\n", "presets = sgld, mala\n", "[sgld]\nfriction = 1\n"] {
        let err = run(ExperimentKind::Synthetic1d, config(text), out.path()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        assert_eq!(error_exit_code(&err), 1);
    }
    assert!(!out.path().join("metrics.csv").exists());
}

#[test]
fn broken_curl_fails_verification() {
    let out = tempfile::tempdir().unwrap();
    let text = "inject_broken_q = true\nspacings = 0.04, 0.02\nreconstruction_spacing = 0.04\n";
    let outcome = run(ExperimentKind::Verify, config(text), out.path()).unwrap();
    assert!(outcome.verification_failed);
    assert_eq!(outcome.exit_code(), 2);
    assert!(out.path().join(RESOLVED_CONFIG).exists());
    assert!(rows(&out.path().join("verify.csv")).iter().any(|r| r.ends_with(",false")));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| dir.path().join(name).display().to_string();

    let ok = out("ok");
    assert_eq!(cli(&["synthetic-1d", "--out", &ok, "--steps", "2000", "--seed", "4"]), 0);

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "seed = -1\n").unwrap();
    assert_eq!(cli(&["synthetic-1d", "--config", bad.to_str().unwrap(), "--out", &out("bad")]), 1);
    assert_eq!(cli(&["verify", "--out", &out("v"), "--steps", "10"]), 1);
    assert_eq!(cli(&["mala", "--out", &out("m")]), 1);

    let broken = dir.path().join("broken.cfg");
    fs::write(&broken, "inject_broken_q = true\nspacings = 0.04, 0.02\nreconstruction_spacing = 0.04\n").unwrap();
    assert_eq!(cli(&["verify", "--config", broken.to_str().unwrap(), "--out", &out("b")]), 2);

    let wild = dir.path().join("wild.cfg");
    fs::write(&wild, "presets = sgld\ntargets = one-peak\nchains = 1\n[sgld]\nepsilon = 5\n").unwrap();
    assert_eq!(cli(&["synthetic-1d", "--config", wild.to_str().unwrap(), "--out", &out("w"), "--steps", "2000"]), 3);
}
