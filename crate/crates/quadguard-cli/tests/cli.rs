//! Black-box tests against the compiled binary: exit codes, file layout,
//! determinism, and flag/config layering.

use std::path::Path;
use std::process::{Command, Output};

fn quadguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadguard"))
        .args(args)
        .env_remove("QUADGUARD_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("missing {name} in {}: {e}", dir.display()))
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(quadguard(&["--help"]).status.code(), Some(0));
    assert_eq!(quadguard(&["--version"]).status.code(), Some(0));
    assert_eq!(quadguard(&["simulate", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    // Unknown flag.
    let out = quadguard(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    // Missing subcommand.
    assert_eq!(quadguard(&[]).status.code(), Some(1));
    // Config file that does not exist.
    let out = quadguard(&["simulate", "--config", "/definitely/not/here.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cannot read"));
    // Config file with an unknown key.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "not_a_real_key = 5\n").unwrap();
    let out = quadguard(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    // A value that fails validation.
    let out = quadguard(&["experiment", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn missing_estimates_file_is_a_runtime_failure() {
    let out = quadguard(&["detect", "/nowhere/estimates.csv"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn simulate_reruns_are_byte_identical_and_respect_no_svg() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = quadguard(&[
            "simulate",
            "--seed",
            "42",
            "--no-svg",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    for name in [
        "states.csv",
        "inputs.csv",
        "measurements.csv",
        "readings.csv",
        "estimates.csv",
        "projections.csv",
    ] {
        assert_eq!(read(dir_a.path(), name), read(dir_b.path(), name), "{name}");
    }
    // The echoed config records its own output directory; everything else
    // must match.
    let strip_out_dir = |text: String| -> String {
        text.lines()
            .filter(|l| !l.starts_with("output_dir"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        strip_out_dir(read(dir_a.path(), "config.toml")),
        strip_out_dir(read(dir_b.path(), "config.toml"))
    );
    assert!(!dir_a.path().join("trajectories.svg").exists());

    // Same seed with the plot enabled: data unchanged, plot present.
    let dir_c = tempfile::tempdir().unwrap();
    let out = quadguard(&["simulate", "--seed", "42", "--out", dir_c.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(read(dir_a.path(), "states.csv"), read(dir_c.path(), "states.csv"));
    assert!(read(dir_c.path(), "trajectories.svg").starts_with("<svg"));
}

#[test]
fn simulate_honors_the_output_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_quadguard"))
        .args(["simulate", "--seed", "7", "--no-svg"])
        .env("QUADGUARD_OUT", dir.path())
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("estimates.csv").exists());
}

#[test]
fn no_attack_flag_reaches_the_echoed_config_and_the_data() {
    let attacked = tempfile::tempdir().unwrap();
    let clean = tempfile::tempdir().unwrap();
    let out = quadguard(&["simulate", "--seed", "3", "--no-svg", "--out", attacked.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = quadguard(&[
        "simulate",
        "--seed",
        "3",
        "--no-attack",
        "--no-svg",
        "--out",
        clean.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    assert!(read(clean.path(), "config.toml").contains("enabled = false"));
    assert!(read(attacked.path(), "config.toml").contains("enabled = true"));
    // Identical draws, different channel: the estimates must diverge.
    assert_ne!(
        read(attacked.path(), "estimates.csv"),
        read(clean.path(), "estimates.csv")
    );
    assert_eq!(read(attacked.path(), "states.csv").lines().next(), read(clean.path(), "states.csv").lines().next());
}

#[test]
fn experiment_single_trial_reports_zero_se_and_writes_plots() {
    let dir = tempfile::tempdir().unwrap();
    let out = quadguard(&[
        "experiment",
        "--trials",
        "1",
        "--seed",
        "7",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let mse = read(dir.path(), "mse.csv");
    let mut rows = 0;
    for line in mse.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 5);
        let se_lin: f64 = cols[2].parse().unwrap();
        let se_quad: f64 = cols[4].parse().unwrap();
        assert_eq!(se_lin, 0.0, "single trial has no spread");
        assert_eq!(se_quad, 0.0);
        rows += 1;
    }
    assert!(rows > 0);

    let metadata = read(dir.path(), "metadata.csv");
    assert!(metadata.contains("master_seed,7"));
    assert!(metadata.contains("config_digest,"));
    assert!(read(dir.path(), "detection.csv").starts_with("step,"));
    assert!(read(dir.path(), "fallbacks.csv").starts_with("step,count"));
    assert!(read(dir.path(), "mse.svg").starts_with("<svg"));
    assert!(read(dir.path(), "mmd.svg").starts_with("<svg"));
}

#[test]
fn detect_replays_a_simulation_deterministically() {
    let sim = tempfile::tempdir().unwrap();
    let out = quadguard(&["simulate", "--seed", "42", "--no-svg", "--out", sim.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let estimates = sim.path().join("estimates.csv");

    let det_a = tempfile::tempdir().unwrap();
    let det_b = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for dir in [&det_a, &det_b] {
        let out = quadguard(&[
            "detect",
            estimates.to_str().unwrap(),
            "--seed",
            "42",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let text = stdout(&out);
        assert!(
            text.contains("first rejection at step") || text.contains("no rejections"),
            "{text}"
        );
        texts.push(read(dir.path(), "detections.csv"));
    }
    assert_eq!(texts[0], texts[1]);

    let detections = &texts[0];
    assert!(detections.starts_with("step,statistic,threshold,p_value,reject"));
    // Horizon 20 with window 10 over steps 1..=20 leaves decisions at 10..=20.
    assert_eq!(detections.lines().count() - 1, 11);
    let first_row: Vec<&str> = detections.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first_row[0], "10");
}

#[test]
fn config_file_values_survive_the_round_trip_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "master_seed = 5\ntrials = 2\n\n[game.attack]\nbeta = 3.5\n",
    )
    .unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let out = quadguard(&[
        "experiment",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        out_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let echoed = read(out_dir.path(), "config.toml");
    assert!(echoed.contains("master_seed = 11"), "flag beats file: {echoed}");
    assert!(echoed.contains("trials = 2"));
    assert!(echoed.contains("beta = 3.5"));
    assert!(read(out_dir.path(), "metadata.csv").contains("master_seed,11"));
}
