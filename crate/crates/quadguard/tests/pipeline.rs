//! Cross-module behavior: a trial exported to disk and replayed offline must
//! reproduce the in-loop detector decisions, and the attack must be visible
//! in the logged channels exactly from its onset.

use quadguard::export::{run_log_csvs, write_run_log};
use quadguard::harness::{detect_trial, run_trial, ExperimentConfig};
use quadguard::mmd::online_detect;
use quadguard::rng::RngStream;

fn scenario() -> ExperimentConfig<f64> {
    let mut cfg = ExperimentConfig::<f64>::default();
    cfg.trials = 1;
    cfg.master_seed = 99;
    cfg
}

#[test]
fn offline_replay_of_exported_estimates_reproduces_in_loop_decisions() {
    let cfg = scenario();
    let log = run_trial(&cfg, 0).unwrap();
    let in_loop = detect_trial(&cfg, &log).unwrap();
    assert!(!in_loop.is_empty());

    let dir = tempfile::tempdir().unwrap();
    write_run_log(&log, dir.path()).unwrap();
    let (linear, quad) =
        quadguard::export::read_estimates::<f64>(&dir.path().join("estimates.csv")).unwrap();
    assert_eq!(linear.len(), log.linear_estimates.len());

    // Same sub-stream the in-loop detector used: master seed -> trial -> 2.
    let base = RngStream::from_seed(cfg.master_seed).derive(0).derive(2);
    let replayed = online_detect(
        &linear[1..],
        &quad[1..],
        cfg.detector.window,
        &cfg.detector.bootstrap,
        &base,
    )
    .unwrap();

    assert_eq!(replayed.len(), in_loop.len());
    for (a, b) in in_loop.iter().zip(replayed.iter()) {
        assert_eq!(a.end_index, b.end_index);
        assert_eq!(a.reject, b.reject);
        // The CSV round trip carries 13 significant digits; decisions and
        // near-equality of the statistics must survive it.
        assert!((a.statistic - b.statistic).abs() <= 1e-9 * (1.0 + a.statistic.abs()));
        assert!((a.threshold - b.threshold).abs() <= 1e-9 * (1.0 + a.threshold.abs()));
    }
}

#[test]
fn attack_is_injected_exactly_from_its_onset() {
    let cfg = scenario();
    let onset = cfg.game.attack.onset;
    let beta = cfg.game.attack.beta;
    let log = run_trial(&cfg, 0).unwrap();

    // `attacks[i]` is the corruption applied to the measurement taken at
    // step i + 1 (the initial step has no measurement).
    for (i, a) in log.attacks.iter().enumerate() {
        let step = i + 1;
        if step < onset {
            assert_eq!(a.norm(), 0.0, "premature attack at step {step}");
        } else {
            assert!(
                (a.norm() - beta).abs() <= 1e-9,
                "attack magnitude at step {step} is {}",
                a.norm()
            );
            // Only the pursuer-position components of the channel are hit.
            assert_eq!(a[0], 0.0);
            assert_eq!(a[1], 0.0);
        }
    }

    let mut no_attack = scenario();
    no_attack.game.attack.enabled = false;
    let clean = run_trial(&no_attack, 0).unwrap();
    // Same seed, same draws: identical up to the onset, divergent after.
    for i in 0..log.measurements.len() {
        let step = i + 1;
        if step < onset {
            assert_eq!(log.measurements[i], clean.measurements[i], "step {step}");
        }
    }
    for step in 0..onset {
        assert_eq!(log.linear_estimates[step], clean.linear_estimates[step]);
    }
    assert_ne!(log.measurements[onset - 1], clean.measurements[onset - 1]);
    let last = log.states.len() - 1;
    assert_ne!(log.linear_estimates[last], clean.linear_estimates[last]);
}

#[test]
fn run_log_tables_have_the_documented_names_and_shapes() {
    let cfg = scenario();
    let log = run_trial(&cfg, 0).unwrap();
    let tables = run_log_csvs(&log);
    let names: Vec<&str> = tables.iter().map(|(n, _)| *n).collect();
    assert_eq!(
        names,
        [
            "states.csv",
            "inputs.csv",
            "measurements.csv",
            "readings.csv",
            "estimates.csv",
            "projections.csv"
        ]
    );
    let rows = |text: &str| text.lines().count() - 1;
    let horizon = cfg.game.horizon;
    for (name, text) in &tables {
        match *name {
            // Tables indexed by state step carry the initial row as well.
            "states.csv" | "readings.csv" | "estimates.csv" => {
                assert_eq!(rows(text), horizon + 1, "{name}")
            }
            _ => assert_eq!(rows(text), horizon, "{name}"),
        }
    }
    let estimates = &tables[4].1;
    let header = estimates.lines().next().unwrap();
    assert!(header.starts_with("step,xl0,"));
    assert!(header.ends_with(",xq7"));
}
