//! Attack-resilient state estimation for linear systems that expose two
//! measurement channels: a vector channel an adversary can bias and a
//! scalar quadratic channel assumed tamper-proof.
//!
//! The crate provides a standard Kalman filter on the vector channel, a
//! constrained observer on the quadratic channel whose update is projected
//! onto a set of recently consistent states, a kernel two-sample test that
//! flags when the two estimate trajectories drift apart, and a
//! pursuit-evasion simulation harness that exercises the whole pipeline.
//!
//! All numerics are generic over the scalar type through [`scalar::Real`];
//! the `*F64` / `*F32` aliases at the crate root pick a concrete precision.

pub mod checks;
pub mod config;
pub mod export;
pub mod feasible;
pub mod harness;
pub mod mmd;
pub mod observers;
pub mod pursuit;
pub mod rng;
pub mod scalar;
pub mod system;

pub use checks::{run_all_checks, CheckError, CheckOutcome};
pub use config::{config_digest, ConfigDoc, ConfigError};
pub use export::{
    read_estimates, read_table, report_csvs, run_log_csvs, svg_mmd, svg_mse, svg_trajectories,
    write_report, write_run_log, write_svg, ExportError, PlotKind,
};
pub use feasible::{
    ActiveConstraint, ConstraintRecord, DegeneracyReport, FeasibleError, FeasibleSet, Projection,
    ProjectionConfig, ProjectionStatus,
};
pub use harness::{
    aggregate_series, detect_trial, mse_series, run_experiment, run_trial, AggregateReport,
    ControlEstimator, DetectorSettings, ExperimentConfig, HarnessError, ObserverSettings, RunLog,
    SeriesStats,
};
pub use mmd::{
    detect, online_detect, Bandwidth, DetectionOutcome, KernelConfig, MmdError, Multiplier,
    SampleWindow, WildBootstrapConfig,
};
pub use observers::{
    ekf_correct, quadratic_jacobian, EkfCorrection, HistoryEntry, LinearObserverState,
    ObserverError, QuadObserverConfig, QuadObserverState, QuadStepInfo,
};
pub use pursuit::{
    build_model, sample_initial_state, AttackGenerator, AttackSpec, EvaderPolicy, GameConfig,
    InitSpec, PursuerPolicy, PursuitError,
};
pub use rng::RngStream;
pub use scalar::Real;
pub use system::{StepRecord, SystemError, SystemModel, ValidationPolicy};

pub type SystemModelF64 = SystemModel<f64>;
pub type SystemModelF32 = SystemModel<f32>;
pub type FeasibleSetF64 = FeasibleSet<f64>;
pub type LinearObserverF64 = LinearObserverState<f64>;
pub type LinearObserverF32 = LinearObserverState<f32>;
pub type QuadObserverF64 = QuadObserverState<f64>;
pub type QuadObserverF32 = QuadObserverState<f32>;
