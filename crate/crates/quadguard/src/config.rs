//! TOML configuration document for the experiment harness.
//!
//! The document is a plain-`f64` mirror of [`ExperimentConfig`] in which
//! every key is optional: a config file only needs to name the values it
//! changes, and everything else falls back to the built-in default. The
//! fully resolved document is what gets echoed into the output directory,
//! so a run's provenance never depends on which keys the input file spelled
//! out.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feasible::ProjectionConfig;
use crate::harness::{
    ControlEstimator, DetectorSettings, ExperimentConfig, HarnessError, ObserverSettings,
};
use crate::mmd::{Bandwidth, KernelConfig, Multiplier, WildBootstrapConfig};
use crate::pursuit::{AttackSpec, GameConfig, InitSpec};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Field {
        field: &'static str,
        message: String,
    },
    #[error(transparent)]
    Invalid(#[from] HarnessError),
}

/// Top-level configuration document. Unknown keys are rejected so typos
/// surface as parse errors instead of silently keeping defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDoc {
    pub trials: usize,
    pub master_seed: u64,
    /// `"linear"`, `"quadratic"`, or `"truth"`: which estimate drives the
    /// evader.
    pub control_estimator: String,
    /// Where output files go; flags and environment can override it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub game: GameDoc,
    pub observer: ObserverDoc,
    pub detector: DetectorDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameDoc {
    pub dt: f64,
    pub horizon: usize,
    pub noise_std: f64,
    pub accel_limit: f64,
    pub evader_vmax: f64,
    pub pursuer_vmax: f64,
    pub eps_v: f64,
    pub init: InitDoc,
    pub attack: AttackDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitDoc {
    pub evader_pos_mean: [f64; 2],
    pub evader_pos_std: f64,
    pub pursuer_pos_mean: [f64; 2],
    pub pursuer_pos_std: f64,
    pub evader_speed_mean: f64,
    pub evader_speed_std: f64,
    pub pursuer_speed_mean: f64,
    pub pursuer_speed_std: f64,
    pub min_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackDoc {
    pub onset: usize,
    pub beta: f64,
    pub enabled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverDoc {
    pub window: usize,
    /// Reading-variance proxy; omit to derive it from the noise level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Constraint slack; omit to derive it from the noise level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    pub initial_covariance: f64,
    pub projection: ProjectionDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionDoc {
    pub rho_init: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol_feas: f64,
    pub tol_step: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub refine: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorDoc {
    pub window: usize,
    pub draws: usize,
    pub alpha: f64,
    /// Either the string `"median"` or a fixed positive number.
    pub bandwidth: BandwidthDoc,
    /// Only `"rademacher"` is implemented.
    pub multiplier: String,
}

/// TOML-friendly bandwidth: a bare number pins it, the string `"median"`
/// selects the data-driven heuristic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthDoc {
    Fixed(f64),
    Named(String),
}

impl Default for ConfigDoc {
    fn default() -> Self {
        Self::from_config(&ExperimentConfig::<f64>::default())
    }
}

impl Default for GameDoc {
    fn default() -> Self {
        (&GameConfig::<f64>::default()).into()
    }
}

impl Default for InitDoc {
    fn default() -> Self {
        (&InitSpec::<f64>::default()).into()
    }
}

impl Default for AttackDoc {
    fn default() -> Self {
        (&AttackSpec::<f64>::default()).into()
    }
}

impl Default for ObserverDoc {
    fn default() -> Self {
        (&ObserverSettings::<f64>::default()).into()
    }
}

impl Default for ProjectionDoc {
    fn default() -> Self {
        (&ProjectionConfig::<f64>::default()).into()
    }
}

impl Default for DetectorDoc {
    fn default() -> Self {
        (&DetectorSettings::<f64>::default()).into()
    }
}

impl<T: Real> From<&GameConfig<T>> for GameDoc {
    fn from(g: &GameConfig<T>) -> Self {
        Self {
            dt: g.dt.as_f64(),
            horizon: g.horizon,
            noise_std: g.noise_std.as_f64(),
            accel_limit: g.accel_limit.as_f64(),
            evader_vmax: g.evader_vmax.as_f64(),
            pursuer_vmax: g.pursuer_vmax.as_f64(),
            eps_v: g.eps_v.as_f64(),
            init: (&g.init).into(),
            attack: (&g.attack).into(),
        }
    }
}

impl<T: Real> From<&InitSpec<T>> for InitDoc {
    fn from(i: &InitSpec<T>) -> Self {
        Self {
            evader_pos_mean: [i.evader_pos_mean[0].as_f64(), i.evader_pos_mean[1].as_f64()],
            evader_pos_std: i.evader_pos_std.as_f64(),
            pursuer_pos_mean: [
                i.pursuer_pos_mean[0].as_f64(),
                i.pursuer_pos_mean[1].as_f64(),
            ],
            pursuer_pos_std: i.pursuer_pos_std.as_f64(),
            evader_speed_mean: i.evader_speed_mean.as_f64(),
            evader_speed_std: i.evader_speed_std.as_f64(),
            pursuer_speed_mean: i.pursuer_speed_mean.as_f64(),
            pursuer_speed_std: i.pursuer_speed_std.as_f64(),
            min_speed: i.min_speed.as_f64(),
        }
    }
}

impl<T: Real> From<&AttackSpec<T>> for AttackDoc {
    fn from(a: &AttackSpec<T>) -> Self {
        Self {
            onset: a.onset,
            beta: a.beta.as_f64(),
            enabled: a.enabled,
        }
    }
}

impl<T: Real> From<&ObserverSettings<T>> for ObserverDoc {
    fn from(o: &ObserverSettings<T>) -> Self {
        Self {
            window: o.window,
            eta: o.eta.map(|v| v.as_f64()),
            zeta: o.zeta.map(|v| v.as_f64()),
            initial_covariance: o.initial_covariance.as_f64(),
            projection: (&o.projection).into(),
        }
    }
}

impl<T: Real> From<&ProjectionConfig<T>> for ProjectionDoc {
    fn from(p: &ProjectionConfig<T>) -> Self {
        Self {
            rho_init: p.rho_init.as_f64(),
            rho_growth: p.rho_growth.as_f64(),
            rho_max: p.rho_max.as_f64(),
            max_outer: p.max_outer,
            max_inner: p.max_inner,
            tol_feas: p.tol_feas.as_f64(),
            tol_step: p.tol_step.as_f64(),
            armijo_c1: p.armijo_c1.as_f64(),
            backtrack: p.backtrack.as_f64(),
            refine: p.refine,
        }
    }
}

impl<T: Real> From<&DetectorSettings<T>> for DetectorDoc {
    fn from(d: &DetectorSettings<T>) -> Self {
        Self {
            window: d.window,
            draws: d.bootstrap.draws,
            alpha: d.bootstrap.alpha.as_f64(),
            bandwidth: match d.bootstrap.kernel.bandwidth {
                Bandwidth::MedianHeuristic => BandwidthDoc::Named("median".into()),
                Bandwidth::Fixed(v) => BandwidthDoc::Fixed(v.as_f64()),
            },
            multiplier: match d.bootstrap.multiplier {
                Multiplier::Rademacher => "rademacher".into(),
            },
        }
    }
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Serializes the complete document, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_config<T: Real>(cfg: &ExperimentConfig<T>) -> Self {
        Self {
            trials: cfg.trials,
            master_seed: cfg.master_seed,
            control_estimator: cfg.control_estimator.to_string(),
            output_dir: None,
            game: (&cfg.game).into(),
            observer: (&cfg.observer).into(),
            detector: (&cfg.detector).into(),
        }
    }

    /// Converts to the typed configuration and validates it.
    pub fn to_config<T: Real>(&self) -> Result<ExperimentConfig<T>, ConfigError> {
        let control_estimator: ControlEstimator =
            self.control_estimator
                .parse()
                .map_err(|e: &'static str| ConfigError::Field {
                    field: "control_estimator",
                    message: e.to_string(),
                })?;
        let bandwidth = match &self.detector.bandwidth {
            BandwidthDoc::Fixed(v) => Bandwidth::Fixed(T::cast(*v)),
            BandwidthDoc::Named(name) if name == "median" => Bandwidth::MedianHeuristic,
            BandwidthDoc::Named(name) => {
                return Err(ConfigError::Field {
                    field: "detector.bandwidth",
                    message: format!("unknown bandwidth `{name}`; use \"median\" or a number"),
                })
            }
        };
        let multiplier = match self.detector.multiplier.as_str() {
            "rademacher" => Multiplier::Rademacher,
            other => {
                return Err(ConfigError::Field {
                    field: "detector.multiplier",
                    message: format!("unknown multiplier `{other}`; use \"rademacher\""),
                })
            }
        };
        let cfg = ExperimentConfig {
            game: GameConfig {
                dt: T::cast(self.game.dt),
                horizon: self.game.horizon,
                noise_std: T::cast(self.game.noise_std),
                accel_limit: T::cast(self.game.accel_limit),
                evader_vmax: T::cast(self.game.evader_vmax),
                pursuer_vmax: T::cast(self.game.pursuer_vmax),
                eps_v: T::cast(self.game.eps_v),
                init: InitSpec {
                    evader_pos_mean: [
                        T::cast(self.game.init.evader_pos_mean[0]),
                        T::cast(self.game.init.evader_pos_mean[1]),
                    ],
                    evader_pos_std: T::cast(self.game.init.evader_pos_std),
                    pursuer_pos_mean: [
                        T::cast(self.game.init.pursuer_pos_mean[0]),
                        T::cast(self.game.init.pursuer_pos_mean[1]),
                    ],
                    pursuer_pos_std: T::cast(self.game.init.pursuer_pos_std),
                    evader_speed_mean: T::cast(self.game.init.evader_speed_mean),
                    evader_speed_std: T::cast(self.game.init.evader_speed_std),
                    pursuer_speed_mean: T::cast(self.game.init.pursuer_speed_mean),
                    pursuer_speed_std: T::cast(self.game.init.pursuer_speed_std),
                    min_speed: T::cast(self.game.init.min_speed),
                },
                attack: AttackSpec {
                    onset: self.game.attack.onset,
                    beta: T::cast(self.game.attack.beta),
                    enabled: self.game.attack.enabled,
                },
            },
            trials: self.trials,
            master_seed: self.master_seed,
            control_estimator,
            observer: ObserverSettings {
                window: self.observer.window,
                eta: self.observer.eta.map(T::cast),
                zeta: self.observer.zeta.map(T::cast),
                initial_covariance: T::cast(self.observer.initial_covariance),
                projection: ProjectionConfig {
                    rho_init: T::cast(self.observer.projection.rho_init),
                    rho_growth: T::cast(self.observer.projection.rho_growth),
                    rho_max: T::cast(self.observer.projection.rho_max),
                    max_outer: self.observer.projection.max_outer,
                    max_inner: self.observer.projection.max_inner,
                    tol_feas: T::cast(self.observer.projection.tol_feas),
                    tol_step: T::cast(self.observer.projection.tol_step),
                    armijo_c1: T::cast(self.observer.projection.armijo_c1),
                    backtrack: T::cast(self.observer.projection.backtrack),
                    refine: self.observer.projection.refine,
                },
            },
            detector: DetectorSettings {
                window: self.detector.window,
                bootstrap: WildBootstrapConfig {
                    draws: self.detector.draws,
                    alpha: T::cast(self.detector.alpha),
                    kernel: KernelConfig { bandwidth },
                    multiplier,
                },
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// 64-bit FNV-1a over the document bytes, printed as 16 hex digits. Stored
/// in the report metadata so outputs can be traced back to the exact
/// configuration that produced them.
pub fn config_digest(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
