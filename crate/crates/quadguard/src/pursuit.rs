//! Planar pursuit-evasion scenario used by the experiment harness.
//!
//! Two double-integrator agents live in one 8-dimensional state
//! `[p_A, v_A, p_B, v_B]` (positions first, each block `x` then `y`). Agent A
//! evades using a state estimate; agent B pursues using the true state. The
//! vector measurement reports both positions and is where an attacker can
//! inject bias; the scalar channel reads the squared separation between the
//! agents (plus a small regularizing multiple of `‖x‖²`).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::rng::RngStream;
use crate::scalar::Real;
use crate::system::{SystemError, SystemModel, ValidationPolicy};

#[derive(Debug, Error)]
pub enum PursuitError {
    #[error("invalid game setting: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Sensor bias injected into the measured pursuer position once the attack
/// starts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackSpec<T: Real> {
    /// First step index (0-based) at which the bias is applied.
    pub onset: usize,
    /// Bias magnitude.
    pub beta: T,
    pub enabled: bool,
}

impl<T: Real> Default for AttackSpec<T> {
    fn default() -> Self {
        Self {
            onset: 10,
            beta: T::cast(7.0),
            enabled: true,
        }
    }
}

/// Distributions for the random initial state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitSpec<T: Real> {
    pub evader_pos_mean: [T; 2],
    pub evader_pos_std: T,
    pub pursuer_pos_mean: [T; 2],
    pub pursuer_pos_std: T,
    pub evader_speed_mean: T,
    pub evader_speed_std: T,
    pub pursuer_speed_mean: T,
    pub pursuer_speed_std: T,
    /// Sampled speeds are clamped below by this value.
    pub min_speed: T,
}

impl<T: Real> Default for InitSpec<T> {
    fn default() -> Self {
        Self {
            evader_pos_mean: [T::zero(), T::zero()],
            evader_pos_std: T::cast(0.5),
            pursuer_pos_mean: [T::cast(2.0), T::cast(2.0)],
            pursuer_pos_std: T::cast(1.5),
            evader_speed_mean: T::cast(0.5),
            evader_speed_std: T::cast(0.05),
            pursuer_speed_mean: T::cast(0.2),
            pursuer_speed_std: T::cast(0.05),
            min_speed: T::cast(0.1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameConfig<T: Real> {
    pub dt: T,
    /// Number of simulated steps.
    pub horizon: usize,
    /// Standard deviation shared by process noise, vector measurement noise,
    /// and the scalar reading noise. Zero gives the noise-free setting.
    pub noise_std: T,
    /// Component-wise acceleration bound for both agents.
    pub accel_limit: T,
    pub evader_vmax: T,
    pub pursuer_vmax: T,
    /// Regularizer added to the scalar channel's quadratic form so it is
    /// positive definite; zero is allowed and relaxes validation.
    pub eps_v: T,
    pub init: InitSpec<T>,
    pub attack: AttackSpec<T>,
}

impl<T: Real> Default for GameConfig<T> {
    fn default() -> Self {
        Self {
            dt: T::cast(0.1),
            horizon: 20,
            noise_std: T::cast(0.005),
            accel_limit: T::cast(3.0),
            evader_vmax: T::cast(1.5),
            pursuer_vmax: T::cast(2.5),
            eps_v: T::cast(1e-6),
            init: InitSpec::default(),
            attack: AttackSpec::default(),
        }
    }
}

impl<T: Real> GameConfig<T> {
    pub fn validate(&self) -> Result<(), PursuitError> {
        if self.dt <= T::zero() {
            return Err(PursuitError::BadConfig("dt must be positive"));
        }
        if self.horizon == 0 {
            return Err(PursuitError::BadConfig("horizon must be at least 1"));
        }
        if self.noise_std < T::zero() {
            return Err(PursuitError::BadConfig("noise level must be nonnegative"));
        }
        if self.accel_limit <= T::zero() {
            return Err(PursuitError::BadConfig(
                "acceleration limit must be positive",
            ));
        }
        if self.evader_vmax <= T::zero() || self.pursuer_vmax <= T::zero() {
            return Err(PursuitError::BadConfig("speed limits must be positive"));
        }
        if self.eps_v < T::zero() {
            return Err(PursuitError::BadConfig("eps_v must be nonnegative"));
        }
        if self.attack.beta < T::zero() {
            return Err(PursuitError::BadConfig(
                "attack magnitude must be nonnegative",
            ));
        }
        let init = &self.init;
        if init.evader_pos_std < T::zero()
            || init.pursuer_pos_std < T::zero()
            || init.evader_speed_std < T::zero()
            || init.pursuer_speed_std < T::zero()
        {
            return Err(PursuitError::BadConfig(
                "initial-state deviations must be nonnegative",
            ));
        }
        if init.min_speed <= T::zero() {
            return Err(PursuitError::BadConfig("minimum speed must be positive"));
        }
        Ok(())
    }
}

/// Assembles the 8-state model: per-axis double integrators for each agent,
/// position-only vector measurements, and a scalar channel reading
/// `‖p_A − p_B‖² + eps_v·‖x‖²`.
pub fn build_model<T: Real>(cfg: &GameConfig<T>) -> Result<SystemModel<T>, PursuitError> {
    cfg.validate()?;
    let dt = cfg.dt;
    let mut a = DMatrix::<T>::identity(8, 8);
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;
    a[(4, 6)] = dt;
    a[(5, 7)] = dt;
    let half = dt * dt / T::cast(2.0);
    let mut b = DMatrix::<T>::zeros(8, 4);
    b[(0, 0)] = half;
    b[(1, 1)] = half;
    b[(2, 0)] = dt;
    b[(3, 1)] = dt;
    b[(4, 2)] = half;
    b[(5, 3)] = half;
    b[(6, 2)] = dt;
    b[(7, 3)] = dt;
    let mut c = DMatrix::<T>::zeros(4, 8);
    c[(0, 0)] = T::one();
    c[(1, 1)] = T::one();
    c[(2, 4)] = T::one();
    c[(3, 5)] = T::one();
    let var = cfg.noise_std * cfg.noise_std;
    let q = DMatrix::<T>::identity(8, 8) * var;
    let r = DMatrix::<T>::identity(4, 4) * var;
    let mut v = DMatrix::<T>::identity(8, 8) * cfg.eps_v;
    for (i, j) in [(0usize, 4usize), (1, 5)] {
        v[(i, i)] += T::one();
        v[(j, j)] += T::one();
        v[(i, j)] -= T::one();
        v[(j, i)] -= T::one();
    }
    // eps_v = 0 leaves the quadratic form only semidefinite, and noise_std = 0
    // makes R singular; both are legitimate idealized settings.
    let policy = if cfg.eps_v > T::zero() && cfg.noise_std > T::zero() {
        ValidationPolicy::default()
    } else {
        ValidationPolicy::relaxed()
    };
    Ok(SystemModel::with_policy(a, b, c, q, r, v, &policy)?)
}

/// Draws the random initial state. Draw order is fixed so trials are
/// reproducible: evader position (x, y), pursuer position (x, y), evader
/// speed, pursuer speed, evader heading, pursuer heading.
pub fn sample_initial_state<T: Real>(init: &InitSpec<T>, rng: &mut RngStream) -> DVector<T> {
    let pa_x = init.evader_pos_mean[0] + init.evader_pos_std * T::cast(rng.normal());
    let pa_y = init.evader_pos_mean[1] + init.evader_pos_std * T::cast(rng.normal());
    let pb_x = init.pursuer_pos_mean[0] + init.pursuer_pos_std * T::cast(rng.normal());
    let pb_y = init.pursuer_pos_mean[1] + init.pursuer_pos_std * T::cast(rng.normal());
    let speed_a =
        (init.evader_speed_mean + init.evader_speed_std * T::cast(rng.normal())).max(init.min_speed);
    let speed_b = (init.pursuer_speed_mean + init.pursuer_speed_std * T::cast(rng.normal()))
        .max(init.min_speed);
    let two_pi = T::cast(std::f64::consts::TAU);
    let theta_a = two_pi * T::cast(rng.uniform());
    let theta_b = two_pi * T::cast(rng.uniform());
    DVector::from_row_slice(&[
        pa_x,
        pa_y,
        speed_a * theta_a.cos(),
        speed_a * theta_a.sin(),
        pb_x,
        pb_y,
        speed_b * theta_b.cos(),
        speed_b * theta_b.sin(),
    ])
}

/// Component-wise clamp to `[-limit, limit]`.
pub fn saturate<T: Real>(u: &DVector<T>, limit: T) -> DVector<T> {
    u.map(|c| c.max(-limit).min(limit))
}

/// Smallest strictly positive `t` with `‖d + t·dv‖ = radius`, if any. `None`
/// when the relative velocity is (numerically) zero, the line never reaches
/// the radius, or it only did so in the past.
pub fn intercept_time<T: Real>(d: &DVector<T>, dv: &DVector<T>, radius: T) -> Option<T> {
    let a = dv.norm_squared();
    if a.sqrt() < T::cast(1e-12) {
        return None;
    }
    let b = T::cast(2.0) * d.dot(dv);
    let c = d.norm_squared() - radius * radius;
    let disc = b * b - T::cast(4.0) * a * c;
    if disc < T::zero() {
        return None;
    }
    let sq = disc.sqrt();
    let t_low = (-b - sq) / (T::cast(2.0) * a);
    let t_high = (-b + sq) / (T::cast(2.0) * a);
    if t_low > T::zero() {
        Some(t_low)
    } else if t_high > T::zero() {
        Some(t_high)
    } else {
        None
    }
}

fn segment<T: Real>(x: &DVector<T>, start: usize) -> DVector<T> {
    DVector::from_row_slice(&[x[start], x[start + 1]])
}

/// Normalizes `v`, falling back to the previously used direction when the
/// norm is too small to be meaningful. Updates the memory on success.
fn unit_or_last<T: Real>(v: &DVector<T>, last: &mut DVector<T>) -> DVector<T> {
    let n = v.norm();
    if n < T::cast(1e-9) {
        last.clone()
    } else {
        let u = v / n;
        last.copy_from(&u);
        u
    }
}

fn initial_direction<T: Real>() -> DVector<T> {
    DVector::from_row_slice(&[T::one(), T::zero()])
}

/// Pursuit law for agent B, driven by the true state. Stateful only through
/// the direction memory used when a bearing degenerates.
#[derive(Clone, Debug)]
pub struct PursuerPolicy<T: Real> {
    last_direction: DVector<T>,
}

impl<T: Real> Default for PursuerPolicy<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> PursuerPolicy<T> {
    pub fn new() -> Self {
        Self {
            last_direction: initial_direction(),
        }
    }

    /// Acceleration command for the pursuer, a 2-vector.
    ///
    /// Aims at an intercept point when the evader is moving (smallest
    /// positive solution of the constant-velocity closing equation, target
    /// radius a tenth of the current separation), otherwise at the evader's
    /// one-step-ahead position. The commanded speed tapers off as the range
    /// closes, and inside unit range the pursuer also matches a fraction of
    /// the evader's velocity.
    pub fn control(&mut self, truth: &DVector<T>, cfg: &GameConfig<T>) -> DVector<T> {
        let p_a = segment(truth, 0);
        let v_a = segment(truth, 2);
        let p_b = segment(truth, 4);
        let v_b = segment(truth, 6);
        let d = &p_a - &p_b;
        let range = d.norm();
        let predicted = &p_a + &v_a * cfg.dt;
        let target = if v_a.norm() > T::cast(0.1) {
            intercept_time(&d, &(&v_a - &v_b), T::cast(0.1) * range)
                .map(|t| &p_a + &v_a * t)
                .unwrap_or(predicted)
        } else {
            predicted
        };
        let speed = if range > T::cast(2.0) {
            cfg.pursuer_vmax
        } else {
            cfg.pursuer_vmax * (T::cast(0.5) + T::cast(0.25) * range)
        };
        let match_gain = if range < T::one() {
            T::cast(0.5)
        } else {
            T::zero()
        };
        let dir = unit_or_last(&(&target - &p_b), &mut self.last_direction);
        let v_des = dir * speed + &v_a * match_gain;
        saturate(&((v_des - v_b) / cfg.dt), cfg.accel_limit)
    }
}

/// Evasion law for agent A, driven by whichever state estimate the harness
/// selects.
#[derive(Clone, Debug)]
pub struct EvaderPolicy<T: Real> {
    last_direction: DVector<T>,
}

impl<T: Real> Default for EvaderPolicy<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> EvaderPolicy<T> {
    pub fn new() -> Self {
        Self {
            last_direction: initial_direction(),
        }
    }

    /// Acceleration command for the evader, a 2-vector: flee the pursuer's
    /// one-step-ahead position at full speed, drifting with the pursuer's
    /// velocity while the estimated range is comfortable.
    pub fn control(&mut self, estimate: &DVector<T>, cfg: &GameConfig<T>) -> DVector<T> {
        let p_a = segment(estimate, 0);
        let v_a = segment(estimate, 2);
        let p_b = segment(estimate, 4);
        let v_b = segment(estimate, 6);
        let predicted_b = &p_b + &v_b * cfg.dt;
        let away = &p_a - &predicted_b;
        let range = (&p_a - &p_b).norm();
        let drift_gain = if range > T::cast(2.0) {
            T::cast(0.2)
        } else {
            T::zero()
        };
        let dir = unit_or_last(&away, &mut self.last_direction);
        let v_des = dir * cfg.evader_vmax + &v_b * drift_gain;
        saturate(&((v_des - v_a) / cfg.dt), cfg.accel_limit)
    }
}

/// Bias injected into the vector measurement: zero before the onset step,
/// afterwards a constant-magnitude push on the measured pursuer position,
/// directed from the true evader toward the true pursuer.
#[derive(Clone, Debug)]
pub struct AttackGenerator<T: Real> {
    last_direction: DVector<T>,
}

impl<T: Real> Default for AttackGenerator<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> AttackGenerator<T> {
    pub fn new() -> Self {
        Self {
            last_direction: initial_direction(),
        }
    }

    /// The 4-vector added to the measurement at step `k`.
    pub fn vector(&mut self, k: usize, truth: &DVector<T>, cfg: &GameConfig<T>) -> DVector<T> {
        let mut a = DVector::<T>::zeros(4);
        if !cfg.attack.enabled || k < cfg.attack.onset {
            return a;
        }
        let p_a = segment(truth, 0);
        let p_b = segment(truth, 4);
        let dir = unit_or_last(&(&p_b - &p_a), &mut self.last_direction);
        a[2] = cfg.attack.beta * dir[0];
        a[3] = cfg.attack.beta * dir[1];
        a
    }
}

/// Stacks per-agent commands into the model's input vector `[u_A, u_B]`.
pub fn stack_controls<T: Real>(u_evader: &DVector<T>, u_pursuer: &DVector<T>) -> DVector<T> {
    DVector::from_row_slice(&[u_evader[0], u_evader[1], u_pursuer[0], u_pursuer[1]])
}
