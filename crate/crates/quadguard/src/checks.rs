//! Built-in verification suites behind the `check` subcommand.
//!
//! Each suite exercises one pinned numerical property of the pipeline on
//! randomized instances and reports the worst measurement it saw together
//! with a pass/fail verdict. The suites run at `f64`; their tolerances are
//! calibrated for that precision.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::feasible::{
    ConstraintRecord, FeasibleError, FeasibleSet, ProjectionConfig, ProjectionStatus,
};
use crate::harness::{run_experiment, ExperimentConfig, HarnessError};
use crate::mmd::{
    center_kernel, detect, kernel_matrix, median_heuristic, mmd_squared, signed_statistic,
    Bandwidth, KernelConfig, MmdError, Multiplier, WildBootstrapConfig,
};
use crate::observers::{quadratic_jacobian, ObserverError, QuadObserverConfig, QuadObserverState};
use crate::rng::RngStream;
use crate::system::{SystemError, SystemModel, ValidationPolicy};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Feasible(#[from] FeasibleError),
    #[error(transparent)]
    Detector(#[from] MmdError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("check setup failed: {0}")]
    Setup(String),
}

/// One suite's verdict plus the measured extremes behind it.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub details: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.details
        )
    }
}

fn unit_vector(n: usize, rng: &mut RngStream) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.normal());
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |acc, &s| acc.max(s))
}

/// Random invertible `A` with spectral norm in `[0.6 lo, hi]`, plus a
/// positive definite quadratic form of unit spectral norm.
fn random_quadratic_model(
    n: usize,
    rng: &mut RngStream,
    norm_range: (f64, f64),
) -> Result<SystemModel<f64>, CheckError> {
    for _ in 0..64 {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let svd = raw.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-6 * smax {
            continue;
        }
        let target = norm_range.0 + (norm_range.1 - norm_range.0) * rng.uniform();
        let a = raw * (target / smax);

        let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let mut v = &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.05;
        v /= spectral_norm(&v);

        let model = SystemModel::with_policy(
            a,
            DMatrix::zeros(n, 1),
            DMatrix::identity(n, n),
            DMatrix::zeros(n, n),
            DMatrix::identity(n, n),
            v,
            &ValidationPolicy::relaxed(),
        )?;
        return Ok(model);
    }
    Err(CheckError::Setup(
        "could not draw an invertible state matrix".into(),
    ))
}

/// Worst-case measurements from the noise-free trajectory sweep used by the
/// feasibility and projection-law suites.
#[derive(Clone, Debug)]
pub struct ProjectionLawStats {
    pub trajectories: usize,
    pub steps: usize,
    pub projection_events: usize,
    pub fallbacks: usize,
    /// Largest constraint violation of the true state (feasibility).
    pub max_truth_violation: f64,
    /// Largest increase of the weighted squared error across a projection.
    pub max_error_growth: f64,
    /// Smallest slack in `ẽᵀP⁻¹ê ≥ ‖ê‖²_{P⁻¹}` (pre/post projection errors).
    pub min_angle_slack: f64,
}

/// Runs noise-free trajectories over random systems (state dimension and
/// history depth swept per trajectory), with the initial estimate offset
/// from the truth by 0.1, and accumulates the three projection-law
/// measurements.
pub fn projection_law_stats(
    trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<ProjectionLawStats, CheckError> {
    let dims = [2usize, 4, 8];
    let windows = [0usize, 1, 3];
    let base = RngStream::from_seed(seed);
    let mut stats = ProjectionLawStats {
        trajectories,
        steps: 0,
        projection_events: 0,
        fallbacks: 0,
        max_truth_violation: f64::NEG_INFINITY,
        max_error_growth: f64::NEG_INFINITY,
        min_angle_slack: f64::INFINITY,
    };

    for t in 0..trajectories {
        let mut rng = base.derive(t as u64);
        let n = dims[t % dims.len()];
        let window = windows[(t / dims.len()) % windows.len()];
        let model = random_quadratic_model(n, &mut rng, (0.6, 1.2))?;

        let mut truth = DVector::from_fn(n, |_, _| rng.normal());
        let x0_est = &truth + unit_vector(n, &mut rng) * 0.1;
        let cfg = QuadObserverConfig {
            window,
            zeta: 0.0,
            ..QuadObserverConfig::default()
        };
        let mut obs = QuadObserverState::new(
            &model,
            x0_est,
            DMatrix::identity(n, n) * 0.01,
            cfg,
        )?;
        obs.initialize(&model, model.quadratic_measurement(&truth)?);

        let u = DVector::zeros(1);
        let w = DVector::zeros(n);
        for _ in 0..horizon {
            truth = model.step_dynamics(&truth, &u, &w)?;
            let z = model.quadratic_measurement(&truth)?;

            // Feasibility of the truth against the set the step will use.
            let x_prior = model.a() * obs.estimate();
            let set = obs.feasible_set(&model, &x_prior, z)?;
            let violation = set.max_violation(&truth);
            stats.max_truth_violation = stats.max_truth_violation.max(violation);

            let info = obs.step(&model, &u, z)?;
            stats.steps += 1;
            match info.projection {
                ProjectionStatus::Projected => stats.projection_events += 1,
                ProjectionStatus::Fallback => stats.fallbacks += 1,
                ProjectionStatus::Interior => {}
            }

            // Weighted-error laws in the metric the projection used.
            let p = obs.covariance().clone();
            let chol = Cholesky::new(p).ok_or_else(|| {
                CheckError::Setup("conditioned covariance lost positive definiteness".into())
            })?;
            let e_pre = &info.x_corrected - &truth;
            let e_post = obs.estimate() - &truth;
            let pre_sq = e_pre.dot(&chol.solve(&e_pre));
            let post_sq = e_post.dot(&chol.solve(&e_post));
            stats.max_error_growth = stats.max_error_growth.max(post_sq - pre_sq);
            let inner = e_pre.dot(&chol.solve(&e_post));
            stats.min_angle_slack = stats.min_angle_slack.min(inner - post_sq);
        }
    }
    Ok(stats)
}

impl ProjectionLawStats {
    pub fn feasibility_outcome(&self) -> CheckOutcome {
        let pass = self.max_truth_violation <= 1e-9;
        CheckOutcome {
            name: "truth-feasibility",
            pass,
            details: format!(
                "{} trajectories, {} steps, max constraint violation of the true state {:.3e} (limit 1e-9)",
                self.trajectories, self.steps, self.max_truth_violation
            ),
        }
    }

    pub fn contraction_outcome(&self) -> CheckOutcome {
        let pass = self.max_error_growth <= 1e-9;
        CheckOutcome {
            name: "projection-error-contraction",
            pass,
            details: format!(
                "{} projection events, max weighted squared-error growth {:.3e} (limit 1e-9), {} fallbacks",
                self.projection_events, self.max_error_growth, self.fallbacks
            ),
        }
    }

    pub fn angle_outcome(&self) -> CheckOutcome {
        let pass = self.min_angle_slack >= -1e-8;
        CheckOutcome {
            name: "projection-obtuse-angle",
            pass,
            details: format!(
                "min inner-product slack {:.3e} over {} steps (limit -1e-8)",
                self.min_angle_slack, self.steps
            ),
        }
    }
}

/// Results of comparing the projection solver against a dense grid search.
#[derive(Clone, Debug)]
pub struct OracleStats {
    pub instances: usize,
    /// Largest (solver distance − grid distance); negative means the solver
    /// always beat the grid.
    pub max_distance_excess: f64,
    /// Largest constraint violation at a solver-returned point.
    pub max_violation: f64,
    /// Instances where the grid found no feasible point (should be zero by
    /// construction).
    pub degenerate_instances: usize,
}

struct OracleInstance {
    set: FeasibleSet<f64>,
    x_tilde: DVector<f64>,
    weight: DMatrix<f64>,
    anchor: DVector<f64>,
    h: DVector<f64>,
    z_residual: f64,
    curvature: f64,
    slack: f64,
}

fn oracle_instance(rng: &mut RngStream, with_slack: bool) -> OracleInstance {
    let x_tilde = DVector::from_fn(2, |_, _| 2.0 * (rng.uniform() - 0.5));
    let anchor = &x_tilde + DVector::from_fn(2, |_, _| 2.0 * (rng.uniform() - 0.5));
    let h = unit_vector(2, rng) * (0.5 + 2.5 * rng.uniform());
    let curvature = 0.1 + 1.9 * rng.uniform();
    let slack = if with_slack { 0.01 } else { 0.0 };
    // Pick the reading so some point within 1.5 of the anchor is feasible.
    let d0 = unit_vector(2, rng) * (1.5 * rng.uniform());
    let bound0 = slack + curvature * d0.norm_squared();
    let z_residual = h.dot(&d0) + 0.9 * bound0 * (2.0 * rng.uniform() - 1.0);

    let g = DMatrix::from_fn(2, 2, |_, _| rng.normal());
    let weight = &g * g.transpose() + DMatrix::identity(2, 2) * 0.2;

    let record = ConstraintRecord {
        h: h.clone(),
        anchor: anchor.clone(),
        z_residual,
    };
    let set = FeasibleSet::new(
        vec![(0, record)],
        vec![DMatrix::identity(2, 2)],
        curvature,
        slack,
    )
    .expect("valid single-constraint set");
    OracleInstance {
        set,
        x_tilde,
        weight,
        anchor,
        h,
        z_residual,
        curvature,
        slack,
    }
}

/// Grid search over the ±5 box around `x̃` with step 1e-3; returns the best
/// feasible weighted distance, if any grid point is feasible.
fn grid_optimum(inst: &OracleInstance) -> Option<f64> {
    let inv = {
        let w = &inst.weight;
        let det = w[(0, 0)] * w[(1, 1)] - w[(0, 1)] * w[(1, 0)];
        [w[(1, 1)] / det, -w[(0, 1)] / det, w[(0, 0)] / det]
    };
    let (cx, cy) = (inst.x_tilde[0], inst.x_tilde[1]);
    let (ax, ay) = (inst.anchor[0], inst.anchor[1]);
    let (hx, hy) = (inst.h[0], inst.h[1]);
    let (ztil, curv, slack) = (inst.z_residual, inst.curvature, inst.slack);
    let step = 1e-3;
    let steps = 10_000i64;
    let mut best = f64::INFINITY;
    for ix in -steps..=steps {
        let px = cx + ix as f64 * step;
        let dx = px - ax;
        let ex = px - cx;
        let hdx = hx * dx;
        let dx2 = dx * dx;
        let exx = inv[0] * ex * ex;
        let exy = 2.0 * inv[1] * ex;
        for iy in -steps..=steps {
            let py = cy + iy as f64 * step;
            let dy = py - ay;
            let resid = hdx + hy * dy - ztil;
            let bound = slack + curv * (dx2 + dy * dy);
            if resid.abs() <= bound {
                let ey = py - cy;
                let dist_sq = exx + exy * ey + inv[2] * ey * ey;
                if dist_sq < best {
                    best = dist_sq;
                }
            }
        }
    }
    (best < f64::INFINITY).then(|| best.sqrt())
}

/// Compares the solver's weighted projection distance against the grid
/// optimum on random planar single-constraint instances. Instances run in
/// parallel; the reduction is order-independent.
pub fn projection_oracle_stats(instances: usize, seed: u64) -> Result<OracleStats, CheckError> {
    let base = RngStream::from_seed(seed);
    let cfg = ProjectionConfig::default();

    let workers = std::thread::available_parallelism()
        .map(std::num::NonZeroUsize::get)
        .unwrap_or(1)
        .min(instances.max(1));
    let chunk = instances.div_ceil(workers).max(1);
    let mut slots: Vec<Option<(f64, f64, bool)>> = vec![None; instances];

    std::thread::scope(|scope| -> Result<(), FeasibleError> {
        let mut handles = Vec::new();
        for (w, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
            let base = &base;
            let cfg = &cfg;
            handles.push(scope.spawn(move || -> Result<(), FeasibleError> {
                for (j, slot) in slot_chunk.iter_mut().enumerate() {
                    let i = w * chunk + j;
                    let mut rng = base.derive(i as u64);
                    let inst = oracle_instance(&mut rng, i % 2 == 1);
                    let proj = inst.set.project(&inst.x_tilde, &inst.weight, cfg)?;
                    let violation = inst.set.max_violation(&proj.x);
                    match grid_optimum(&inst) {
                        Some(grid_dist) => {
                            *slot = Some((proj.distance - grid_dist, violation, false));
                        }
                        None => *slot = Some((0.0, violation, true)),
                    }
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join().expect("oracle worker panicked")?;
        }
        Ok(())
    })?;

    let mut stats = OracleStats {
        instances,
        max_distance_excess: f64::NEG_INFINITY,
        max_violation: f64::NEG_INFINITY,
        degenerate_instances: 0,
    };
    for slot in slots {
        let (excess, violation, degenerate) =
            slot.ok_or_else(|| CheckError::Setup("oracle slot left unfilled".into()))?;
        if degenerate {
            stats.degenerate_instances += 1;
        } else {
            stats.max_distance_excess = stats.max_distance_excess.max(excess);
        }
        stats.max_violation = stats.max_violation.max(violation);
    }
    Ok(stats)
}

impl OracleStats {
    pub fn outcome(&self) -> CheckOutcome {
        let pass = self.max_distance_excess <= 1e-2
            && self.max_violation <= 1e-8
            && self.degenerate_instances == 0;
        CheckOutcome {
            name: "projection-grid-oracle",
            pass,
            details: format!(
                "{} instances, max distance excess over grid {:.3e} (limit 1e-2), max violation {:.3e} (limit 1e-8), {} degenerate",
                self.instances, self.max_distance_excess, self.max_violation, self.degenerate_instances
            ),
        }
    }
}

/// Stationary-covariance agreement between the iterated filter and the
/// fixed-point equation it should satisfy.
#[derive(Clone, Debug)]
pub struct RiccatiStats {
    pub systems: usize,
    pub max_residual: f64,
}

pub fn riccati_stats(systems: usize, seed: u64) -> Result<RiccatiStats, CheckError> {
    use crate::observers::LinearObserverState;
    let base = RngStream::from_seed(seed);
    let mut max_residual: f64 = 0.0;

    for s in 0..systems {
        let mut rng = base.derive(s as u64);
        let n = [2usize, 3, 4][s % 3];
        let p_dim = 1 + (rng.uniform() * n as f64) as usize;
        let p_dim = p_dim.min(n);

        // Strictly stable dynamics so the filter covariance converges for
        // any measurement map.
        let a = loop {
            let raw = DMatrix::from_fn(n, n, |_, _| rng.normal());
            let svd = raw.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smin > 1e-6 * smax {
                let target = 0.3 + 0.6 * rng.uniform();
                break raw * (target / smax);
            }
        };
        let c = DMatrix::from_fn(p_dim, n, |_, _| rng.normal());
        let gq = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let q = &gq * gq.transpose() * 0.1 + DMatrix::identity(n, n) * 0.01;
        let gr = DMatrix::from_fn(p_dim, p_dim, |_, _| rng.normal());
        let r = &gr * gr.transpose() * 0.1 + DMatrix::identity(p_dim, p_dim) * 0.1;

        let model = SystemModel::with_policy(
            a.clone(),
            DMatrix::zeros(n, 1),
            c.clone(),
            q.clone(),
            r.clone(),
            DMatrix::identity(n, n),
            &ValidationPolicy::relaxed(),
        )?;

        let mut kf = LinearObserverState::new(
            &model,
            DVector::zeros(n),
            DMatrix::identity(n, n),
        )?;
        let u = DVector::zeros(1);
        let y = DVector::zeros(p_dim);
        let mut prev = kf.covariance().clone();
        for it in 0..5000 {
            kf.step(&model, &u, &y)?;
            let diff = (kf.covariance() - &prev).abs().max();
            prev = kf.covariance().clone();
            if it > 10 && diff < 1e-15 {
                break;
            }
        }

        // Prior-form fixed point assembled from the converged posterior.
        let p_prior = &a * prev * a.transpose() + &q;
        let s_mat = &c * &p_prior * c.transpose() + &r;
        let chol = Cholesky::new(s_mat)
            .ok_or_else(|| CheckError::Setup("innovation covariance not PD".into()))?;
        let cpat = &c * &p_prior * a.transpose();
        let next = &a * &p_prior * a.transpose() + &q - cpat.transpose() * chol.solve(&cpat);
        let residual = (&next - &p_prior).abs().max();
        max_residual = max_residual.max(residual);
    }
    Ok(RiccatiStats {
        systems,
        max_residual,
    })
}

impl RiccatiStats {
    pub fn outcome(&self) -> CheckOutcome {
        let pass = self.max_residual <= 1e-8;
        CheckOutcome {
            name: "kalman-riccati-fixed-point",
            pass,
            details: format!(
                "{} systems, max fixed-point residual {:.3e} (limit 1e-8)",
                self.systems, self.max_residual
            ),
        }
    }
}

/// Finite-difference agreement of the quadratic output's gradient.
#[derive(Clone, Debug)]
pub struct JacobianStats {
    pub cases: usize,
    pub max_relative_error: f64,
}

pub fn jacobian_fd_stats(cases: usize, seed: u64) -> JacobianStats {
    let base = RngStream::from_seed(seed);
    let mut max_rel: f64 = 0.0;
    for c in 0..cases {
        let mut rng = base.derive(c as u64);
        let n = [2usize, 4, 8][c % 3];
        let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let v = (&g + g.transpose()) * 0.5;
        let x = DVector::from_fn(n, |_, _| 2.0 * rng.normal());

        let analytic = quadratic_jacobian(&v, &x);
        let f = |p: &DVector<f64>| p.dot(&(&v * p));
        let mut fd = DVector::zeros(n);
        for i in 0..n {
            let h = 1e-6 * (1.0 + x[i].abs());
            let mut hi = x.clone();
            hi[i] += h;
            let mut lo = x.clone();
            lo[i] -= h;
            fd[i] = (f(&hi) - f(&lo)) / (2.0 * h);
        }
        let scale = analytic.amax().max(1.0);
        let rel = (&fd - &analytic).amax() / scale;
        max_rel = max_rel.max(rel);
    }
    JacobianStats {
        cases,
        max_relative_error: max_rel,
    }
}

impl JacobianStats {
    pub fn outcome(&self) -> CheckOutcome {
        let pass = self.max_relative_error <= 1e-5;
        CheckOutcome {
            name: "quadratic-jacobian-fd",
            pass,
            details: format!(
                "{} cases, max relative error {:.3e} (limit 1e-5)",
                self.cases, self.max_relative_error
            ),
        }
    }
}

/// Cross-path agreement of the detector statistic.
#[derive(Clone, Debug)]
pub struct MmdIdentityStats {
    pub pairs: usize,
    /// Production statistic vs. an independent double-loop evaluation.
    pub max_statistic_deviation: f64,
    /// Largest absolute row sum of the doubly centered kernel matrix.
    pub max_row_sum: f64,
    /// Quadratic-form path vs. the direct group-sum formula.
    pub max_identity_deviation: f64,
}

/// Double-loop reference statistic written independently of the library's
/// kernel plumbing.
fn naive_mmd(xs: &[DVector<f64>], ys: &[DVector<f64>], sigma: f64) -> f64 {
    let kf = |a: &DVector<f64>, b: &DVector<f64>| {
        let mut sq = 0.0;
        for i in 0..a.len() {
            let d = a[i] - b[i];
            sq += d * d;
        }
        (-sq / (2.0 * sigma * sigma)).exp()
    };
    let k = xs.len() as f64;
    let mut xx = 0.0;
    let mut yy = 0.0;
    let mut xy = 0.0;
    for a in xs {
        for b in xs {
            xx += kf(a, b);
        }
    }
    for a in ys {
        for b in ys {
            yy += kf(a, b);
        }
    }
    for a in xs {
        for b in ys {
            xy += kf(a, b);
        }
    }
    (xx + yy - 2.0 * xy) / (k * k)
}

pub fn mmd_identity_stats(pairs: usize, seed: u64) -> Result<MmdIdentityStats, CheckError> {
    let base = RngStream::from_seed(seed);
    let mut stats = MmdIdentityStats {
        pairs,
        max_statistic_deviation: 0.0,
        max_row_sum: 0.0,
        max_identity_deviation: 0.0,
    };
    for i in 0..pairs {
        let mut rng = base.derive(i as u64);
        let k = 5 + (rng.uniform() * 11.0) as usize;
        let dim = [2usize, 4, 8][i % 3];
        let shift = if i % 2 == 0 { 0.0 } else { 1.5 };
        let xs: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(dim, |_, _| rng.normal()))
            .collect();
        let ys: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(dim, |_, _| rng.normal() + shift))
            .collect();

        let pooled: Vec<DVector<f64>> = xs.iter().chain(ys.iter()).cloned().collect();
        let sigma = median_heuristic(&pooled)?;

        let cfg = WildBootstrapConfig {
            draws: 5,
            alpha: 0.05,
            kernel: KernelConfig {
                bandwidth: Bandwidth::Fixed(sigma),
            },
            multiplier: Multiplier::Rademacher,
        };
        let mut det_rng = RngStream::from_seed(seed ^ 0x5eed).derive(i as u64);
        let outcome = detect(&xs, &ys, &cfg, &mut det_rng)?;
        let reference = naive_mmd(&xs, &ys, sigma);
        stats.max_statistic_deviation = stats
            .max_statistic_deviation
            .max((outcome.statistic - reference).abs());

        let gram = kernel_matrix(&pooled, sigma);
        let centered = center_kernel(&gram);
        for r in 0..centered.nrows() {
            let row_sum: f64 = (0..centered.ncols()).map(|c| centered[(r, c)]).sum();
            stats.max_row_sum = stats.max_row_sum.max(row_sum.abs());
        }

        let mut labels = vec![1.0; 2 * k];
        for l in labels.iter_mut().skip(k) {
            *l = -1.0;
        }
        let quadform = signed_statistic(&centered, &labels, k);
        let direct = mmd_squared(&xs, &ys, sigma)?;
        stats.max_identity_deviation = stats
            .max_identity_deviation
            .max((quadform - direct).abs());
    }
    Ok(stats)
}

impl MmdIdentityStats {
    pub fn outcome(&self) -> CheckOutcome {
        let pass = self.max_statistic_deviation <= 1e-12
            && self.max_row_sum <= 1e-10
            && self.max_identity_deviation <= 1e-10;
        CheckOutcome {
            name: "mmd-statistic-identities",
            pass,
            details: format!(
                "{} pairs, statistic vs naive {:.3e} (limit 1e-12), centering row sums {:.3e} (limit 1e-10), quadform vs direct {:.3e} (limit 1e-10)",
                self.pairs,
                self.max_statistic_deviation,
                self.max_row_sum,
                self.max_identity_deviation
            ),
        }
    }
}

/// Rejection frequency when both windows come from one distribution.
#[derive(Clone, Debug)]
pub struct NullCalibrationStats {
    pub draws: usize,
    pub rejections: usize,
    pub rate: f64,
}

pub fn null_calibration_stats(
    draws: usize,
    window: usize,
    seed: u64,
) -> Result<NullCalibrationStats, CheckError> {
    let base = RngStream::from_seed(seed);
    let cfg = WildBootstrapConfig {
        draws: 500,
        alpha: 0.05,
        kernel: KernelConfig {
            bandwidth: Bandwidth::MedianHeuristic,
        },
        multiplier: Multiplier::Rademacher,
    };
    let dim = 8;
    let mut rejections = 0usize;
    for i in 0..draws {
        let draw_stream = base.derive(i as u64);
        let mut data_rng = draw_stream.derive(0);
        let xs: Vec<DVector<f64>> = (0..window)
            .map(|_| DVector::from_fn(dim, |_, _| data_rng.normal()))
            .collect();
        let ys: Vec<DVector<f64>> = (0..window)
            .map(|_| DVector::from_fn(dim, |_, _| data_rng.normal()))
            .collect();
        let mut boot_rng = draw_stream.derive(1);
        if detect(&xs, &ys, &cfg, &mut boot_rng)?.reject {
            rejections += 1;
        }
    }
    Ok(NullCalibrationStats {
        draws,
        rejections,
        rate: rejections as f64 / draws as f64,
    })
}

impl NullCalibrationStats {
    pub fn outcome(&self) -> CheckOutcome {
        let pass = self.rate >= 0.02 && self.rate <= 0.09;
        CheckOutcome {
            name: "null-rejection-rate",
            pass,
            details: format!(
                "{} same-distribution draws, {} rejections, rate {:.4} (band [0.02, 0.09])",
                self.draws, self.rejections, self.rate
            ),
        }
    }
}

/// Per-step rejection rate of full closed-loop runs with the attack
/// disabled.
#[derive(Clone, Debug)]
pub struct ClosedLoopNullStats {
    pub trials: usize,
    pub max_step_rate: f64,
}

pub fn closed_loop_null_stats(
    trials: usize,
    master_seed: u64,
) -> Result<ClosedLoopNullStats, CheckError> {
    let mut cfg = ExperimentConfig::<f64>::default();
    cfg.trials = trials;
    cfg.master_seed = master_seed;
    cfg.game.attack.enabled = false;
    let report = run_experiment(&cfg)?;
    let max_step_rate = report
        .rejection_rate
        .iter()
        .fold(0.0f64, |acc, &r| acc.max(r));
    Ok(ClosedLoopNullStats {
        trials,
        max_step_rate,
    })
}

impl ClosedLoopNullStats {
    pub fn outcome(&self) -> CheckOutcome {
        let pass = self.max_step_rate <= 0.12;
        CheckOutcome {
            name: "closed-loop-null-rate",
            pass,
            details: format!(
                "{} no-attack trials, max per-step rejection rate {:.4} (limit 0.12)",
                self.trials, self.max_step_rate
            ),
        }
    }
}

/// Runs every suite at its standard size. This is what `check` executes.
pub fn run_all_checks(seed: u64) -> Result<Vec<CheckOutcome>, CheckError> {
    let laws = projection_law_stats(500, 20, seed)?;
    let oracle = projection_oracle_stats(200, seed ^ 0x0a11_ce00)?;
    let riccati = riccati_stats(20, seed ^ 0x00b0_b000)?;
    let jacobian = jacobian_fd_stats(100, seed ^ 0x000c_a401);
    let mmd = mmd_identity_stats(50, seed ^ 0x0d00_d1e5)?;
    let null = null_calibration_stats(1000, 10, seed ^ 0x0e11_e700)?;
    let closed = closed_loop_null_stats(200, seed ^ 0x0f00_d000)?;
    Ok(vec![
        laws.feasibility_outcome(),
        laws.contraction_outcome(),
        laws.angle_outcome(),
        oracle.outcome(),
        riccati.outcome(),
        jacobian.outcome(),
        mmd.outcome(),
        null.outcome(),
        closed.outcome(),
    ])
}
