//! Consistency set built from recent quadratic-channel readings, and the
//! covariance-weighted projection onto it.
//!
//! Each reading `z = xᵀ V x` taken `age` steps ago, linearized at an anchor
//! estimate `x̄`, constrains today's state `x` through the pullback
//! `d = A⁻ᵃᵍᵉ x − x̄`:
//!
//! ```text
//! |h·d − z̃| ≤ ζ + L‖d‖²      h = 2 V x̄,  z̃ = z − x̄ᵀ V x̄
//! ```
//!
//! because the linearization error of a quadratic form is itself quadratic
//! with curvature at most `L = ‖V‖₂`. The two signs are tracked as separate
//! one-sided constraints. The resulting set is nonconvex (an annulus-like
//! band per reading), so projection first whitens the covariance metric with
//! its Cholesky factor, then runs a quadratic-penalty descent, polishes
//! feasibility with Gauss-Newton, and finishes with an active-set Newton
//! solve of the first-order conditions.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum FeasibleError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    BadParameter(&'static str),
    #[error("state matrix could not be inverted for constraint pullback")]
    PullbackFailed,
    #[error("projection weight matrix is not positive definite")]
    WeightNotPositiveDefinite,
}

/// One linearized quadratic-channel reading.
#[derive(Clone, Debug)]
pub struct ConstraintRecord<T: Real> {
    /// Gradient of `x ↦ xᵀ V x` at the anchor, i.e. `2 V x̄`.
    pub h: DVector<T>,
    /// Linearization point, expressed in the time frame of the reading.
    pub anchor: DVector<T>,
    /// Reading minus the quadratic form at the anchor: `z − x̄ᵀ V x̄`.
    pub z_residual: T,
}

/// The set of current states consistent with a batch of aged readings.
#[derive(Clone, Debug)]
pub struct FeasibleSet<T: Real> {
    records: Vec<(usize, ConstraintRecord<T>)>,
    /// `pullbacks[i] = A⁻ⁱ`; index 0 is the identity.
    pullbacks: Vec<DMatrix<T>>,
    curvature: T,
    slack: T,
    dim: usize,
}

struct Term<T: Real> {
    /// Pulled-back deviation `A⁻ᵃᵍᵉ x − x̄`.
    d: DVector<T>,
    /// `h·d − z̃`.
    residual: T,
    /// `ζ + L‖d‖²`.
    bound: T,
    record: usize,
}

impl<T: Real> Term<T> {
    fn phi(&self, plus: bool) -> T {
        if plus {
            self.residual - self.bound
        } else {
            -self.residual - self.bound
        }
    }
}

/// One constraint branch found active (within tolerance of zero) at a query
/// point.
#[derive(Clone, Debug)]
pub struct ActiveConstraint<T: Real> {
    /// Index into the record list passed to [`FeasibleSet::new`].
    pub record: usize,
    /// `true` for the upper branch, `false` for the lower.
    pub upper: bool,
    pub value: T,
    pub gradient_norm: T,
    /// Gradient too small (norm below `1e-10`) to define a usable normal
    /// direction.
    pub degenerate: bool,
}

/// Diagnostic summary of the active constraints at a point. Informational
/// only: nothing in the projection path consults it.
#[derive(Clone, Debug)]
pub struct DegeneracyReport<T: Real> {
    pub active: Vec<ActiveConstraint<T>>,
    /// Smallest singular value of the stacked active gradients; `None` when
    /// nothing is active.
    pub min_singular_value: Option<T>,
}

/// Computes `[I, A⁻¹, …, A⁻ᵐᵃˣ]` by repeated linear solves and verifies the
/// first inverse against `A` before returning.
pub fn pullback_powers<T: Real>(
    a: &DMatrix<T>,
    max_age: usize,
) -> Result<Vec<DMatrix<T>>, FeasibleError> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(FeasibleError::BadParameter("state matrix must be square"));
    }
    let lu = a.clone().lu();
    let mut powers = vec![DMatrix::<T>::identity(n, n)];
    for _ in 0..max_age {
        let next = lu
            .solve(powers.last().expect("nonempty"))
            .ok_or(FeasibleError::PullbackFailed)?;
        powers.push(next);
    }
    if max_age > 0 {
        let residual = (a * &powers[1] - DMatrix::<T>::identity(n, n))
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()));
        let scale = a.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
        if residual > T::cast(1e-8) * scale {
            return Err(FeasibleError::PullbackFailed);
        }
    }
    Ok(powers)
}

impl<T: Real> FeasibleSet<T> {
    /// `records` pairs each constraint with its age; `pullbacks[age]` must
    /// exist for every age used. `curvature` is the spectral norm of `V`,
    /// `slack` the reading-noise allowance.
    pub fn new(
        records: Vec<(usize, ConstraintRecord<T>)>,
        pullbacks: Vec<DMatrix<T>>,
        curvature: T,
        slack: T,
    ) -> Result<Self, FeasibleError> {
        if pullbacks.is_empty() {
            return Err(FeasibleError::BadParameter(
                "pullback list must contain at least the identity",
            ));
        }
        let dim = pullbacks[0].nrows();
        for m in &pullbacks {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(FeasibleError::DimensionMismatch {
                    what: "pullback matrix",
                    expected: dim,
                    got: m.nrows(),
                });
            }
        }
        if curvature < T::zero() {
            return Err(FeasibleError::BadParameter("curvature must be nonnegative"));
        }
        if slack < T::zero() {
            return Err(FeasibleError::BadParameter("slack must be nonnegative"));
        }
        for (age, rec) in &records {
            if *age >= pullbacks.len() {
                return Err(FeasibleError::BadParameter(
                    "record age exceeds available pullbacks",
                ));
            }
            if rec.h.len() != dim {
                return Err(FeasibleError::DimensionMismatch {
                    what: "constraint gradient",
                    expected: dim,
                    got: rec.h.len(),
                });
            }
            if rec.anchor.len() != dim {
                return Err(FeasibleError::DimensionMismatch {
                    what: "constraint anchor",
                    expected: dim,
                    got: rec.anchor.len(),
                });
            }
        }
        Ok(Self {
            records,
            pullbacks,
            curvature,
            slack,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slack(&self) -> T {
        self.slack
    }

    pub fn curvature(&self) -> T {
        self.curvature
    }

    fn terms(&self, x: &DVector<T>) -> Vec<Term<T>> {
        self.records
            .iter()
            .enumerate()
            .map(|(idx, (age, rec))| {
                let d = &self.pullbacks[*age] * x - &rec.anchor;
                let residual = rec.h.dot(&d) - rec.z_residual;
                let bound = self.slack + self.curvature * d.norm_squared();
                Term {
                    d,
                    residual,
                    bound,
                    record: idx,
                }
            })
            .collect()
    }

    /// Signed constraint values, flattened as `[φ⁺₀, φ⁻₀, φ⁺₁, …]`.
    /// Nonpositive means satisfied.
    pub fn evaluate(&self, x: &DVector<T>) -> Vec<T> {
        self.terms(x)
            .iter()
            .flat_map(|t| [t.phi(true), t.phi(false)])
            .collect()
    }

    /// Largest signed constraint value; negative infinity when the set has
    /// no constraints.
    pub fn max_violation(&self, x: &DVector<T>) -> T {
        self.evaluate(x)
            .into_iter()
            .fold(T::cast(f64::NEG_INFINITY), |acc, v| acc.max(v))
    }

    pub fn is_feasible(&self, x: &DVector<T>, tol: T) -> bool {
        self.evaluate(x).into_iter().all(|v| v <= tol)
    }

    fn gradient(&self, term: &Term<T>, plus: bool) -> DVector<T> {
        let (age, rec) = &self.records[term.record];
        let inner = if plus {
            &rec.h - &term.d * (T::cast(2.0) * self.curvature)
        } else {
            -&rec.h - &term.d * (T::cast(2.0) * self.curvature)
        };
        self.pullbacks[*age].transpose() * inner
    }

    /// Lists the constraint branches active at `x` (absolute value within
    /// `tol_active`), their gradient norms, and the smallest singular value
    /// of the stacked active gradients. Purely a logging aid.
    pub fn check_nondegeneracy(&self, x: &DVector<T>, tol_active: T) -> DegeneracyReport<T> {
        let mut active = Vec::new();
        let mut rows: Vec<DVector<T>> = Vec::new();
        for term in self.terms(x) {
            for upper in [true, false] {
                let value = term.phi(upper);
                if value.abs() <= tol_active {
                    let g = self.gradient(&term, upper);
                    let norm = g.norm();
                    active.push(ActiveConstraint {
                        record: term.record,
                        upper,
                        value,
                        gradient_norm: norm,
                        degenerate: norm < T::cast(1e-10),
                    });
                    rows.push(g);
                }
            }
        }
        let min_singular_value = if rows.is_empty() {
            None
        } else {
            let jac = DMatrix::from_fn(rows.len(), self.dim, |i, j| rows[i][j]);
            let sv = jac.svd(false, false).singular_values;
            Some(sv.iter().fold(T::cast(f64::INFINITY), |acc, s| acc.min(*s)))
        };
        DegeneracyReport {
            active,
            min_singular_value,
        }
    }

    /// Projects `x_tilde` onto the set in the metric induced by `weight⁻¹`
    /// (`weight` is a state covariance, so small-variance directions are
    /// expensive to move along).
    pub fn project(
        &self,
        x_tilde: &DVector<T>,
        weight: &DMatrix<T>,
        cfg: &ProjectionConfig<T>,
    ) -> Result<Projection<T>, FeasibleError> {
        if x_tilde.len() != self.dim {
            return Err(FeasibleError::DimensionMismatch {
                what: "projection start",
                expected: self.dim,
                got: x_tilde.len(),
            });
        }
        if weight.nrows() != self.dim || weight.ncols() != self.dim {
            return Err(FeasibleError::DimensionMismatch {
                what: "projection weight",
                expected: self.dim,
                got: weight.nrows(),
            });
        }
        let chol = Cholesky::new(weight.clone()).ok_or(FeasibleError::WeightNotPositiveDefinite)?;

        if self.is_feasible(x_tilde, cfg.tol_feas) {
            return Ok(Projection {
                x: x_tilde.clone(),
                status: ProjectionStatus::Interior,
                distance: T::zero(),
                violation: self.max_violation(x_tilde),
                outer_iterations: 0,
            });
        }

        // Solve in whitened coordinates `x = x̃ + L y` with `weight = L Lᵀ`:
        // the metric term becomes `‖y‖²`, so both the descent and the
        // Gauss-Newton restoration stay weighted even when the covariance is
        // nearly singular (repeated scalar corrections collapse it to
        // condition numbers around 1e10, where descent in state coordinates
        // stalls or wanders far from the weighted optimum). Constraints
        // transform by composing each pullback with `L` and re-expressing
        // the anchors relative to `x̃`; residuals, bounds, and curvature are
        // untouched because the deviation `d` itself is frame-independent.
        let l = chol.l();
        let whitened = Self {
            records: self
                .records
                .iter()
                .map(|(age, rec)| {
                    (
                        *age,
                        ConstraintRecord {
                            h: rec.h.clone(),
                            anchor: &rec.anchor - &self.pullbacks[*age] * x_tilde,
                            z_residual: rec.z_residual,
                        },
                    )
                })
                .collect(),
            pullbacks: self.pullbacks.iter().map(|m| m * &l).collect(),
            curvature: self.curvature,
            slack: self.slack,
            dim: self.dim,
        };

        let mut y = DVector::<T>::zeros(self.dim);
        let mut rho = cfg.rho_init;
        let mut outer = 0;
        loop {
            outer += 1;
            whitened.penalty_descent(&mut y, rho, cfg);
            if whitened.is_feasible(&y, cfg.tol_feas) {
                break;
            }
            if outer >= cfg.max_outer || rho >= cfg.rho_max {
                break;
            }
            rho *= cfg.rho_growth;
        }

        if !whitened.is_feasible(&y, cfg.tol_feas) {
            whitened.restore_feasibility(&mut y, cfg);
        }

        if cfg.refine && whitened.is_feasible(&y, cfg.tol_feas) {
            if let Some(candidate) = whitened.first_order_refine(&y, cfg) {
                // The penalty answer may sit a hair on the infeasible side
                // (within tolerance); polishing onto the surface then adds a
                // sliver of distance. Allow that sliver, but reject the
                // macroscopic jumps a wrong active set would produce.
                let slack = T::cast(1e-6) * (T::one() + y.norm_squared());
                if candidate.iter().all(|v| v.is_finite())
                    && whitened.is_feasible(&candidate, cfg.tol_feas)
                    && candidate.norm_squared() <= y.norm_squared() + slack
                {
                    y = candidate;
                }
            }
        }

        let mut x = x_tilde + &l * &y;
        if whitened.is_feasible(&y, cfg.tol_feas) && !self.is_feasible(&x, cfg.tol_feas) {
            // Whitened and state-frame evaluations can disagree by rounding
            // right at the tolerance; nudge in the state frame (the required
            // move is epsilon-sized, so the metric is irrelevant here).
            self.restore_feasibility(&mut x, cfg);
        }

        if self.is_feasible(&x, cfg.tol_feas) {
            let d = &x - x_tilde;
            let dist_sq = d.dot(&chol.solve(&d));
            Ok(Projection {
                distance: dist_sq.max(T::zero()).sqrt(),
                violation: self.max_violation(&x),
                x,
                status: ProjectionStatus::Projected,
                outer_iterations: outer,
            })
        } else {
            Ok(Projection {
                x: x_tilde.clone(),
                status: ProjectionStatus::Fallback,
                distance: T::zero(),
                violation: self.max_violation(x_tilde),
                outer_iterations: outer,
            })
        }
    }

    /// Penalty objective in whitened coordinates: squared distance from the
    /// start point plus `rho` times the squared positive part of every
    /// constraint branch.
    fn penalty_value(&self, y: &DVector<T>, rho: T) -> T {
        let mut value = y.norm_squared();
        for term in self.terms(y) {
            for plus in [true, false] {
                let phi = term.phi(plus);
                if phi > T::zero() {
                    value += rho * phi * phi;
                }
            }
        }
        value
    }

    fn penalty_gradient(&self, y: &DVector<T>, rho: T) -> DVector<T> {
        let mut grad = y * T::cast(2.0);
        for term in self.terms(y) {
            for plus in [true, false] {
                let phi = term.phi(plus);
                if phi > T::zero() {
                    grad += self.gradient(&term, plus) * (T::cast(2.0) * rho * phi);
                }
            }
        }
        grad
    }

    fn penalty_descent(&self, y: &mut DVector<T>, rho: T, cfg: &ProjectionConfig<T>) {
        let mut trial = T::one();
        for _ in 0..cfg.max_inner {
            let grad = self.penalty_gradient(y, rho);
            let gnorm_sq = grad.norm_squared();
            if gnorm_sq <= T::cast(1e-300) {
                return;
            }
            let f0 = self.penalty_value(y, rho);
            let mut step = trial;
            let mut accepted = false;
            for _ in 0..70 {
                let candidate = &*y - &grad * step;
                let fc = self.penalty_value(&candidate, rho);
                if fc <= f0 - cfg.armijo_c1 * step * gnorm_sq {
                    *y = candidate;
                    accepted = true;
                    break;
                }
                step *= cfg.backtrack;
            }
            if !accepted {
                return;
            }
            trial = (step / cfg.backtrack).min(T::one());
            let moved = step * gnorm_sq.sqrt();
            if moved <= cfg.tol_step * (T::one() + y.norm()) {
                return;
            }
        }
    }

    /// Gauss-Newton on the violated constraints only: drives them to zero
    /// with quadratic local convergence, accepting damped steps that reduce
    /// the worst violation.
    fn restore_feasibility(&self, x: &mut DVector<T>, cfg: &ProjectionConfig<T>) {
        for _ in 0..50 {
            let terms = self.terms(x);
            let mut rows: Vec<DVector<T>> = Vec::new();
            let mut values: Vec<T> = Vec::new();
            for term in &terms {
                for plus in [true, false] {
                    let phi = term.phi(plus);
                    if phi > T::zero() {
                        rows.push(self.gradient(term, plus));
                        values.push(phi);
                    }
                }
            }
            if values.is_empty() {
                return;
            }
            let m = values.len();
            let jac = DMatrix::<T>::from_fn(m, self.dim, |i, j| rows[i][j]);
            let rhs = DVector::<T>::from_fn(m, |i, _| -values[i]);
            let svd = jac.svd(true, true);
            let Ok(dx) = svd.solve(&rhs, T::cast(1e-12)) else {
                return;
            };
            let before = self.max_violation(x);
            let mut scale = T::one();
            let mut improved = false;
            for _ in 0..40 {
                let candidate = &*x + &dx * scale;
                if self.max_violation(&candidate) < before {
                    *x = candidate;
                    improved = true;
                    break;
                }
                scale *= T::cast(0.5);
            }
            if !improved {
                return;
            }
            if self.is_feasible(x, cfg.tol_feas * T::cast(1e-4)) {
                return;
            }
        }
    }

    /// Newton solve of the stationarity conditions on the detected active
    /// set. Returns a candidate only; the caller re-checks feasibility and
    /// distance before accepting it.
    fn first_order_refine(
        &self,
        y0: &DVector<T>,
        cfg: &ProjectionConfig<T>,
    ) -> Option<DVector<T>> {
        let act_tol = cfg.tol_feas.sqrt();
        let terms = self.terms(y0);
        // (record index, plus side, equality?) rows of the working set.
        let mut active: Vec<(usize, bool, bool)> = Vec::new();
        for term in &terms {
            let plus_on = term.phi(true) >= -act_tol;
            let minus_on = term.phi(false) >= -act_tol;
            if plus_on && minus_on && self.curvature == T::zero() {
                // Slack band thinner than the activation tolerance: treat the
                // pair as one equality on the residual itself.
                active.push((term.record, true, true));
            } else {
                if plus_on {
                    active.push((term.record, true, false));
                }
                if minus_on {
                    active.push((term.record, false, false));
                }
            }
        }
        if active.is_empty() {
            return None;
        }

        let mut best: Option<DVector<T>> = None;
        for _round in 0..3 {
            let solved = self.newton_on_active(&active, y0)?;
            let (candidate, lambda) = solved;
            // Multipliers of one-sided rows must be nonnegative; drop the
            // most negative offender and retry with the reduced set.
            let mut worst: Option<(usize, T)> = None;
            for (i, &(_, _, equality)) in active.iter().enumerate() {
                if equality {
                    continue;
                }
                if lambda[i] < -T::cast(1e-8) && worst.map_or(true, |(_, w)| lambda[i] < w) {
                    worst = Some((i, lambda[i]));
                }
            }
            match worst {
                None => return Some(candidate),
                Some((idx, _)) => {
                    best = Some(candidate);
                    active.remove(idx);
                    if active.is_empty() {
                        return best;
                    }
                }
            }
        }
        best
    }

    fn newton_on_active(
        &self,
        active: &[(usize, bool, bool)],
        y0: &DVector<T>,
    ) -> Option<(DVector<T>, DVector<T>)> {
        let n = self.dim;
        let m = active.len();
        let mut y = y0.clone();

        let row_terms = |y: &DVector<T>| -> (DMatrix<T>, DVector<T>) {
            let terms = self.terms(y);
            let mut jac = DMatrix::<T>::zeros(m, n);
            let mut c = DVector::<T>::zeros(m);
            for (i, &(rec_idx, plus, equality)) in active.iter().enumerate() {
                let term = terms
                    .iter()
                    .find(|t| t.record == rec_idx)
                    .expect("record present");
                if equality {
                    c[i] = term.residual;
                    let (age, rec) = &self.records[rec_idx];
                    let g = self.pullbacks[*age].transpose() * &rec.h;
                    jac.row_mut(i).copy_from(&g.transpose());
                } else {
                    c[i] = term.phi(plus);
                    let g = self.gradient(term, plus);
                    jac.row_mut(i).copy_from(&g.transpose());
                }
            }
            (jac, c)
        };

        // Multiplier initialization by least squares on stationarity.
        let (jac0, _) = row_terms(&y);
        let grad_f0 = &y * T::cast(2.0);
        let mut lambda = jac0
            .transpose()
            .svd(true, true)
            .solve(&(-&grad_f0), T::cast(1e-12))
            .ok()?;
        if lambda.len() != m {
            return None;
        }

        let scale = T::one() + y0.norm();
        for _ in 0..25 {
            let (jac, c) = row_terms(&y);
            let grad_f = &y * T::cast(2.0);
            let stat = &grad_f + jac.transpose() * &lambda;
            if c.amax() <= T::cast(1e-14) * scale && stat.norm() <= T::cast(1e-11) * scale {
                break;
            }
            // Curvature of the working rows: each contributes −2L MᵀM.
            let mut w = DMatrix::<T>::identity(n, n) * T::cast(2.0);
            for (i, &(rec_idx, _, equality)) in active.iter().enumerate() {
                if equality {
                    continue;
                }
                let (age, _) = &self.records[rec_idx];
                let pb = &self.pullbacks[*age];
                w += pb.transpose() * pb * (-T::cast(2.0) * self.curvature * lambda[i]);
            }
            let mut kkt = DMatrix::<T>::zeros(n + m, n + m);
            kkt.view_mut((0, 0), (n, n)).copy_from(&w);
            kkt.view_mut((0, n), (n, m)).copy_from(&jac.transpose());
            kkt.view_mut((n, 0), (m, n)).copy_from(&jac);
            let mut rhs = DVector::<T>::zeros(n + m);
            for i in 0..n {
                rhs[i] = -stat[i];
            }
            for i in 0..m {
                rhs[n + i] = -c[i];
            }
            let delta = kkt.lu().solve(&rhs)?;
            for i in 0..n {
                y[i] += delta[i];
            }
            for i in 0..m {
                lambda[i] += delta[n + i];
            }
            if !y.iter().all(|v| v.is_finite()) {
                return None;
            }
        }
        Some((y, lambda))
    }
}

/// Tuning for [`FeasibleSet::project`]. Defaults follow the reference
/// implementation: penalty weight swept `1 → 1e8` by factors of ten, descent
/// with Armijo backtracking, and a final stationarity polish.
#[derive(Clone, Debug)]
pub struct ProjectionConfig<T: Real> {
    pub rho_init: T,
    pub rho_growth: T,
    pub rho_max: T,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol_feas: T,
    pub tol_step: T,
    pub armijo_c1: T,
    pub backtrack: T,
    pub refine: bool,
}

impl<T: Real> Default for ProjectionConfig<T> {
    fn default() -> Self {
        Self {
            rho_init: T::one(),
            rho_growth: T::cast(10.0),
            rho_max: T::cast(1e8),
            max_outer: 9,
            max_inner: 200,
            tol_feas: T::cast(1e-8),
            tol_step: T::cast(1e-10),
            armijo_c1: T::cast(1e-4),
            backtrack: T::cast(0.5),
            refine: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionStatus {
    /// The start point already satisfied every constraint.
    Interior,
    /// Moved to a feasible point minimizing the weighted distance.
    Projected,
    /// No feasible point found; the start point is returned unchanged.
    Fallback,
}

#[derive(Clone, Debug)]
pub struct Projection<T: Real> {
    pub x: DVector<T>,
    pub status: ProjectionStatus,
    /// Weighted distance `‖x − x̃‖` in the `weight⁻¹` metric (0 unless
    /// status is `Projected`).
    pub distance: T,
    /// Largest signed constraint value at the returned point.
    pub violation: T,
    pub outer_iterations: usize,
}
