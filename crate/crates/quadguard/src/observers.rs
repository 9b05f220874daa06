//! The two state estimators: a Kalman filter on the attackable vector
//! channel and a constrained observer on the tamper-proof quadratic channel.
//!
//! The quadratic observer runs an extended-style scalar correction at the
//! predicted state, then projects the corrected estimate onto the
//! consistency set assembled from the last `window + 1` readings (see
//! [`crate::feasible`]). Its covariance is the corrected one; the projection
//! moves only the point estimate.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::feasible::{
    pullback_powers, ConstraintRecord, FeasibleError, FeasibleSet, ProjectionConfig,
    ProjectionStatus,
};
use crate::scalar::Real;
use crate::system::SystemModel;

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("innovation covariance is not positive definite")]
    InnovationNotPd,
    #[error("scalar innovation variance {0} is not positive")]
    ScalarInnovationNotPositive(f64),
    #[error(transparent)]
    Feasible(#[from] FeasibleError),
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("covariance is not symmetric")]
    CovarianceNotSymmetric,
}

/// Symmetrizes in place, then lifts the spectrum when the smallest
/// eigenvalue drops below `1e-12` by adding `1e-10·I`.
pub fn condition_covariance<T: Real>(p: &mut DMatrix<T>) {
    let sym = (&*p + p.transpose()) * T::cast(0.5);
    *p = sym;
    let min_eig = p
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(T::max_value().unwrap_or_else(T::one), |acc, &e| acc.min(e));
    if min_eig < T::cast(1e-12) {
        let n = p.nrows();
        *p += DMatrix::identity(n, n) * T::cast(1e-10);
    }
}

fn check_state_pair<T: Real>(
    x0: &DVector<T>,
    p0: &DMatrix<T>,
    n: usize,
) -> Result<(), ObserverError> {
    if x0.len() != n {
        return Err(ObserverError::DimensionMismatch {
            what: "initial estimate",
            expected: n,
            got: x0.len(),
        });
    }
    if p0.nrows() != n || p0.ncols() != n {
        return Err(ObserverError::DimensionMismatch {
            what: "initial covariance",
            expected: n,
            got: p0.nrows(),
        });
    }
    let scale = p0.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let asym = (p0 - p0.transpose())
        .iter()
        .fold(T::zero(), |acc, v| acc.max(v.abs()));
    if asym > T::cast(1e-9) * scale {
        return Err(ObserverError::CovarianceNotSymmetric);
    }
    Ok(())
}

/// Standard Kalman filter over `y = C x + v`. Attacks enter through `y`
/// unmodeled, which is exactly what makes this estimator spoofable.
#[derive(Clone, Debug)]
pub struct LinearObserverState<T: Real> {
    x: DVector<T>,
    p: DMatrix<T>,
}

impl<T: Real> LinearObserverState<T> {
    pub fn new(
        model: &SystemModel<T>,
        x0: DVector<T>,
        p0: DMatrix<T>,
    ) -> Result<Self, ObserverError> {
        check_state_pair(&x0, &p0, model.n())?;
        let mut p = p0;
        condition_covariance(&mut p);
        Ok(Self { x: x0, p })
    }

    pub fn estimate(&self) -> &DVector<T> {
        &self.x
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.p
    }

    pub fn predict(&mut self, model: &SystemModel<T>, u: &DVector<T>) -> Result<(), ObserverError> {
        if u.len() != model.m() {
            return Err(ObserverError::DimensionMismatch {
                what: "input",
                expected: model.m(),
                got: u.len(),
            });
        }
        self.x = model.a() * &self.x + model.b() * u;
        self.p = model.a() * &self.p * model.a().transpose() + model.q();
        self.p = (&self.p + self.p.transpose()) * T::cast(0.5);
        Ok(())
    }

    pub fn update(&mut self, model: &SystemModel<T>, y: &DVector<T>) -> Result<(), ObserverError> {
        if y.len() != model.p() {
            return Err(ObserverError::DimensionMismatch {
                what: "measurement",
                expected: model.p(),
                got: y.len(),
            });
        }
        let c = model.c();
        let innovation = y - c * &self.x;
        let pct = &self.p * c.transpose();
        let s = c * &pct + model.r();
        let s = (&s + s.transpose()) * T::cast(0.5);
        let chol = Cholesky::new(s).ok_or(ObserverError::InnovationNotPd)?;
        // gain = P Cᵀ S⁻¹, computed through the factor of S.
        let gain = chol.solve(&pct.transpose()).transpose();
        self.x += &gain * innovation;
        let n = model.n();
        let closed = DMatrix::<T>::identity(n, n) - &gain * c;
        self.p = closed * &self.p;
        condition_covariance(&mut self.p);
        Ok(())
    }

    pub fn step(
        &mut self,
        model: &SystemModel<T>,
        u: &DVector<T>,
        y: &DVector<T>,
    ) -> Result<(), ObserverError> {
        self.predict(model, u)?;
        self.update(model, y)
    }
}

/// Gradient of `x ↦ xᵀ V x`, i.e. `2 V x`.
pub fn quadratic_jacobian<T: Real>(v: &DMatrix<T>, x: &DVector<T>) -> DVector<T> {
    (v * x) * T::cast(2.0)
}

/// Outcome of the scalar extended-style correction step.
#[derive(Clone, Debug)]
pub struct EkfCorrection<T: Real> {
    pub x: DVector<T>,
    pub p: DMatrix<T>,
    pub gain: DVector<T>,
    pub innovation: T,
    pub innovation_variance: T,
}

/// One scalar correction against the quadratic reading, linearized at the
/// prior: `s = hᵀ P h + η`, `K = P h / s`, `x⁺ = x + K (z − xᵀ V x)`.
pub fn ekf_correct<T: Real>(
    v: &DMatrix<T>,
    x_prior: &DVector<T>,
    p_prior: &DMatrix<T>,
    z: T,
    eta: T,
) -> Result<EkfCorrection<T>, ObserverError> {
    let h = quadratic_jacobian(v, x_prior);
    let ph = p_prior * &h;
    let s = h.dot(&ph) + eta;
    if s <= T::zero() {
        return Err(ObserverError::ScalarInnovationNotPositive(s.as_f64()));
    }
    let gain = ph / s;
    let predicted = x_prior.dot(&(v * x_prior));
    let innovation = z - predicted;
    let x = x_prior + &gain * innovation;
    let n = x_prior.len();
    let mut p = (DMatrix::<T>::identity(n, n) - &gain * h.transpose()) * p_prior;
    condition_covariance(&mut p);
    Ok(EkfCorrection {
        x,
        p,
        gain,
        innovation,
        innovation_variance: s,
    })
}

/// Settings for the quadratic-channel observer.
#[derive(Clone, Debug)]
pub struct QuadObserverConfig<T: Real> {
    /// Variance proxy for the scalar reading used by the correction gain.
    pub eta: T,
    /// Slack added to every consistency constraint (reading-noise allowance).
    pub zeta: T,
    /// Number of past readings kept; the constraint set holds up to
    /// `window + 1` readings including the current one.
    pub window: usize,
    pub projection: ProjectionConfig<T>,
}

impl<T: Real> Default for QuadObserverConfig<T> {
    fn default() -> Self {
        Self {
            eta: T::cast(1e-6),
            zeta: T::zero(),
            window: 3,
            projection: ProjectionConfig::default(),
        }
    }
}

/// Per-step diagnostics from [`QuadObserverState::step`].
#[derive(Clone, Debug)]
pub struct QuadStepInfo<T: Real> {
    pub x_prior: DVector<T>,
    /// Estimate after the scalar correction, before projection.
    pub x_corrected: DVector<T>,
    pub innovation: T,
    pub innovation_variance: T,
    pub projection: ProjectionStatus,
    pub projection_distance: T,
    pub constraint_count: usize,
}

/// One stored reading: the linearization of `xᵀ V x` about an anchor
/// estimate, in the time frame where the reading was taken.
///
/// Pulling the current state back `i` steps through `A⁻ⁱ` only lands in the
/// reading's frame for autonomous dynamics; each realized input shifts the
/// pulled-back point by a known amount. That accumulated shift is kept in
/// `input_offset` and added to the anchor when the entry is turned into a
/// constraint, so the deviation `A⁻ⁱx − (anchor + offset)` equals the
/// in-frame deviation exactly. The linearization data (`h`, `z̃`) stays
/// frozen at the original anchor.
#[derive(Clone, Debug)]
pub struct HistoryEntry<T: Real> {
    record: ConstraintRecord<T>,
    input_offset: DVector<T>,
}

impl<T: Real> HistoryEntry<T> {
    /// Linearizes the reading `z` about `anchor`.
    pub fn at_anchor(v: &DMatrix<T>, anchor: &DVector<T>, z: T) -> Self {
        let h = quadratic_jacobian(v, anchor);
        let z_residual = z - anchor.dot(&(v * anchor));
        let dim = anchor.len();
        Self {
            record: ConstraintRecord {
                h,
                anchor: anchor.clone(),
                z_residual,
            },
            input_offset: DVector::zeros(dim),
        }
    }

    pub fn record(&self) -> &ConstraintRecord<T> {
        &self.record
    }

    /// The record with the anchor shifted into pullback coordinates.
    pub fn effective_record(&self) -> ConstraintRecord<T> {
        ConstraintRecord {
            h: self.record.h.clone(),
            anchor: &self.record.anchor + &self.input_offset,
            z_residual: self.record.z_residual,
        }
    }
}

/// Observer driven solely by the scalar quadratic channel.
///
/// Per step: predict, correct against the reading, then project the
/// corrected estimate onto the consistency set in the metric of the
/// corrected covariance. The stored history anchors past readings at the
/// posterior estimates of their own steps; the current reading is anchored
/// at the prior.
#[derive(Clone, Debug)]
pub struct QuadObserverState<T: Real> {
    x: DVector<T>,
    p: DMatrix<T>,
    cfg: QuadObserverConfig<T>,
    history: VecDeque<HistoryEntry<T>>,
    pullbacks: Vec<DMatrix<T>>,
    curvature: T,
}

impl<T: Real> QuadObserverState<T> {
    /// The observer caches `A`-inverse powers and the curvature bound, so
    /// every later call must pass the same model.
    pub fn new(
        model: &SystemModel<T>,
        x0: DVector<T>,
        p0: DMatrix<T>,
        cfg: QuadObserverConfig<T>,
    ) -> Result<Self, ObserverError> {
        check_state_pair(&x0, &p0, model.n())?;
        let pullbacks = pullback_powers(model.a(), cfg.window)?;
        let curvature = model.v_spectral_norm();
        let mut p = p0;
        condition_covariance(&mut p);
        Ok(Self {
            x: x0,
            p,
            cfg,
            history: VecDeque::new(),
            pullbacks,
            curvature,
        })
    }

    pub fn estimate(&self) -> &DVector<T> {
        &self.x
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.p
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn config(&self) -> &QuadObserverConfig<T> {
        &self.cfg
    }

    /// Stores the time-zero reading anchored at the initial estimate, so the
    /// first step already carries one aged constraint.
    pub fn initialize(&mut self, model: &SystemModel<T>, z0: T) {
        self.push_reading(model, z0);
    }

    fn push_reading(&mut self, model: &SystemModel<T>, z: T) {
        if self.cfg.window == 0 {
            return;
        }
        self.history
            .push_front(HistoryEntry::at_anchor(model.v(), &self.x, z));
        self.history.truncate(self.cfg.window);
    }

    /// Builds the consistency set for the current step: the fresh reading
    /// anchored at `x_prior` (age 0) plus the stored history (ages 1..),
    /// each history anchor shifted by its accumulated input offset.
    pub fn feasible_set(
        &self,
        model: &SystemModel<T>,
        x_prior: &DVector<T>,
        z: T,
    ) -> Result<FeasibleSet<T>, FeasibleError> {
        let mut records = Vec::with_capacity(1 + self.history.len());
        records.push((
            0usize,
            HistoryEntry::at_anchor(model.v(), x_prior, z)
                .record()
                .clone(),
        ));
        for (idx, entry) in self.history.iter().enumerate() {
            records.push((idx + 1, entry.effective_record()));
        }
        FeasibleSet::new(
            records,
            self.pullbacks.clone(),
            self.curvature,
            self.cfg.zeta,
        )
    }

    /// Folds one realized input into the stored readings: an entry about to
    /// be used at age `i` accumulates `A⁻ⁱ B u`, keeping its constraint
    /// aligned with the pulled-back current state. [`Self::step`] calls this
    /// itself; it is exposed for callers that drive the pipeline manually.
    pub fn absorb_input(&mut self, model: &SystemModel<T>, u: &DVector<T>) {
        if self.history.is_empty() {
            return;
        }
        let bu = model.b() * u;
        for (idx, entry) in self.history.iter_mut().enumerate() {
            entry.input_offset += &self.pullbacks[idx + 1] * &bu;
        }
    }

    pub fn step(
        &mut self,
        model: &SystemModel<T>,
        u: &DVector<T>,
        z: T,
    ) -> Result<QuadStepInfo<T>, ObserverError> {
        if u.len() != model.m() {
            return Err(ObserverError::DimensionMismatch {
                what: "input",
                expected: model.m(),
                got: u.len(),
            });
        }
        self.absorb_input(model, u);
        let x_prior = model.a() * &self.x + model.b() * u;
        let mut p_prior = model.a() * &self.p * model.a().transpose() + model.q();
        p_prior = (&p_prior + p_prior.transpose()) * T::cast(0.5);

        let corrected = ekf_correct(model.v(), &x_prior, &p_prior, z, self.cfg.eta)?;
        let set = self.feasible_set(model, &x_prior, z)?;
        let projected = set.project(&corrected.x, &corrected.p, &self.cfg.projection)?;

        self.x = projected.x;
        self.p = corrected.p;
        self.push_reading(model, z);

        Ok(QuadStepInfo {
            x_prior,
            x_corrected: corrected.x,
            innovation: corrected.innovation,
            innovation_variance: corrected.innovation_variance,
            projection: projected.status,
            projection_distance: projected.distance,
            constraint_count: set.len(),
        })
    }
}
