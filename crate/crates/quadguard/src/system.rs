//! Discrete-time linear plant with two measurement channels.
//!
//! Dynamics: `x' = A x + B u + w`. The vector channel `y = C x + a + v`
//! can carry an additive attack `a`; the scalar channel `z = xᵀ V x`
//! cannot be tampered with. `A` must be invertible because the constraint
//! set construction pulls current states back through `A⁻ⁱ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;
use crate::scalar::{scaled_tol, Real};

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("{what} is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },
    #[error("{what} is not positive definite (smallest eigenvalue {eigenvalue:.3e})")]
    NotPositiveDefinite { what: &'static str, eigenvalue: f64 },
    #[error("{what} is not positive semidefinite (smallest eigenvalue {eigenvalue:.3e})")]
    NotPositiveSemidefinite { what: &'static str, eigenvalue: f64 },
    #[error("state matrix is near-singular (reciprocal condition estimate {rcond:.3e})")]
    IllConditioned { rcond: f64 },
    #[error("state-matrix solve residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    SolveResidual { residual: f64, tolerance: f64 },
    #[error("covariance factorization failed (matrix indefinite beyond jitter)")]
    FactorizationFailed,
    #[error("model document error: {0}")]
    Document(String),
}

/// Which definiteness requirements construction enforces.
///
/// The strict default matches the estimation theory. Noise-free runs use
/// `R = 0`, and feasibility-only studies may use a merely semidefinite `V`;
/// [`ValidationPolicy::relaxed`] admits both while still rejecting
/// indefinite matrices.
#[derive(Clone, Debug)]
pub struct ValidationPolicy {
    pub require_r_positive_definite: bool,
    pub require_v_positive_definite: bool,
    /// Reject `A` when the SVD-based reciprocal condition estimate is below this.
    pub min_rcond: f64,
    /// Relative residual allowed when solving `A x = b` for a random `b`.
    pub solve_residual_tol: f64,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self {
            require_r_positive_definite: true,
            require_v_positive_definite: true,
            min_rcond: 1e-12,
            solve_residual_tol: 1e-10,
        }
    }
}

impl ValidationPolicy {
    pub fn relaxed() -> Self {
        Self {
            require_r_positive_definite: false,
            require_v_positive_definite: false,
            ..Self::default()
        }
    }
}

/// Validated plant description. Construction checks shapes, symmetry,
/// definiteness, and invertibility of `A`; the stored `Q`, `R`, `V` are the
/// symmetrized copies of the inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
    q: DMatrix<T>,
    r: DMatrix<T>,
    v: DMatrix<T>,
}

fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::cast(0.5)
}

fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

fn check_square<T: Real>(
    m: &DMatrix<T>,
    n: usize,
    what: &'static str,
) -> Result<(), SystemError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(SystemError::ShapeMismatch {
            what,
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

/// Symmetry check followed by a symmetric eigendecomposition; returns the
/// symmetrized matrix and its smallest eigenvalue.
fn check_symmetric<T: Real>(
    m: &DMatrix<T>,
    what: &'static str,
) -> Result<(DMatrix<T>, T), SystemError> {
    let scale = max_abs(m).max(T::one());
    let asym = max_abs(&(m - m.transpose()));
    let tol = scaled_tol::<T>(1e-9, 64.0) * scale;
    if asym > tol {
        return Err(SystemError::NotSymmetric {
            what,
            asymmetry: asym.as_f64(),
        });
    }
    let sym = symmetrize(m);
    let min_eig = sym
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(T::max_value().unwrap_or_else(T::one), |acc, &x| acc.min(x));
    Ok((sym, min_eig))
}

impl<T: Real> SystemModel<T> {
    /// Builds a model under the strict validation policy.
    pub fn new(
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        q: DMatrix<T>,
        r: DMatrix<T>,
        v: DMatrix<T>,
    ) -> Result<Self, SystemError> {
        Self::with_policy(a, b, c, q, r, v, &ValidationPolicy::default())
    }

    pub fn with_policy(
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        q: DMatrix<T>,
        r: DMatrix<T>,
        v: DMatrix<T>,
        policy: &ValidationPolicy,
    ) -> Result<Self, SystemError> {
        let n = a.nrows();
        if n == 0 {
            return Err(SystemError::ShapeMismatch {
                what: "state matrix",
                expected: "at least 1x1".into(),
                got: "0x0".into(),
            });
        }
        check_square(&a, n, "state matrix")?;
        if b.nrows() != n || b.ncols() == 0 {
            return Err(SystemError::ShapeMismatch {
                what: "input matrix",
                expected: format!("{n}xm with m >= 1"),
                got: format!("{}x{}", b.nrows(), b.ncols()),
            });
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(SystemError::ShapeMismatch {
                what: "output matrix",
                expected: format!("px{n} with p >= 1"),
                got: format!("{}x{}", c.nrows(), c.ncols()),
            });
        }
        let p = c.nrows();
        check_square(&q, n, "process covariance")?;
        check_square(&r, p, "measurement covariance")?;
        check_square(&v, n, "quadratic form")?;

        let psd_tol = scaled_tol::<T>(1e-12, 64.0);
        let (q, q_min) = check_symmetric(&q, "process covariance")?;
        if q_min < -psd_tol * max_abs(&q).max(T::one()) {
            return Err(SystemError::NotPositiveSemidefinite {
                what: "process covariance",
                eigenvalue: q_min.as_f64(),
            });
        }
        let (r, r_min) = check_symmetric(&r, "measurement covariance")?;
        if policy.require_r_positive_definite {
            if r_min <= T::zero() {
                return Err(SystemError::NotPositiveDefinite {
                    what: "measurement covariance",
                    eigenvalue: r_min.as_f64(),
                });
            }
        } else if r_min < -psd_tol * max_abs(&r).max(T::one()) {
            return Err(SystemError::NotPositiveSemidefinite {
                what: "measurement covariance",
                eigenvalue: r_min.as_f64(),
            });
        }
        let (v, v_min) = check_symmetric(&v, "quadratic form")?;
        if policy.require_v_positive_definite {
            if v_min <= T::zero() {
                return Err(SystemError::NotPositiveDefinite {
                    what: "quadratic form",
                    eigenvalue: v_min.as_f64(),
                });
            }
        } else if v_min < -psd_tol * max_abs(&v).max(T::one()) {
            return Err(SystemError::NotPositiveSemidefinite {
                what: "quadratic form",
                eigenvalue: v_min.as_f64(),
            });
        }

        // Invertibility of A: reciprocal condition estimate, then a solve
        // against a fixed pseudo-random right-hand side.
        let svd = a.clone().svd(false, false);
        let (mut smax, mut smin) = (T::zero(), T::max_value().unwrap_or_else(T::one));
        for &s in svd.singular_values.iter() {
            smax = smax.max(s);
            smin = smin.min(s);
        }
        let rcond = if smax > T::zero() {
            smin / smax
        } else {
            T::zero()
        };
        if rcond.as_f64() < policy.min_rcond {
            return Err(SystemError::IllConditioned {
                rcond: rcond.as_f64(),
            });
        }
        let mut probe_rng = RngStream::from_seed(0x51D3_C0DE);
        let rhs = DVector::<T>::from_fn(n, |_, _| T::cast(probe_rng.normal()));
        let lu = a.clone().lu();
        let x = lu.solve(&rhs).ok_or(SystemError::IllConditioned {
            rcond: rcond.as_f64(),
        })?;
        let residual = (&a * &x - &rhs).norm() / rhs.norm();
        let res_tol = scaled_tol::<T>(policy.solve_residual_tol, 64.0);
        if residual > res_tol {
            return Err(SystemError::SolveResidual {
                residual: residual.as_f64(),
                tolerance: res_tol.as_f64(),
            });
        }

        Ok(Self { a, b, c, q, r, v })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    pub fn v(&self) -> &DMatrix<T> {
        &self.v
    }

    fn check_vec(
        &self,
        x: &DVector<T>,
        len: usize,
        what: &'static str,
    ) -> Result<(), SystemError> {
        if x.len() != len {
            return Err(SystemError::ShapeMismatch {
                what,
                expected: format!("{len}"),
                got: format!("{}", x.len()),
            });
        }
        Ok(())
    }

    /// `x' = A x + B u + w`.
    pub fn step_dynamics(
        &self,
        x: &DVector<T>,
        u: &DVector<T>,
        w: &DVector<T>,
    ) -> Result<DVector<T>, SystemError> {
        self.check_vec(x, self.n(), "state")?;
        self.check_vec(u, self.m(), "input")?;
        self.check_vec(w, self.n(), "process noise")?;
        Ok(&self.a * x + &self.b * u + w)
    }

    /// `y = C x + a + v`, with `a` the attack bias.
    pub fn linear_measurement(
        &self,
        x: &DVector<T>,
        a: &DVector<T>,
        v: &DVector<T>,
    ) -> Result<DVector<T>, SystemError> {
        self.check_vec(x, self.n(), "state")?;
        self.check_vec(a, self.p(), "attack")?;
        self.check_vec(v, self.p(), "measurement noise")?;
        Ok(&self.c * x + a + v)
    }

    /// Noise-free secure channel value `xᵀ V x`.
    pub fn quadratic_measurement(&self, x: &DVector<T>) -> Result<T, SystemError> {
        self.check_vec(x, self.n(), "state")?;
        Ok(x.dot(&(&self.v * x)))
    }

    /// Largest singular value of `V`; the curvature bound used by the
    /// constraint set.
    pub fn v_spectral_norm(&self) -> T {
        self.v
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(T::zero(), |acc, &s| acc.max(s))
    }

    /// Serializes the model as a TOML document with row-major matrices.
    pub fn to_document(&self) -> String {
        let doc = ModelDoc {
            a: matrix_rows(&self.a),
            b: matrix_rows(&self.b),
            c: matrix_rows(&self.c),
            q: matrix_rows(&self.q),
            r: matrix_rows(&self.r),
            v: matrix_rows(&self.v),
        };
        toml::to_string(&doc).expect("model serializes")
    }

    pub fn from_document(text: &str) -> Result<Self, SystemError> {
        Self::from_document_with(text, &ValidationPolicy::default())
    }

    pub fn from_document_with(
        text: &str,
        policy: &ValidationPolicy,
    ) -> Result<Self, SystemError> {
        let doc: ModelDoc =
            toml::from_str(text).map_err(|e| SystemError::Document(e.to_string()))?;
        Self::with_policy(
            rows_matrix(&doc.a, "a")?,
            rows_matrix(&doc.b, "b")?,
            rows_matrix(&doc.c, "c")?,
            rows_matrix(&doc.q, "q")?,
            rows_matrix(&doc.r, "r")?,
            rows_matrix(&doc.v, "v")?,
            policy,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn matrix_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect())
        .collect()
}

fn rows_matrix<T: Real>(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<T>, SystemError> {
    if rows.is_empty() {
        return Err(SystemError::Document(format!("matrix {what} is empty")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(SystemError::Document(format!(
            "matrix {what} rows are ragged or empty"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| {
        T::cast(rows[i][j])
    }))
}

/// One simulated time slice: the state at `k`, the input and process noise
/// applied at `k`, and both measurements taken at `k`. `assemble` computes
/// `y` and `z` from their ingredients, so the measurement identities hold by
/// construction.
#[derive(Clone, Debug)]
pub struct StepRecord<T: Real> {
    pub k: usize,
    pub x: DVector<T>,
    pub u: DVector<T>,
    pub w: DVector<T>,
    pub y: DVector<T>,
    pub v: DVector<T>,
    pub a: DVector<T>,
    pub z: T,
}

impl<T: Real> StepRecord<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        model: &SystemModel<T>,
        k: usize,
        x: DVector<T>,
        u: DVector<T>,
        w: DVector<T>,
        a: DVector<T>,
        v: DVector<T>,
        z_noise: T,
    ) -> Result<Self, SystemError> {
        let y = model.linear_measurement(&x, &a, &v)?;
        let z = model.quadratic_measurement(&x)? + z_noise;
        model.check_vec(&u, model.m(), "input")?;
        model.check_vec(&w, model.n(), "process noise")?;
        Ok(Self {
            k,
            x,
            u,
            w,
            y,
            v,
            a,
            z,
        })
    }
}

/// Cached PSD square-root factor for repeated Gaussian sampling.
///
/// The factorization is a pivot-tolerant Cholesky: zero pivots (within a
/// scale-relative tolerance) produce zero columns, so semidefinite
/// covariances, including the zero matrix, factor cleanly. A negative pivot
/// triggers one jitter retry (`1e-12 · trace/d · I`) and then fails.
pub struct PsdFactor<T: Real> {
    lower: DMatrix<T>,
}

impl<T: Real> PsdFactor<T> {
    pub fn new(cov: &DMatrix<T>) -> Result<Self, SystemError> {
        if cov.nrows() != cov.ncols() {
            return Err(SystemError::ShapeMismatch {
                what: "covariance",
                expected: "square".into(),
                got: format!("{}x{}", cov.nrows(), cov.ncols()),
            });
        }
        let sym = symmetrize(cov);
        if let Some(lower) = psd_cholesky(&sym) {
            return Ok(Self { lower });
        }
        let d = T::cast(sym.nrows() as f64);
        let jitter = T::cast(1e-12) * sym.trace() / d;
        if jitter > T::zero() {
            let jittered = &sym + DMatrix::identity(sym.nrows(), sym.ncols()) * jitter;
            if let Some(lower) = psd_cholesky(&jittered) {
                return Ok(Self { lower });
            }
        }
        Err(SystemError::FactorizationFailed)
    }

    pub fn lower(&self) -> &DMatrix<T> {
        &self.lower
    }

    /// Draws `L ξ` with `ξ` standard normal. Always consumes exactly `d`
    /// draws from `rng`, so stream layouts do not depend on the covariance.
    pub fn sample(&self, rng: &mut RngStream) -> DVector<T> {
        let xi = DVector::<T>::from_fn(self.lower.nrows(), |_, _| T::cast(rng.normal()));
        &self.lower * xi
    }
}

fn psd_cholesky<T: Real>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = m.nrows();
    let scale = m
        .diagonal()
        .iter()
        .fold(T::zero(), |acc, x| acc.max(x.abs()));
    let tol = scale * T::EPS * T::cast(32.0 * n as f64);
    let col_tol = (tol * scale).sqrt() + tol;
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > tol {
            let root = d.sqrt();
            l[(j, j)] = root;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / root;
            }
        } else if d >= -tol {
            // Semidefinite direction: the rest of the column must vanish too.
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > col_tol {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// One Gaussian draw with covariance `cov` (factored on the fly; use
/// [`PsdFactor`] directly when sampling repeatedly).
pub fn sample_gaussian<T: Real>(
    rng: &mut RngStream,
    cov: &DMatrix<T>,
) -> Result<DVector<T>, SystemError> {
    Ok(PsdFactor::new(cov)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dm(n: usize, m: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, m, data)
    }

    fn dv(data: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(data)
    }

    fn simple_model(n: usize) -> SystemModel<f64> {
        SystemModel::new(
            DMatrix::identity(n, n),
            DMatrix::zeros(n, 1),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n) * 0.01,
            DMatrix::identity(n, n) * 0.01,
            DMatrix::identity(n, n),
        )
        .unwrap()
    }

    #[test]
    fn identity_dynamics_return_the_state() {
        let model = simple_model(3);
        let x = dv(&[1.0, -2.0, 0.5]);
        let next = model
            .step_dynamics(&x, &dv(&[0.0]), &DVector::zeros(3))
            .unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn double_integrator_advances_position() {
        // A = [[1, 0.1],[0, 1]], x = (1.2, 2.0) -> (1.4, 2.0)
        let model = SystemModel::new(
            dm(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            dm(2, 1, &[0.005, 0.1]),
            dm(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(2, 2),
            DMatrix::identity(1, 1) * 1e-4,
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let next = model
            .step_dynamics(&dv(&[1.2, 2.0]), &dv(&[0.0]), &DVector::zeros(2))
            .unwrap();
        assert_relative_eq!(next[0], 1.4, max_relative = 1e-15);
        assert_relative_eq!(next[1], 2.0, max_relative = 1e-15);
    }

    #[test]
    fn random_dynamics_match_scalar_oracle() {
        let mut rng = RngStream::from_seed(101);
        let n = 3;
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.normal() * 0.4)
            + DMatrix::identity(n, n);
        let b = DMatrix::<f64>::from_fn(n, 2, |_, _| rng.normal());
        let model = SystemModel::new(
            a.clone(),
            b.clone(),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n) * 0.01,
            DMatrix::identity(n, n) * 0.01,
            DMatrix::identity(n, n),
        )
        .unwrap();
        let x = dv(&[0.3, -1.1, 2.2]);
        let u = dv(&[0.5, -0.25]);
        let w = dv(&[0.01, 0.02, -0.03]);
        let got = model.step_dynamics(&x, &u, &w).unwrap();
        // Element-wise loops, no matrix ops.
        for i in 0..n {
            let mut want = w[i];
            for j in 0..n {
                want += a[(i, j)] * x[j];
            }
            for j in 0..2 {
                want += b[(i, j)] * u[j];
            }
            assert_relative_eq!(got[i], want, max_relative = 1e-14);
        }
    }

    #[test]
    fn dynamics_are_linear() {
        let model = simple_model(4);
        let mut rng = RngStream::from_seed(5);
        for _ in 0..50 {
            let draw = |rng: &mut RngStream| DVector::<f64>::from_fn(4, |_, _| rng.normal());
            let (x1, x2) = (draw(&mut rng), draw(&mut rng));
            let (w1, w2) = (draw(&mut rng), draw(&mut rng));
            let u1 = dv(&[rng.normal()]);
            let u2 = dv(&[rng.normal()]);
            let lhs = model
                .step_dynamics(&(&x1 + &x2), &(&u1 + &u2), &(&w1 + &w2))
                .unwrap();
            let rhs = model.step_dynamics(&x1, &u1, &w1).unwrap()
                + model.step_dynamics(&x2, &u2, &w2).unwrap();
            let scale = lhs.norm().max(1.0);
            assert!((lhs - rhs).norm() / scale < 1e-12);
        }
    }

    #[test]
    fn linear_measurement_adds_attack_and_noise() {
        let model = simple_model(2);
        let y = model
            .linear_measurement(&dv(&[1.0, 2.0]), &dv(&[10.0, 0.0]), &dv(&[0.0, -0.5]))
            .unwrap();
        assert_eq!(y, dv(&[11.0, 1.5]));
        // Attack enters additively: y(a) - y(0) = a.
        let y0 = model
            .linear_measurement(&dv(&[1.0, 2.0]), &dv(&[0.0, 0.0]), &dv(&[0.0, -0.5]))
            .unwrap();
        assert_eq!(y - y0, dv(&[10.0, 0.0]));
    }

    #[test]
    fn quadratic_measurement_identity_form() {
        let model = simple_model(2);
        let z = model.quadratic_measurement(&dv(&[3.0, 4.0])).unwrap();
        assert_relative_eq!(z, 25.0, max_relative = 1e-15);
    }

    #[test]
    fn quadratic_measurement_relative_distance_form() {
        // 8-state layout [p_A, v_A, p_B, v_B]; V encodes |p_A - p_B|^2.
        let mut v = DMatrix::<f64>::zeros(8, 8);
        for (i, j) in [(0, 4), (1, 5)] {
            v[(i, i)] = 1.0;
            v[(j, j)] = 1.0;
            v[(i, j)] = -1.0;
            v[(j, i)] = -1.0;
        }
        let model = SystemModel::with_policy(
            DMatrix::identity(8, 8),
            DMatrix::zeros(8, 1),
            DMatrix::identity(8, 8),
            DMatrix::zeros(8, 8),
            DMatrix::identity(8, 8),
            v,
            &ValidationPolicy::relaxed(),
        )
        .unwrap();
        let mut x = DVector::zeros(8);
        x[4] = 2.0;
        x[5] = 2.0;
        let z = model.quadratic_measurement(&x).unwrap();
        assert_relative_eq!(z, 8.0, max_relative = 1e-15);
    }

    #[test]
    fn quadratic_form_is_symmetrization_invariant() {
        // xᵀMx only sees (M + Mᵀ)/2; the constructor symmetrizes, so feeding
        // the symmetric part directly must give the same channel.
        let mut rng = RngStream::from_seed(33);
        let raw = DMatrix::<f64>::from_fn(3, 3, |_, _| rng.normal());
        let spd = &raw * raw.transpose() + DMatrix::identity(3, 3);
        let model = SystemModel::new(
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 1),
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 3),
            DMatrix::identity(3, 3),
            spd.clone(),
            )
        .unwrap();
        let x = dv(&[0.2, -0.7, 1.3]);
        let direct = x.dot(&(&spd * &x));
        assert_relative_eq!(
            model.quadratic_measurement(&x).unwrap(),
            direct,
            max_relative = 1e-14
        );
    }

    #[test]
    fn rejects_singular_state_matrix() {
        let err = SystemModel::<f64>::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap_err();
        assert!(matches!(err, SystemError::IllConditioned { .. }));
    }

    #[test]
    fn rejects_asymmetric_covariance() {
        let err = SystemModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            dm(2, 2, &[1.0, 0.5, -0.5, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap_err();
        assert!(matches!(err, SystemError::NotSymmetric { .. }));
    }

    #[test]
    fn rejects_semidefinite_v_under_strict_policy_only() {
        let v = dm(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let build = |policy: &ValidationPolicy| {
            SystemModel::with_policy(
                DMatrix::identity(2, 2),
                DMatrix::zeros(2, 1),
                DMatrix::identity(2, 2),
                DMatrix::zeros(2, 2),
                DMatrix::identity(2, 2),
                v.clone(),
                policy,
            )
        };
        assert!(matches!(
            build(&ValidationPolicy::default()),
            Err(SystemError::NotPositiveDefinite { .. })
        ));
        assert!(build(&ValidationPolicy::relaxed()).is_ok());
    }

    #[test]
    fn rejects_indefinite_v_even_relaxed() {
        let v = dm(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = SystemModel::with_policy(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            v,
            &ValidationPolicy::relaxed(),
        )
        .unwrap_err();
        assert!(matches!(err, SystemError::NotPositiveSemidefinite { .. }));
    }

    #[test]
    fn step_record_measurements_hold_by_construction() {
        let model = simple_model(2);
        let rec = StepRecord::assemble(
            &model,
            3,
            dv(&[1.0, 2.0]),
            dv(&[0.5]),
            dv(&[0.0, 0.0]),
            dv(&[7.0, 0.0]),
            dv(&[0.1, -0.1]),
            0.25,
        )
        .unwrap();
        let expect_y = model.c() * &rec.x + &rec.a + &rec.v;
        assert_eq!(rec.y, expect_y);
        assert_relative_eq!(
            rec.z,
            model.quadratic_measurement(&rec.x).unwrap() + 0.25,
            max_relative = 1e-15
        );
    }

    #[test]
    fn zero_covariance_samples_zero() {
        let mut rng = RngStream::from_seed(1);
        let draw = sample_gaussian::<f64>(&mut rng, &DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(draw, DVector::zeros(3));
    }

    #[test]
    fn semidefinite_covariance_samples_in_range() {
        // rank-1 covariance: draws must stay on the span of the factor.
        let u = dv(&[1.0, 2.0]);
        let cov = &u * u.transpose();
        let mut rng = RngStream::from_seed(2);
        for _ in 0..100 {
            let d = sample_gaussian::<f64>(&mut rng, &cov).unwrap();
            assert_relative_eq!(d[1], 2.0 * d[0], max_relative = 1e-12);
        }
    }

    #[test]
    fn indefinite_covariance_fails() {
        let cov = dm(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mut rng = RngStream::from_seed(3);
        assert!(matches!(
            sample_gaussian::<f64>(&mut rng, &cov),
            Err(SystemError::FactorizationFailed)
        ));
    }

    #[test]
    fn gaussian_sample_std_matches_requested() {
        let cov = DMatrix::<f64>::identity(1, 1) * 0.005_f64.powi(2);
        let factor = PsdFactor::new(&cov).unwrap();
        let mut rng = RngStream::from_seed(2024);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| factor.sample(&mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let std = var.sqrt();
        assert!((std - 0.005).abs() / 0.005 < 0.03, "std = {std}");
    }

    #[test]
    fn gaussian_sampling_is_deterministic_per_seed() {
        let cov = dm(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mut a = RngStream::from_seed(77);
        let mut b = RngStream::from_seed(77);
        for _ in 0..20 {
            let da = sample_gaussian::<f64>(&mut a, &cov).unwrap();
            let db = sample_gaussian::<f64>(&mut b, &cov).unwrap();
            assert_eq!(da, db);
        }
    }

    #[test]
    fn psd_factor_reconstructs_covariance() {
        let mut rng = RngStream::from_seed(8);
        let g = DMatrix::<f64>::from_fn(4, 4, |_, _| rng.normal());
        let cov = &g * g.transpose();
        let f = PsdFactor::new(&cov).unwrap();
        let rebuilt = f.lower() * f.lower().transpose();
        assert!(max_abs(&(rebuilt - cov)) < 1e-10);
    }

    #[test]
    fn document_round_trip_preserves_model() {
        let model = SystemModel::new(
            dm(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            dm(2, 1, &[0.005, 0.1]),
            dm(1, 2, &[1.0, 0.0]),
            DMatrix::identity(2, 2) * 2.5e-5,
            DMatrix::identity(1, 1) * 2.5e-5,
            dm(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let doc = model.to_document();
        let back = SystemModel::<f64>::from_document(&doc).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn document_rejects_ragged_matrix() {
        let text = r#"
a = [[1.0, 0.0], [0.0]]
b = [[1.0], [1.0]]
c = [[1.0, 0.0]]
q = [[0.0, 0.0], [0.0, 0.0]]
r = [[1.0]]
v = [[1.0, 0.0], [0.0, 1.0]]
"#;
        assert!(matches!(
            SystemModel::<f64>::from_document(text),
            Err(SystemError::Document(_))
        ));
    }

    #[test]
    fn v_spectral_norm_matches_eigenvalues() {
        let mut rng = RngStream::from_seed(55);
        let g = DMatrix::<f64>::from_fn(3, 3, |_, _| rng.normal());
        let spd = &g * g.transpose() + DMatrix::identity(3, 3) * 0.1;
        let model = SystemModel::new(
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 1),
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 3),
            DMatrix::identity(3, 3),
            spd.clone(),
        )
        .unwrap();
        let max_eig = spd
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, &e| acc.max(e.abs()));
        assert_relative_eq!(model.v_spectral_norm(), max_eig, max_relative = 1e-10);
    }
}
