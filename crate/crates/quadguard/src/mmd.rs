//! Kernel two-sample drift test between the two observers' estimate
//! trajectories.
//!
//! Under an attack the vector-channel estimator drifts away from the
//! quadratic-channel estimator, so a maximum mean discrepancy (MMD) between
//! sliding windows of the two trajectories grows. Trajectory samples are
//! serially dependent, which rules out the usual permutation null; the
//! threshold instead comes from a wild bootstrap that multiplies the pooled,
//! centered kernel matrix by random sign vectors.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::rng::RngStream;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum MmdError {
    #[error("sample windows are empty")]
    EmptyWindow,
    #[error("sample windows have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("samples have inconsistent dimensions")]
    DimensionMismatch,
    #[error("bandwidth selection needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("window length {window} exceeds the series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("kernel bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
}

/// Gaussian kernel `exp(−‖x − y‖² / (2σ²))`.
///
/// The squared distance is accumulated coordinate-wise, which makes the
/// kernel exactly symmetric in floating point: `(a−b)²` and `(b−a)²` are
/// the same operation up to an exact negation.
pub fn rbf_kernel<T: Real>(x: &DVector<T>, y: &DVector<T>, sigma: T) -> T {
    let mut sq = T::zero();
    for i in 0..x.len() {
        let d = x[i] - y[i];
        sq += d * d;
    }
    (-sq / (T::cast(2.0) * sigma * sigma)).exp()
}

/// Median of the nonzero pairwise distances; `1` when every pair coincides,
/// so the kernel never degenerates. Needs at least two points.
pub fn median_heuristic<T: Real>(points: &[DVector<T>]) -> Result<T, MmdError> {
    if points.len() < 2 {
        return Err(MmdError::TooFewSamples(points.len()));
    }
    let mut dists: Vec<T> = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = (&points[i] - &points[j]).norm();
            if d > T::zero() {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return Ok(T::one());
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are ordered"));
    Ok(dists[dists.len() / 2])
}

/// Biased squared-MMD estimate between equal-length windows.
///
/// Written so that swapping the windows returns the bit-identical value:
/// within-window sums trade places across a commutative addition, and the
/// cross terms are accumulated as brackets `k(xᵢ,yⱼ) + k(xⱼ,yᵢ)` whose
/// contents swap inside one commutative addition.
pub fn mmd_squared<T: Real>(
    xs: &[DVector<T>],
    ys: &[DVector<T>],
    sigma: T,
) -> Result<T, MmdError> {
    if xs.len() != ys.len() {
        return Err(MmdError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    let k = xs.len();
    if k == 0 {
        return Err(MmdError::EmptyWindow);
    }
    if sigma <= T::zero() {
        return Err(MmdError::BadBandwidth(sigma.as_f64()));
    }
    let two = T::cast(2.0);
    let mut within_x = T::zero();
    let mut within_y = T::zero();
    let mut cross = T::zero();
    for i in 0..k {
        within_x += rbf_kernel(&xs[i], &xs[i], sigma);
        within_y += rbf_kernel(&ys[i], &ys[i], sigma);
        cross += rbf_kernel(&xs[i], &ys[i], sigma);
    }
    for i in 0..k {
        for j in (i + 1)..k {
            within_x += two * rbf_kernel(&xs[i], &xs[j], sigma);
            within_y += two * rbf_kernel(&ys[i], &ys[j], sigma);
            cross += rbf_kernel(&xs[i], &ys[j], sigma) + rbf_kernel(&xs[j], &ys[i], sigma);
        }
    }
    let kk = T::cast((k * k) as f64);
    Ok(((within_x + within_y) - two * cross) / kk)
}

/// Kernel Gram matrix of a pooled point list. Filled symmetrically from the
/// upper triangle, so the result is exactly symmetric.
pub fn kernel_matrix<T: Real>(points: &[DVector<T>], sigma: T) -> DMatrix<T> {
    let n = points.len();
    let mut k = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = rbf_kernel(&points[i], &points[i], sigma);
        for j in (i + 1)..n {
            let v = rbf_kernel(&points[i], &points[j], sigma);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Double centering `K̃ = K − rowmean − colmean + grandmean`. For a
/// symmetric input one mean vector serves both sides, keeping the output
/// exactly symmetric.
pub fn center_kernel<T: Real>(k: &DMatrix<T>) -> DMatrix<T> {
    let n = k.nrows();
    let nn = T::cast(n as f64);
    let means: Vec<T> = (0..n)
        .map(|i| (0..n).map(|j| k[(i, j)]).sum::<T>() / nn)
        .collect();
    let grand = means.iter().copied().sum::<T>() / nn;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - means[i] - means[j] + grand)
}

/// Quadratic form `(1/g²) vᵀ K̃ v` shared by the observed statistic
/// (`v = ±1` group labels) and the bootstrap draws (`v` random signs).
pub fn signed_statistic<T: Real>(centered: &DMatrix<T>, signs: &[T], group: usize) -> T {
    let n = centered.nrows();
    debug_assert_eq!(signs.len(), n);
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            acc += signs[i] * signs[j] * centered[(i, j)];
        }
    }
    acc / T::cast((group * group) as f64)
}

/// Sign-multiplier law for the bootstrap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Multiplier {
    #[default]
    Rademacher,
}

impl Multiplier {
    fn draw<T: Real>(self, rng: &mut RngStream) -> T {
        match self {
            Multiplier::Rademacher => T::cast(rng.sign()),
        }
    }
}

/// `draws` bootstrap replicates of the statistic under the no-drift null.
pub fn wild_bootstrap_null<T: Real>(
    centered: &DMatrix<T>,
    group: usize,
    draws: usize,
    multiplier: Multiplier,
    rng: &mut RngStream,
) -> Vec<T> {
    let n = centered.nrows();
    let mut out = Vec::with_capacity(draws);
    let mut signs = vec![T::zero(); n];
    for _ in 0..draws {
        for s in signs.iter_mut() {
            *s = multiplier.draw(rng);
        }
        out.push(signed_statistic(centered, &signs, group));
    }
    out
}

/// Upper `1 − α` empirical quantile of the bootstrap sample: the value of
/// rank `⌈(1−α)·B⌉` in ascending order. The rank computation snaps to the
/// nearest integer when within `1e-9` to keep products like `0.95 · B` from
/// ceiling one rank too high.
pub fn critical_value<T: Real>(mut null: Vec<T>, alpha: T) -> Result<T, MmdError> {
    let b = null.len();
    if b == 0 {
        return Err(MmdError::BadConfig("bootstrap sample is empty"));
    }
    let a = alpha.as_f64();
    if !(0.0..1.0).contains(&a) || a == 0.0 {
        return Err(MmdError::BadConfig("alpha must lie strictly in (0, 1)"));
    }
    null.sort_by(|x, y| x.partial_cmp(y).expect("statistics are ordered"));
    let raw = (1.0 - a) * b as f64;
    let rank = if (raw - raw.round()).abs() <= 1e-9 * (b as f64).max(1.0) {
        raw.round() as usize
    } else {
        raw.ceil() as usize
    };
    let rank = rank.clamp(1, b);
    Ok(null[rank - 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bandwidth<T: Real> {
    /// Median pairwise distance over the pooled windows.
    MedianHeuristic,
    Fixed(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelConfig<T: Real> {
    pub bandwidth: Bandwidth<T>,
}

impl<T: Real> Default for KernelConfig<T> {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WildBootstrapConfig<T: Real> {
    pub draws: usize,
    pub alpha: T,
    pub kernel: KernelConfig<T>,
    pub multiplier: Multiplier,
}

impl<T: Real> Default for WildBootstrapConfig<T> {
    fn default() -> Self {
        Self {
            draws: 500,
            alpha: T::cast(0.05),
            kernel: KernelConfig::default(),
            multiplier: Multiplier::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DetectionOutcome<T: Real> {
    pub statistic: T,
    pub threshold: T,
    pub reject: bool,
    /// `(1 + #{null ≥ statistic}) / (draws + 1)`.
    pub p_value: T,
    pub bandwidth: T,
    /// Number of samples consumed when the decision was made; for a series
    /// starting at step 1 this is the absolute step index.
    pub end_index: usize,
}

/// One two-sample test between equal-length windows.
pub fn detect<T: Real>(
    xs: &[DVector<T>],
    ys: &[DVector<T>],
    cfg: &WildBootstrapConfig<T>,
    rng: &mut RngStream,
) -> Result<DetectionOutcome<T>, MmdError> {
    if xs.len() != ys.len() {
        return Err(MmdError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    let k = xs.len();
    if k == 0 {
        return Err(MmdError::EmptyWindow);
    }
    if cfg.draws == 0 {
        return Err(MmdError::BadConfig("bootstrap draw count must be positive"));
    }
    let dim = xs[0].len();
    if xs.iter().chain(ys.iter()).any(|v| v.len() != dim) {
        return Err(MmdError::DimensionMismatch);
    }
    let pooled: Vec<DVector<T>> = xs.iter().chain(ys.iter()).cloned().collect();
    let sigma = match cfg.kernel.bandwidth {
        Bandwidth::MedianHeuristic => median_heuristic(&pooled)?,
        Bandwidth::Fixed(s) => {
            if s <= T::zero() {
                return Err(MmdError::BadBandwidth(s.as_f64()));
            }
            s
        }
    };
    let gram = kernel_matrix(&pooled, sigma);
    let centered = center_kernel(&gram);
    let mut labels = vec![T::one(); 2 * k];
    for l in labels.iter_mut().skip(k) {
        *l = -T::one();
    }
    let statistic = signed_statistic(&centered, &labels, k);
    let null = wild_bootstrap_null(&centered, k, cfg.draws, cfg.multiplier, rng);
    let exceed = null.iter().filter(|&&t| t >= statistic).count();
    let p_value = T::cast((1 + exceed) as f64) / T::cast((cfg.draws + 1) as f64);
    let threshold = critical_value(null, cfg.alpha)?;
    Ok(DetectionOutcome {
        statistic,
        threshold,
        reject: statistic > threshold,
        p_value,
        bandwidth: sigma,
        end_index: k,
    })
}

/// Sliding-window testing over two aligned series. A decision is made each
/// time `window` samples are available: after samples `window`,
/// `window + 1`, …, `len`. Decision `end` uses the slice `[end − window, end)`
/// and a child stream `base.derive(end)`, so each decision is reproducible in
/// isolation.
pub fn online_detect<T: Real>(
    series_a: &[DVector<T>],
    series_b: &[DVector<T>],
    window: usize,
    cfg: &WildBootstrapConfig<T>,
    base: &RngStream,
) -> Result<Vec<DetectionOutcome<T>>, MmdError> {
    if series_a.len() != series_b.len() {
        return Err(MmdError::LengthMismatch {
            left: series_a.len(),
            right: series_b.len(),
        });
    }
    if window < 2 {
        return Err(MmdError::BadConfig("window must hold at least 2 samples"));
    }
    let len = series_a.len();
    if window > len {
        return Err(MmdError::WindowTooLarge { window, len });
    }
    let mut out = Vec::new();
    for end in window..=len {
        let mut rng = base.derive(end as u64);
        let mut outcome = detect(
            &series_a[end - window..end],
            &series_b[end - window..end],
            cfg,
            &mut rng,
        )?;
        outcome.end_index = end;
        out.push(outcome);
    }
    Ok(out)
}

/// Fixed-capacity FIFO of recent samples for streaming callers.
#[derive(Clone, Debug)]
pub struct SampleWindow<T: Real> {
    buf: VecDeque<DVector<T>>,
    cap: usize,
}

impl<T: Real> SampleWindow<T> {
    pub fn new(cap: usize) -> Self {
        Self {
            buf: VecDeque::with_capacity(cap + 1),
            cap,
        }
    }

    pub fn push(&mut self, sample: DVector<T>) {
        self.buf.push_back(sample);
        while self.buf.len() > self.cap {
            self.buf.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.cap
    }

    /// Oldest-first copy of the current contents.
    pub fn samples(&self) -> Vec<DVector<T>> {
        self.buf.iter().cloned().collect()
    }
}
