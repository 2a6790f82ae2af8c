//! Training-free score estimation and reverse-time sampling.
//!
//! The forward process is `Z_τ = α_τ Z_0 + β_τ ε` with `α_τ = 1 − τ` and
//! `β²_τ = τ`, so the reverse SDE has drift `b(τ) = −1/(1 − τ)` and diffusion
//! `σ²(τ) = (1 + τ)/(1 − τ)`. Coefficients are evaluated at `τ` clamped to
//! `[eps, 1 − eps]` because both ends are singular.

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Rows per block when scoring many query points at once. Fixed so that
/// the floating-point result of a row never depends on the thread count.
const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSchedule<T> {
    steps: usize,
    eps: T,
}

impl<T: Real> DiffusionSchedule<T> {
    pub fn new(steps: usize, eps: T) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 pseudo-time steps, got {steps}"
            )));
        }
        if !(eps > T::zero() && eps < T::lit(0.5)) {
            return Err(Error::InvalidParameter(format!(
                "schedule clamp must lie in (0, 0.5), got {eps}"
            )));
        }
        Ok(Self { steps, eps })
    }

    /// `L` steps with the default clamp `1e-3`.
    pub fn with_steps(steps: usize) -> Result<Self> {
        Self::new(steps, T::lit(1e-3))
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn dtau(&self) -> T {
        T::one() / T::from_count(self.steps)
    }

    /// Grid node `τ_l = l / L`.
    pub fn tau(&self, l: usize) -> T {
        T::from_count(l) / T::from_count(self.steps)
    }

    pub fn clamp(&self, tau: T) -> T {
        tau.max(self.eps).min(T::one() - self.eps)
    }

    /// Unclamped `α_τ = 1 − τ`.
    pub fn alpha(&self, tau: T) -> T {
        T::one() - tau
    }

    /// Unclamped `β²_τ = τ`.
    pub fn beta2(&self, tau: T) -> T {
        tau
    }

    /// `(α, β²)` at the clamped `τ`; the pair used by every score kernel.
    pub fn kernel(&self, tau: T) -> (T, T) {
        let t = self.clamp(tau);
        (T::one() - t, t)
    }

    pub fn drift(&self, tau: T) -> T {
        -T::one() / (T::one() - self.clamp(tau))
    }

    pub fn sigma2(&self, tau: T) -> T {
        let t = self.clamp(tau);
        (T::one() + t) / (T::one() - t)
    }
}

/// A score function `∇ log p_τ(z)` that can be evaluated on many points.
pub trait ScoreModel<T: Real>: Sync {
    fn dim(&self) -> usize;

    /// `z` holds points row-major (`z.len()` a multiple of `dim`); `out` gets
    /// one score row per point.
    fn score_batch(&self, z: &[T], tau: T, out: &mut [T]);

    /// Non-negative diagonal of the stiff part of `−∂S/∂z`, treated
    /// implicitly by [`IntegrationScheme::LinearlyImplicit`].
    fn stiffness_batch(&self, _z: &[T], _tau: T, out: &mut [T]) {
        out.fill(T::zero());
    }

    fn score(&self, z: &[T], tau: T) -> Vec<T> {
        let mut out = vec![T::zero(); z.len()];
        self.score_batch(z, tau, &mut out);
        out
    }
}

impl<T: Real, S: ScoreModel<T> + ?Sized> ScoreModel<T> for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score_batch(&self, z: &[T], tau: T, out: &mut [T]) {
        (**self).score_batch(z, tau, out)
    }
    fn stiffness_batch(&self, z: &[T], tau: T, out: &mut [T]) {
        (**self).stiffness_batch(z, tau, out)
    }
}

/// Numerically stable softmax; returns the log normalizer.
///
/// Weights more than `e^-600` below the largest are set to zero, which
/// keeps subnormals out of the downstream matrix products.
pub fn softmax_in_place<T: Real>(w: &mut [T]) -> T {
    let max = w.iter().copied().fold(T::neg_infinity(), T::max);
    let floor = T::lit(-600.0).max(T::min_positive_value().ln() + T::lit(30.0));
    let mut sum = T::zero();
    for v in w.iter_mut() {
        let x = *v - max;
        *v = if x < floor { T::zero() } else { x.exp() };
        sum = sum + *v;
    }
    for v in w.iter_mut() {
        *v = *v / sum;
    }
    max + sum.ln()
}

/// Closed-form Monte Carlo score over a fixed mini-batch of samples.
#[derive(Debug, Clone)]
pub struct MonteCarloScore<T> {
    dim: usize,
    batch: Vec<T>,
    sq_norms: Vec<T>,
    schedule: DiffusionSchedule<T>,
}

impl<T: Real> MonteCarloScore<T> {
    /// Uses every sample (`J = M`). `samples` is `M × dim` row-major.
    pub fn new(samples: &[T], dim: usize, schedule: DiffusionSchedule<T>) -> Result<Self> {
        if dim == 0 || samples.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if samples.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim * (samples.len() / dim),
                got: samples.len(),
            });
        }
        let sq_norms = samples
            .chunks_exact(dim)
            .map(|r| r.iter().map(|v| *v * *v).sum())
            .collect();
        Ok(Self {
            dim,
            batch: samples.to_vec(),
            sq_norms,
            schedule,
        })
    }

    /// Draws `batch` of the samples without replacement, keyed by `seed`.
    pub fn with_batch(
        samples: &[T],
        dim: usize,
        batch: usize,
        seed: u64,
        schedule: DiffusionSchedule<T>,
    ) -> Result<Self> {
        if dim == 0 || samples.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let m = samples.len() / dim;
        if batch == 0 || batch > m {
            return Err(Error::InvalidParameter(format!(
                "score batch must be in 1..={m}, got {batch}"
            )));
        }
        if batch == m {
            return Self::new(samples, dim, schedule);
        }
        let mut picked = index::sample(&mut rng::stream(&[seed]), m, batch).into_vec();
        picked.sort_unstable();
        let mut rows = Vec::with_capacity(batch * dim);
        for j in picked {
            rows.extend_from_slice(&samples[j * dim..(j + 1) * dim]);
        }
        Self::new(&rows, dim, schedule)
    }

    pub fn batch_size(&self) -> usize {
        self.sq_norms.len()
    }

    /// Normalized kernel weights `w̄_j` for one query point.
    pub fn weights(&self, z: &[T], tau: T) -> Vec<T> {
        let (alpha, beta2) = self.schedule.kernel(tau);
        let mut w: Vec<T> = self
            .batch
            .chunks_exact(self.dim)
            .map(|e| {
                let d2: T = z
                    .iter()
                    .zip(e)
                    .map(|(a, b)| {
                        let r = *a - alpha * *b;
                        r * r
                    })
                    .sum();
                -d2 / (beta2 + beta2)
            })
            .collect();
        softmax_in_place(&mut w);
        w
    }

    fn score_chunk(&self, z: &[T], alpha: T, beta2: T, g: &mut Vec<T>, out: &mut [T]) {
        let d = self.dim;
        let n = z.len() / d;
        let jn = self.batch_size();
        g.clear();
        g.resize(n * jn, T::zero());
        T::gemm_bt(n, d, jn, T::one(), z, &self.batch, T::zero(), g);
        // ‖z‖² is common to every j and drops out of the softmax
        let two = T::lit(2.0);
        let inv = T::one() / (two * beta2);
        for row in g.chunks_exact_mut(jn) {
            for (v, nj) in row.iter_mut().zip(&self.sq_norms) {
                *v = (two * alpha * *v - alpha * alpha * *nj) * inv;
            }
            softmax_in_place(row);
        }
        T::gemm(n, jn, d, alpha / beta2, g, &self.batch, T::zero(), out);
        let inv_b2 = T::one() / beta2;
        for (o, zi) in out.iter_mut().zip(z) {
            *o = *o - *zi * inv_b2;
        }
    }
}

impl<T: Real> ScoreModel<T> for MonteCarloScore<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_batch(&self, z: &[T], tau: T, out: &mut [T]) {
        assert_eq!(z.len(), out.len());
        assert_eq!(z.len() % self.dim, 0);
        let (alpha, beta2) = self.schedule.kernel(tau);
        let rows = CHUNK * self.dim;
        z.par_chunks(rows)
            .zip(out.par_chunks_mut(rows))
            .for_each_init(Vec::new, |g, (zc, oc)| {
                self.score_chunk(zc, alpha, beta2, g, oc)
            });
    }
}

/// Score of `N(m, σ² I)` pushed through the forward process.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianScore<T> {
    pub mean: Vec<T>,
    pub variance: T,
    schedule: DiffusionSchedule<T>,
}

impl<T: Real> AnalyticGaussianScore<T> {
    pub fn new(mean: Vec<T>, variance: T, schedule: DiffusionSchedule<T>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidParameter("empty mean".into()));
        }
        if !(variance >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "variance must be non-negative, got {variance}"
            )));
        }
        Ok(Self {
            mean,
            variance,
            schedule,
        })
    }
}

impl<T: Real> ScoreModel<T> for AnalyticGaussianScore<T> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score_batch(&self, z: &[T], tau: T, out: &mut [T]) {
        let (alpha, beta2) = self.schedule.kernel(tau);
        let denom = alpha * alpha * self.variance + beta2;
        for (zr, or) in z
            .chunks_exact(self.mean.len())
            .zip(out.chunks_exact_mut(self.mean.len()))
        {
            for ((o, zi), m) in or.iter_mut().zip(zr).zip(&self.mean) {
                *o = -(*zi - alpha * *m) / denom;
            }
        }
    }
}

/// Wraps a per-point closure `f(z, τ, out)`.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F> FnScore<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Real, F: Fn(&[T], T, &mut [T]) + Sync> ScoreModel<T> for FnScore<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_batch(&self, z: &[T], tau: T, out: &mut [T]) {
        z.par_chunks(self.dim)
            .zip(out.par_chunks_mut(self.dim))
            .for_each(|(zr, or)| (self.f)(zr, tau, or));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegrationScheme {
    /// Explicit Euler–Maruyama.
    #[default]
    EulerMaruyama,
    /// Euler–Maruyama with the score's stiff diagonal taken implicitly
    /// (one linearized backward-Euler solve per step).
    LinearlyImplicit,
}

impl IntegrationScheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euler_maruyama" | "em" => Some(Self::EulerMaruyama),
            "linearly_implicit" | "implicit" => Some(Self::LinearlyImplicit),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::EulerMaruyama => "euler_maruyama",
            Self::LinearlyImplicit => "linearly_implicit",
        }
    }
}

/// Reverse-SDE integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Sampler {
    pub scheme: IntegrationScheme,
    /// Adds the Brownian increment on the last step (`τ₁ → 0`) too. Off, the
    /// last step is the deterministic drift update, which removes the
    /// `σ√Δτ` residual noise from the returned samples.
    pub final_noise: bool,
}

impl From<IntegrationScheme> for Sampler {
    fn from(scheme: IntegrationScheme) -> Self {
        Self {
            scheme,
            final_noise: false,
        }
    }
}

/// Integrates the reverse SDE from `N(0, I)` at `τ = 1` down to `τ = 0`.
///
/// Returns `m_out × dim` row-major samples. Member `m` draws all of its noise
/// from the stream keyed by `(seed, m)`.
pub fn reverse_sample<T: Real, S: ScoreModel<T>>(
    score: &S,
    schedule: &DiffusionSchedule<T>,
    m_out: usize,
    seed: u64,
    sampler: impl Into<Sampler>,
) -> Result<Vec<T>> {
    let Sampler { scheme, final_noise } = sampler.into();
    let d = score.dim();
    if m_out == 0 || d == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let mut rngs: Vec<_> = (0..m_out as u64).map(|m| rng::stream(&[seed, m])).collect();
    let mut z = vec![T::zero(); m_out * d];
    z.par_chunks_mut(d)
        .zip(rngs.par_iter_mut())
        .for_each(|(row, r)| {
            for v in row {
                *v = T::lit(StandardNormal.sample(r));
            }
        });

    let mut s = vec![T::zero(); m_out * d];
    let mut stiff = match scheme {
        IntegrationScheme::EulerMaruyama => Vec::new(),
        IntegrationScheme::LinearlyImplicit => vec![T::zero(); m_out * d],
    };
    let dt = schedule.dtau();
    let sqrt_dt = dt.sqrt();
    for l in (0..schedule.steps()).rev() {
        let tau = schedule.tau(l + 1);
        let b = schedule.drift(tau);
        let sig2 = schedule.sigma2(tau);
        let sig = sig2.sqrt();
        score.score_batch(&z, tau, &mut s);
        if !stiff.is_empty() {
            score.stiffness_batch(&z, tau, &mut stiff);
        }
        let noise = if l == 0 && !final_noise {
            T::zero()
        } else {
            sig * sqrt_dt
        };
        let bad = z
            .par_chunks_mut(d)
            .zip(s.par_chunks(d))
            .zip(rngs.par_iter_mut())
            .enumerate()
            .map(|(m, ((zr, sr), r))| {
                let mut ok = true;
                if stiff.is_empty() {
                    for (zi, si) in zr.iter_mut().zip(sr) {
                        let xi: f64 = StandardNormal.sample(r);
                        *zi = *zi + (sig2 * *si - b * *zi) * dt + noise * T::lit(xi);
                        ok &= zi.is_finite();
                    }
                } else {
                    let kr = &stiff[m * d..(m + 1) * d];
                    for ((zi, si), ki) in zr.iter_mut().zip(sr).zip(kr) {
                        let xi: f64 = StandardNormal.sample(r);
                        let dz = (sig2 * *si - b * *zi) * dt + noise * T::lit(xi);
                        *zi = *zi + dz / (T::one() + dt * sig2 * *ki);
                        ok &= zi.is_finite();
                    }
                }
                (!ok).then_some(m)
            })
            .filter_map(|x| x)
            .min();
        if let Some(member) = bad {
            return Err(Error::NonFinite { member, step: l });
        }
    }
    Ok(z)
}
