//! Ensemble score filter: forecast, score-based analysis, repeat.

use std::ops::Range;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::observation::{add_log_likelihood_grad, ObservationSpec, ObservationVector};
use crate::rng;
use crate::scalar::Real;
use crate::score_diffusion::{
    reverse_sample, DiffusionSchedule, IntegrationScheme, MonteCarloScore, Sampler, ScoreModel,
};
use crate::state::{ScalarField, StateVector};
use crate::twophase::TwoPhaseSolver;

/// `M` flattened states stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    dim: usize,
    pub members: Vec<T>,
    pub step: usize,
}

impl<T: Real> Ensemble<T> {
    pub fn new(dim: usize, members: Vec<T>) -> Result<Self> {
        if dim == 0 || members.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if members.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim * (members.len() / dim + 1),
                got: members.len(),
            });
        }
        Ok(Self {
            dim,
            members,
            step: 0,
        })
    }

    /// Builds member `m` by calling `f(m, row)` on a zeroed row.
    pub fn from_fn(m: usize, dim: usize, mut f: impl FnMut(usize, &mut [T])) -> Result<Self> {
        let mut members = vec![T::zero(); m * dim];
        for (i, row) in members.chunks_exact_mut(dim.max(1)).enumerate() {
            f(i, row);
        }
        Self::new(dim, members)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, m: usize) -> &[T] {
        &self.members[m * self.dim..(m + 1) * self.dim]
    }

    pub fn member_mut(&mut self, m: usize) -> &mut [T] {
        &mut self.members[m * self.dim..(m + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.members.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Vec<T> {
        ensemble_mean(&self.members, self.dim)
    }

    /// Per-coordinate sample standard deviation.
    pub fn spread(&self) -> Vec<T> {
        let mean = self.mean();
        let m = self.len();
        let mut var = vec![T::zero(); self.dim];
        for row in self.rows() {
            for ((v, x), mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = *x - *mu;
                *v = *v + d * d;
            }
        }
        let denom = T::from_count(m.max(2) - 1);
        var.into_iter().map(|v| (v / denom).sqrt()).collect()
    }
}

/// Coordinate-wise mean of `M × dim` row-major samples.
pub fn ensemble_mean<T: Real>(members: &[T], dim: usize) -> Vec<T> {
    let m = members.len() / dim;
    let mut acc = vec![T::zero(); dim];
    for row in members.chunks_exact(dim) {
        for (a, x) in acc.iter_mut().zip(row) {
            *a = *a + *x;
        }
    }
    let inv = T::one() / T::from_count(m.max(1));
    acc.into_iter().map(|a| a * inv).collect()
}

/// Root-mean-square difference.
pub fn rmse<T: Real>(estimate: &[T], reference: &[T]) -> Result<T> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: estimate.len(),
        });
    }
    if estimate.is_empty() {
        return Ok(T::zero());
    }
    let ss: T = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (*a - *b) * (*a - *b))
        .sum();
    Ok((ss / T::from_count(estimate.len())).sqrt())
}

/// Dynamics that move one ensemble member forward by one step.
pub trait ForwardModel<T: Real>: Sync {
    fn dim(&self) -> usize;

    /// Advances `z` in place from `step - 1` to `step`.
    fn propagate(&self, member: usize, step: usize, z: &mut [T]) -> Result<()>;

    /// Makes an analyzed member admissible again (clamping, re-balancing).
    fn post_analysis(&self, _member: usize, _z: &mut [T]) -> Result<()> {
        Ok(())
    }
}

pub fn propagate_ensemble<T: Real, F: ForwardModel<T> + ?Sized>(
    model: &F,
    ens: &mut Ensemble<T>,
    step: usize,
) -> Result<()> {
    let dim = ens.dim();
    check_model_dim(model.dim(), dim)?;
    first_error(
        ens.members
            .par_chunks_mut(dim)
            .enumerate()
            .map(|(m, z)| model.propagate(m, step, z).map_err(|e| wrap(m, e)))
            .collect(),
    )?;
    ens.step = step;
    Ok(())
}

fn post_analysis_ensemble<T: Real, F: ForwardModel<T> + ?Sized>(
    model: &F,
    ens: &mut Ensemble<T>,
) -> Result<()> {
    let dim = ens.dim();
    first_error(
        ens.members
            .par_chunks_mut(dim)
            .enumerate()
            .map(|(m, z)| model.post_analysis(m, z).map_err(|e| wrap(m, e)))
            .collect(),
    )
}

fn first_error(results: Vec<Result<()>>) -> Result<()> {
    results.into_iter().collect()
}

fn wrap(member: usize, e: Error) -> Error {
    match e {
        Error::Member { .. } | Error::NonFinite { .. } => e,
        other => Error::Member {
            member,
            source: Box::new(other),
        },
    }
}

fn check_model_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// The two-phase solver as a forward model with a fixed permeability.
pub struct PdeModel<T> {
    solver: TwoPhaseSolver<T>,
    permeability: ScalarField<T>,
    /// Keep analyzed `(u, p)` instead of re-solving them from the analyzed `s`.
    pub assimilate_up_directly: bool,
}

impl<T: Real> PdeModel<T> {
    pub fn new(solver: TwoPhaseSolver<T>, permeability: ScalarField<T>) -> Result<Self> {
        if permeability.len() != solver.grid().n_cells() {
            return Err(Error::DimensionMismatch {
                expected: solver.grid().n_cells(),
                got: permeability.len(),
            });
        }
        Ok(Self {
            solver,
            permeability,
            assimilate_up_directly: false,
        })
    }

    pub fn grid(&self) -> &Grid<T> {
        self.solver.grid()
    }

    pub fn solver(&self) -> &TwoPhaseSolver<T> {
        &self.solver
    }

    fn clamped_state(&self, z: &[T]) -> Result<StateVector<T>> {
        let mut st = StateVector::from_flat(self.grid(), z)?;
        for v in st.s.values.iter_mut() {
            *v = v.max(T::zero()).min(T::one());
        }
        Ok(st)
    }
}

impl<T: Real> ForwardModel<T> for PdeModel<T> {
    fn dim(&self) -> usize {
        self.grid().state_dim()
    }

    fn propagate(&self, _member: usize, _step: usize, z: &mut [T]) -> Result<()> {
        let st = self.clamped_state(z)?;
        let next = self.solver.step(&st, &self.permeability)?;
        let n_c = next.s.len();
        let n_f = next.u.values.len();
        z[..n_c].copy_from_slice(&next.s.values);
        z[n_c..n_c + n_f].copy_from_slice(&next.u.values);
        z[n_c + n_f..].copy_from_slice(&next.p.values);
        Ok(())
    }

    fn post_analysis(&self, _member: usize, z: &mut [T]) -> Result<()> {
        let n_c = self.grid().n_cells();
        for v in z[..n_c].iter_mut() {
            *v = v.max(T::zero()).min(T::one());
        }
        if self.assimilate_up_directly {
            return Ok(());
        }
        let st = self.clamped_state(z)?;
        let sol = self
            .solver
            .solve_darcy(&self.permeability, &st.s, Some(&st.p))?;
        let n_f = sol.u.values.len();
        z[n_c..n_c + n_f].copy_from_slice(&sol.u.values);
        z[n_c + n_f..].copy_from_slice(&sol.p.values);
        Ok(())
    }
}

/// `x ← a x + N(0, q)` per coordinate, noise keyed by `(seed, step, member)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel<T> {
    pub dim: usize,
    pub factor: T,
    pub noise_variance: T,
    pub seed: u64,
}

impl<T: Real> ForwardModel<T> for LinearModel<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn propagate(&self, member: usize, step: usize, z: &mut [T]) -> Result<()> {
        let sd = self.noise_variance.sqrt();
        let mut r = rng::stream(&[self.seed, step as u64, member as u64]);
        for v in z.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut r);
            *v = self.factor * *v + sd * T::lit(e);
        }
        Ok(())
    }
}

/// Time-damping `h(τ)` of the likelihood term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Damping {
    #[default]
    OneMinusTau,
}

impl Damping {
    pub fn eval<T: Real>(self, tau: T) -> T {
        match self {
            Damping::OneMinusTau => T::one() - tau,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "one_minus_tau" => Some(Self::OneMinusTau),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Damping::OneMinusTau => "one_minus_tau",
        }
    }
}

/// Prior score plus the damped likelihood gradient.
pub struct PosteriorScore<'a, T, P> {
    prior: P,
    spec: &'a ObservationSpec<T>,
    y: &'a [T],
    damping: Damping,
}

impl<'a, T: Real, P: ScoreModel<T>> PosteriorScore<'a, T, P> {
    pub fn new(
        prior: P,
        spec: &'a ObservationSpec<T>,
        y: &'a ObservationVector<T>,
        damping: Damping,
    ) -> Result<Self> {
        if prior.dim() != spec.state_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.state_dim,
                got: prior.dim(),
            });
        }
        if y.values.len() != spec.len() {
            return Err(Error::DimensionMismatch {
                expected: spec.len(),
                got: y.values.len(),
            });
        }
        Ok(Self {
            prior,
            spec,
            y: &y.values,
            damping,
        })
    }
}

impl<T: Real, P: ScoreModel<T>> ScoreModel<T> for PosteriorScore<'_, T, P> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn score_batch(&self, z: &[T], tau: T, out: &mut [T]) {
        self.prior.score_batch(z, tau, out);
        let h = self.damping.eval(tau);
        if h == T::zero() || self.spec.is_empty() {
            return;
        }
        let d = self.dim();
        for (zr, or) in z.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            add_log_likelihood_grad(zr, self.y, self.spec, h, or);
        }
    }

    fn stiffness_batch(&self, z: &[T], tau: T, out: &mut [T]) {
        self.prior.stiffness_batch(z, tau, out);
        let c = self.damping.eval(tau) / self.spec.noise_variance;
        let d = self.dim();
        let g = self.spec.nonlinearity;
        for (zr, or) in z.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            for &k in &self.spec.mask {
                let dk = g.derivative(zr[k]);
                or[k] = or[k] + c * dk * dk;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig<T> {
    /// Ensemble size `M`.
    pub members: usize,
    /// Pseudo-time steps `L`.
    pub steps: usize,
    /// Score mini-batch `J`; `None` uses the whole ensemble.
    pub batch: Option<usize>,
    pub eps: T,
    pub damping: Damping,
    pub scheme: IntegrationScheme,
    /// Keep the Brownian increment on the last pseudo-time step.
    pub final_noise: bool,
    /// Assimilate every `stride` forecast steps.
    pub stride: usize,
    pub seed: u64,
}

impl<T: Real> Default for FilterConfig<T> {
    fn default() -> Self {
        Self {
            members: 300,
            steps: 1000,
            batch: None,
            eps: T::lit(1e-3),
            damping: Damping::OneMinusTau,
            scheme: IntegrationScheme::EulerMaruyama,
            final_noise: false,
            stride: 1,
            seed: 0,
        }
    }
}

impl<T: Real> FilterConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::InvalidParameter(format!(
                "ensemble size must be at least 2, got {}",
                self.members
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("assimilation stride must be >= 1".into()));
        }
        if let Some(j) = self.batch {
            if j == 0 || j > self.members {
                return Err(Error::InvalidParameter(format!(
                    "score batch must be in 1..={}, got {j}",
                    self.members
                )));
            }
        }
        DiffusionSchedule::new(self.steps, self.eps).map(|_| ())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule<T>> {
        DiffusionSchedule::new(self.steps, self.eps)
    }
}

/// An analysis scheme mapping a forecast ensemble and data to a posterior.
pub trait Analysis<T: Real>: Sync {
    fn analyze(
        &self,
        prior: &Ensemble<T>,
        spec: &ObservationSpec<T>,
        y: &ObservationVector<T>,
        step: usize,
    ) -> Result<Ensemble<T>>;
}

/// Score-based analysis.
#[derive(Debug, Clone, Copy)]
pub struct EnsfAnalysis<T> {
    pub cfg: FilterConfig<T>,
}

impl<T: Real> Analysis<T> for EnsfAnalysis<T> {
    fn analyze(
        &self,
        prior: &Ensemble<T>,
        spec: &ObservationSpec<T>,
        y: &ObservationVector<T>,
        step: usize,
    ) -> Result<Ensemble<T>> {
        assimilate(prior, spec, y, &self.cfg, step)
    }
}

/// Samples a posterior ensemble of `cfg.members` from the prior ensemble and
/// data at filter step `step`.
pub fn assimilate<T: Real>(
    prior: &Ensemble<T>,
    spec: &ObservationSpec<T>,
    y: &ObservationVector<T>,
    cfg: &FilterConfig<T>,
    step: usize,
) -> Result<Ensemble<T>> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let dim = prior.dim();
    let batch = cfg.batch.unwrap_or(prior.len()).min(prior.len());
    let key = rng::mix(&[cfg.seed, step as u64]);
    let prior_score = MonteCarloScore::with_batch(&prior.members, dim, batch, key, schedule)?;
    let post = PosteriorScore::new(prior_score, spec, y, cfg.damping)?;
    let samples = reverse_sample(
        &post,
        &schedule,
        cfg.members,
        key ^ 1,
        Sampler {
            scheme: cfg.scheme,
            final_noise: cfg.final_noise,
        },
    )?;
    let mut out = Ensemble::new(dim, samples)?;
    out.step = step;
    Ok(out)
}

/// Forecast then analysis; returns the posterior and its mean.
pub fn assimilate_step<T: Real, F: ForwardModel<T> + ?Sized, A: Analysis<T> + ?Sized>(
    model: &F,
    analysis: &A,
    mut ens: Ensemble<T>,
    spec: &ObservationSpec<T>,
    y: &ObservationVector<T>,
    step: usize,
) -> Result<(Ensemble<T>, Vec<T>)> {
    propagate_ensemble(model, &mut ens, step)?;
    let mut post = analysis.analyze(&ens, spec, y, step)?;
    post_analysis_ensemble(model, &mut post)?;
    let est = post.mean();
    Ok((post, est))
}

/// Data available at one forecast step.
#[derive(Debug, Clone, Copy)]
pub struct StepData<'a, T> {
    pub spec: &'a ObservationSpec<T>,
    pub y: &'a ObservationVector<T>,
}

/// Per-step output of a filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep<T> {
    pub step: usize,
    pub assimilated: bool,
    pub estimate: Vec<T>,
    /// RMSE per requested block, empty without a reference.
    pub rmse: Vec<T>,
    pub seconds: f64,
}

pub struct RunOptions<'a, T> {
    /// Assimilate only every `stride` steps.
    pub stride: usize,
    /// Reference states for steps `1..=n`, used for RMSE.
    pub reference: Option<&'a [Vec<T>]>,
    /// Coordinate ranges to report RMSE on.
    pub blocks: Vec<Range<usize>>,
}

impl<T> Default for RunOptions<'_, T> {
    fn default() -> Self {
        Self {
            stride: 1,
            reference: None,
            blocks: Vec::new(),
        }
    }
}

/// Runs `data.len()` forecast steps starting from `initial`.
///
/// `data[n]` holds the observations at step `n + 1`, or `None` for pure
/// forecasting.
pub fn run_cycle<T: Real, F: ForwardModel<T> + ?Sized, A: Analysis<T> + ?Sized>(
    model: &F,
    analysis: &A,
    initial: Ensemble<T>,
    data: &[Option<StepData<'_, T>>],
    opts: &RunOptions<'_, T>,
    mut on_step: impl FnMut(&FilterStep<T>, &Ensemble<T>),
) -> Result<Vec<FilterStep<T>>> {
    if opts.stride == 0 {
        return Err(Error::InvalidParameter("assimilation stride must be >= 1".into()));
    }
    if let Some(r) = opts.reference {
        if r.len() < data.len() {
            return Err(Error::DimensionMismatch {
                expected: data.len(),
                got: r.len(),
            });
        }
    }
    let mut ens = initial;
    let mut out = Vec::with_capacity(data.len());
    for (n, datum) in data.iter().enumerate() {
        let step = n + 1;
        let t0 = Instant::now();
        let assimilate_now = datum.is_some() && step % opts.stride == 0;
        let estimate = match datum {
            Some(d) if assimilate_now => {
                let (post, est) = assimilate_step(model, analysis, ens, d.spec, d.y, step)?;
                ens = post;
                est
            }
            _ => {
                propagate_ensemble(model, &mut ens, step)?;
                ens.mean()
            }
        };
        let rmse = match opts.reference {
            Some(r) => opts
                .blocks
                .iter()
                .map(|b| rmse(&estimate[b.clone()], &r[n][b.clone()]))
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        let rec = FilterStep {
            step,
            assimilated: assimilate_now,
            estimate,
            rmse,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_step(&rec, &ens);
        out.push(rec);
    }
    Ok(out)
}

/// [`run_cycle`] with the score-based analysis.
pub fn run_filter<T: Real, F: ForwardModel<T> + ?Sized>(
    model: &F,
    initial: Ensemble<T>,
    data: &[Option<StepData<'_, T>>],
    cfg: &FilterConfig<T>,
    opts: &RunOptions<'_, T>,
) -> Result<Vec<FilterStep<T>>> {
    cfg.validate()?;
    run_cycle(model, &EnsfAnalysis { cfg: *cfg }, initial, data, opts, |_, _| {})
}
