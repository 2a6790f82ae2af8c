//! Masked, optionally nonlinear observations with Gaussian noise.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng;
use crate::scalar::Real;
use crate::state::{StateLayout, StateVector, Variable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    #[default]
    Arctan,
    Identity,
}

impl Nonlinearity {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Nonlinearity::Arctan => x.atan(),
            Nonlinearity::Identity => x,
        }
    }

    #[inline]
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Nonlinearity::Arctan => T::one() / (T::one() + x * x),
            Nonlinearity::Identity => T::one(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "arctan" => Some(Self::Arctan),
            "identity" => Some(Self::Identity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Arctan => "arctan",
            Self::Identity => "identity",
        }
    }
}

/// Which state coordinates are observed and how.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSpec<T> {
    /// Sorted flat state indices.
    pub mask: Vec<usize>,
    /// Observed fraction per selected variable.
    pub fractions: Vec<(Variable, f64)>,
    pub nonlinearity: Nonlinearity,
    /// Variance `r` of the additive noise.
    pub noise_variance: T,
    pub seed: u64,
    /// Length of the flattened state the mask refers to.
    pub state_dim: usize,
}

impl<T: Real> ObservationSpec<T> {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn with_nonlinearity(mut self, h: Nonlinearity) -> Self {
        self.nonlinearity = h;
        self
    }

    pub fn with_noise_variance(mut self, r: T) -> Self {
        self.noise_variance = r;
        self
    }

    /// The same spec with a fresh mask drawn for filter step `step`.
    pub fn remasked(&self, grid: &Grid<T>, step: usize) -> Result<Self> {
        let seed = rng::mix(&[self.seed, step as u64]);
        let mut out = make_mask_fractions(grid, &self.fractions, seed)?;
        out.seed = self.seed;
        out.nonlinearity = self.nonlinearity;
        out.noise_variance = self.noise_variance;
        Ok(out)
    }

    /// Observation operator without noise, `h(z)` on the mask.
    pub fn apply(&self, z: &[T]) -> Vec<T> {
        self.mask
            .iter()
            .map(|&k| self.nonlinearity.apply(z[k]))
            .collect()
    }

    /// Mask restricted to one variable block, as indices into the mask.
    pub fn positions_in(&self, layout: &StateLayout, v: Variable) -> Vec<usize> {
        let block = layout.block(v);
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, k)| block.contains(k))
            .map(|(i, _)| i)
            .collect()
    }
}

/// One time level of data.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector<T> {
    pub step: usize,
    pub values: Vec<T>,
}

/// Observes `fraction` of every variable in `variables`, with arctan and
/// noise variance 0.07 as defaults.
pub fn make_mask<T: Real>(
    grid: &Grid<T>,
    variables: &[Variable],
    fraction: f64,
    seed: u64,
) -> Result<ObservationSpec<T>> {
    if fraction > 0.0 && variables.is_empty() {
        return Err(Error::InvalidParameter(
            "positive observation fraction but no observed variables".into(),
        ));
    }
    let pairs: Vec<_> = variables.iter().map(|v| (*v, fraction)).collect();
    make_mask_fractions(grid, &pairs, seed)
}

/// Like [`make_mask`] with a separate fraction per variable.
pub fn make_mask_fractions<T: Real>(
    grid: &Grid<T>,
    fractions: &[(Variable, f64)],
    seed: u64,
) -> Result<ObservationSpec<T>> {
    let layout = StateLayout::of(grid);
    let mut mask = Vec::new();
    for (idx, (v, f)) in fractions.iter().enumerate() {
        if !(0.0..=1.0).contains(f) {
            return Err(Error::InvalidParameter(format!(
                "observation fraction must be in [0, 1], got {f}"
            )));
        }
        if fractions[..idx].iter().any(|(w, _)| w == v) {
            return Err(Error::InvalidParameter(format!(
                "variable {} listed twice",
                v.name()
            )));
        }
        let block = layout.block(*v);
        let n = block.len();
        let count = (f * n as f64).round() as usize;
        let mut r = rng::stream(&[seed, *v as u64]);
        let picked = index::sample(&mut r, n, count.min(n));
        mask.extend(picked.iter().map(|i| block.start + i));
    }
    mask.sort_unstable();
    Ok(ObservationSpec {
        mask,
        fractions: fractions.to_vec(),
        nonlinearity: Nonlinearity::Arctan,
        noise_variance: T::lit(0.07),
        seed,
        state_dim: layout.dim(),
    })
}

/// `y = h(x) + ε` on the mask of a flattened state; `noise_seed = None`
/// gives noiseless data.
pub fn observe_flat<T: Real>(
    x: &[T],
    spec: &ObservationSpec<T>,
    step: usize,
    noise_seed: Option<u64>,
) -> Result<ObservationVector<T>> {
    if x.len() != spec.state_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.state_dim,
            got: x.len(),
        });
    }
    let mut values = spec.apply(x);
    if let Some(seed) = noise_seed {
        let sd = spec.noise_variance.sqrt();
        let mut r = rng::stream(&[seed, step as u64]);
        for v in values.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut r);
            *v = *v + sd * T::lit(e);
        }
    }
    Ok(ObservationVector { step, values })
}

pub fn observe<T: Real>(
    state: &StateVector<T>,
    spec: &ObservationSpec<T>,
    step: usize,
    noise_seed: Option<u64>,
) -> Result<ObservationVector<T>> {
    observe_flat(&state.flatten(), spec, step, noise_seed)
}

fn check_obs<T: Real>(z: &[T], y: &ObservationVector<T>, spec: &ObservationSpec<T>) -> Result<()> {
    if z.len() != spec.state_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.state_dim,
            got: z.len(),
        });
    }
    if y.values.len() != spec.mask.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.mask.len(),
            got: y.values.len(),
        });
    }
    Ok(())
}

/// `-½ Σ (h(z) − y)² / r`, up to an additive constant.
pub fn log_likelihood<T: Real>(
    z: &[T],
    y: &ObservationVector<T>,
    spec: &ObservationSpec<T>,
) -> Result<T> {
    check_obs(z, y, spec)?;
    let half = T::lit(0.5);
    Ok(-spec
        .mask
        .iter()
        .zip(&y.values)
        .map(|(&k, yi)| {
            let r = spec.nonlinearity.apply(z[k]) - *yi;
            r * r
        })
        .sum::<T>()
        * half
        / spec.noise_variance)
}

/// Adds `scale · ∇ log P(y | z)` into `out`; touches only masked coordinates.
pub fn add_log_likelihood_grad<T: Real>(
    z: &[T],
    y: &[T],
    spec: &ObservationSpec<T>,
    scale: T,
    out: &mut [T],
) {
    let c = scale / spec.noise_variance;
    let h = spec.nonlinearity;
    for (&k, yi) in spec.mask.iter().zip(y) {
        let zk = z[k];
        out[k] = out[k] + c * (*yi - h.apply(zk)) * h.derivative(zk);
    }
}

pub fn log_likelihood_grad<T: Real>(
    z: &[T],
    y: &ObservationVector<T>,
    spec: &ObservationSpec<T>,
) -> Result<Vec<T>> {
    check_obs(z, y, spec)?;
    let mut out = vec![T::zero(); z.len()];
    add_log_likelihood_grad(z, &y.values, spec, T::one(), &mut out);
    Ok(out)
}

/// Writes `step,mask_index,value` rows, `mask_index` being the flat state
/// index of the observed coordinate.
pub fn write_observations_csv<T: Real>(
    path: &Path,
    spec: &ObservationSpec<T>,
    obs: &[ObservationVector<T>],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "step,mask_index,value")?;
    for o in obs {
        for (k, v) in spec.mask.iter().zip(&o.values) {
            writeln!(w, "{},{},{:e}", o.step, k, v.to_f64_lossy())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_observations_csv`], grouped by step in
/// file order. Returns the flat indices of each group with the values.
pub fn read_observations_csv<T: Real>(path: &Path) -> Result<Vec<(Vec<usize>, ObservationVector<T>)>> {
    let reader = BufReader::new(File::open(path)?);
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out: Vec<(Vec<usize>, ObservationVector<T>)> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if n == 0 {
            if line.trim() != "step,mask_index,value" {
                return Err(perr(lineno, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(perr(lineno, format!("expected 3 columns, got {}", cols.len())));
        }
        let step: usize = cols[0].trim().parse().map_err(|e| perr(lineno, format!("step: {e}")))?;
        let k: usize = cols[1]
            .trim()
            .parse()
            .map_err(|e| perr(lineno, format!("mask_index: {e}")))?;
        let v: f64 = cols[2].trim().parse().map_err(|e| perr(lineno, format!("value: {e}")))?;
        match out.last_mut() {
            Some((mask, o)) if o.step == step => {
                mask.push(k);
                o.values.push(T::lit(v));
            }
            _ => out.push((
                vec![k],
                ObservationVector {
                    step,
                    values: vec![T::lit(v)],
                },
            )),
        }
    }
    Ok(out)
}
