//! Permeability and initial-condition generators.
//!
//! All random generators are keyed by an explicit 64-bit seed and produce
//! bitwise-identical output for identical inputs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;
use crate::state::ScalarField;

/// Bounds applied to every permeability output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamp<T> {
    pub min: T,
    pub max: T,
}

impl<T: Real> Default for Clamp<T> {
    fn default() -> Self {
        Self {
            min: T::lit(0.01),
            max: T::lit(4.0),
        }
    }
}

impl<T: Real> Clamp<T> {
    #[inline]
    pub fn apply(&self, v: T) -> T {
        v.max(self.min).min(self.max)
    }
}

/// Gaussian offset added on a random fraction of the cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRegion {
    pub fraction: f64,
    pub mean: f64,
    /// Variance of the offset (or its standard deviation when the region set
    /// is sampled with `noise_is_std`).
    pub spread: f64,
}

impl NoiseRegion {
    pub const fn new(fraction: f64, mean: f64, spread: f64) -> Self {
        Self {
            fraction,
            mean,
            spread,
        }
    }
}

/// Regions for the uncertain-permeability example (80% coverage in total).
pub const EXAMPLE1_REGIONS: [NoiseRegion; 3] = [
    NoiseRegion::new(0.56, 1.5, 0.75),
    NoiseRegion::new(0.16, 1.0, 0.5),
    NoiseRegion::new(0.08, 2.0, 1.0),
];

/// Regions for the fracture-network example. A fourth region is not defined
/// by the source setup and stays disabled unless configured.
pub const FRACTURE_REGIONS: [NoiseRegion; 3] = [
    NoiseRegion::new(0.07, 1.5, 0.75),
    NoiseRegion::new(0.02, 1.0, 0.5),
    NoiseRegion::new(0.01, 2.0, 1.0),
];

/// Frozen per-cell region labels and sampled offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRegionSet<T> {
    /// Region index per cell, `None` outside every region.
    pub labels: Vec<Option<u8>>,
    /// Offset per cell (zero outside every region).
    pub offsets: Vec<T>,
}

impl<T: Real> NoiseRegionSet<T> {
    /// No region anywhere.
    pub fn empty(grid: &Grid<T>) -> Self {
        Self {
            labels: vec![None; grid.n_cells()],
            offsets: vec![T::zero(); grid.n_cells()],
        }
    }

    /// Draws a random permutation of the cells and hands out consecutive
    /// `⌊fraction · n⌋` chunks to the regions in order, then samples one
    /// offset per assigned cell.
    pub fn sample(
        grid: &Grid<T>,
        regions: &[NoiseRegion],
        seed: u64,
        noise_is_std: bool,
    ) -> Result<Self> {
        let n = grid.n_cells();
        let total: f64 = regions.iter().map(|r| r.fraction).sum();
        if regions
            .iter()
            .any(|r| !(r.fraction > 0.0 && r.fraction <= 1.0) || r.spread < 0.0)
            || total > 1.0 + 1e-12
        {
            return Err(Error::InvalidParameter(format!(
                "noise regions must have fractions in (0, 1] summing to at most 1: {regions:?}"
            )));
        }
        if regions.len() > u8::MAX as usize {
            return Err(Error::InvalidParameter("too many noise regions".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut labels = vec![None; n];
        let mut offsets = vec![T::zero(); n];
        let mut next = 0;
        for (r_idx, region) in regions.iter().enumerate() {
            let count = ((region.fraction * n as f64).floor() as usize).min(n - next);
            let std = if noise_is_std {
                region.spread
            } else {
                region.spread.sqrt()
            };
            let dist = Normal::new(region.mean, std)
                .map_err(|e| Error::InvalidParameter(format!("noise region {r_idx}: {e}")))?;
            let mut cells = order[next..next + count].to_vec();
            // offsets drawn in cell order so they do not depend on the shuffle layout
            cells.sort_unstable();
            for c in cells {
                labels[c] = Some(r_idx as u8);
                offsets[c] = T::lit(dist.sample(&mut rng));
            }
            next += count;
        }
        Ok(Self { labels, offsets })
    }

    pub fn count(&self, region: u8) -> usize {
        self.labels.iter().filter(|l| **l == Some(region)).count()
    }
}

/// Centers drawn uniformly on `[0.05, 0.95]²`.
pub fn random_centers<T: Real>(n: usize, seed: u64) -> Vec<[T; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.05..0.95);
            let y: f64 = rng.random_range(0.05..0.95);
            [T::lit(x), T::lit(y)]
        })
        .collect()
}

/// `min(max(Σᵢ exp(-400 |x - xᵢ|²), min), max)` at every cell center.
pub fn base_permeability<T: Real>(
    grid: &Grid<T>,
    centers: &[[T; 2]],
    clamp: Clamp<T>,
) -> ScalarField<T> {
    let width = T::lit(400.0);
    ScalarField::from_fn(grid, |x| {
        let sum = centers
            .iter()
            .map(|c| {
                let dx = x[0] - c[0];
                let dy = x[1] - c[1];
                (-width * (dx * dx + dy * dy)).exp()
            })
            .fold(T::zero(), |a, b| a + b);
        clamp.apply(sum)
    })
}

/// Adds the frozen region offsets to `base` and clamps to `clamp`.
pub fn noisy_permeability<T: Real>(
    base: &ScalarField<T>,
    regions: &NoiseRegionSet<T>,
    clamp: Clamp<T>,
) -> Result<ScalarField<T>> {
    if base.len() != regions.offsets.len() {
        return Err(Error::DimensionMismatch {
            expected: base.len(),
            got: regions.offsets.len(),
        });
    }
    Ok(ScalarField {
        values: base
            .values
            .iter()
            .zip(&regions.offsets)
            .map(|(b, o)| clamp.apply(*b + *o))
            .collect(),
    })
}

/// A straight fracture between two points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<T> {
    pub a: [T; 2],
    pub b: [T; 2],
}

impl<T: Real> Segment<T> {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Self {
            a: [T::lit(a[0]), T::lit(a[1])],
            b: [T::lit(b[0]), T::lit(b[1])],
        }
    }

    /// Euclidean distance from `x` to the closed segment.
    pub fn distance(&self, x: [T; 2]) -> T {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let w = [x[0] - self.a[0], x[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 > T::zero() {
            ((w[0] * d[0] + w[1] * d[1]) / len2)
                .max(T::zero())
                .min(T::one())
        } else {
            T::zero()
        };
        let px = w[0] - t * d[0];
        let py = w[1] - t * d[1];
        (px * px + py * py).sqrt()
    }
}

/// Main diagonal channel with three branches.
pub fn default_fracture_network<T: Real>() -> Vec<Segment<T>> {
    vec![
        Segment::new([0.0, 0.15], [1.0, 0.85]),
        Segment::new([0.30, 0.36], [0.20, 0.80]),
        Segment::new([0.55, 0.535], [0.80, 0.15]),
        Segment::new([0.70, 0.64], [0.60, 0.95]),
    ]
}

/// Partial knowledge of the network: only the main channel.
pub fn partial_fracture_network<T: Real>() -> Vec<Segment<T>> {
    default_fracture_network().into_iter().take(1).collect()
}

/// `min(max(exp(-400 d²) + Σ η, min), max)` with `d` the distance to the
/// nearest segment.
pub fn fracture_permeability<T: Real>(
    grid: &Grid<T>,
    segments: &[Segment<T>],
    regions: &NoiseRegionSet<T>,
    clamp: Clamp<T>,
) -> Result<ScalarField<T>> {
    if segments.is_empty() {
        return Err(Error::InvalidParameter(
            "fracture permeability needs at least one segment".into(),
        ));
    }
    if regions.offsets.len() != grid.n_cells() {
        return Err(Error::DimensionMismatch {
            expected: grid.n_cells(),
            got: regions.offsets.len(),
        });
    }
    let width = T::lit(400.0);
    let mut c = 0;
    Ok(ScalarField::from_fn(grid, |x| {
        let d = segments
            .iter()
            .map(|s| s.distance(x))
            .fold(T::infinity(), T::min);
        let v = (-width * d * d).exp() + regions.offsets[c];
        c += 1;
        clamp.apply(v)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialMode {
    /// `|N(0, variance)|` per cell.
    HalfNormal,
    /// `N(0, variance)` per cell.
    Gaussian,
    Zero,
}

impl InitialMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "half_normal" => Some(Self::HalfNormal),
            "gaussian" => Some(Self::Gaussian),
            "zero" => Some(Self::Zero),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HalfNormal => "half_normal",
            Self::Gaussian => "gaussian",
            Self::Zero => "zero",
        }
    }
}

pub fn perturbed_initial_saturation<T: Real>(
    grid: &Grid<T>,
    mode: InitialMode,
    variance: f64,
    seed: u64,
) -> Result<ScalarField<T>> {
    if !(variance >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variance must be non-negative, got {variance}"
        )));
    }
    let std = variance.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        std * z
    };
    let values = match mode {
        InitialMode::Zero => vec![T::zero(); grid.n_cells()],
        InitialMode::Gaussian => (0..grid.n_cells()).map(|_| T::lit(draw())).collect(),
        InitialMode::HalfNormal => (0..grid.n_cells())
            .map(|_| T::lit(draw().abs()))
            .collect(),
    };
    Ok(ScalarField { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermeabilityKind {
    Bumps,
    BumpsNoisy,
    Fracture,
    FractureNoisy,
}

impl PermeabilityKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bumps" => Some(Self::Bumps),
            "bumps_noisy" => Some(Self::BumpsNoisy),
            "fracture" => Some(Self::Fracture),
            "fracture_noisy" => Some(Self::FractureNoisy),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bumps => "bumps",
            Self::BumpsNoisy => "bumps_noisy",
            Self::Fracture => "fracture",
            Self::FractureNoisy => "fracture_noisy",
        }
    }
}

/// Everything needed to regenerate a permeability field.
#[derive(Debug, Clone, PartialEq)]
pub struct PermeabilitySpec<T> {
    pub kind: PermeabilityKind,
    /// Explicit bump centers; drawn from `seed` when empty.
    pub centers: Vec<[T; 2]>,
    pub n_centers: usize,
    pub segments: Vec<Segment<T>>,
    pub regions: Vec<NoiseRegion>,
    pub noise_is_std: bool,
    pub clamp: Clamp<T>,
    /// Seed for the bump centers.
    pub seed: u64,
    /// Seed for the region assignment and offsets.
    pub noise_seed: u64,
}

impl<T: Real> PermeabilitySpec<T> {
    pub fn bumps(seed: u64) -> Self {
        Self {
            kind: PermeabilityKind::Bumps,
            centers: Vec::new(),
            n_centers: 40,
            segments: Vec::new(),
            regions: Vec::new(),
            noise_is_std: false,
            clamp: Clamp::default(),
            seed,
            noise_seed: seed,
        }
    }

    pub fn bumps_noisy(seed: u64, noise_seed: u64) -> Self {
        Self {
            kind: PermeabilityKind::BumpsNoisy,
            regions: EXAMPLE1_REGIONS.to_vec(),
            noise_seed,
            ..Self::bumps(seed)
        }
    }

    pub fn fracture(segments: Vec<Segment<T>>) -> Self {
        Self {
            kind: PermeabilityKind::Fracture,
            segments,
            ..Self::bumps(0)
        }
    }

    pub fn fracture_noisy(segments: Vec<Segment<T>>, noise_seed: u64) -> Self {
        Self {
            kind: PermeabilityKind::FractureNoisy,
            regions: FRACTURE_REGIONS.to_vec(),
            noise_seed,
            ..Self::fracture(segments)
        }
    }

    pub fn resolved_centers(&self) -> Vec<[T; 2]> {
        if self.centers.is_empty() {
            random_centers(self.n_centers, self.seed)
        } else {
            self.centers.clone()
        }
    }

    pub fn build(&self, grid: &Grid<T>) -> Result<ScalarField<T>> {
        let regions = match self.kind {
            PermeabilityKind::BumpsNoisy | PermeabilityKind::FractureNoisy => {
                NoiseRegionSet::sample(grid, &self.regions, self.noise_seed, self.noise_is_std)?
            }
            _ => NoiseRegionSet::empty(grid),
        };
        match self.kind {
            PermeabilityKind::Bumps | PermeabilityKind::BumpsNoisy => {
                let base = base_permeability(grid, &self.resolved_centers(), self.clamp);
                noisy_permeability(&base, &regions, self.clamp)
            }
            PermeabilityKind::Fracture | PermeabilityKind::FractureNoisy => {
                fracture_permeability(grid, &self.segments, &regions, self.clamp)
            }
        }
    }
}
