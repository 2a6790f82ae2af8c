//! Flat `key=value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fields::{InitialMode, NoiseRegion, PermeabilityKind};
use crate::observation::Nonlinearity;
use crate::rng;
use crate::score_diffusion::IntegrationScheme;
use crate::state::Variable;
use crate::twophase::CflPolicy;
use crate::ensf_filter::Damping;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Ensf,
    Letkf,
    None,
}

impl FilterKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ensf" => Some(Self::Ensf),
            "letkf" => Some(Self::Letkf),
            "none" => Some(Self::None),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ensf => "ensf",
            Self::Letkf => "letkf",
            Self::None => "none",
        }
    }
}

/// Permeability used by the model forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelPermeability {
    /// Same generator as the reference (identical field).
    Reference,
    /// Noise-free Gaussian bumps with the reference centers.
    Bumps,
    /// Only the main fracture channel, no noise.
    FracturePartial,
    /// Full fracture network, no noise.
    Fracture,
}

impl ModelPermeability {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reference" => Some(Self::Reference),
            "bumps" => Some(Self::Bumps),
            "fracture_partial" => Some(Self::FracturePartial),
            "fracture" => Some(Self::Fracture),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Reference => "reference",
            Self::Bumps => "bumps",
            Self::FracturePartial => "fracture_partial",
            Self::Fracture => "fracture",
        }
    }
}

/// Named experiment setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Ex1SaturationOnly,
    ExMultivar,
    Ex3Fracture,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Self::Ex1SaturationOnly, Self::ExMultivar, Self::Ex3Fracture];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ex1-saturation-only" => Some(Self::Ex1SaturationOnly),
            "ex-multivar" => Some(Self::ExMultivar),
            "ex3-fracture" => Some(Self::Ex3Fracture),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ex1SaturationOnly => "ex1-saturation-only",
            Self::ExMultivar => "ex-multivar",
            Self::Ex3Fracture => "ex3-fracture",
        }
    }

    /// Observation fractions swept by this setup.
    pub fn sweep_fractions(self) -> Vec<f64> {
        match self {
            Self::Ex1SaturationOnly => vec![0.0, 0.25, 0.5, 0.75, 1.0],
            Self::ExMultivar => vec![0.1, 0.3, 0.5],
            Self::Ex3Fracture => vec![0.1, 0.4, 0.7],
        }
    }
}

/// Every knob of an experiment. Keys in the config file are the dotted
/// names listed by [`ExperimentConfig::entries`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub steps: usize,

    pub mu: f64,
    pub linear_tol: f64,
    pub max_iterations: usize,
    pub clamp_saturation: bool,
    pub cfl: CflPolicy,

    pub reference_permeability: PermeabilityKind,
    pub model_permeability: ModelPermeability,
    pub n_centers: usize,
    pub noise_is_std: bool,
    /// Optional extra region for the fracture setup.
    pub eta4: Option<NoiseRegion>,

    pub init_mode: InitialMode,
    pub init_variance: f64,

    pub obs_variables: Vec<Variable>,
    pub obs_fraction: f64,
    pub obs_nonlinearity: Nonlinearity,
    pub obs_noise_variance: f64,
    pub obs_remask_each_step: bool,

    pub filter: FilterKind,
    pub ensf_members: usize,
    pub ensf_steps: usize,
    pub ensf_batch: usize,
    pub ensf_eps: f64,
    pub ensf_scheme: IntegrationScheme,
    pub ensf_damping: Damping,
    pub ensf_final_noise: bool,
    pub ensf_stride: usize,
    pub assimilate_up_directly: bool,

    pub letkf_members: usize,
    pub letkf_radius: f64,
    pub letkf_inflation: f64,
    pub letkf_weight_stride: usize,

    pub seed: u64,
    pub seed_reference: Option<u64>,
    pub seed_mask: Option<u64>,
    pub seed_noise: Option<u64>,
    pub seed_filter: Option<u64>,

    pub out_dir: PathBuf,
    pub snapshots: usize,
    pub vtk: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Ex1SaturationOnly)
    }
}

impl ExperimentConfig {
    /// Desk-scale setup for a preset.
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            preset: Some(p),
            nx: 32,
            ny: 32,
            dt: 0.001,
            steps: 100,
            mu: 0.2,
            linear_tol: 1e-12,
            max_iterations: 20_000,
            clamp_saturation: true,
            cfl: CflPolicy::Warn,
            reference_permeability: PermeabilityKind::BumpsNoisy,
            model_permeability: ModelPermeability::Bumps,
            n_centers: 40,
            noise_is_std: false,
            eta4: None,
            init_mode: InitialMode::HalfNormal,
            init_variance: 1.0 / 300.0,
            obs_variables: vec![Variable::Saturation],
            obs_fraction: 0.5,
            obs_nonlinearity: Nonlinearity::Arctan,
            obs_noise_variance: 0.07,
            obs_remask_each_step: false,
            filter: FilterKind::Ensf,
            ensf_members: 100,
            ensf_steps: 200,
            ensf_batch: 0,
            ensf_eps: 1e-3,
            ensf_scheme: IntegrationScheme::EulerMaruyama,
            ensf_damping: Damping::OneMinusTau,
            ensf_final_noise: false,
            ensf_stride: 1,
            assimilate_up_directly: false,
            letkf_members: 100,
            letkf_radius: 8.0,
            letkf_inflation: 1.05,
            letkf_weight_stride: 1,
            seed: 1,
            seed_reference: None,
            seed_mask: None,
            seed_noise: None,
            seed_filter: None,
            out_dir: PathBuf::from("out"),
            snapshots: 10,
            vtk: false,
        };
        match p {
            Preset::Ex1SaturationOnly => base,
            Preset::ExMultivar => Self {
                obs_variables: Variable::ALL.to_vec(),
                ..base
            },
            Preset::Ex3Fracture => Self {
                dt: 0.0025,
                reference_permeability: PermeabilityKind::FractureNoisy,
                model_permeability: ModelPermeability::FracturePartial,
                obs_variables: Variable::ALL.to_vec(),
                obs_fraction: 0.4,
                ..base
            },
        }
    }

    /// Switches to the full-size setup: 64×64, `M = 300`, `L = 1000` and
    /// the full time horizon of the preset.
    pub fn full_scale(&mut self) {
        self.nx = 64;
        self.ny = 64;
        self.ensf_members = 300;
        self.ensf_steps = 1000;
        self.letkf_members = 300;
        // t = 0.4 at dt = 0.001 and t = 1 at dt = 0.0025
        self.steps = 400;
    }

    pub fn final_time(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn reference_seed(&self) -> u64 {
        self.seed_reference.unwrap_or_else(|| rng::mix(&[self.seed, 1]))
    }

    pub fn mask_seed(&self) -> u64 {
        self.seed_mask.unwrap_or_else(|| rng::mix(&[self.seed, 2]))
    }

    pub fn noise_seed(&self) -> u64 {
        self.seed_noise.unwrap_or_else(|| rng::mix(&[self.seed, 3]))
    }

    pub fn filter_seed(&self) -> u64 {
        self.seed_filter.unwrap_or_else(|| rng::mix(&[self.seed, 4]))
    }

    /// Pins every derived seed to its current value.
    pub fn resolve_seeds(&mut self) {
        self.seed_reference = Some(self.reference_seed());
        self.seed_mask = Some(self.mask_seed());
        self.seed_noise = Some(self.noise_seed());
        self.seed_filter = Some(self.filter_seed());
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nx < 2 || self.ny < 2 {
            return bad(format!("grid must be at least 2x2, got {}x{}", self.nx, self.ny));
        }
        if !(self.dt > 0.0) || self.steps == 0 {
            return bad("time.dt must be positive and time.steps at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.obs_fraction) {
            return bad(format!("obs.fraction must be in [0, 1], got {}", self.obs_fraction));
        }
        if !(self.obs_noise_variance > 0.0) {
            return bad("obs.noise_variance must be positive".into());
        }
        if self.ensf_members < 2 || self.letkf_members < 2 {
            return bad("ensemble sizes must be at least 2".into());
        }
        if self.ensf_batch > self.ensf_members {
            return bad("ensf.J must not exceed ensf.M".into());
        }
        if self.letkf_inflation < 1.0 || self.letkf_radius < 0.0 || self.letkf_weight_stride == 0 {
            return bad("letkf needs inflation >= 1, radius >= 0 and weight_stride >= 1".into());
        }
        if self.ensf_stride == 0 {
            return bad("ensf.stride must be at least 1".into());
        }
        Ok(())
    }

    /// `(key, value)` pairs in a fixed order; the echo format.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |s: Option<u64>| s.map(|v| v.to_string()).unwrap_or_else(|| "auto".into());
        let vars = self
            .obs_variables
            .iter()
            .map(|v| v.name())
            .collect::<Vec<_>>()
            .join(",");
        let eta4 = match self.eta4 {
            None => "none".into(),
            Some(r) => format!("{:?},{:?},{:?}", r.fraction, r.mean, r.spread),
        };
        vec![
            ("preset", self.preset.map(|p| p.name()).unwrap_or("custom").into()),
            ("grid.nx", self.nx.to_string()),
            ("grid.ny", self.ny.to_string()),
            ("time.dt", format!("{:?}", self.dt)),
            ("time.steps", self.steps.to_string()),
            ("solver.mu", format!("{:?}", self.mu)),
            ("solver.linear_tol", format!("{:?}", self.linear_tol)),
            ("solver.max_iterations", self.max_iterations.to_string()),
            ("solver.clamp_saturation", self.clamp_saturation.to_string()),
            ("solver.cfl", cfl_name(self.cfl).into()),
            ("reference.permeability", self.reference_permeability.name().into()),
            ("model.permeability", self.model_permeability.name().into()),
            ("perm.n_centers", self.n_centers.to_string()),
            ("perm.noise_is_std", self.noise_is_std.to_string()),
            ("perm.eta4", eta4),
            ("init.mode", self.init_mode.name().into()),
            ("init.variance", format!("{:?}", self.init_variance)),
            ("obs.variables", vars),
            ("obs.fraction", format!("{:?}", self.obs_fraction)),
            ("obs.nonlinearity", self.obs_nonlinearity.name().into()),
            ("obs.noise_variance", format!("{:?}", self.obs_noise_variance)),
            ("obs.remask_each_step", self.obs_remask_each_step.to_string()),
            ("filter", self.filter.name().into()),
            ("ensf.M", self.ensf_members.to_string()),
            ("ensf.L", self.ensf_steps.to_string()),
            ("ensf.J", self.ensf_batch.to_string()),
            ("ensf.eps", format!("{:?}", self.ensf_eps)),
            ("ensf.scheme", self.ensf_scheme.name().into()),
            ("ensf.damping", self.ensf_damping.name().into()),
            ("ensf.final_noise", self.ensf_final_noise.to_string()),
            ("ensf.stride", self.ensf_stride.to_string()),
            ("ensf.assimilate_up_directly", self.assimilate_up_directly.to_string()),
            ("letkf.M", self.letkf_members.to_string()),
            ("letkf.radius", format!("{:?}", self.letkf_radius)),
            ("letkf.inflation", format!("{:?}", self.letkf_inflation)),
            ("letkf.weight_stride", self.letkf_weight_stride.to_string()),
            ("seed", self.seed.to_string()),
            ("seed.reference", opt(self.seed_reference)),
            ("seed.mask", opt(self.seed_mask)),
            ("seed.noise", opt(self.seed_noise)),
            ("seed.filter", opt(self.seed_filter)),
            ("output.dir", self.out_dir.display().to_string()),
            ("output.snapshots", self.snapshots.to_string()),
            ("output.vtk", self.vtk.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let err = |what: &str| Error::Config(format!("{key}: cannot parse {v:?} as {what}"));
        let f = || v.parse::<f64>().map_err(|_| err("a number"));
        let u = || v.parse::<usize>().map_err(|_| err("a non-negative integer"));
        let b = || v.parse::<bool>().map_err(|_| err("true/false"));
        let seed = || -> Result<Option<u64>> {
            if v == "auto" {
                Ok(None)
            } else {
                v.parse::<u64>().map(Some).map_err(|_| err("a seed or `auto`"))
            }
        };
        match key {
            "preset" => {
                if v == "custom" {
                    self.preset = None;
                } else {
                    let p = Preset::parse(v).ok_or_else(|| err("a preset name"))?;
                    let keep_out = self.out_dir.clone();
                    *self = Self::preset(p);
                    self.out_dir = keep_out;
                }
            }
            "grid.nx" => self.nx = u()?,
            "grid.ny" => self.ny = u()?,
            "time.dt" => self.dt = f()?,
            "time.steps" => self.steps = u()?,
            "time.T" => {
                let t = f()?;
                let n = t / self.dt;
                if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n.round() < 1.0 {
                    return Err(Error::Config(format!(
                        "time.T = {t} is not a positive multiple of time.dt = {}",
                        self.dt
                    )));
                }
                self.steps = n.round() as usize;
            }
            "solver.mu" => self.mu = f()?,
            "solver.linear_tol" => self.linear_tol = f()?,
            "solver.max_iterations" => self.max_iterations = u()?,
            "solver.clamp_saturation" => self.clamp_saturation = b()?,
            "solver.cfl" => self.cfl = parse_cfl(v).ok_or_else(|| err("off/warn/error"))?,
            "reference.permeability" => {
                self.reference_permeability =
                    PermeabilityKind::parse(v).ok_or_else(|| err("a permeability kind"))?
            }
            "model.permeability" => {
                self.model_permeability =
                    ModelPermeability::parse(v).ok_or_else(|| err("a model permeability"))?
            }
            "perm.n_centers" => self.n_centers = u()?,
            "perm.noise_is_std" => self.noise_is_std = b()?,
            "perm.eta4" => {
                self.eta4 = if v == "none" {
                    None
                } else {
                    let p: Vec<f64> = v
                        .split(',')
                        .map(|x| x.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err("fraction,mean,variance"))?;
                    if p.len() != 3 {
                        return Err(err("fraction,mean,variance"));
                    }
                    Some(NoiseRegion::new(p[0], p[1], p[2]))
                }
            }
            "init.mode" => {
                self.init_mode = InitialMode::parse(v).ok_or_else(|| err("an initial mode"))?
            }
            "init.variance" => self.init_variance = f()?,
            "obs.variables" => {
                self.obs_variables = if v.is_empty() || v == "none" {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|s| Variable::parse(s).ok_or_else(|| err("a variable list")))
                        .collect::<Result<_>>()?
                }
            }
            "obs.fraction" => self.obs_fraction = f()?,
            "obs.nonlinearity" => {
                self.obs_nonlinearity =
                    Nonlinearity::parse(v).ok_or_else(|| err("arctan/identity"))?
            }
            "obs.noise_variance" => self.obs_noise_variance = f()?,
            "obs.remask_each_step" => self.obs_remask_each_step = b()?,
            "filter" => self.filter = FilterKind::parse(v).ok_or_else(|| err("ensf/letkf/none"))?,
            "ensf.M" => self.ensf_members = u()?,
            "ensf.L" => self.ensf_steps = u()?,
            "ensf.J" => self.ensf_batch = u()?,
            "ensf.eps" => self.ensf_eps = f()?,
            "ensf.scheme" => {
                self.ensf_scheme = IntegrationScheme::parse(v).ok_or_else(|| err("a scheme"))?
            }
            "ensf.damping" => {
                self.ensf_damping = Damping::parse(v).ok_or_else(|| err("a damping function"))?
            }
            "ensf.final_noise" => self.ensf_final_noise = b()?,
            "ensf.stride" => self.ensf_stride = u()?,
            "ensf.assimilate_up_directly" => self.assimilate_up_directly = b()?,
            "letkf.M" => self.letkf_members = u()?,
            "letkf.radius" => self.letkf_radius = f()?,
            "letkf.inflation" => self.letkf_inflation = f()?,
            "letkf.weight_stride" => self.letkf_weight_stride = u()?,
            "seed" => self.seed = v.parse().map_err(|_| err("a seed"))?,
            "seed.reference" => self.seed_reference = seed()?,
            "seed.mask" => self.seed_mask = seed()?,
            "seed.noise" => self.seed_noise = seed()?,
            "seed.filter" => self.seed_filter = seed()?,
            "output.dir" => self.out_dir = PathBuf::from(v),
            "output.snapshots" => self.snapshots = u()?,
            "output.vtk" => self.vtk = b()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    /// A `preset` line resets every key to that preset, so it should come
    /// first.
    pub fn parse_str(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(k.trim(), v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, path)
    }

    /// The echo text: one `key=value` per line, reloadable with
    /// [`ExperimentConfig::parse_str`].
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

fn cfl_name(c: CflPolicy) -> &'static str {
    match c {
        CflPolicy::Off => "off",
        CflPolicy::Warn => "warn",
        CflPolicy::Error => "error",
    }
}

fn parse_cfl(s: &str) -> Option<CflPolicy> {
    match s {
        "off" => Some(CflPolicy::Off),
        "warn" => Some(CflPolicy::Warn),
        "error" => Some(CflPolicy::Error),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        for p in Preset::ALL {
            let mut cfg = ExperimentConfig::preset(p);
            cfg.seed = 42;
            cfg.eta4 = Some(NoiseRegion::new(0.01, 0.5, 0.25));
            cfg.resolve_seeds();
            let back = ExperimentConfig::parse_str(&cfg.echo(), Path::new("echo")).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "grid.nx=16\n# comment\nbogus.key=1\n";
        match ExperimentConfig::parse_str(text, Path::new("c.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::parse_str("grid.nx", Path::new("c")).is_err());
        assert!(ExperimentConfig::parse_str("obs.fraction=abc", Path::new("c")).is_err());
    }

    #[test]
    fn horizon_must_be_a_whole_number_of_steps() {
        let cfg = ExperimentConfig::parse_str("time.dt=0.001\ntime.T=0.4\n", Path::new("c")).unwrap();
        assert_eq!(cfg.steps, 400);
        assert!(ExperimentConfig::parse_str("time.dt=0.003\ntime.T=0.4\n", Path::new("c")).is_err());
    }

    #[test]
    fn full_scale_and_seeds() {
        let mut cfg = ExperimentConfig::default();
        cfg.full_scale();
        assert_eq!((cfg.nx, cfg.ensf_members, cfg.ensf_steps, cfg.steps), (64, 300, 1000, 400));
        assert!((cfg.final_time() - 0.4).abs() < 1e-12);
        let a = cfg.mask_seed();
        cfg.seed += 1;
        assert_ne!(a, cfg.mask_seed());
        cfg.seed_mask = Some(7);
        assert_eq!(cfg.mask_seed(), 7);
    }
}
