//! Reference synthesis and filter runs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, FilterKind, ModelPermeability};
use super::io::{self, RmseRow};
use crate::ensf_filter::{
    run_cycle, Analysis, EnsfAnalysis, Ensemble, FilterConfig, FilterStep, ForwardModel, PdeModel,
    RunOptions, StepData,
};
use crate::error::{Error, Result};
use crate::fields::{
    default_fracture_network, partial_fracture_network, perturbed_initial_saturation,
    PermeabilityKind, PermeabilitySpec, FRACTURE_REGIONS,
};
use crate::grid::Grid;
use crate::letkf_baseline::{LetkfConfig, LocalLayout, Letkf};
use crate::observation::{
    make_mask, observe, write_observations_csv, ObservationSpec, ObservationVector,
};
use crate::rng;
use crate::state::{ScalarField, StateLayout, StateVector, Variable};
use crate::twophase::{BoundaryData, SolverParams, TwoPhaseSolver};

/// Grid, solver and both permeability fields of an experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Grid<f64>,
    pub params: SolverParams<f64>,
    pub k_reference: ScalarField<f64>,
    pub k_model: ScalarField<f64>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = Grid::new(cfg.nx, cfg.ny)?;
        let params = SolverParams {
            mu: cfg.mu,
            dt: cfg.dt,
            linear_tol: cfg.linear_tol,
            max_iterations: cfg.max_iterations,
            clamp_saturation: cfg.clamp_saturation,
            cfl: cfg.cfl,
        };
        params.validate()?;
        let seed = cfg.reference_seed();
        let noise_seed = rng::mix(&[seed, 1]);
        let mut reference = match cfg.reference_permeability {
            PermeabilityKind::Bumps => PermeabilitySpec::bumps(seed),
            PermeabilityKind::BumpsNoisy => PermeabilitySpec::bumps_noisy(seed, noise_seed),
            PermeabilityKind::Fracture => PermeabilitySpec::fracture(default_fracture_network()),
            PermeabilityKind::FractureNoisy => {
                let mut s = PermeabilitySpec::fracture_noisy(default_fracture_network(), noise_seed);
                s.regions = FRACTURE_REGIONS.to_vec();
                s.regions.extend(cfg.eta4);
                s
            }
        };
        reference.n_centers = cfg.n_centers;
        reference.noise_is_std = cfg.noise_is_std;
        reference.seed = seed;
        let k_reference = reference.build(&grid)?;
        let k_model = match cfg.model_permeability {
            ModelPermeability::Reference => k_reference.clone(),
            ModelPermeability::Bumps => PermeabilitySpec {
                n_centers: cfg.n_centers,
                ..PermeabilitySpec::bumps(seed)
            }
            .build(&grid)?,
            ModelPermeability::FracturePartial => {
                PermeabilitySpec::fracture(partial_fracture_network()).build(&grid)?
            }
            ModelPermeability::Fracture => {
                PermeabilitySpec::fracture(default_fracture_network()).build(&grid)?
            }
        };
        Ok(Self {
            grid,
            params,
            k_reference,
            k_model,
        })
    }

    pub fn solver(&self) -> Result<TwoPhaseSolver<f64>> {
        TwoPhaseSolver::new(self.grid.clone(), self.params.clone(), &BoundaryData::reference())
    }

    pub fn model(&self, cfg: &ExperimentConfig) -> Result<PdeModel<f64>> {
        let mut m = PdeModel::new(self.solver()?, self.k_model.clone())?;
        m.assimilate_up_directly = cfg.assimilate_up_directly;
        Ok(m)
    }
}

/// True states, the permeability they were run with, and the data.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    pub setup: Setup,
    /// States at steps `0..=N`.
    pub states: Vec<StateVector<f64>>,
    /// One spec, or one per step when masks are redrawn.
    pub specs: Vec<ObservationSpec<f64>>,
    /// Observations at steps `1..=N`.
    pub observations: Vec<ObservationVector<f64>>,
}

impl ReferenceTrajectory {
    pub fn spec_for(&self, step: usize) -> &ObservationSpec<f64> {
        if self.specs.len() == 1 {
            &self.specs[0]
        } else {
            &self.specs[step - 1]
        }
    }

    pub fn flat_states(&self) -> Vec<Vec<f64>> {
        self.states[1..].iter().map(|s| s.flatten()).collect()
    }
}

/// Runs the forward solver with the reference permeability from `s = 0`.
pub fn reference_states(cfg: &ExperimentConfig, setup: &Setup) -> Result<Vec<StateVector<f64>>> {
    let solver = setup.solver()?;
    let mut states = Vec::with_capacity(cfg.steps + 1);
    states.push(StateVector::zeros(&setup.grid));
    for _ in 0..cfg.steps {
        let next = solver.step(states.last().expect("non-empty"), &setup.k_reference)?;
        states.push(next);
    }
    Ok(states)
}

/// Masks and noisy observations of `states[1..]`.
pub fn make_observations(
    cfg: &ExperimentConfig,
    grid: &Grid<f64>,
    states: &[StateVector<f64>],
) -> Result<(Vec<ObservationSpec<f64>>, Vec<ObservationVector<f64>>)> {
    let vars: &[Variable] = if cfg.obs_fraction > 0.0 { &cfg.obs_variables } else { &[] };
    let base = make_mask(grid, vars, cfg.obs_fraction, cfg.mask_seed())?
        .with_nonlinearity(cfg.obs_nonlinearity)
        .with_noise_variance(cfg.obs_noise_variance);
    let specs = if cfg.obs_remask_each_step {
        (1..states.len())
            .map(|n| base.remasked(grid, n))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![base]
    };
    let spec_for = |n: usize| if specs.len() == 1 { &specs[0] } else { &specs[n - 1] };
    let observations = (1..states.len())
        .map(|n| observe(&states[n], spec_for(n), n, Some(cfg.noise_seed())))
        .collect::<Result<Vec<_>>>()?;
    Ok((specs, observations))
}

pub fn generate_reference(cfg: &ExperimentConfig) -> Result<ReferenceTrajectory> {
    let setup = Setup::new(cfg)?;
    let states = reference_states(cfg, &setup)?;
    let (specs, observations) = make_observations(cfg, &setup.grid, &states)?;
    Ok(ReferenceTrajectory {
        setup,
        states,
        specs,
        observations,
    })
}

/// `M` members with perturbed initial saturation and zero `(u, p)`.
pub fn initial_ensemble(cfg: &ExperimentConfig, grid: &Grid<f64>, m: usize) -> Result<Ensemble<f64>> {
    let seed = cfg.filter_seed();
    let n_c = grid.n_cells();
    let mut members = vec![0.0; m * grid.state_dim()];
    for (i, row) in members.chunks_exact_mut(grid.state_dim()).enumerate() {
        let s = perturbed_initial_saturation(
            grid,
            cfg.init_mode,
            cfg.init_variance,
            rng::mix(&[seed, 0x1417, i as u64]),
        )?;
        row[..n_c].copy_from_slice(&s.values);
    }
    Ensemble::new(grid.state_dim(), members)
}

/// First step, `count` evenly spaced steps, and the last step.
pub fn snapshot_steps(n: usize, count: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    if n == 0 {
        return out;
    }
    out.insert(1);
    out.insert(n);
    for k in 1..=count {
        let s = ((k * n) as f64 / count as f64).round() as usize;
        out.insert(s.clamp(1, n));
    }
    out
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<RmseRow>,
    /// Estimates at snapshot steps.
    pub snapshots: Vec<(usize, StateVector<f64>)>,
}

impl RunOutput {
    /// Time-averaged `(s, p, u)` RMSE after `burn_in` steps.
    pub fn time_average(&self, burn_in: usize) -> Option<(f64, f64, f64)> {
        io::time_average(&self.rows, burn_in)
    }
}

/// Runs the configured filter against an existing reference using `model`.
pub fn run_with_model<F: ForwardModel<f64> + ?Sized>(
    cfg: &ExperimentConfig,
    reference: &ReferenceTrajectory,
    model: &F,
) -> Result<RunOutput> {
    let grid = &reference.setup.grid;
    let layout = StateLayout::of(grid);
    let m = match cfg.filter {
        FilterKind::Letkf => cfg.letkf_members,
        _ => cfg.ensf_members,
    };
    let init = initial_ensemble(cfg, grid, m)?;
    let ensf = EnsfAnalysis {
        cfg: FilterConfig {
            members: cfg.ensf_members,
            steps: cfg.ensf_steps,
            batch: (cfg.ensf_batch > 0).then_some(cfg.ensf_batch),
            eps: cfg.ensf_eps,
            damping: cfg.ensf_damping,
            scheme: cfg.ensf_scheme,
            final_noise: cfg.ensf_final_noise,
            stride: cfg.ensf_stride,
            seed: cfg.filter_seed(),
        },
    };
    let letkf;
    let analysis: &dyn Analysis<f64> = match cfg.filter {
        FilterKind::Letkf => {
            letkf = Letkf {
                cfg: LetkfConfig {
                    radius: Some(cfg.letkf_radius),
                    inflation: cfg.letkf_inflation,
                    ridge: 1e-10,
                },
                layout: LocalLayout::for_grid(grid, cfg.letkf_weight_stride)?,
            };
            &letkf
        }
        _ => {
            ensf.cfg.validate()?;
            &ensf
        }
    };
    let data: Vec<Option<StepData<'_, f64>>> = (1..=cfg.steps)
        .map(|n| {
            (cfg.filter != FilterKind::None).then(|| StepData {
                spec: reference.spec_for(n),
                y: &reference.observations[n - 1],
            })
        })
        .collect();
    let truth = reference.flat_states();
    let opts = RunOptions {
        stride: cfg.ensf_stride,
        reference: Some(&truth),
        blocks: vec![
            layout.block(Variable::Saturation),
            layout.block(Variable::Pressure),
            layout.block(Variable::Velocity),
        ],
    };
    let snap_at = snapshot_steps(cfg.steps, cfg.snapshots);
    let mut snapshots = Vec::new();
    let steps: Vec<FilterStep<f64>> = run_cycle(model, analysis, init, &data, &opts, |rec, _| {
        log::info!(
            "step {} rmse_s {:.4e} ({:.2}s)",
            rec.step,
            rec.rmse[0],
            rec.seconds
        );
        if snap_at.contains(&rec.step) {
            if let Ok(st) = StateVector::from_flat(grid, &rec.estimate) {
                snapshots.push((rec.step, st));
            }
        }
    })?;
    let rows = steps
        .iter()
        .map(|r| RmseRow {
            step: r.step,
            time: r.step as f64 * cfg.dt,
            s: r.rmse[0],
            p: r.rmse[1],
            u: r.rmse[2],
        })
        .collect();
    Ok(RunOutput { rows, snapshots })
}

/// Writes the config echo, permeabilities and observations of a reference.
pub fn write_reference(dir: &Path, cfg: &ExperimentConfig, reference: &ReferenceTrajectory) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_echo(dir, cfg)?;
    let g = &reference.setup.grid;
    io::write_permeability(&dir.join("permeability_reference.csv"), g, &reference.setup.k_reference)?;
    io::write_permeability(&dir.join("permeability_model.csv"), g, &reference.setup.k_model)?;
    if reference.specs.len() == 1 {
        write_observations_csv(&dir.join("observations.csv"), &reference.specs[0], &reference.observations)?;
    } else {
        let path = dir.join("observations.csv");
        let mut text = String::from("step,mask_index,value\n");
        for (spec, obs) in reference.specs.iter().zip(&reference.observations) {
            for (k, v) in spec.mask.iter().zip(&obs.values) {
                text.push_str(&format!("{},{},{:e}\n", obs.step, k, v));
            }
        }
        fs::write(path, text)?;
    }
    let snap = dir.join("reference");
    fs::create_dir_all(&snap)?;
    for n in snapshot_steps(cfg.steps, cfg.snapshots) {
        let st = &reference.states[n];
        io::write_cell_snapshot(&snap.join(format!("step_{n:04}.csv")), g, st)?;
        io::write_faces(&snap.join(format!("step_{n:04}_faces.csv")), g, st)?;
    }
    Ok(())
}

fn write_echo(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let mut resolved = cfg.clone();
    resolved.resolve_seeds();
    let text = format!(
        "# porous-ensf {}\n{}",
        env!("CARGO_PKG_VERSION"),
        resolved.echo()
    );
    fs::write(dir.join("config.txt"), text)?;
    Ok(())
}

/// Writes `rmse.csv` and the snapshot files of a run.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, reference: &ReferenceTrajectory, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_rmse_csv(&dir.join("rmse.csv"), &out.rows)?;
    let g = &reference.setup.grid;
    for (n, st) in &out.snapshots {
        let d = dir.join("snapshots").join(format!("step_{n:04}"));
        fs::create_dir_all(&d)?;
        io::write_cell_snapshot(&d.join("estimate.csv"), g, st)?;
        io::write_faces(&d.join("faces.csv"), g, st)?;
        io::write_cell_snapshot(&d.join("reference.csv"), g, &reference.states[*n])?;
        io::write_faces(&d.join("reference_faces.csv"), g, &reference.states[*n])?;
        if cfg.vtk {
            io::write_vtk(&d.join("estimate.vtk"), g, st, &format!("estimate step {n}"))?;
            io::write_vtk(&d.join("reference.vtk"), g, &reference.states[*n], &format!("reference step {n}"))?;
        }
    }
    Ok(())
}

fn with_failure_marker<R>(dir: &Path, f: impl FnOnce() -> Result<R>) -> Result<R> {
    let marker = dir.join("FAILED");
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let res = f();
    if let Err(e) = &res {
        let _ = fs::create_dir_all(dir);
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    res
}

/// Generates the reference and writes it to `cfg.out_dir`.
pub fn generate_reference_to_dir(cfg: &ExperimentConfig) -> Result<ReferenceTrajectory> {
    let dir = cfg.out_dir.clone();
    with_failure_marker(&dir, || {
        let r = generate_reference(cfg)?;
        write_reference(&dir, cfg, &r)?;
        Ok(r)
    })
}

/// Reference plus one filter run, all outputs under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let dir = cfg.out_dir.clone();
    with_failure_marker(&dir, || {
        let reference = generate_reference(cfg)?;
        write_reference(&dir, cfg, &reference)?;
        let model = reference.setup.model(cfg)?;
        let out = run_with_model(cfg, &reference, &model)?;
        write_run(&dir, cfg, &reference, &out)?;
        Ok(out)
    })
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub filter: FilterKind,
    pub rmse_s: f64,
    pub rmse_p: f64,
    pub rmse_u: f64,
    pub dir: PathBuf,
}

/// Runs every `(fraction, filter)` pair against one shared reference.
///
/// Run `i` uses mask seed `mix(mask_seed, i)`; time averages skip the first
/// `burn_in` steps. Writes `sweep.csv` into `cfg.out_dir`.
pub fn sweep(
    cfg: &ExperimentConfig,
    fractions: &[f64],
    filters: &[FilterKind],
    burn_in: usize,
) -> Result<Vec<SweepRow>> {
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Config(format!("sweep fraction {f} outside [0, 1]")));
    }
    let root = cfg.out_dir.clone();
    fs::create_dir_all(&root)?;
    let setup = Setup::new(cfg)?;
    let states = reference_states(cfg, &setup)?;
    let mask_seed = cfg.mask_seed();
    let jobs: Vec<(usize, f64, FilterKind)> = fractions
        .iter()
        .enumerate()
        .flat_map(|(i, f)| filters.iter().map(move |k| (i, *f, *k)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, fraction, filter)| -> Result<SweepRow> {
            let mut run_cfg = cfg.clone();
            run_cfg.obs_fraction = fraction;
            run_cfg.filter = filter;
            run_cfg.seed_mask = Some(rng::mix(&[mask_seed, i as u64]));
            run_cfg.out_dir = root.join(format!("{}_f{:.2}", filter.name(), fraction));
            let dir = run_cfg.out_dir.clone();
            with_failure_marker(&dir, || {
                let (specs, observations) = make_observations(&run_cfg, &setup.grid, &states)?;
                let reference = ReferenceTrajectory {
                    setup: setup.clone(),
                    states: states.clone(),
                    specs,
                    observations,
                };
                write_reference(&dir, &run_cfg, &reference)?;
                let model = setup.model(&run_cfg)?;
                let out = run_with_model(&run_cfg, &reference, &model)?;
                write_run(&dir, &run_cfg, &reference, &out)?;
                let (s, p, u) = out.time_average(burn_in).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
                Ok(SweepRow {
                    fraction,
                    filter,
                    rmse_s: s,
                    rmse_p: p,
                    rmse_u: u,
                    dir: dir.clone(),
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = String::from("fraction,filter,rmse_s,rmse_p,rmse_u\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            io::fmt_e10(r.fraction),
            r.filter.name(),
            io::fmt_e10(r.rmse_s),
            io::fmt_e10(r.rmse_p),
            io::fmt_e10(r.rmse_u)
        ));
    }
    fs::write(root.join("sweep.csv"), text)?;
    Ok(rows)
}

/// Time-averaged `(s, p, u)` RMSE of an `rmse.csv` after `burn_in` steps.
pub fn metrics(rmse_csv: &Path, burn_in: usize) -> Result<(f64, f64, f64)> {
    let rows = io::read_rmse_csv(rmse_csv)?;
    io::time_average(&rows, burn_in).ok_or_else(|| {
        Error::Config(format!(
            "{} has no rows after a burn-in of {burn_in} steps",
            rmse_csv.display()
        ))
    })
}
