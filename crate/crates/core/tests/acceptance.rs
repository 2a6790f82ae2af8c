//! Acceptance criteria A1–A11. One line per criterion; exits non-zero if any
//! fails. Pass criterion ids (`A6`) as arguments to run a subset.

use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use porous_ensf::ensf_filter::{
    run_cycle, EnsfAnalysis, Ensemble, FilterConfig, ForwardModel, LinearModel, PdeModel,
    RunOptions, StepData,
};
use porous_ensf::fields::perturbed_initial_saturation;
use porous_ensf::harness::{
    experiment, generate_reference, run_experiment, run_with_model, ExperimentConfig, FilterKind,
    Preset, RunOutput,
};
use porous_ensf::letkf_baseline::{Letkf, LetkfConfig, LocalLayout};
use porous_ensf::observation::{
    log_likelihood, log_likelihood_grad, make_mask, observe_flat, Nonlinearity, ObservationSpec,
    ObservationVector,
};
use porous_ensf::score_diffusion::{
    reverse_sample, AnalyticGaussianScore, DiffusionSchedule, MonteCarloScore, Sampler, ScoreModel,
};
use porous_ensf::twophase::{fractional_flow, CflPolicy};
use porous_ensf::{
    rng, BoundaryData, FluxField, Grid, ScalarField, SolverParams, StateLayout, TwoPhaseSolver,
    Variable,
};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn out_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn a1_darcy_exactness() -> Outcome {
    let g = Grid::<f64>::new(32, 32).unwrap();
    let zero_s = ScalarField::zeros(&g); // λ(0) = 1
    let uniform = TwoPhaseSolver::new(g.clone(), SolverParams::default(), &BoundaryData::reference())
        .map_err(|e| e.to_string())?;
    let d = uniform
        .solve_darcy(&ScalarField::constant(&g, 1.0), &zero_s, None)
        .map_err(|e| e.to_string())?;
    let err_uniform = (0..g.n_faces())
        .map(|f| {
            let want = if f < g.n_x_faces() { 1.0 } else { 0.0 };
            (d.u.values[f] - want).abs()
        })
        .fold(0.0, f64::max);

    // K = 1 | 4 in series: harmonic mean 1.6 under a unit pressure drop
    let series = |x: [f64; 2]| {
        if x[0] <= 0.5 {
            1.0 - 1.6 * x[0]
        } else {
            0.2 - 0.4 * (x[0] - 0.5)
        }
    };
    let slab = TwoPhaseSolver::new(g.clone(), SolverParams::default(), &BoundaryData::new(series, |_| 0.0))
        .map_err(|e| e.to_string())?;
    let k = ScalarField::from_fn(&g, |x| if x[0] < 0.5 { 1.0 } else { 4.0 });
    let d = slab.solve_darcy(&k, &zero_s, None).map_err(|e| e.to_string())?;
    let err_slab = (0..g.n_faces())
        .map(|f| {
            let want = if f < g.n_x_faces() { 1.6 } else { 0.0 };
            (d.u.values[f] - want).abs()
        })
        .fold(0.0, f64::max);
    check(
        err_uniform <= 1e-8 && err_slab <= 1e-8,
        format!("max flux error uniform {err_uniform:.2e}, two-slab {err_slab:.2e} (tol 1e-8)"),
    )
}

/// Buckley–Leverett shock saturation: `F(s)/s = F'(s)`.
fn bl_front_speed(mu: f64) -> f64 {
    let n = 200_000;
    (1..=n)
        .map(|k| {
            let s = k as f64 / n as f64;
            fractional_flow(s, mu) / s
        })
        .fold(0.0, f64::max)
}

/// Rightmost cell face with `s ≥ level`, in x.
fn front_position(s: &[f64], nx: usize, level: f64) -> f64 {
    let last = (0..nx).rev().find(|&i| s[i] >= level).map_or(0, |i| i + 1);
    last as f64 / nx as f64
}

fn buckley_leverett(nx: usize, t_end: f64) -> Result<(f64, usize, f64), String> {
    let g = Grid::<f64>::new(nx, 2).map_err(|e| e.to_string())?;
    let base = SolverParams::<f64>::default();
    let probe = TwoPhaseSolver::new(g.clone(), base.clone(), &BoundaryData::reference())
        .map_err(|e| e.to_string())?;
    let mut u = FluxField::zeros(&g);
    for f in 0..g.n_x_faces() {
        u.values[f] = 1.0;
    }
    // CFL 0.5 with a whole number of steps
    let cfl_unit = probe.cfl_number(&u) / base.dt;
    let steps = (t_end * cfl_unit / 0.5).ceil() as usize;
    let params = SolverParams {
        dt: t_end / steps as f64,
        clamp_saturation: false,
        cfl: CflPolicy::Error,
        ..base
    };
    let solver = TwoPhaseSolver::new(g.clone(), params, &BoundaryData::reference()).map_err(|e| e.to_string())?;
    let mut s = ScalarField::zeros(&g);
    let mut clamped = 0;
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for _ in 0..steps {
        let (next, st) = solver.advance_saturation_with_stats(&s, &u).map_err(|e| e.to_string())?;
        clamped += st.clamped;
        lo = lo.min(st.min);
        hi = hi.max(st.max);
        s = next;
    }
    if lo < 0.0 || hi > 1.0 {
        return Err(format!("{nx} cells: saturation left [0, 1]: [{lo}, {hi}]"));
    }
    let row: Vec<f64> = s.values[..nx].to_vec();
    Ok((front_position(&row, nx, 0.25), clamped, solver.cfl_number(&u)))
}

fn a3_transport() -> Outcome {
    let t = 0.4;
    let (coarse, c_clamped, cfl) = buckley_leverett(64, t)?;
    let (fine, f_clamped, _) = buckley_leverett(1024, t)?;
    let exact = t * bl_front_speed(0.2);
    check(
        c_clamped == 0 && f_clamped == 0 && (coarse - fine).abs() <= 2.0 / 64.0,
        format!(
            "front at t=0.4: 64 cells {coarse:.4}, 1024 cells {fine:.4}, analytic {exact:.4}; \
             clamp activations {c_clamped}/{f_clamped}; CFL {cfl:.2}"
        ),
    )
}

fn a4_score_oracle() -> Outcome {
    let mean = vec![1.0, -0.5, 0.25, 2.0];
    let var: f64 = 0.6;
    let mut r = rng::stream(&[4]);
    let samples: Vec<f64> = (0..10_000)
        .flat_map(|_| {
            mean.iter()
                .map(|m| m + var.sqrt() * r.sample::<f64, _>(StandardNormal))
                .collect::<Vec<_>>()
        })
        .collect();
    let sched = DiffusionSchedule::with_steps(100).unwrap();
    let mc = MonteCarloScore::new(&samples, 4, sched).map_err(|e| e.to_string())?;
    let exact = AnalyticGaussianScore::new(mean.clone(), var, sched).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for tau in [0.1, 0.5, 0.9] {
        let (a, b2) = sched.kernel(tau);
        let sd = (a * a * var + b2).sqrt();
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..20 {
            let z: Vec<f64> = mean
                .iter()
                .map(|m| a * m + sd * r.sample::<f64, _>(StandardNormal))
                .collect();
            let (sm, se) = (mc.score(&z, tau), exact.score(&z, tau));
            num += sm.iter().zip(&se).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            den += se.iter().map(|y| y * y).sum::<f64>();
        }
        let rel = (num / den).sqrt();
        worst = worst.max(rel);
        parts.push(format!("τ={tau}: {:.2}%", 100.0 * rel));
    }
    check(worst < 0.05, format!("relative L2 error {} (tol 5%)", parts.join(", ")))
}

fn a5_sampler_moments() -> Outcome {
    let sched = DiffusionSchedule::with_steps(1000).unwrap();
    let target = AnalyticGaussianScore::new(vec![0.0, 0.0], 1.0, sched).map_err(|e| e.to_string())?;
    let out: Vec<f64> =
        reverse_sample(&target, &sched, 5000, 5, Sampler::default()).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for c in 0..2 {
        let col: Vec<f64> = out.iter().skip(c).step_by(2).copied().collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        ok &= m.abs() < 0.05 && (v - 1.0).abs() < 0.1;
        parts.push(format!("x{c}: mean {m:+.4} var {v:.4}"));
    }
    check(ok, parts.join(", "))
}

/// Wraps the PDE model and records the worst per-cell flux imbalance of
/// every Darcy solve it performs.
struct MassCheck<'a> {
    inner: &'a PdeModel<f64>,
    layout: StateLayout,
    worst: Mutex<(f64, usize)>,
}

impl MassCheck<'_> {
    fn record(&self, z: &[f64]) {
        let g = self.inner.grid();
        let u = FluxField::from_values(g, z[self.layout.block(Variable::Velocity)].to_vec()).unwrap();
        let h = g.hx().min(g.hy());
        let umax = u.max_abs().max(f64::MIN_POSITIVE);
        // residuals are integrated over faces; divide by face length for a flux density
        let worst = self
            .inner
            .solver()
            .cell_flux_residuals(&u)
            .iter()
            .map(|r| r.abs() / h / umax)
            .fold(0.0, f64::max);
        let mut w = self.worst.lock().unwrap();
        w.0 = w.0.max(worst);
        w.1 += 1;
    }
}

impl ForwardModel<f64> for MassCheck<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn propagate(&self, member: usize, step: usize, z: &mut [f64]) -> porous_ensf::Result<()> {
        self.inner.propagate(member, step, z)?;
        self.record(z);
        Ok(())
    }

    fn post_analysis(&self, member: usize, z: &mut [f64]) -> porous_ensf::Result<()> {
        self.inner.post_analysis(member, z)?;
        self.record(z);
        Ok(())
    }
}

struct DeskRun {
    out: RunOutput,
    mass: (f64, usize),
}

fn desk_run(cfg: &ExperimentConfig) -> Result<DeskRun, String> {
    let t0 = Instant::now();
    let reference = generate_reference(cfg).map_err(|e| e.to_string())?;
    let model = reference.setup.model(cfg).map_err(|e| e.to_string())?;
    let checked = MassCheck {
        inner: &model,
        layout: StateLayout::of(&reference.setup.grid),
        worst: Mutex::new((0.0, 0)),
    };
    for st in &reference.states[1..] {
        checked.record(&st.flatten());
    }
    let out = run_with_model(cfg, &reference, &checked).map_err(|e| e.to_string())?;
    experiment::write_reference(&cfg.out_dir, cfg, &reference).map_err(|e| e.to_string())?;
    experiment::write_run(&cfg.out_dir, cfg, &reference, &out).map_err(|e| e.to_string())?;
    let mass = *checked.worst.lock().unwrap();
    eprintln!(
        "  {} {} fraction {} seed {}: {:.0}s",
        cfg.preset.map_or("custom", |p| p.name()),
        cfg.filter.name(),
        cfg.obs_fraction,
        cfg.seed,
        t0.elapsed().as_secs_f64()
    );
    Ok(DeskRun { out, mass })
}

const SEEDS: [u64; 3] = [1, 2, 3];
const BURN_IN: usize = 20;

fn saturation_average(run: &RunOutput) -> f64 {
    run.time_average(BURN_IN).map_or(f64::NAN, |t| t.0)
}

/// A6 plus A2 on the same runs.
fn a6_open_loop_and_mass() -> (Outcome, Outcome) {
    let fractions = [0.0, 0.5, 1.0];
    let mut avg = [0.0; 3];
    let mut mass_worst = 0.0f64;
    let mut solves = 0;
    for seed in SEEDS {
        for (i, f) in fractions.iter().enumerate() {
            let mut cfg = ExperimentConfig::preset(Preset::Ex1SaturationOnly);
            cfg.seed = seed;
            cfg.obs_fraction = *f;
            cfg.filter = FilterKind::Ensf;
            cfg.out_dir = out_root().join(format!("a6/seed{seed}_f{f:.2}"));
            match desk_run(&cfg) {
                Ok(r) => {
                    avg[i] += saturation_average(&r.out) / SEEDS.len() as f64;
                    mass_worst = mass_worst.max(r.mass.0);
                    solves += r.mass.1;
                }
                Err(e) => return (Err(e.clone()), Err(e)),
            }
        }
    }
    let [r0, r50, r100] = avg;
    let ordered = r100 < r50 * 1.05 && r50 < r0 && r100 < 0.5 * r0;
    let a6 = check(
        ordered,
        format!(
            "time-avg saturation RMSE (burn-in {BURN_IN}, {} seeds): 0% {r0:.4}, 50% {r50:.4}, 100% {r100:.4}; \
             100%/0% = {:.3} (need < 0.5)",
            SEEDS.len(),
            r100 / r0
        ),
    );
    let a2 = check(
        mass_worst <= 1e-8,
        format!("worst per-cell flux residual / max|u| = {mass_worst:.2e} over {solves} Darcy solves (tol 1e-8)"),
    );
    (a2, a6)
}

fn a7_ensf_vs_letkf() -> Outcome {
    let base = |seed: u64| {
        let mut cfg = ExperimentConfig::preset(Preset::ExMultivar);
        cfg.seed = seed;
        cfg.obs_fraction = 0.5;
        cfg
    };
    let mut ensf = 0.0;
    for seed in SEEDS {
        let mut cfg = base(seed);
        cfg.filter = FilterKind::Ensf;
        cfg.out_dir = out_root().join(format!("a7/ensf_seed{seed}"));
        ensf += saturation_average(&desk_run(&cfg)?.out) / SEEDS.len() as f64;
    }
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut table = Vec::new();
    for radius in [4.0, 8.0, 16.0] {
        for inflation in [1.0, 1.05, 1.1] {
            let mut avg = 0.0;
            for seed in SEEDS {
                let mut cfg = base(seed);
                cfg.filter = FilterKind::Letkf;
                cfg.letkf_radius = radius;
                cfg.letkf_inflation = inflation;
                cfg.letkf_weight_stride = ((radius / 4.0) as usize).max(1);
                cfg.out_dir = out_root().join(format!("a7/letkf_r{radius}_i{inflation}_seed{seed}"));
                avg += saturation_average(&desk_run(&cfg)?.out) / SEEDS.len() as f64;
            }
            table.push(format!("r{radius}/ρ{inflation}: {avg:.4}"));
            if avg < best.0 {
                best = (avg, radius, inflation);
            }
        }
    }
    eprintln!("  letkf grid: {}", table.join(", "));
    check(
        ensf <= best.0,
        format!(
            "time-avg saturation RMSE at 50% arctan: EnSF {ensf:.4}, best LETKF {:.4} (radius {}, inflation {})",
            best.0, best.1, best.2
        ),
    )
}

/// Exact Kalman filter for `x ← a x + N(0, q)`, `y = x + N(0, r)`, per coordinate.
struct Kalman {
    mean: Vec<f64>,
    var: f64,
}

impl Kalman {
    fn step(&mut self, a: f64, q: f64, r: f64, y: &[f64]) {
        let pf = a * a * self.var + q;
        let k = pf / (pf + r);
        for (m, yi) in self.mean.iter_mut().zip(y) {
            let mf = a * *m;
            *m = mf + k * (yi - mf);
        }
        self.var = (1.0 - k) * pf;
    }
}

fn a8_linear_gaussian() -> Outcome {
    let (a, q, r, steps, m): (f64, f64, f64, usize, usize) = (0.9, 0.1, 0.5, 40, 250);
    let mut err = [0.0, 0.0];
    let n_seeds = 10;
    for seed in 0..n_seeds {
        let spec = ObservationSpec {
            mask: vec![0, 1],
            fractions: vec![],
            nonlinearity: Nonlinearity::Identity,
            noise_variance: r,
            seed: 0,
            state_dim: 2,
        };
        let mut rs = rng::stream(&[88, seed]);
        let mut x: Vec<f64> = (0..2).map(|_| rs.sample(StandardNormal)).collect();
        let mut obs = Vec::new();
        for n in 1..=steps {
            for v in x.iter_mut() {
                *v = a * *v + q.sqrt() * rs.sample::<f64, _>(StandardNormal);
            }
            obs.push(observe_flat(&x, &spec, n, Some(seed + 1000)).unwrap());
        }
        let mut kf = Kalman { mean: vec![0.0, 0.0], var: 1.0 };
        let mut kf_track = Vec::new();
        for y in &obs {
            kf.step(a, q, r, &y.values);
            kf_track.push((kf.mean.clone(), kf.var));
        }
        let model = LinearModel { dim: 2, factor: a, noise_variance: q, seed: seed + 500 };
        let data: Vec<_> = obs.iter().map(|y| Some(StepData { spec: &spec, y })).collect();
        let init = || {
            let mut ri = rng::stream(&[99, seed]);
            Ensemble::from_fn(m, 2, |_, row| {
                for v in row {
                    *v = ri.sample(StandardNormal);
                }
            })
            .unwrap()
        };
        let ensf = EnsfAnalysis {
            cfg: FilterConfig { members: m, steps: 100, seed: seed + 7, ..FilterConfig::default() },
        };
        let letkf = Letkf {
            cfg: LetkfConfig { radius: None, inflation: 1.0, ridge: 1e-10 },
            layout: LocalLayout::global(2),
        };
        let runs = [
            run_cycle(&model, &ensf, init(), &data, &RunOptions::default(), |_, _| {}),
            run_cycle(&model, &letkf, init(), &data, &RunOptions::default(), |_, _| {}),
        ];
        for (k, run) in runs.into_iter().enumerate() {
            let run = run.map_err(|e| e.to_string())?;
            let e: f64 = run
                .iter()
                .zip(&kf_track)
                .map(|(st, (km, kv))| {
                    let d2: f64 = st.estimate.iter().zip(km).map(|(x, y)| (x - y).powi(2)).sum();
                    (d2 / 2.0).sqrt() / kv.sqrt()
                })
                .sum::<f64>()
                / steps as f64;
            err[k] += e / n_seeds as f64;
        }
    }
    check(
        err[0] < 0.15 && err[1] < 0.15,
        format!(
            "mean |filter − Kalman| / Kalman std over {n_seeds} seeds: EnSF {:.3}, LETKF {:.3} (tol 0.15)",
            err[0], err[1]
        ),
    )
}

fn a9_gradient() -> Outcome {
    let mut r = rng::stream(&[9]);
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let nx = r.random_range(2..6);
        let ny = r.random_range(2..6);
        let g = Grid::<f64>::new(nx, ny).unwrap();
        let nl = if case % 4 == 0 { Nonlinearity::Identity } else { Nonlinearity::Arctan };
        let spec = make_mask(&g, &Variable::ALL, r.random_range(0.2..1.0), case)
            .unwrap()
            .with_nonlinearity(nl)
            .with_noise_variance(r.random_range(0.01..1.0));
        let z: Vec<f64> = (0..g.state_dim()).map(|_| r.random_range(-2.0..2.0)).collect();
        let y: ObservationVector<f64> = ObservationVector {
            step: 1,
            values: (0..spec.len()).map(|_| r.random_range(-1.5..1.5)).collect(),
        };
        let grad = log_likelihood_grad(&z, &y, &spec).unwrap();
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut zp = z.clone();
        for k in 0..z.len() {
            zp[k] = z[k] + h;
            let fp = log_likelihood(&zp, &y, &spec).unwrap();
            zp[k] = z[k] - h;
            let fm = log_likelihood(&zp, &y, &spec).unwrap();
            zp[k] = z[k];
            let fd = (fp - fm) / (2.0 * h);
            num += (fd - grad[k]).powi(2);
            den += grad[k].powi(2);
        }
        if den > 0.0 {
            worst = worst.max((num / den).sqrt());
        }
    }
    check(worst < 1e-5, format!("worst relative error over 100 cases {worst:.2e} (tol 1e-5)"))
}

fn a10_determinism() -> Outcome {
    let mut details = Vec::new();
    for filter in [FilterKind::Ensf, FilterKind::Letkf, FilterKind::None] {
        let mut cfg = ExperimentConfig::preset(Preset::Ex1SaturationOnly);
        cfg.steps = 5;
        cfg.filter = filter;
        let mut bytes = Vec::new();
        for threads in [1, 8] {
            cfg.out_dir = out_root().join(format!("a10/{}_t{threads}", filter.name()));
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run_experiment(&cfg)).map_err(|e| e.to_string())?;
            bytes.push(fs::read(cfg.out_dir.join("rmse.csv")).map_err(|e| e.to_string())?);
        }
        if bytes[0] != bytes[1] {
            return Err(format!("{} rmse.csv differs between 1 and 8 threads", filter.name()));
        }
        details.push(filter.name());
    }
    Ok(format!("rmse.csv byte-identical across 1 and 8 threads for {}", details.join(", ")))
}

fn a11_dimensions() -> Outcome {
    let g = Grid::<f64>::new(64, 64).unwrap();
    let layout = StateLayout::of(&g);
    let (s, u, p) = (
        layout.block(Variable::Saturation).len(),
        layout.block(Variable::Velocity).len(),
        layout.block(Variable::Pressure).len(),
    );
    let flat = porous_ensf::StateVector::zeros(&g).flatten().len();
    let init = perturbed_initial_saturation(&g, porous_ensf::fields::InitialMode::HalfNormal, 1.0 / 300.0, 1)
        .map_err(|e| e.to_string())?;
    check(
        (s, u, p, flat, g.state_dim(), init.len()) == (4096, 8320, 4096, 16_512, 16_512, 4096),
        format!("s {s} + u {u} + p {p} = {flat}"),
    )
}

fn report(results: &mut Vec<(&'static str, Outcome)>, id: &'static str, name: &str, r: Outcome, secs: f64) {
    match &r {
        Ok(d) => println!("{id} PASS {name}: {d} [{secs:.1}s]"),
        Err(d) => println!("{id} FAIL {name}: {d} [{secs:.1}s]"),
    }
    results.push((id, r));
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_uppercase())
        .collect();
    let wanted = |id: &str| filters.is_empty() || filters.iter().any(|f| f == id);
    let _ = fs::create_dir_all(out_root());

    let quick: [(&str, &str, fn() -> Outcome); 8] = [
        ("A1", "Darcy exactness", a1_darcy_exactness),
        ("A3", "transport monotonicity", a3_transport),
        ("A4", "score oracle", a4_score_oracle),
        ("A5", "reverse sampler moments", a5_sampler_moments),
        ("A8", "linear-Gaussian sanity", a8_linear_gaussian),
        ("A9", "likelihood gradient", a9_gradient),
        ("A10", "determinism", a10_determinism),
        ("A11", "dimension accounting", a11_dimensions),
    ];
    let mut results = Vec::new();
    for (id, name, f) in quick {
        if wanted(id) {
            let t = Instant::now();
            let r = f();
            report(&mut results, id, name, r, t.elapsed().as_secs_f64());
        }
    }
    if wanted("A2") || wanted("A6") {
        let t = Instant::now();
        let (a2, a6) = a6_open_loop_and_mass();
        let secs = t.elapsed().as_secs_f64();
        report(&mut results, "A2", "mass conservation", a2, secs);
        report(&mut results, "A6", "DA improves on open loop", a6, secs);
    }
    if wanted("A7") {
        let t = Instant::now();
        let r = a7_ensf_vs_letkf();
        report(&mut results, "A7", "EnSF vs LETKF", r, t.elapsed().as_secs_f64());
    }

    let failed: Vec<_> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
