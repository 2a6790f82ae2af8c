use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use porous_ensf::harness::{self, ExperimentConfig, FilterKind, Preset};

#[derive(Parser)]
#[command(name = "porous-ensf", version, about = "Two-phase flow twin experiments with EnSF and LETKF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the reference model and write fields and observations.
    GenerateReference(Common),
    /// Reference plus one filter run.
    Run {
        #[command(flatten)]
        common: Common,
        /// ensf, letkf or none.
        #[arg(long)]
        filter: Option<String>,
        /// Observed fraction of each observed variable.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// One run per (fraction, filter) pair against a shared reference.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated fractions; defaults to the preset's list.
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
        /// Comma-separated filters.
        #[arg(long, value_delimiter = ',', default_value = "ensf")]
        filters: Vec<String>,
        /// Steps skipped before time averaging.
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
    },
    /// Time-averaged RMSE of one or more rmse.csv files.
    Metrics {
        #[arg(required = true)]
        rmse: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
    },
}

#[derive(Args)]
struct Common {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ex1-saturation-only, ex-multivar or ex3-fracture. Ignored with --config.
    #[arg(long)]
    preset: Option<String>,
    /// 64x64 grid, M=300, L=1000, 400 steps.
    #[arg(long = "paper-scale")]
    full_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; derived seeds follow unless pinned in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write legacy VTK snapshots.
    #[arg(long)]
    vtk: bool,
    /// Extra key=value overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)
                .with_context(|| format!("loading {}", path.display()))?,
            (None, Some(p)) => match Preset::parse(p) {
                Some(p) => ExperimentConfig::preset(p),
                None => bail!("unknown preset {p:?}"),
            },
            (None, None) => ExperimentConfig::default(),
        };
        if self.full_scale {
            cfg.full_scale();
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.vtk {
            cfg.vtk = true;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

fn parse_filter(s: &str) -> Result<FilterKind> {
    FilterKind::parse(s.trim()).with_context(|| format!("unknown filter {s:?}"))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenerateReference(common) => {
            let cfg = common.config()?;
            cfg.validate()?;
            let r = harness::generate_reference_to_dir(&cfg)?;
            println!(
                "wrote reference ({} steps, {} observations per step) to {}",
                r.states.len() - 1,
                r.specs[0].len(),
                cfg.out_dir.display()
            );
        }
        Command::Run {
            common,
            filter,
            fraction,
        } => {
            let mut cfg = common.config()?;
            if let Some(f) = filter {
                cfg.filter = parse_filter(&f)?;
            }
            if let Some(f) = fraction {
                cfg.obs_fraction = f;
            }
            cfg.validate()?;
            let out = harness::run_experiment(&cfg)?;
            let (s, p, u) = out.time_average(0).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            println!(
                "{} fraction {}: mean rmse s {s:.4e} p {p:.4e} u {u:.4e} -> {}",
                cfg.filter.name(),
                cfg.obs_fraction,
                cfg.out_dir.join("rmse.csv").display()
            );
        }
        Command::Sweep {
            common,
            fractions,
            filters,
            burn_in,
        } => {
            let cfg = common.config()?;
            cfg.validate()?;
            let fractions = if fractions.is_empty() {
                cfg.preset
                    .map(Preset::sweep_fractions)
                    .unwrap_or_else(|| vec![cfg.obs_fraction])
            } else {
                fractions
            };
            let filters = filters
                .iter()
                .map(|f| parse_filter(f))
                .collect::<Result<Vec<_>>>()?;
            let rows = harness::sweep(&cfg, &fractions, &filters, burn_in)?;
            println!("fraction,filter,rmse_s,rmse_p,rmse_u");
            for r in rows {
                println!(
                    "{},{},{:.4e},{:.4e},{:.4e}",
                    r.fraction,
                    r.filter.name(),
                    r.rmse_s,
                    r.rmse_p,
                    r.rmse_u
                );
            }
        }
        Command::Metrics { rmse, burn_in } => {
            println!("file,rmse_s,rmse_p,rmse_u");
            for path in rmse {
                let (s, p, u) = harness::metrics(&path, burn_in)?;
                println!("{},{s:.6e},{p:.6e},{u:.6e}", path.display());
            }
        }
    }
    Ok(())
}
