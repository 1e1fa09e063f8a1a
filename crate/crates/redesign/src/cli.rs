//! Command-line front end. Exit status 0 on success, 1 on runtime failure,
//! 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use redesign_core::closed_loop;

use crate::checkpoint;
use crate::config::{RedesignConfig, Variant};
use crate::experiment::{initial_policy, par_true_roa, pretrained_estimate, run_redesign};
use crate::image;
use crate::metrics::read_metrics;
use crate::report::{summarize, write_tables};

#[derive(Debug, Parser)]
#[command(name = "lyapunov-redesign", version, about = "Enlarge the region of attraction of a saturated LQR pendulum")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key = value configuration file
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// overrides `seed`
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// overrides `out_dir`
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// overrides `variant`
    #[arg(long, global = true, value_enum)]
    pub variant: Option<Variant>,
    /// drop the monotonicity term
    #[arg(long, global = true)]
    pub no_monot: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the Lyapunov candidate and line-search its level
    Pretrain,
    /// Run the full estimation / policy-update loop
    Run,
    /// Print the true region-of-attraction fraction of the configured policy
    Oracle,
    /// Re-derive figure tables from an existing metrics log
    Report {
        /// metrics file (default: <out>/metrics.csv)
        metrics: Option<PathBuf>,
    },
}

impl Common {
    pub fn resolve(&self) -> Result<RedesignConfig> {
        let mut cfg = match &self.config {
            Some(path) => RedesignConfig::load(path)?,
            None => RedesignConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(v) = self.variant {
            cfg = cfg.with_variant(v);
        }
        if self.no_monot {
            cfg.monot = false;
        }
        Ok(cfg)
    }
}

/// Parse `args` (program name first), run, and return the exit status.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.common.resolve()?;
    match &cli.command {
        Command::Pretrain => pretrain(&cfg),
        Command::Run => {
            let out = run_redesign(&cfg, &cfg.out_dir)?;
            println!("{}", summarize(&out.rows));
            for w in &out.warnings {
                println!("warning: {w}");
            }
            Ok(())
        }
        Command::Oracle => oracle(&cfg, cli.common.out.is_some()),
        Command::Report { metrics } => {
            let path = metrics.clone().unwrap_or_else(|| cfg.out_dir.join("metrics.csv"));
            let rows = read_metrics(&path)?;
            let dir = path.parent().unwrap_or(Path::new(".")).join("figures");
            write_tables(&rows, &dir)?;
            println!("{}", summarize(&rows));
            println!("tables written to {}", dir.display());
            Ok(())
        }
    }
}

fn pretrain(cfg: &RedesignConfig) -> Result<()> {
    let f = closed_loop(initial_policy(cfg)?, cfg.pendulum);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (est, report) = pretrained_estimate(cfg, &f, &mut rng)?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    checkpoint::save(&cfg.out_dir.join("v_pretrain.bin"), &est)?;
    let values = redesign_core::lyapunov_net::grid_values(&est.net.evaluator(), &cfg.grid);
    image::write_scalar(&cfg.out_dir.join("v_pretrain.ppm"), &cfg.grid, &values)?;
    println!("grid mse {:.4e} -> {:.4e}, correlation {:.4}", report.initial_mse, report.final_mse, report.correlation);
    println!("level {:.6e}, estimated fraction {:.4}", est.c, est.fraction(&cfg.grid));
    Ok(())
}

fn oracle(cfg: &RedesignConfig, write: bool) -> Result<()> {
    let f = closed_loop(initial_policy(cfg)?, cfg.pendulum);
    let mask = par_true_roa(&f, &cfg.grid, &cfg.oracle);
    println!("{:.4}", mask.fraction());
    if write {
        fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
        image::write_mask_pgm(&cfg.out_dir.join("oracle.pgm"), &mask)?;
        image::write_mask_csv(&cfg.out_dir.join("oracle.csv"), &cfg.grid, &mask)?;
    }
    Ok(())
}
