//! Command-line front end. Usage errors exit 2 (from clap), runtime errors 1.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::checkpoint::{load_agent, resume_trainer, trainer_checkpoint, Checkpoint};
use crate::harness::config::{parse_config, ExperimentConfig};
use crate::harness::matrix::{analyze_agent, cell_dir, run_matrix, state_pool, CellMetrics, CHECKPOINT_FILE, CURVE_FILE};
use crate::rl::{write_curve_csv, Trainer, Variant};

pub const OUT_DIR_ENV: &str = "SDRL_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "sdrl", version, about = "Train and analyze multisensor driving policies with Sensor Dropout")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed (and the matrix seed list).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Output directory; defaults to the config's, then $SDRL_OUT_DIR, then ./runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one variant; writes curve.csv and checkpoint.sdrl.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint saved with its replay buffer.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Run at most this many episodes, then save a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Noise and sensor-failure evaluation of a trained checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to the cell checkpoint under the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Every analysis report for a trained checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and analyze every configured variant and seed.
    Matrix {
        #[command(flatten)]
        common: Common,
    },
    /// Print the metadata and the name, shape and L2 norm of every record.
    InspectCheckpoint { path: PathBuf },
}

struct Resolved {
    cfg: ExperimentConfig,
    out: PathBuf,
    variant: Variant,
    seed: u64,
}

fn resolve(c: &Common) -> Result<Resolved> {
    let mut cfg = parse_config(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.seeds = vec![seed];
        cfg.train.seed = seed;
    }
    if let Some(e) = c.episodes {
        cfg.train.episodes = e;
    }
    if let Some(v) = c.variant {
        cfg.variants = vec![v];
    }
    cfg.validate()?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let variant = cfg.variants[0];
    let seed = cfg.seed;
    Ok(Resolved { cfg, out, variant, seed })
}

fn print_metrics(m: &CellMetrics) {
    for (k, v) in &m.values {
        println!("{k} = {v}");
    }
}

fn load_cell_agent(r: &Resolved, checkpoint: &Option<PathBuf>) -> Result<crate::rl::Agent> {
    let path = checkpoint
        .clone()
        .unwrap_or_else(|| cell_dir(&r.out, r.variant, r.seed).join(CHECKPOINT_FILE));
    load_agent(&Checkpoint::load(&path)?, &r.cfg.env)
}

fn train(r: &Resolved, resume: &Option<PathBuf>, stop_after: Option<usize>) -> Result<()> {
    let dir = cell_dir(&r.out, r.variant, r.seed);
    let cfg = r.cfg.train_config(r.variant, r.seed);
    let mut t = match resume {
        None => Trainer::new(cfg, r.cfg.track_spec()?, r.cfg.env.clone())?,
        Some(path) => resume_trainer(&Checkpoint::load(path)?, cfg, r.cfg.track_spec()?, r.cfg.env.clone())?,
    };
    match stop_after {
        Some(n) => t.run_episodes(n)?,
        None => {
            t.run()?;
        }
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_curve_csv(&t.curve, &dir.join(CURVE_FILE))?;
    // A paused run always keeps its replay buffer so it can be resumed.
    let with_replay = r.cfg.save_replay || !t.is_finished();
    trainer_checkpoint(&t, with_replay).save(&dir.join(CHECKPOINT_FILE))?;
    let last: Vec<f64> = t.curve.iter().rev().take(10).map(|c| c.ret).collect();
    let mean = if last.is_empty() { 0.0 } else { last.iter().sum::<f64>() / last.len() as f64 };
    println!(
        "trained {} seed {}: {}/{} episodes; last-10 mean return {mean:.2}",
        r.variant, r.seed, t.episode, t.cfg.episodes
    );
    println!("wrote {}", dir.display());
    Ok(())
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train { common, resume, stop_after } => {
            train(&resolve(&common)?, &resume, stop_after)?;
        }
        Command::Eval { common, checkpoint } => {
            let r = resolve(&common)?;
            let agent = load_cell_agent(&r, &checkpoint)?;
            let dir = cell_dir(&r.out, r.variant, r.seed);
            print_metrics(&analyze_agent(&r.cfg, &agent, &[], r.seed, &dir)?);
        }
        Command::Analyze { common, checkpoint } => {
            let r = resolve(&common)?;
            let agent = load_cell_agent(&r, &checkpoint)?;
            let pool = state_pool(&r.cfg, &[&agent], r.seed)?;
            let dir = cell_dir(&r.out, r.variant, r.seed);
            print_metrics(&analyze_agent(&r.cfg, &agent, &pool, r.seed, &dir)?);
        }
        Command::Matrix { common } => {
            let r = resolve(&common)?;
            let report = run_matrix(&r.cfg, &r.out)?;
            println!("{} cells, {} failed; see {}", report.cells.len(), report.failures(), r.out.join("index.csv").display());
            if report.failures() > 0 {
                return Ok(1);
            }
        }
        Command::InspectCheckpoint { path } => inspect(&path)?,
    }
    Ok(0)
}

fn inspect(path: &Path) -> Result<()> {
    let ck = Checkpoint::load(path)?;
    for (k, v) in &ck.meta {
        println!("# {k} = {v}");
    }
    println!("name,shape,norm");
    for r in &ck.records {
        let shape: Vec<String> = r.shape.iter().map(usize::to_string).collect();
        println!("{},[{}],{}", r.name, shape.join("x"), r.norm());
    }
    Ok(())
}
