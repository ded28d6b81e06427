//! Variant × seed runs with per-cell artifacts and a seed-aggregated summary.
//!
//! Layout under the output directory:
//! `{variant}/{seed}/curve.csv`, `checkpoint.sdrl` and the analysis CSVs,
//! plus `index.csv`, `summary.csv` and `run.log`. Only `run.log` carries
//! wall-clock timestamps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::analysis::{
    collect_states, config_masks, default_noise_grid, embeddings, eval_subpolicy, pca_csv, pca_embed, robustness_csv,
    robustness_eval, saliency_csv, saliency_state, sensitivity_csv, sensitivity_ratio, subpolicy_csv, action_variance,
    variance_csv, write_csv, Saliency, MIN_EVAL_STATES,
};
use crate::env::{Sensor, TrackEnv};
use crate::error::{Error, Result};
use crate::harness::checkpoint::trainer_checkpoint;
use crate::harness::config::ExperimentConfig;
use crate::rl::{write_curve_csv, Agent, FeatureMask, Trainer, Variant};
use crate::sensor_dropout::enumerate_configs;

pub const CHECKPOINT_FILE: &str = "checkpoint.sdrl";
pub const CURVE_FILE: &str = "curve.csv";

/// Offsets added to the cell seed for the evaluation streams.
const STATE_SEED_OFFSET: u64 = 1000;
const NOISE_EVAL_OFFSET: u64 = 2000;
const SUBPOLICY_EVAL_OFFSET: u64 = 3000;

pub fn cell_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join(variant.to_string()).join(seed.to_string())
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Trains one cell and writes its curve and checkpoint into `dir`.
pub fn train_cell(cfg: &ExperimentConfig, variant: Variant, seed: u64, dir: &Path) -> Result<Trainer> {
    create_dir(dir)?;
    let mut t = Trainer::new(cfg.train_config(variant, seed), cfg.track_spec()?, cfg.env.clone())?;
    t.run()?;
    write_curve_csv(&t.curve, &dir.join(CURVE_FILE))?;
    trainer_checkpoint(&t, cfg.save_replay).save(&dir.join(CHECKPOINT_FILE))?;
    Ok(t)
}

/// Greedy-rollout states from each agent, concatenated in order. All agents
/// must share one sensor layout.
pub fn state_pool(cfg: &ExperimentConfig, agents: &[&Agent], seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut env = TrackEnv::new(cfg.track_spec()?, cfg.env.clone())?;
    let mut pool = Vec::new();
    for a in agents {
        pool.extend(collect_states(
            a,
            &mut env,
            cfg.analysis.state_episodes,
            seed.wrapping_add(STATE_SEED_OFFSET),
            cfg.analysis.state_stride,
        )?);
    }
    Ok(pool)
}

/// Scalar results of one cell; `None` where a report does not apply.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellMetrics {
    pub values: BTreeMap<String, f64>,
}

impl CellMetrics {
    fn set(&mut self, key: impl Into<String>, v: f64) {
        self.values.insert(key.into(), v);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

fn window_mean(rets: &[f64], last: bool) -> f64 {
    let n = rets.len().min(10);
    if n == 0 {
        return 0.0;
    }
    let w = if last { &rets[rets.len() - n..] } else { &rets[..n] };
    w.iter().sum::<f64>() / n as f64
}

/// Runs every report for a trained agent and writes its CSVs into `dir`.
pub fn analyze_agent(
    cfg: &ExperimentConfig,
    agent: &Agent,
    pool: &[Vec<f64>],
    seed: u64,
    dir: &Path,
) -> Result<CellMetrics> {
    create_dir(dir)?;
    let mut m = CellMetrics::default();
    let mut env = TrackEnv::new(cfg.track_spec()?, cfg.env.clone())?;
    let episodes = cfg.analysis.eval_episodes;

    let grid = default_noise_grid(cfg.noise.sigma, cfg.noise.seed);
    let rob = robustness_eval(agent, &mut env, &grid, episodes, seed.wrapping_add(NOISE_EVAL_OFFSET))?;
    write_csv(&dir.join("robustness.csv"), &robustness_csv(&rob))?;
    m.set("clean_return", rob.clean);
    if let Some(d) = rob.mean_drop() {
        m.set("mean_drop_pct", d);
    }

    let configs = enumerate_configs(agent.sensors().len())?;
    let sub = eval_subpolicy(agent, &mut env, &configs, episodes, seed.wrapping_add(SUBPOLICY_EVAL_OFFSET))?;
    write_csv(&dir.join("subpolicy.csv"), &subpolicy_csv(&sub))?;
    for s in &sub.scores {
        m.set(format!("normalized_{}", s.config.label()), s.normalized);
        m.set(format!("return_{}", s.config.label()), s.mean);
    }

    if pool.len() < MIN_EVAL_STATES {
        log::warn!("{} pool states < {MIN_EVAL_STATES}; skipping state-averaged reports", pool.len());
        return Ok(m);
    }
    let layout = &agent.layout;
    let mut mean_sal: Option<Saliency> = None;
    for st in pool {
        let s = saliency_state(agent.policy(), layout, st, FeatureMask::Identity)?;
        match &mut mean_sal {
            None => mean_sal = Some(s),
            Some(acc) => acc.values.iter_mut().zip(&s.values).for_each(|(a, v)| *a += v),
        }
    }
    if let Some(mut s) = mean_sal {
        s.values.iter_mut().for_each(|v| *v /= pool.len() as f64);
        write_csv(&dir.join("saliency.csv"), &saliency_csv(&s))?;
    }
    let num = [Sensor::Physical, Sensor::Laser];
    let den = [Sensor::Image];
    if num.iter().chain(&den).all(|s| layout.sensors.contains(s)) {
        let r = sensitivity_ratio(agent.policy(), layout, pool, &num, &den)?;
        write_csv(&dir.join("sensitivity.csv"), &sensitivity_csv(&r))?;
        if let Some(t) = r.ratio {
            m.set("sensitivity", t);
        }
    }
    let masks = config_masks(agent, &configs)?;
    let var = action_variance(agent.policy(), &masks, pool)?;
    write_csv(&dir.join("variance.csv"), &variance_csv(&var))?;
    m.set("variance_steer", var.per_dim[0]);
    m.set("variance_accel", var.per_dim[1]);
    let emb = embeddings(agent.policy(), &masks, pool)?;
    let k = cfg.analysis.pca_components.min(emb.dim);
    if emb.len() > k {
        let p = pca_embed(&emb.rows, emb.len(), emb.dim, k)?;
        write_csv(&dir.join("pca.csv"), &pca_csv(&p))?;
        if let Some(f) = p.fractions.first() {
            m.set("pc1_fraction", *f);
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub variant: Variant,
    pub seed: u64,
    pub dir: PathBuf,
    /// Error message when the cell failed.
    pub error: Option<String>,
    pub metrics: CellMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixReport {
    pub cells: Vec<CellOutcome>,
}

impl MatrixReport {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

struct RunLog {
    file: std::fs::File,
    path: PathBuf,
}

impl RunLog {
    fn open(path: PathBuf) -> Result<Self> {
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { file, path })
    }

    fn line(&mut self, msg: &str) -> Result<()> {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        log::info!("{msg}");
        writeln!(self.file, "[{secs:.3}] {msg}").map_err(|e| Error::io(&self.path, e))
    }
}

/// Trains and analyzes every (variant, seed) cell. A failing cell is
/// logged and skipped; the others still run.
pub fn run_matrix(cfg: &ExperimentConfig, out: &Path) -> Result<MatrixReport> {
    cfg.validate()?;
    create_dir(out)?;
    let mut log = RunLog::open(out.join("run.log"))?;
    write_csv(&out.join("config.cfg"), &cfg.to_text())?;
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let mut trained: Vec<(Variant, Agent, Vec<f64>)> = Vec::new();
        for &variant in &cfg.variants {
            let dir = cell_dir(out, variant, seed);
            log.line(&format!("train {variant} seed {seed}"))?;
            match train_cell(cfg, variant, seed, &dir) {
                Ok(t) => {
                    let rets: Vec<f64> = t.curve.iter().map(|c| c.ret).collect();
                    log.line(&format!("done {variant} seed {seed}: last-10 mean {:.1}", window_mean(&rets, true)))?;
                    trained.push((variant, t.agent, rets));
                }
                Err(e) => {
                    log.line(&format!("FAILED {variant} seed {seed}: {e}"))?;
                    cells.push(CellOutcome { variant, seed, dir, error: Some(e.to_string()), metrics: CellMetrics::default() });
                }
            }
        }
        // One pool per sensor layout, shared by every variant of this seed.
        let mut pools: BTreeMap<Vec<Sensor>, Vec<Vec<f64>>> = BTreeMap::new();
        if cfg.analysis.enabled {
            for (_, agent, _) in &trained {
                let key = agent.sensors().to_vec();
                if pools.contains_key(&key) {
                    continue;
                }
                let group: Vec<&Agent> = trained.iter().map(|(_, a, _)| a).filter(|a| a.sensors() == key).collect();
                match state_pool(cfg, &group, seed) {
                    Ok(p) => {
                        pools.insert(key, p);
                    }
                    Err(e) => log.line(&format!("state pool for seed {seed} failed: {e}"))?,
                }
            }
        }
        for (variant, agent, rets) in trained {
            let dir = cell_dir(out, variant, seed);
            let mut metrics = CellMetrics::default();
            metrics.set("first10_return", window_mean(&rets, false));
            metrics.set("last10_return", window_mean(&rets, true));
            let mut error = None;
            if cfg.analysis.enabled {
                let pool = pools.get(agent.sensors()).map(Vec::as_slice).unwrap_or(&[]);
                log.line(&format!("analyze {variant} seed {seed}"))?;
                match analyze_agent(cfg, &agent, pool, seed, &dir) {
                    Ok(m) => metrics.values.extend(m.values),
                    Err(e) => {
                        log.line(&format!("FAILED analysis {variant} seed {seed}: {e}"))?;
                        error = Some(e.to_string());
                    }
                }
            }
            cells.push(CellOutcome { variant, seed, dir, error, metrics });
        }
    }
    // Stable order regardless of failures: config variant order, then seed order.
    let vpos = |v: &Variant| cfg.variants.iter().position(|x| x == v).unwrap_or(usize::MAX);
    let spos = |s: &u64| cfg.seeds.iter().position(|x| x == s).unwrap_or(usize::MAX);
    cells.sort_by_key(|c| (vpos(&c.variant), spos(&c.seed)));
    let report = MatrixReport { cells };
    write_csv(&out.join("index.csv"), &index_csv(&report, out))?;
    write_csv(&out.join("summary.csv"), &summary_csv(&report))?;
    log.line(&format!("matrix finished: {} cells, {} failed", report.cells.len(), report.failures()))?;
    Ok(report)
}

/// Metrics repeated in `index.csv`; blank when a report does not apply.
pub const HEADLINE: [&str; 7] = [
    "last10_return",
    "clean_return",
    "mean_drop_pct",
    "sensitivity",
    "variance_steer",
    "variance_accel",
    "pc1_fraction",
];

pub fn index_csv(r: &MatrixReport, out: &Path) -> String {
    let mut s = String::from("variant,seed,status,dir,error");
    for k in HEADLINE {
        s.push(',');
        s.push_str(k);
    }
    s.push('\n');
    for c in &r.cells {
        let rel = c.dir.strip_prefix(out).unwrap_or(&c.dir);
        let err = c.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let status = if c.error.is_some() { "failed" } else { "ok" };
        let _ = write!(s, "{},{},{status},{},{err}", c.variant, c.seed, rel.display());
        for k in HEADLINE {
            let _ = write!(s, ",{}", c.metrics.get(k).map(|v| v.to_string()).unwrap_or_default());
        }
        s.push('\n');
    }
    s
}

/// Mean and population std over seeds of every metric, per variant.
pub fn summary_csv(r: &MatrixReport) -> String {
    let mut groups: Vec<(Variant, BTreeMap<String, Vec<f64>>)> = Vec::new();
    for c in r.cells.iter().filter(|c| c.error.is_none()) {
        let idx = match groups.iter().position(|(v, _)| *v == c.variant) {
            Some(i) => i,
            None => {
                groups.push((c.variant, BTreeMap::new()));
                groups.len() - 1
            }
        };
        for (k, v) in &c.metrics.values {
            groups[idx].1.entry(k.clone()).or_default().push(*v);
        }
    }
    let mut s = String::from("variant,metric,mean,std,seeds\n");
    for (v, metrics) in groups {
        for (k, xs) in metrics {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let _ = writeln!(s, "{v},{k},{mean},{std},{}", xs.len());
        }
    }
    s
}
