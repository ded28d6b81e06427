//! Saliency, sensitivity, sub-policy, variance, embedding and robustness reports.

pub mod pca;

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use pca::{covariance, pca_embed, top_eigenpairs, Pca};

use crate::env::{corrupt, MultiObservation, Sensor, SensorNoiseSpec, TrackEnv};
use crate::error::{Error, Result};
use crate::rl::{Agent, FeatureMask, Policy, StateLayout};
use crate::sensor_dropout::DropConfig;

/// Minimum evaluation states for the state-averaged reports.
pub const MIN_EVAL_STATES: usize = 100;
pub const MIN_EVAL_EPISODES: usize = 5;

/// Reset seed of evaluation episode `k`; disjoint from training seeds in practice.
pub fn eval_seed(base: u64, k: usize) -> u64 {
    base.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (0xE7A1_0000_0000_0000 | k as u64)
}

/// Input range of each sensor block in the flattened state.
pub fn block_ranges(layout: &StateLayout) -> Vec<(Sensor, Range<usize>)> {
    let mut at = 0;
    layout
        .sensors
        .iter()
        .zip(&layout.raw_dims)
        .map(|(&s, &d)| {
            at += d;
            (s, at - d..at)
        })
        .collect()
}

/// `sum_k |d a_k / d x|` for each input element, with block boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    pub values: Vec<f64>,
    pub blocks: Vec<(Sensor, Range<usize>)>,
}

impl Saliency {
    pub fn block(&self, sensor: Sensor) -> Option<&[f64]> {
        self.blocks
            .iter()
            .find(|(s, _)| *s == sensor)
            .map(|(_, r)| &self.values[r.clone()])
    }

    /// Mean saliency over the elements of `sensors`; `None` if no element is covered.
    pub fn mean_over(&self, sensors: &[Sensor]) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for s in sensors {
            if let Some(b) = self.block(*s) {
                sum += b.iter().sum::<f64>();
                n += b.len();
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Saliency of the policy at one flattened state under `mask`.
pub fn saliency_state(policy: &Policy, layout: &StateLayout, state: &[f64], mask: FeatureMask) -> Result<Saliency> {
    let pass = policy.forward(state, 1, vec![mask])?;
    let mut values = vec![0.0; state.len()];
    for k in 0..2 {
        let mut up = [0.0; 2];
        up[k] = 1.0;
        let (_, g) = policy.backward(&pass, &up)?;
        for (v, gi) in values.iter_mut().zip(g) {
            *v += gi.abs();
        }
    }
    Ok(Saliency { values, blocks: block_ranges(layout) })
}

/// Saliency of the agent's policy for an observation, using the
/// availability-implied mask.
pub fn saliency(agent: &Agent, obs: &MultiObservation) -> Result<Saliency> {
    let mask = agent.config_mask(&agent.availability_config(obs)?)?;
    saliency_state(agent.policy(), &agent.layout, &agent.flatten(obs), mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    /// Mean of the per-state ratios; `None` when every state was excluded.
    pub ratio: Option<f64>,
    pub per_state: Vec<f64>,
    pub numerator: Vec<Sensor>,
    pub denominator: Vec<Sensor>,
    pub states: usize,
    pub excluded: usize,
}

impl SensitivityReport {
    pub fn is_degenerate(&self) -> bool {
        self.ratio.is_none()
    }
}

/// Per-state ratio of mean absolute input gradients over two sensor subsets,
/// averaged over states. States with a zero denominator are excluded and counted.
pub fn sensitivity_ratio(
    policy: &Policy,
    layout: &StateLayout,
    states: &[Vec<f64>],
    numerator: &[Sensor],
    denominator: &[Sensor],
) -> Result<SensitivityReport> {
    if states.len() < MIN_EVAL_STATES {
        return Err(Error::config(format!(
            "sensitivity needs at least {MIN_EVAL_STATES} states, got {}",
            states.len()
        )));
    }
    for s in numerator.iter().chain(denominator) {
        if !layout.sensors.contains(s) {
            return Err(Error::config(format!("policy has no {} sensor", s.name())));
        }
    }
    if numerator.is_empty() || denominator.is_empty() {
        return Err(Error::config("sensor subsets must be non-empty"));
    }
    let mut per_state = Vec::with_capacity(states.len());
    let mut excluded = 0;
    for st in states {
        let sal = saliency_state(policy, layout, st, FeatureMask::Identity)?;
        let num = sal.mean_over(numerator).unwrap_or(0.0);
        let den = sal.mean_over(denominator).unwrap_or(0.0);
        if den > 0.0 {
            per_state.push(num / den);
        } else {
            excluded += 1;
        }
    }
    let ratio = (!per_state.is_empty()).then(|| per_state.iter().sum::<f64>() / per_state.len() as f64);
    Ok(SensitivityReport {
        ratio,
        per_state,
        numerator: numerator.to_vec(),
        denominator: denominator.to_vec(),
        states: states.len(),
        excluded,
    })
}

/// Mean return of one greedy episode per seed, acting through `choose`.
fn run_episode<F>(env: &mut TrackEnv, seed: u64, mut choose: F) -> Result<f64>
where
    F: FnMut(&MultiObservation, usize) -> Result<[f64; 2]>,
{
    let mut obs = env.reset(seed);
    let mut ret = 0.0;
    for t in 0..env.config().max_steps {
        let a = choose(&obs, t)?;
        let step = env.step(a)?;
        ret += step.reward;
        obs = step.observation;
        if step.done {
            break;
        }
    }
    Ok(ret)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigScore {
    pub config: DropConfig,
    pub mean: f64,
    pub std: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubPolicyEval {
    pub episodes: usize,
    /// Mean return of the all-on configuration.
    pub anchor: f64,
    pub scores: Vec<ConfigScore>,
}

impl SubPolicyEval {
    pub fn score(&self, config: &DropConfig) -> Option<&ConfigScore> {
        self.scores.iter().find(|s| s.config == *config)
    }
}

/// Mean return of greedy episodes for one configuration.
pub fn eval_config(agent: &Agent, env: &mut TrackEnv, config: &DropConfig, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mask = agent.config_mask(config)?;
    (0..episodes)
        .map(|k| {
            run_episode(env, eval_seed(seed, k), |obs, _| {
                agent.act_state(&agent.flatten(obs), mask.clone())
            })
        })
        .collect()
}

/// Greedy returns under each configuration, normalized by the all-on mean.
pub fn eval_subpolicy(
    agent: &Agent,
    env: &mut TrackEnv,
    configs: &[DropConfig],
    episodes: usize,
    seed: u64,
) -> Result<SubPolicyEval> {
    if episodes < MIN_EVAL_EPISODES {
        return Err(Error::config(format!(
            "sub-policy evaluation needs at least {MIN_EVAL_EPISODES} episodes, got {episodes}"
        )));
    }
    let all_on = DropConfig::all_on(agent.sensors().len())?;
    let anchor = mean_std(&eval_config(agent, env, &all_on, episodes, seed)?).0;
    let mut scores = Vec::with_capacity(configs.len());
    for c in configs {
        let (mean, std) = mean_std(&eval_config(agent, env, c, episodes, seed)?);
        let normalized = if c.is_all_on() { 1.0 } else { mean / anchor };
        scores.push(ConfigScore { config: c.clone(), mean, std, normalized });
    }
    Ok(SubPolicyEval { episodes, anchor, scores })
}

/// Per-action-dimension variance of sub-policy actions.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub per_dim: [f64; 2],
    pub states: usize,
    pub configs: usize,
}

/// Population variance across `configs` of the policy's actions, per action
/// dimension, averaged over `states`.
pub fn action_variance(policy: &Policy, agent_masks: &[FeatureMask], states: &[Vec<f64>]) -> Result<VarianceReport> {
    if states.len() < MIN_EVAL_STATES {
        return Err(Error::config(format!(
            "action variance needs at least {MIN_EVAL_STATES} states, got {}",
            states.len()
        )));
    }
    variance_unchecked(policy, agent_masks, states)
}

pub(crate) fn variance_unchecked(policy: &Policy, masks: &[FeatureMask], states: &[Vec<f64>]) -> Result<VarianceReport> {
    if masks.is_empty() {
        return Err(Error::config("action variance needs at least one configuration"));
    }
    let n = states.len();
    let flat: Vec<f64> = states.iter().flatten().copied().collect();
    let pass = policy.forward(&flat, n, masks.to_vec())?;
    let acts = pass.actions();
    let k = masks.len() as f64;
    let mut per_dim = [0.0; 2];
    for i in 0..n {
        for (d, slot) in per_dim.iter_mut().enumerate() {
            let vals = (0..masks.len()).map(|j| acts[(j * n + i) * 2 + d]);
            let mean = vals.clone().sum::<f64>() / k;
            *slot += vals.map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        }
    }
    per_dim.iter_mut().for_each(|v| *v /= n as f64);
    Ok(VarianceReport { per_dim, states: n, configs: masks.len() })
}

/// Masks for every configuration in `configs`, as the agent applies them.
pub fn config_masks(agent: &Agent, configs: &[DropConfig]) -> Result<Vec<FeatureMask>> {
    configs.iter().map(|c| agent.config_mask(c)).collect()
}

/// Last-hidden-layer activations, one row per (config, state) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub rows: Vec<f64>,
    pub dim: usize,
    /// Configuration index of each row.
    pub labels: Vec<usize>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn embeddings(policy: &Policy, masks: &[FeatureMask], states: &[Vec<f64>]) -> Result<EmbeddingSet> {
    let n = states.len();
    let flat: Vec<f64> = states.iter().flatten().copied().collect();
    let pass = policy.forward(&flat, n, masks.to_vec())?;
    let rows = pass.last_hidden().to_vec();
    let dim = rows.len() / (n * masks.len());
    let labels = (0..masks.len()).flat_map(|j| std::iter::repeat_n(j, n)).collect();
    Ok(EmbeddingSet { rows, dim, labels })
}

/// Flattened states visited by greedy all-sensor rollouts, every `stride`-th step.
pub fn collect_states(agent: &Agent, env: &mut TrackEnv, episodes: usize, seed: u64, stride: usize) -> Result<Vec<Vec<f64>>> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for k in 0..episodes {
        run_episode(env, eval_seed(seed, k), |obs, t| {
            let s = agent.flatten(obs);
            let a = agent.act_state(&s, FeatureMask::Identity)?;
            if t % stride == 0 {
                out.push(s);
            }
            Ok(a)
        })?;
    }
    Ok(out)
}

/// A named sensor corruption applied at evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseScenario {
    pub name: String,
    pub spec: SensorNoiseSpec,
}

/// Single-sensor and joint Gaussian noise at `sigma` (normalized units).
pub fn default_noise_grid(sigma: f64, seed: u64) -> Vec<NoiseScenario> {
    let mut grid = Vec::new();
    for s in Sensor::ALL {
        let mut spec = SensorNoiseSpec::clean(seed);
        spec.sigma[s.index()] = sigma;
        grid.push(NoiseScenario { name: format!("{}-noise", s.name()), spec });
    }
    grid.push(NoiseScenario {
        name: "all-noise".into(),
        spec: SensorNoiseSpec { sigma: [sigma; 3], failed: [false; 3], seed },
    });
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub scenario: String,
    /// `None` when the agent refused to act (no usable sensor).
    pub mean_return: Option<f64>,
    pub std_return: Option<f64>,
    pub drop_pct: Option<f64>,
}

impl RobustnessRow {
    pub fn operable(&self) -> bool {
        self.mean_return.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessTable {
    pub clean: f64,
    pub clean_std: f64,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    /// Mean drop over the operable scenarios.
    pub fn mean_drop(&self) -> Option<f64> {
        let d: Vec<f64> = self.rows.iter().filter_map(|r| r.drop_pct).collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    }
}

/// Clean versus corrupted greedy returns over the same episode seeds.
pub fn robustness_eval(
    agent: &Agent,
    env: &mut TrackEnv,
    grid: &[NoiseScenario],
    episodes: usize,
    seed: u64,
) -> Result<RobustnessTable> {
    if episodes < MIN_EVAL_EPISODES {
        return Err(Error::config(format!(
            "robustness evaluation needs at least {MIN_EVAL_EPISODES} episodes, got {episodes}"
        )));
    }
    let clean_runs: Vec<f64> = (0..episodes)
        .map(|k| run_episode(env, eval_seed(seed, k), |obs, _| agent.act(obs)))
        .collect::<Result<_>>()?;
    let (clean, clean_std) = mean_std(&clean_runs);
    let mut rows = Vec::with_capacity(grid.len());
    for sc in grid {
        sc.spec.validate()?;
        let mut runs = Vec::with_capacity(episodes);
        let mut refused = false;
        for k in 0..episodes {
            let mut rng = ChaCha8Rng::seed_from_u64(sc.spec.seed ^ eval_seed(seed, k));
            let r = run_episode(env, eval_seed(seed, k), |obs, _| agent.act(&corrupt(obs, &sc.spec, &mut rng)?));
            match r {
                Ok(v) => runs.push(v),
                Err(Error::Refusal(_)) => {
                    refused = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        rows.push(if refused {
            RobustnessRow { scenario: sc.name.clone(), mean_return: None, std_return: None, drop_pct: None }
        } else {
            let (m, s) = mean_std(&runs);
            RobustnessRow {
                scenario: sc.name.clone(),
                mean_return: Some(m),
                std_return: Some(s),
                drop_pct: Some((clean - m) / clean * 100.0),
            }
        });
    }
    Ok(RobustnessTable { clean, clean_std, rows })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn saliency_csv(s: &Saliency) -> String {
    let mut out = String::from("sensor,element,saliency\n");
    for (sensor, r) in &s.blocks {
        for (i, v) in s.values[r.clone()].iter().enumerate() {
            let _ = writeln!(out, "{},{i},{v}", sensor.name());
        }
    }
    out
}

pub fn sensitivity_csv(r: &SensitivityReport) -> String {
    let names = |v: &[Sensor]| v.iter().map(|s| s.name()).collect::<Vec<_>>().join("+");
    format!(
        "numerator,denominator,ratio,states,excluded\n{},{},{},{},{}\n",
        names(&r.numerator),
        names(&r.denominator),
        opt(r.ratio),
        r.states,
        r.excluded
    )
}

pub fn subpolicy_csv(e: &SubPolicyEval) -> String {
    let mut out = String::from("config,mean_return,std_return,normalized,episodes\n");
    for s in &e.scores {
        let _ = writeln!(out, "{},{},{},{},{}", s.config.label(), s.mean, s.std, s.normalized, e.episodes);
    }
    out
}

pub fn variance_csv(v: &VarianceReport) -> String {
    format!(
        "steer_variance,accel_variance,states,configs\n{},{},{},{}\n",
        v.per_dim[0], v.per_dim[1], v.states, v.configs
    )
}

pub fn pca_csv(p: &Pca) -> String {
    let mut out = String::from("component,eigenvalue,fraction\n");
    for (i, (l, f)) in p.eigenvalues.iter().zip(&p.fractions).enumerate() {
        let _ = writeln!(out, "{i},{l},{f}");
    }
    out
}

pub fn robustness_csv(t: &RobustnessTable) -> String {
    let mut out = String::from("scenario,mean_return,std_return,drop_pct,operable\n");
    let _ = writeln!(out, "clean,{},{},0,1", t.clean, t.clean_std);
    for r in &t.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.scenario,
            opt(r.mean_return),
            opt(r.std_return),
            opt(r.drop_pct),
            u8::from(r.operable())
        );
    }
    out
}

pub fn write_csv(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}
