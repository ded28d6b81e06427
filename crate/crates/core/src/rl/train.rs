use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::consistency::AuxSpec;
use super::model::FeatureMask;
use super::ou::OuProcess;
use super::replay::{ReplayBuffer, Transition};
use super::{Agent, Algorithm, Variant};
use crate::env::{EnvConfig, TrackEnv, TrackSpec};
use crate::error::{Error, Result};
use crate::nn::BernoulliDropout;
use crate::sensor_dropout::DropDistribution;

/// Sensor Dropout law used by the SD variants.
#[derive(Debug, Clone, PartialEq)]
pub enum SdChoice {
    Uniform,
    /// One probability per configuration, in enumeration order.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub variant: Variant,
    pub gamma: f64,
    pub tau: f64,
    pub batch: usize,
    /// Actor (DDPG) or policy stream (NAF).
    pub actor_lr: f64,
    /// Critic (DDPG) or value/curvature stream (NAF).
    pub critic_lr: f64,
    /// Weight of the consistency penalty; used by `multi-sd-aux` only.
    pub aux_lambda: f64,
    pub sd: SdChoice,
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
    pub capacity: usize,
    pub warmup: usize,
    pub ou_theta: f64,
    pub ou_sigma_start: f64,
    pub ou_sigma_end: f64,
    pub ou_dt: f64,
    pub dropout_keep: f64,
    pub hidden: usize,
    /// Multiplier applied to rewards before they enter the replay buffer.
    pub reward_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ddpg,
            variant: Variant::MultiSd,
            gamma: 0.99,
            tau: 0.001,
            batch: 16,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            aux_lambda: 0.01,
            sd: SdChoice::Uniform,
            episodes: 150,
            steps: 400,
            seed: 0,
            capacity: 100_000,
            warmup: 1000,
            ou_theta: 0.15,
            ou_sigma_start: 0.2,
            ou_sigma_end: 0.05,
            ou_dt: 1.0,
            dropout_keep: 0.8,
            hidden: 64,
            reward_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        if !(self.aux_lambda.is_finite() && self.aux_lambda >= 0.0) {
            return bad(format!("aux_lambda {} must be >= 0", self.aux_lambda));
        }
        if self.batch == 0 || self.steps == 0 || self.hidden == 0 || self.capacity < self.batch {
            return bad("batch, steps and hidden must be positive and capacity >= batch".into());
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} {lr} must be positive"));
            }
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad(format!("dropout_keep {} outside (0, 1]", self.dropout_keep));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad(format!("reward_scale {} must be positive", self.reward_scale));
        }
        OuProcess::new(self.ou_theta, self.ou_sigma_start, self.ou_dt)?;
        OuProcess::new(self.ou_theta, self.ou_sigma_end, self.ou_dt)?;
        Ok(())
    }

    /// OU volatility for episode `e`, linear from start to end over the run.
    pub fn sigma_at(&self, e: usize) -> f64 {
        if self.episodes <= 1 {
            return self.ou_sigma_start;
        }
        let f = (e as f64 / (self.episodes - 1) as f64).min(1.0);
        self.ou_sigma_start + (self.ou_sigma_end - self.ou_sigma_start) * f
    }
}

/// Reset seed of training episode `e`.
pub fn episode_seed(seed: u64, e: usize) -> u64 {
    seed ^ (e as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_OU: u64 = 1;
pub(crate) const STREAM_REPLAY: u64 = 2;
pub(crate) const STREAM_SD: u64 = 3;
pub(crate) const STREAM_DROPOUT: u64 = 4;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// One learning-curve row.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    pub steps: usize,
    pub ret: f64,
    /// Mean over the episode's updates; `None` before updates start.
    pub bellman_loss: Option<f64>,
    pub aux_loss: Option<f64>,
    pub c_star_mode: Option<usize>,
}

pub const CURVE_HEADER: &str = "episode,steps,return,bellman_loss,aux_loss,c*_index_mode";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.episode,
            r.steps,
            r.ret,
            opt(r.bellman_loss),
            opt(r.aux_loss),
            r.c_star_mode.map(|c| c.to_string()).unwrap_or_default()
        ));
    }
    out
}

pub fn write_curve_csv(rows: &[CurveRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(curve_csv(rows).as_bytes()).map_err(|e| Error::io(path, e))
}

/// Random streams driving one run; each consumer owns its stream so that
/// enabling one mechanism never shifts the draws of another.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRngs {
    pub ou: ChaCha8Rng,
    pub replay: ChaCha8Rng,
    pub sd: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            ou: stream(seed, STREAM_OU),
            replay: stream(seed, STREAM_REPLAY),
            sd: stream(seed, STREAM_SD),
            dropout: stream(seed, STREAM_DROPOUT),
        }
    }
}

/// Resumable training loop.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub env: TrackEnv,
    pub agent: Agent,
    pub replay: ReplayBuffer,
    pub ou: OuProcess,
    pub rngs: TrainRngs,
    pub episode: usize,
    pub total_steps: u64,
    pub curve: Vec<CurveRow>,
    sd: Option<DropDistribution>,
    aux: Option<AuxSpec>,
    dropout: Option<BernoulliDropout>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, track: TrackSpec, mut env_cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        env_cfg.max_steps = cfg.steps;
        let env = TrackEnv::new(track, env_cfg)?;
        let mut init = stream(cfg.seed, STREAM_INIT);
        let agent = Agent::new(
            cfg.algorithm,
            cfg.variant,
            env.config(),
            cfg.hidden,
            cfg.actor_lr,
            cfg.critic_lr,
            &mut init,
        )?;
        Self::with_agent(cfg, env, agent)
    }

    /// Wraps an existing agent (fresh replay, optimizers as stored in the agent).
    pub fn with_agent(cfg: TrainConfig, env: TrackEnv, agent: Agent) -> Result<Self> {
        cfg.validate()?;
        let dims = agent.feature_dims().to_vec();
        let sd = if cfg.variant.uses_sd() {
            Some(match &cfg.sd {
                SdChoice::Uniform => DropDistribution::uniform(&dims)?,
                SdChoice::Explicit(p) => DropDistribution::new(&dims, p.clone())?,
            })
        } else {
            None
        };
        let aux = if cfg.variant.uses_aux() && cfg.aux_lambda > 0.0 {
            let configs = crate::sensor_dropout::enumerate_configs(dims.len())?;
            let masks = configs
                .iter()
                .map(|c| agent.config_mask(c))
                .collect::<Result<Vec<_>>>()?;
            Some(AuxSpec { lambda: cfg.aux_lambda, masks })
        } else {
            None
        };
        let dropout = if cfg.variant == Variant::MultiDropout {
            Some(BernoulliDropout::new(cfg.dropout_keep)?)
        } else {
            None
        };
        Ok(Self {
            replay: ReplayBuffer::new(cfg.capacity)?,
            ou: OuProcess::new(cfg.ou_theta, cfg.ou_sigma_start, cfg.ou_dt)?,
            rngs: TrainRngs::new(cfg.seed),
            episode: 0,
            total_steps: 0,
            curve: Vec::new(),
            sd,
            aux,
            dropout,
            cfg,
            env,
            agent,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.episode >= self.cfg.episodes
    }

    /// Runs the remaining episodes.
    pub fn run(&mut self) -> Result<&[CurveRow]> {
        while !self.is_finished() {
            self.run_episode()?;
        }
        Ok(&self.curve)
    }

    /// Runs up to `n` further episodes.
    pub fn run_episodes(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            if self.is_finished() {
                break;
            }
            self.run_episode()?;
        }
        Ok(())
    }

    fn policy_mask(&mut self) -> FeatureMask {
        if let Some(sd) = &self.sd {
            let config = sd.sample(&mut self.rngs.sd);
            return self.agent.config_mask(config).unwrap_or(FeatureMask::Identity);
        }
        if let Some(d) = &self.dropout {
            let n = self.cfg.batch * self.agent.policy().encoder.feature_dim();
            return FeatureMask::PerRow(d.sample_mask(n, &mut self.rngs.dropout));
        }
        FeatureMask::Identity
    }

    pub fn run_episode(&mut self) -> Result<CurveRow> {
        let e = self.episode;
        let ctx = |step: usize| move |err: Error| Error::Training { episode: e, step, source: Box::new(err) };
        self.ou.sigma = self.cfg.sigma_at(e);
        self.ou.reset();
        let obs = self.env.reset(episode_seed(self.cfg.seed, e));
        let mut state = self.agent.flatten(&obs);
        let mut ret = 0.0;
        let mut steps = 0;
        let (mut bellman, mut aux_sum, mut updates) = (0.0, 0.0, 0usize);
        let mut c_counts: Vec<usize> = Vec::new();
        for t in 0..self.cfg.steps {
            let greedy = self.agent.act_state(&state, FeatureMask::Identity).map_err(ctx(t))?;
            let noise = self.ou.sample(&mut self.rngs.ou);
            let action = [
                (greedy[0] + noise[0]).clamp(-1.0, 1.0),
                (greedy[1] + noise[1]).clamp(-1.0, 1.0),
            ];
            let step = self.env.step(action).map_err(ctx(t))?;
            let next = self.agent.flatten(&step.observation);
            self.replay
                .push(Transition {
                    state: std::mem::take(&mut state),
                    action,
                    reward: step.reward * self.cfg.reward_scale,
                    next_state: next.clone(),
                    done: step.off_track,
                })
                .map_err(ctx(t))?;
            ret += step.reward;
            steps += 1;
            self.total_steps += 1;
            state = next;
            if self.replay.len() >= self.cfg.warmup.max(self.cfg.batch) {
                let batch = self.replay.sample(self.cfg.batch, &mut self.rngs.replay).map_err(ctx(t))?;
                let mask = self.policy_mask();
                let stats = self
                    .agent
                    .update(&batch, self.cfg.gamma, self.cfg.tau, mask, self.aux.as_ref())
                    .map_err(ctx(t))?;
                bellman += stats.bellman_loss;
                aux_sum += stats.aux_loss;
                updates += 1;
                if let Some(c) = stats.c_star {
                    if c_counts.len() <= c {
                        c_counts.resize(c + 1, 0);
                    }
                    c_counts[c] += 1;
                }
            }
            if step.done {
                break;
            }
        }
        let mean = |s: f64| (updates > 0).then(|| s / updates as f64);
        let c_star_mode = c_counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .fold(None, |best: Option<(usize, usize)>, (j, &n)| match best {
                Some((_, bn)) if n <= bn => best,
                _ => Some((j, n)),
            })
            .map(|(j, _)| j);
        let row = CurveRow {
            episode: e,
            steps,
            ret,
            bellman_loss: mean(bellman),
            aux_loss: self.aux.as_ref().and(mean(aux_sum)),
            c_star_mode,
        };
        log::debug!("{} {} episode {e}: return {ret:.2} over {steps} steps", self.cfg.algorithm, self.cfg.variant);
        self.curve.push(row.clone());
        self.episode += 1;
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_anneals_linearly() {
        let cfg = TrainConfig { episodes: 11, ..TrainConfig::default() };
        assert_eq!(cfg.sigma_at(0), 0.2);
        assert!((cfg.sigma_at(10) - 0.05).abs() < 1e-15);
        assert!((cfg.sigma_at(5) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainConfig { gamma: 1.5, ..ok.clone() },
            TrainConfig { aux_lambda: -1.0, ..ok.clone() },
            TrainConfig { batch: 0, ..ok.clone() },
            TrainConfig { dropout_keep: 0.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn zero_episodes_gives_empty_curve() {
        let cfg = TrainConfig { episodes: 0, variant: Variant::UniPhysical, ..TrainConfig::default() };
        let mut t = Trainer::new(cfg, TrackSpec::desk_oval(), EnvConfig::default()).unwrap();
        assert!(t.run().unwrap().is_empty());
        assert_eq!(t.total_steps, 0);
    }

    #[test]
    fn curve_csv_has_header_and_blank_fields() {
        let rows = vec![CurveRow {
            episode: 0,
            steps: 3,
            ret: 1.5,
            bellman_loss: None,
            aux_loss: None,
            c_star_mode: None,
        }];
        assert_eq!(curve_csv(&rows), format!("{CURVE_HEADER}\n0,3,1.5,,,\n"));
    }
}
