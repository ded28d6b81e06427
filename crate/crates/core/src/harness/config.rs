//! Plain-text experiment configuration: `key = value` lines under `[section]`
//! headers. Keys before the first header belong to `[experiment]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::env::{EnvConfig, StartMode};
use crate::error::{Error, Result};
use crate::rl::{Algorithm, SdChoice, TrainConfig, Variant};

pub const SECTIONS: [&str; 6] = ["experiment", "train", "env", "sd", "noise", "analysis"];

/// Evaluation-time noise grid: each sensor alone, then all together.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub enabled: bool,
    pub eval_episodes: usize,
    /// Greedy rollouts used to build the evaluation state pool.
    pub state_episodes: usize,
    pub state_stride: usize,
    pub pca_components: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            eval_episodes: 5,
            state_episodes: 2,
            state_stride: 4,
            pca_components: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seeds of the matrix; defaults to `[seed]`.
    pub seeds: Vec<u64>,
    pub algorithm: Algorithm,
    pub variants: Vec<Variant>,
    pub output_dir: Option<PathBuf>,
    /// Centerline file; the built-in desk oval when absent.
    pub track: Option<PathBuf>,
    /// Store the replay buffer in checkpoints so training can resume exactly.
    pub save_replay: bool,
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub noise: NoiseConfig,
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            seeds: vec![seed],
            algorithm: Algorithm::Ddpg,
            variants: Variant::ALL.to_vec(),
            output_dir: None,
            track: None,
            save_replay: false,
            train: TrainConfig { seed, ..TrainConfig::default() },
            env: EnvConfig { start: StartMode::Random, ..EnvConfig::default() },
            noise: NoiseConfig { sigma: 0.1, seed: 7 },
            analysis: AnalysisConfig::default(),
        }
    }

    /// Training settings for one matrix cell.
    pub fn train_config(&self, variant: Variant, seed: u64) -> TrainConfig {
        TrainConfig { variant, seed, algorithm: self.algorithm, ..self.train.clone() }
    }

    pub fn track_spec(&self) -> Result<crate::env::TrackSpec> {
        match &self.track {
            Some(p) => crate::env::TrackSpec::load(p),
            None => Ok(crate::env::TrackSpec::desk_oval()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.env.validate()?;
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("at least one variant and one seed are required"));
        }
        if let Some(p) = &self.track {
            if !p.is_file() {
                return Err(Error::config(format!("track file {} does not exist", p.display())));
            }
        }
        if let SdChoice::Explicit(p) = &self.train.sd {
            crate::sensor_dropout::DropDistribution::new(&[1, 1, 1], p.clone())?;
        }
        if !(self.noise.sigma.is_finite() && self.noise.sigma >= 0.0) {
            return Err(Error::config("noise sigma must be >= 0"));
        }
        let a = &self.analysis;
        if a.eval_episodes < crate::analysis::MIN_EVAL_EPISODES || a.pca_components == 0 || a.state_stride == 0 {
            return Err(Error::config(format!(
                "analysis needs eval_episodes >= {}, pca_components >= 1 and state_stride >= 1",
                crate::analysis::MIN_EVAL_EPISODES
            )));
        }
        Ok(())
    }

    /// Serializes every setting; [`parse_config_str`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let join = |v: Vec<String>| v.join(", ");
        let t = &self.train;
        let e = &self.env;
        let _ = writeln!(o, "[experiment]");
        let _ = writeln!(o, "seed = {}", self.seed);
        let _ = writeln!(o, "seeds = {}", join(self.seeds.iter().map(u64::to_string).collect()));
        let _ = writeln!(o, "algorithm = {}", self.algorithm);
        let _ = writeln!(o, "variants = {}", join(self.variants.iter().map(|v| v.to_string()).collect()));
        if let Some(p) = &self.output_dir {
            let _ = writeln!(o, "output_dir = {}", p.display());
        }
        if let Some(p) = &self.track {
            let _ = writeln!(o, "track = {}", p.display());
        }
        let _ = writeln!(o, "save_replay = {}", self.save_replay);
        let _ = writeln!(o, "\n[train]");
        for (k, v) in [
            ("gamma", t.gamma),
            ("tau", t.tau),
            ("actor_lr", t.actor_lr),
            ("critic_lr", t.critic_lr),
            ("aux_lambda", t.aux_lambda),
            ("ou_theta", t.ou_theta),
            ("ou_sigma_start", t.ou_sigma_start),
            ("ou_sigma_end", t.ou_sigma_end),
            ("ou_dt", t.ou_dt),
            ("dropout_keep", t.dropout_keep),
            ("reward_scale", t.reward_scale),
        ] {
            let _ = writeln!(o, "{k} = {v:?}");
        }
        for (k, v) in [
            ("batch", t.batch),
            ("episodes", t.episodes),
            ("steps", t.steps),
            ("capacity", t.capacity),
            ("warmup", t.warmup),
            ("hidden", t.hidden),
        ] {
            let _ = writeln!(o, "{k} = {v}");
        }
        let _ = writeln!(o, "\n[sd]");
        match &t.sd {
            SdChoice::Uniform => {
                let _ = writeln!(o, "distribution = uniform");
            }
            SdChoice::Explicit(p) => {
                let _ = writeln!(o, "distribution = {}", join(p.iter().map(|x| format!("{x:?}")).collect()));
            }
        }
        let _ = writeln!(o, "\n[env]");
        for (k, v) in [
            ("dt", e.dt),
            ("laser_range", e.laser.max_range),
            ("laser_fov", e.laser.fov),
            ("image_cell", e.image.cell),
            ("reward_progress", e.reward.progress),
            ("reward_drift", e.reward.drift),
            ("reward_offset", e.reward.offset),
            ("off_track_penalty", e.reward.off_track_penalty),
            ("wheelbase", e.dynamics.wheelbase),
            ("max_steer", e.dynamics.max_steer),
            ("max_accel", e.dynamics.max_accel),
            ("drag", e.dynamics.drag),
            ("max_speed", e.dynamics.max_speed),
        ] {
            let _ = writeln!(o, "{k} = {v:?}");
        }
        for (k, v) in [
            ("laser_beams", e.laser.beams),
            ("laser_frames", e.laser.frames),
            ("image_height", e.image.height),
            ("image_width", e.image.width),
            ("image_channels", e.image.channels),
            ("image_frames", e.image.frames),
        ] {
            let _ = writeln!(o, "{k} = {v}");
        }
        let start = match e.start {
            StartMode::Fixed => "fixed",
            StartMode::Random => "random",
        };
        let _ = writeln!(o, "start = {start}");
        let _ = writeln!(o, "\n[noise]\nsigma = {:?}\nseed = {}", self.noise.sigma, self.noise.seed);
        let a = &self.analysis;
        let _ = writeln!(
            o,
            "\n[analysis]\nenabled = {}\neval_episodes = {}\nstate_episodes = {}\nstate_stride = {}\npca_components = {}",
            a.enabled, a.eval_episodes, a.state_episodes, a.state_stride, a.pca_components
        );
        o
    }
}

struct Entries<'a> {
    origin: &'a str,
    map: BTreeMap<(String, String), (String, usize)>,
}

impl Entries<'_> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.origin.to_string(), line, msg: msg.into() }
    }

    fn take<T: FromStr>(&mut self, section: &str, key: &str, slot: &mut T) -> Result<Option<usize>> {
        let Some((raw, line)) = self.map.remove(&(section.to_string(), key.to_string())) else {
            return Ok(None);
        };
        *slot = raw
            .parse()
            .map_err(|_| self.err(line, format!("`{key}`: cannot parse `{raw}` as {}", std::any::type_name::<T>())))?;
        Ok(Some(line))
    }

    fn take_list<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<(Vec<T>, usize)>> {
        let Some((raw, line)) = self.map.remove(&(section.to_string(), key.to_string())) else {
            return Ok(None);
        };
        let items = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| self.err(line, format!("`{key}`: bad list item `{s}`"))))
            .collect::<Result<Vec<T>>>()?;
        Ok(Some((items, line)))
    }

    fn check(&self, line: Option<usize>, ok: bool, msg: &str) -> Result<()> {
        match line {
            Some(l) if !ok => Err(self.err(l, msg.to_string())),
            _ => Ok(()),
        }
    }
}

/// Parses and validates configuration text. `origin` names the source in errors.
pub fn parse_config_str(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let mut map = BTreeMap::new();
    let mut section = "experiment".to_string();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { path: origin.to_string(), line: line_no, msg };
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| perr(format!("malformed section header `{line}`")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(perr(format!("unknown section `[{name}]`")));
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| perr(format!("expected `key = value`, got `{line}`")))?;
        let key = (section.clone(), k.trim().to_string());
        if map.contains_key(&key) {
            return Err(perr(format!("duplicate key `{}`", k.trim())));
        }
        map.insert(key, (v.trim().to_string(), line_no));
    }
    let mut en = Entries { origin, map };

    let mut seed = 0u64;
    if en.take("experiment", "seed", &mut seed)?.is_none() {
        return Err(en.err(0, "missing mandatory key `seed`"));
    }
    let mut cfg = ExperimentConfig::with_seed(seed);
    if let Some((s, line)) = en.take_list::<u64>("experiment", "seeds")? {
        en.check(Some(line), !s.is_empty(), "`seeds` must list at least one seed")?;
        cfg.seeds = s;
    }
    en.take("experiment", "algorithm", &mut cfg.algorithm)?;
    if let Some((v, line)) = en.take_list::<Variant>("experiment", "variants")? {
        en.check(Some(line), !v.is_empty(), "`variants` must list at least one variant")?;
        cfg.variants = v;
    }
    let mut path = String::new();
    if en.take("experiment", "output_dir", &mut path)?.is_some() {
        cfg.output_dir = Some(PathBuf::from(&path));
    }
    if let Some(line) = en.take("experiment", "track", &mut path)? {
        let p = PathBuf::from(&path);
        en.check(Some(line), p.is_file(), &format!("track file `{path}` does not exist"))?;
        cfg.track = Some(p);
    }
    en.take("experiment", "save_replay", &mut cfg.save_replay)?;

    let t = &mut cfg.train;
    let l = en.take("train", "gamma", &mut t.gamma)?;
    en.check(l, (0.0..=1.0).contains(&t.gamma), "`gamma` must lie in [0, 1]")?;
    let l = en.take("train", "tau", &mut t.tau)?;
    en.check(l, (0.0..=1.0).contains(&t.tau), "`tau` must lie in [0, 1]")?;
    for (k, slot) in [("actor_lr", &mut t.actor_lr), ("critic_lr", &mut t.critic_lr)] {
        let l = en.take("train", k, slot)?;
        en.check(l, slot.is_finite() && *slot > 0.0, &format!("`{k}` must be positive"))?;
    }
    let l = en.take("train", "aux_lambda", &mut t.aux_lambda)?;
    en.check(l, t.aux_lambda.is_finite() && t.aux_lambda >= 0.0, "`aux_lambda` must be >= 0")?;
    for (k, slot) in [
        ("ou_theta", &mut t.ou_theta),
        ("ou_sigma_start", &mut t.ou_sigma_start),
        ("ou_sigma_end", &mut t.ou_sigma_end),
    ] {
        let l = en.take("train", k, slot)?;
        en.check(l, slot.is_finite() && *slot >= 0.0, &format!("`{k}` must be >= 0"))?;
    }
    let l = en.take("train", "ou_dt", &mut t.ou_dt)?;
    en.check(l, t.ou_dt.is_finite() && t.ou_dt > 0.0, "`ou_dt` must be positive")?;
    let l = en.take("train", "dropout_keep", &mut t.dropout_keep)?;
    en.check(l, t.dropout_keep > 0.0 && t.dropout_keep <= 1.0, "`dropout_keep` must lie in (0, 1]")?;
    let l = en.take("train", "reward_scale", &mut t.reward_scale)?;
    en.check(l, t.reward_scale.is_finite() && t.reward_scale > 0.0, "`reward_scale` must be positive")?;
    for (k, slot) in [("batch", &mut t.batch), ("steps", &mut t.steps), ("hidden", &mut t.hidden)] {
        let l = en.take("train", k, slot)?;
        en.check(l, *slot > 0, &format!("`{k}` must be positive"))?;
    }
    en.take("train", "episodes", &mut t.episodes)?;
    en.take("train", "warmup", &mut t.warmup)?;
    let l = en.take("train", "capacity", &mut t.capacity)?;
    en.check(l, t.capacity >= t.batch, "`capacity` must be at least the batch size")?;

    let mut dist = String::new();
    if let Some(line) = en.take("sd", "distribution", &mut dist)? {
        if dist == "uniform" {
            t.sd = SdChoice::Uniform;
        } else {
            let probs = dist
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| en.err(line, "`distribution` must be `uniform` or a comma-separated list"))?;
            crate::sensor_dropout::DropDistribution::new(&[1, 1, 1], probs.clone())
                .map_err(|e| en.err(line, e.to_string()))?;
            t.sd = SdChoice::Explicit(probs);
        }
    }
    t.seed = seed;

    let e = &mut cfg.env;
    for (k, slot) in [
        ("dt", &mut e.dt),
        ("laser_range", &mut e.laser.max_range),
        ("laser_fov", &mut e.laser.fov),
        ("image_cell", &mut e.image.cell),
        ("wheelbase", &mut e.dynamics.wheelbase),
        ("max_steer", &mut e.dynamics.max_steer),
        ("max_accel", &mut e.dynamics.max_accel),
        ("max_speed", &mut e.dynamics.max_speed),
    ] {
        let l = en.take("env", k, slot)?;
        en.check(l, slot.is_finite() && *slot > 0.0, &format!("`{k}` must be positive"))?;
    }
    for (k, slot) in [
        ("reward_progress", &mut e.reward.progress),
        ("reward_drift", &mut e.reward.drift),
        ("reward_offset", &mut e.reward.offset),
        ("off_track_penalty", &mut e.reward.off_track_penalty),
        ("drag", &mut e.dynamics.drag),
    ] {
        let l = en.take("env", k, slot)?;
        en.check(l, slot.is_finite() && *slot >= 0.0, &format!("`{k}` must be >= 0"))?;
    }
    for (k, slot) in [
        ("laser_frames", &mut e.laser.frames),
        ("image_height", &mut e.image.height),
        ("image_width", &mut e.image.width),
        ("image_channels", &mut e.image.channels),
        ("image_frames", &mut e.image.frames),
    ] {
        let l = en.take("env", k, slot)?;
        en.check(l, *slot > 0, &format!("`{k}` must be positive"))?;
    }
    let l = en.take("env", "laser_beams", &mut e.laser.beams)?;
    en.check(l, e.laser.beams >= 7, "`laser_beams` must be at least 7 (two width-4 convolutions)")?;
    let mut start = String::new();
    if let Some(line) = en.take("env", "start", &mut start)? {
        e.start = match start.as_str() {
            "fixed" => StartMode::Fixed,
            "random" => StartMode::Random,
            _ => return Err(en.err(line, "`start` must be `fixed` or `random`")),
        };
    }
    e.max_steps = t.steps;

    let l = en.take("noise", "sigma", &mut cfg.noise.sigma)?;
    en.check(l, cfg.noise.sigma.is_finite() && cfg.noise.sigma >= 0.0, "`sigma` must be >= 0")?;
    en.take("noise", "seed", &mut cfg.noise.seed)?;

    let a = &mut cfg.analysis;
    en.take("analysis", "enabled", &mut a.enabled)?;
    let l = en.take("analysis", "eval_episodes", &mut a.eval_episodes)?;
    en.check(
        l,
        a.eval_episodes >= crate::analysis::MIN_EVAL_EPISODES,
        &format!("`eval_episodes` must be at least {}", crate::analysis::MIN_EVAL_EPISODES),
    )?;
    for (k, slot) in [
        ("state_episodes", &mut a.state_episodes),
        ("state_stride", &mut a.state_stride),
        ("pca_components", &mut a.pca_components),
    ] {
        let l = en.take("analysis", k, slot)?;
        en.check(l, *slot > 0, &format!("`{k}` must be positive"))?;
    }

    if let Some(((sec, key), (_, line))) = en.map.iter().next() {
        return Err(en.err(*line, format!("unknown key `{key}` in [{sec}]")));
    }
    cfg.validate().map_err(|e| en.err(0, e.to_string()))?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_only_gives_defaults() {
        let c = parse_config_str("seed = 1\n", "t").unwrap();
        assert_eq!(c.train.batch, 16);
        assert_eq!(c.train.actor_lr, 1e-4);
        assert_eq!(c.train.critic_lr, 1e-3);
        assert_eq!(c.train.sd, SdChoice::Uniform);
        assert_eq!(c.variants.len(), 7);
        assert_eq!(c.seeds, vec![1]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("seed = 1\n[train]\ngamma = 1.5\n", 3),
            ("seed = 1\n\nbogus = 2\n", 3),
            ("seed = 1\n[train]\nbatch = many\n", 3),
            ("[oops]\n", 1),
            ("seed = 1\nseed = 2\n", 2),
            ("gamma = 0.9\n", 0),
        ];
        for (text, line) in cases {
            match parse_config_str(text, "t") {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn round_trip() {
        let text = "seed = 9\nseeds = 1, 2\nvariants = multi-sd, uni-laser\nalgorithm = naf\n\
                    [train]\ngamma = 0.95\nhidden = 32\n[sd]\ndistribution = 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.4\n\
                    [env]\nlaser_frames = 2\nstart = fixed\n";
        let c = parse_config_str(text, "t").unwrap();
        let again = parse_config_str(&c.to_text(), "t2").unwrap();
        assert_eq!(c, again);
    }
}
