//! Off-policy continuous-control learners (DDPG, NAF) with Sensor Dropout.

pub mod consistency;
pub mod ddpg;
pub mod model;
pub mod naf;
pub mod ou;
pub mod replay;
pub mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use consistency::{argmax_lowest, aux_penalty, AuxSpec};
pub use ddpg::{ActorGrads, DdpgAgent};
pub use model::{Critic, Encoder, FeatureMask, Optimizer, Policy, PolicyPass, StateLayout};
pub use naf::{NafAgent, NafNet, NafOutputs};
pub use ou::OuProcess;
pub use replay::{Batch, ReplayBuffer, Transition};
pub use train::{curve_csv, episode_seed, write_curve_csv, CurveRow, SdChoice, TrainConfig, Trainer, CURVE_HEADER};

use crate::env::{EnvConfig, MultiObservation, Sensor};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::sensor_dropout::{DropConfig, SdMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ddpg,
    Naf,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Naf => "naf",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpg" => Ok(Algorithm::Ddpg),
            "naf" => Ok(Algorithm::Naf),
            _ => Err(Error::config(format!("unknown algorithm '{s}' (ddpg, naf)"))),
        }
    }
}

/// Sensor set and regularizer combination being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    UniPhysical,
    UniLaser,
    UniImage,
    MultiNaive,
    MultiDropout,
    MultiSd,
    MultiSdAux,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::UniPhysical,
        Variant::UniLaser,
        Variant::UniImage,
        Variant::MultiNaive,
        Variant::MultiDropout,
        Variant::MultiSd,
        Variant::MultiSdAux,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::UniPhysical => "uni-physical",
            Variant::UniLaser => "uni-laser",
            Variant::UniImage => "uni-image",
            Variant::MultiNaive => "multi-naive",
            Variant::MultiDropout => "multi-dropout",
            Variant::MultiSd => "multi-sd",
            Variant::MultiSdAux => "multi-sd-aux",
        }
    }

    pub fn sensors(self) -> Vec<Sensor> {
        match self {
            Variant::UniPhysical => vec![Sensor::Physical],
            Variant::UniLaser => vec![Sensor::Laser],
            Variant::UniImage => vec![Sensor::Image],
            _ => Sensor::ALL.to_vec(),
        }
    }

    pub fn uses_sd(self) -> bool {
        matches!(self, Variant::MultiSd | Variant::MultiSdAux)
    }

    pub fn uses_aux(self) -> bool {
        self == Variant::MultiSdAux
    }

    pub fn is_multi(self) -> bool {
        self.sensors().len() > 1
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant '{s}'")))
    }
}

/// Losses reported by one gradient update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub bellman_loss: f64,
    pub aux_loss: f64,
    pub c_star: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum Model {
    Ddpg(DdpgAgent),
    Naf(NafAgent),
}

/// A learner together with the sensor layout it was built for.
#[derive(Debug, Clone)]
pub struct Agent {
    pub algorithm: Algorithm,
    pub variant: Variant,
    pub layout: StateLayout,
    pub hidden: usize,
    pub model: Model,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        algorithm: Algorithm,
        variant: Variant,
        env: &EnvConfig,
        hidden: usize,
        actor_lr: f64,
        critic_lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        let layout = StateLayout::new(&variant.sensors(), env)?;
        let model = match algorithm {
            Algorithm::Ddpg => Model::Ddpg(DdpgAgent::new(&layout, hidden, actor_lr, critic_lr, rng)?),
            Algorithm::Naf => Model::Naf(NafAgent::new(&layout, hidden, actor_lr, critic_lr, rng)?),
        };
        Ok(Self { algorithm, variant, layout, hidden, model })
    }

    /// The action-producing network (DDPG actor, NAF policy stream).
    pub fn policy(&self) -> &Policy {
        match &self.model {
            Model::Ddpg(a) => &a.actor,
            Model::Naf(a) => &a.online.mu,
        }
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.layout.sensors
    }

    pub fn feature_dims(&self) -> &[usize] {
        self.policy().encoder.feature_dims()
    }

    pub fn state_dim(&self) -> usize {
        self.layout.state_dim()
    }

    /// Normalized blocks of this agent's sensors, concatenated.
    pub fn flatten(&self, obs: &MultiObservation) -> Vec<f64> {
        obs.flatten(&self.layout.sensors)
    }

    /// Feature mask realizing `config`; identity for the all-on config.
    pub fn config_mask(&self, config: &DropConfig) -> Result<FeatureMask> {
        if config.sensors() != self.layout.sensors.len() {
            return Err(Error::config(format!(
                "{}-sensor config for a {}-sensor agent",
                config.sensors(),
                self.layout.sensors.len()
            )));
        }
        if config.is_all_on() {
            return Ok(FeatureMask::Identity);
        }
        Ok(FeatureMask::Shared(SdMask::new(config, self.feature_dims())?.multipliers().to_vec()))
    }

    /// Configuration implied by which of this agent's sensors are available.
    pub fn availability_config(&self, obs: &MultiObservation) -> Result<DropConfig> {
        let flags: Vec<bool> = self.layout.sensors.iter().map(|&s| obs.is_available(s)).collect();
        DropConfig::from_availability(&flags)
    }

    /// Greedy action with unavailable sensors masked out, clipped to `[-1, 1]^2`.
    pub fn act(&self, obs: &MultiObservation) -> Result<[f64; 2]> {
        let config = self.availability_config(obs)?;
        let mask = self.config_mask(&config)?;
        self.act_state(&self.flatten(obs), mask)
    }

    pub fn act_state(&self, state: &[f64], mask: FeatureMask) -> Result<[f64; 2]> {
        let pass = self.policy().forward(state, 1, vec![mask])?;
        let a = pass.actions();
        Ok([a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)])
    }

    pub fn update(
        &mut self,
        batch: &Batch,
        gamma: f64,
        tau: f64,
        mask: FeatureMask,
        aux: Option<&AuxSpec>,
    ) -> Result<UpdateStats> {
        match &mut self.model {
            Model::Ddpg(a) => a.update(batch, gamma, tau, mask, aux),
            Model::Naf(a) => a.update(batch, gamma, tau, mask, aux),
        }
    }

    /// Every network with a stable name, in checkpoint order.
    pub fn named_nets(&self) -> Vec<(String, &Network)> {
        match &self.model {
            Model::Ddpg(a) => a.named_nets(),
            Model::Naf(a) => a.named_nets(),
        }
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Network> {
        match &mut self.model {
            Model::Ddpg(a) => a.nets_mut(),
            Model::Naf(a) => a.nets_mut(),
        }
    }

    pub fn optimizers(&self) -> Vec<(&'static str, &Optimizer)> {
        match &self.model {
            Model::Ddpg(a) => a.optimizers(),
            Model::Naf(a) => a.optimizers(),
        }
    }

    pub fn optimizers_mut(&mut self) -> Vec<(&'static str, &mut Optimizer)> {
        match &mut self.model {
            Model::Ddpg(a) => a.optimizers_mut(),
            Model::Naf(a) => a.optimizers_mut(),
        }
    }
}
