use rand::Rng;

use super::consistency::{argmax_lowest, aux_penalty, per_set_sums, AuxSpec};
use super::model::{soft_update_all, Critic, FeatureMask, Optimizer, Policy, StateLayout};
use super::replay::Batch;
use super::UpdateStats;
use crate::error::{Error, Result};
use crate::nn::Network;

/// Actor-critic learner with target copies of both networks.
#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: Policy,
    pub critic: Critic,
    pub actor_target: Policy,
    pub critic_target: Critic,
    pub actor_opt: Optimizer,
    pub critic_opt: Optimizer,
}

/// Actor loss terms and gradients aligned with [`Policy::nets`].
#[derive(Debug, Clone)]
pub struct ActorGrads {
    /// Mean of `Q(s, mu_c(s))` over the batch.
    pub objective: f64,
    pub aux_loss: f64,
    pub c_star: Option<usize>,
    pub grads: Vec<Vec<f64>>,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(
        layout: &StateLayout,
        hidden: usize,
        actor_lr: f64,
        critic_lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let actor = Policy::new(layout, hidden, rng)?;
        let critic = Critic::new(layout, hidden, rng)?;
        let actor_opt = Optimizer::new(&actor.nets(), actor_lr);
        let critic_opt = Optimizer::new(&critic.nets(), critic_lr);
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
        })
    }

    /// `y = r + gamma * (1 - done) * Q'(s', mu'(s'))` from the target networks.
    pub fn targets(&self, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
        let n = batch.size;
        let next = self
            .actor_target
            .forward(&batch.next_states, n, vec![FeatureMask::Identity])?;
        let q = self.critic_target.forward(&batch.next_states, n, next.actions())?;
        Ok((0..n)
            .map(|i| {
                let boot = if batch.dones[i] { 0.0 } else { gamma * q.values()[i] };
                batch.rewards[i] + boot
            })
            .collect())
    }

    /// Mean squared Bellman error against fixed targets `y`, with gradients
    /// aligned with [`Critic::nets`].
    pub fn critic_loss_grads(&self, batch: &Batch, y: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = batch.size;
        let pass = self.critic.forward(&batch.states, n, &batch.actions)?;
        let mut loss = 0.0;
        let mut up = Vec::with_capacity(n);
        for (q, t) in pass.values().iter().zip(y) {
            let d = q - t;
            loss += d * d;
            up.push(2.0 * d / n as f64);
        }
        let (grads, _) = self.critic.backward(&pass, &up, true)?;
        Ok((loss / n as f64, grads))
    }

    /// Target actions under every mask in `masks`, the target critic's batch
    /// sums for each, and the winning configuration.
    pub fn score_configs(&self, states: &[f64], n: usize, masks: &[FeatureMask]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let pass = self.actor_target.forward(states, n, masks.to_vec())?;
        let q = self.critic_target.forward(states, n, pass.actions())?;
        let scores = per_set_sums(q.values(), n);
        let best = argmax_lowest(&scores).ok_or_else(|| Error::config("aux loss needs configurations"))?;
        Ok((pass.actions().to_vec(), scores, best))
    }

    /// Loss `-mean Q(s, mu_c(s)) + aux` and its gradient w.r.t. the actor.
    pub fn actor_loss_grads(&self, batch: &Batch, mask: FeatureMask, aux: Option<&AuxSpec>) -> Result<ActorGrads> {
        let n = batch.size;
        let aux = aux.filter(|a| a.lambda != 0.0);
        let mut masks = vec![mask];
        let mut target = None;
        if let Some(spec) = aux {
            let (actions, _, best) = self.score_configs(&batch.states, n, &spec.masks)?;
            target = Some((actions[best * n * 2..(best + 1) * n * 2].to_vec(), best));
            masks.extend(spec.masks.iter().cloned());
        }
        let pass = self.actor.forward(&batch.states, n, masks)?;
        let own = &pass.actions()[..n * 2];
        let q = self.critic.forward(&batch.states, n, own)?;
        let objective = q.values().iter().sum::<f64>() / n as f64;
        let dq = vec![-1.0 / n as f64; n];
        let (_, da) = self.critic.backward(&q, &dq, false)?;
        let mut upstream = da;
        let mut aux_loss = 0.0;
        let mut c_star = None;
        if let (Some(spec), Some((t, best))) = (aux, target) {
            let (l, g) = aux_penalty(&pass.actions()[n * 2..], &t, spec.lambda)?;
            aux_loss = l;
            c_star = Some(best);
            upstream.extend(g);
        }
        let (grads, _) = self.actor.backward(&pass, &upstream)?;
        Ok(ActorGrads { objective, aux_loss, c_star, grads })
    }

    /// Critic step, actor step, then soft target update.
    pub fn update(
        &mut self,
        batch: &Batch,
        gamma: f64,
        tau: f64,
        mask: FeatureMask,
        aux: Option<&AuxSpec>,
    ) -> Result<UpdateStats> {
        let y = self.targets(batch, gamma)?;
        let (bellman, cg) = self.critic_loss_grads(batch, &y)?;
        if !bellman.is_finite() {
            return Err(Error::numeric("critic update", format!("Bellman loss {bellman}")));
        }
        self.critic_opt.step(self.critic.nets_mut(), &cg)?;
        let ag = self.actor_loss_grads(batch, mask, aux)?;
        self.actor_opt.step(self.actor.nets_mut(), &ag.grads)?;
        self.soft_update(tau)?;
        Ok(UpdateStats {
            bellman_loss: bellman,
            aux_loss: ag.aux_loss,
            c_star: ag.c_star,
        })
    }

    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        soft_update_all(self.actor_target.nets_mut(), self.actor.nets(), tau)?;
        soft_update_all(self.critic_target.nets_mut(), self.critic.nets(), tau)
    }

    /// Named networks in checkpoint order.
    pub fn named_nets(&self) -> Vec<(String, &Network)> {
        let mut out = Vec::new();
        push_named(&mut out, "actor", self.actor.nets());
        push_named(&mut out, "critic", self.critic.nets());
        push_named(&mut out, "actor_target", self.actor_target.nets());
        push_named(&mut out, "critic_target", self.critic_target.nets());
        out
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Network> {
        let mut v = self.actor.nets_mut();
        v.extend(self.critic.nets_mut());
        v.extend(self.actor_target.nets_mut());
        v.extend(self.critic_target.nets_mut());
        v
    }

    pub fn optimizers_mut(&mut self) -> Vec<(&'static str, &mut Optimizer)> {
        vec![("actor_opt", &mut self.actor_opt), ("critic_opt", &mut self.critic_opt)]
    }

    pub fn optimizers(&self) -> Vec<(&'static str, &Optimizer)> {
        vec![("actor_opt", &self.actor_opt), ("critic_opt", &self.critic_opt)]
    }
}

pub(crate) fn push_named<'a>(out: &mut Vec<(String, &'a Network)>, prefix: &str, nets: Vec<&'a Network>) {
    for (i, n) in nets.into_iter().enumerate() {
        out.push((format!("{prefix}.{i}"), n));
    }
}
