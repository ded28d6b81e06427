use rand::Rng;

use super::consistency::{argmax_lowest, aux_penalty, per_set_sums, AuxSpec};
use super::ddpg::push_named;
use super::model::{soft_update_all, Encoder, EncoderTape, FeatureMask, Optimizer, Policy, PolicyPass, StateLayout};
use super::replay::Batch;
use super::UpdateStats;
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Network, Tape};

/// `A = -1/2 |L d|^2` for `L = [[l0, 0], [l1, l2]]`; also returns `u = L d`.
pub fn advantage(l: &[f64], d: [f64; 2]) -> (f64, [f64; 2]) {
    let u = [l[0] * d[0], l[1] * d[0] + l[2] * d[1]];
    (-0.5 * (u[0] * u[0] + u[1] * u[1]), u)
}

/// `P = L^T L`, row-major 2x2.
pub fn precision(l: &[f64]) -> [f64; 4] {
    let p01 = l[1] * l[2];
    [l[0] * l[0] + l[1] * l[1], p01, p01, l[2] * l[2]]
}

/// Normalized advantage network: a policy stream and a value/curvature stream
/// sharing one feature extractor.
#[derive(Debug, Clone)]
pub struct NafNet {
    pub mu: Policy,
    pub encoder: Encoder,
    pub trunk: Network,
    pub v_out: Network,
    pub l_out: Network,
}

/// Per-row outputs of [`NafNet::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct NafOutputs {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    /// `[batch, 2]`.
    pub mu: Vec<f64>,
    /// `[batch, 3]` lower-triangular entries (0,0), (1,0), (1,1).
    pub l: Vec<f64>,
}

impl NafOutputs {
    pub fn p(&self, row: usize) -> [f64; 4] {
        precision(&self.l[row * 3..row * 3 + 3])
    }
}

#[derive(Debug, Clone)]
pub struct NafPass {
    pub out: NafOutputs,
    mu: PolicyPass,
    enc: EncoderTape,
    trunk: Tape,
    v: Tape,
    l: Tape,
    actions: Vec<f64>,
    batch: usize,
}

impl NafPass {
    /// Policy actions for every mask, `[mask, batch, 2]`.
    pub fn mu_actions(&self) -> &[f64] {
        self.mu.actions()
    }
}

impl NafNet {
    pub fn new<R: Rng + ?Sized>(layout: &StateLayout, hidden: usize, rng: &mut R) -> Result<Self> {
        let mu = Policy::new(layout, hidden, rng)?;
        let encoder = Encoder::new(layout, rng)?;
        let f = encoder.feature_dim();
        let trunk = Network::new(
            f,
            vec![
                LayerSpec::dense(f, hidden),
                LayerSpec::activation(Activation::Relu, hidden),
                LayerSpec::dense(hidden, hidden),
                LayerSpec::activation(Activation::Relu, hidden),
            ],
            rng,
        )?;
        let mut v_out = Network::new(hidden, vec![LayerSpec::dense(hidden, 1)], rng)?;
        v_out.init_last_layer(3e-3, rng);
        let l_out = Network::new(
            hidden,
            vec![LayerSpec::dense(hidden, 3), LayerSpec::activation(Activation::Sigmoid, 3)],
            rng,
        )?;
        Ok(Self { mu, encoder, trunk, v_out, l_out })
    }

    /// Policy stream first, then the value stream.
    pub fn nets(&self) -> Vec<&Network> {
        let mut v = self.mu.nets();
        v.extend(self.value_nets());
        v
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Network> {
        let mut v = self.mu.nets_mut();
        v.extend(self.encoder.nets.iter_mut());
        v.push(&mut self.trunk);
        v.push(&mut self.v_out);
        v.push(&mut self.l_out);
        v
    }

    pub fn value_nets(&self) -> Vec<&Network> {
        let mut v: Vec<&Network> = self.encoder.nets.iter().collect();
        v.push(&self.trunk);
        v.push(&self.v_out);
        v.push(&self.l_out);
        v
    }

    pub fn value_nets_mut(&mut self) -> Vec<&mut Network> {
        let mut v: Vec<&mut Network> = self.encoder.nets.iter_mut().collect();
        v.push(&mut self.trunk);
        v.push(&mut self.v_out);
        v.push(&mut self.l_out);
        v
    }

    fn value_stream(&self, states: &[f64], n: usize) -> Result<(EncoderTape, Tape, Tape, Tape)> {
        let (features, enc) = self.encoder.encode(states, n)?;
        let trunk = self.trunk.forward_batch(&features, n)?;
        let v = self.v_out.forward_batch(trunk.output(), n)?;
        let l = self.l_out.forward_batch(trunk.output(), n)?;
        Ok((enc, trunk, v, l))
    }

    /// `V(s)` and `L(s)` entries.
    pub fn value_and_l(&self, states: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, _, v, l) = self.value_stream(states, n)?;
        Ok((v.output().to_vec(), l.output().to_vec()))
    }

    /// `Q(s, a) = V(s) + A(s, a)` with the policy under `masks[0]`; further
    /// masks only produce extra policy actions.
    pub fn forward(&self, states: &[f64], n: usize, actions: &[f64], masks: Vec<FeatureMask>) -> Result<NafPass> {
        if actions.len() != n * 2 {
            return Err(Error::config(format!("NAF expects {n} actions, got {} values", actions.len() / 2)));
        }
        let mu = self.mu.forward(states, n, masks)?;
        let (enc, trunk, v, l) = self.value_stream(states, n)?;
        let mut out = NafOutputs {
            q: Vec::with_capacity(n),
            v: v.output().to_vec(),
            a: Vec::with_capacity(n),
            mu: mu.actions()[..n * 2].to_vec(),
            l: l.output().to_vec(),
        };
        for i in 0..n {
            let d = [actions[2 * i] - out.mu[2 * i], actions[2 * i + 1] - out.mu[2 * i + 1]];
            let (a, _) = advantage(&out.l[3 * i..3 * i + 3], d);
            out.a.push(a);
            out.q.push(out.v[i] + a);
        }
        Ok(NafPass { out, mu, enc, trunk, v, l, actions: actions.to_vec(), batch: n })
    }

    /// Backpropagates `dL/dQ` per row, plus an optional `[extra masks, batch, 2]`
    /// gradient on the additional policy actions. Gradients align with [`NafNet::nets`].
    pub fn backward(&self, pass: &NafPass, dq: &[f64], extra_mu_grad: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
        let n = pass.batch;
        if dq.len() != n {
            return Err(Error::config("dQ must have one entry per row"));
        }
        let mut dmu = Vec::with_capacity(pass.mu.actions().len());
        let mut dl = Vec::with_capacity(n * 3);
        for i in 0..n {
            let l = &pass.out.l[3 * i..3 * i + 3];
            let d = [
                pass.actions[2 * i] - pass.out.mu[2 * i],
                pass.actions[2 * i + 1] - pass.out.mu[2 * i + 1],
            ];
            let (_, u) = advantage(l, d);
            let p = precision(l);
            let g = dq[i];
            // dA/dmu = P d; dA/dL = -u d^T restricted to the lower triangle.
            dmu.push(g * (p[0] * d[0] + p[1] * d[1]));
            dmu.push(g * (p[2] * d[0] + p[3] * d[1]));
            dl.push(-g * u[0] * d[0]);
            dl.push(-g * u[1] * d[0]);
            dl.push(-g * u[1] * d[1]);
        }
        match extra_mu_grad {
            Some(extra) => dmu.extend_from_slice(extra),
            None => dmu.resize(pass.mu.actions().len(), 0.0),
        }
        if dmu.len() != pass.mu.actions().len() {
            return Err(Error::config("extra policy gradient does not match the extra masks"));
        }
        let (mut grads, _) = self.mu.backward(&pass.mu, &dmu)?;
        let (gv, hv) = self.v_out.backward_batch(&pass.v, dq)?;
        let (gl, hl) = self.l_out.backward_batch(&pass.l, &dl)?;
        let h: Vec<f64> = hv.iter().zip(&hl).map(|(a, b)| a + b).collect();
        let (gt, feat) = self.trunk.backward_batch(&pass.trunk, &h)?;
        let (ge, _) = self.encoder.backward(&pass.enc, &feat)?;
        grads.extend(ge);
        grads.push(gt);
        grads.push(gv);
        grads.push(gl);
        Ok(grads)
    }
}

/// NAF learner: online and target networks, separate step sizes for the
/// policy stream and the value stream.
#[derive(Debug, Clone)]
pub struct NafAgent {
    pub online: NafNet,
    pub target: NafNet,
    pub mu_opt: Optimizer,
    pub value_opt: Optimizer,
}

impl NafAgent {
    pub fn new<R: Rng + ?Sized>(
        layout: &StateLayout,
        hidden: usize,
        mu_lr: f64,
        value_lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let online = NafNet::new(layout, hidden, rng)?;
        let mu_opt = Optimizer::new(&online.mu.nets(), mu_lr);
        let value_opt = Optimizer::new(&online.value_nets(), value_lr);
        Ok(Self { target: online.clone(), online, mu_opt, value_opt })
    }

    /// `y = r + gamma * (1 - done) * V'(s')`, since the greedy target action
    /// zeroes the advantage.
    pub fn targets(&self, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
        let (v, _) = self.target.value_and_l(&batch.next_states, batch.size)?;
        Ok((0..batch.size)
            .map(|i| batch.rewards[i] + if batch.dones[i] { 0.0 } else { gamma * v[i] })
            .collect())
    }

    /// Target-network actions under every mask, `sum_i Q'(s_i, mu'_c(s_i))`
    /// per mask, and the winning index. The advantage is centred on the
    /// unmasked target policy.
    pub fn score_configs(&self, states: &[f64], n: usize, masks: &[FeatureMask]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let mut all = vec![FeatureMask::Identity];
        all.extend(masks.iter().cloned());
        let pass = self.target.mu.forward(states, n, all)?;
        let (v, l) = self.target.value_and_l(states, n)?;
        let acts = pass.actions();
        let (centre, per_mask) = acts.split_at(n * 2);
        let mut q = Vec::with_capacity(per_mask.len() / 2);
        for (k, a) in per_mask.chunks_exact(2).enumerate() {
            let i = k % n;
            let d = [a[0] - centre[2 * i], a[1] - centre[2 * i + 1]];
            q.push(v[i] + advantage(&l[3 * i..3 * i + 3], d).0);
        }
        let scores = per_set_sums(&q, n);
        let best = argmax_lowest(&scores).ok_or_else(|| Error::config("aux loss needs configurations"))?;
        Ok((per_mask.to_vec(), scores, best))
    }

    /// Bellman loss plus optional aux term, gradients aligned with [`NafNet::nets`].
    pub fn loss_grads(
        &self,
        batch: &Batch,
        y: &[f64],
        mask: FeatureMask,
        aux: Option<&AuxSpec>,
    ) -> Result<(f64, f64, Option<usize>, Vec<Vec<f64>>)> {
        let n = batch.size;
        let aux = aux.filter(|a| a.lambda != 0.0);
        let mut masks = vec![mask];
        let mut target = None;
        if let Some(spec) = aux {
            let (acts, _, best) = self.score_configs(&batch.states, n, &spec.masks)?;
            target = Some((acts[best * n * 2..(best + 1) * n * 2].to_vec(), best));
            masks.extend(spec.masks.iter().cloned());
        }
        let pass = self.online.forward(&batch.states, n, &batch.actions, masks)?;
        let mut loss = 0.0;
        let mut dq = Vec::with_capacity(n);
        for (q, t) in pass.out.q.iter().zip(y) {
            let d = q - t;
            loss += d * d;
            dq.push(2.0 * d / n as f64);
        }
        let mut aux_loss = 0.0;
        let mut c_star = None;
        let mut extra = None;
        if let (Some(spec), Some((t, best))) = (aux, target) {
            let (l, g) = aux_penalty(&pass.mu_actions()[n * 2..], &t, spec.lambda)?;
            aux_loss = l;
            c_star = Some(best);
            extra = Some(g);
        }
        let grads = self.online.backward(&pass, &dq, extra.as_deref())?;
        Ok((loss / n as f64, aux_loss, c_star, grads))
    }

    pub fn update(
        &mut self,
        batch: &Batch,
        gamma: f64,
        tau: f64,
        mask: FeatureMask,
        aux: Option<&AuxSpec>,
    ) -> Result<UpdateStats> {
        let y = self.targets(batch, gamma)?;
        let (bellman, aux_loss, c_star, mut grads) = self.loss_grads(batch, &y, mask, aux)?;
        if !bellman.is_finite() {
            return Err(Error::numeric("NAF update", format!("Bellman loss {bellman}")));
        }
        let value_grads = grads.split_off(self.online.mu.nets().len());
        self.mu_opt.step(self.online.mu.nets_mut(), &grads)?;
        self.value_opt.step(self.online.value_nets_mut(), &value_grads)?;
        soft_update_all(self.target.nets_mut(), self.online.nets(), tau)?;
        Ok(UpdateStats { bellman_loss: bellman, aux_loss, c_star })
    }

    pub fn named_nets(&self) -> Vec<(String, &Network)> {
        let mut out = Vec::new();
        push_named(&mut out, "naf", self.online.nets());
        push_named(&mut out, "naf_target", self.target.nets());
        out
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Network> {
        let mut v = self.online.nets_mut();
        v.extend(self.target.nets_mut());
        v
    }

    pub fn optimizers(&self) -> Vec<(&'static str, &Optimizer)> {
        vec![("mu_opt", &self.mu_opt), ("value_opt", &self.value_opt)]
    }

    pub fn optimizers_mut(&mut self) -> Vec<(&'static str, &mut Optimizer)> {
        vec![("mu_opt", &mut self.mu_opt), ("value_opt", &mut self.value_opt)]
    }
}
