use rand::Rng;

use crate::env::{EnvConfig, Sensor};
use crate::error::{Error, Result};
use crate::nn::{conv_output_len, Activation, LayerSpec, Network, Tape};

/// Which sensor blocks a model consumes and how each is shaped.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub sensors: Vec<Sensor>,
    /// Flattened input width per sensor.
    pub raw_dims: Vec<usize>,
    pub laser_frames: usize,
    pub laser_beams: usize,
    pub image_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
}

impl StateLayout {
    pub fn new(sensors: &[Sensor], env: &EnvConfig) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::config("a model needs at least one sensor"));
        }
        let dims = env.sensor_dims();
        Ok(Self {
            sensors: sensors.to_vec(),
            raw_dims: sensors.iter().map(|s| dims[s.index()]).collect(),
            laser_frames: env.laser.frames,
            laser_beams: env.laser.beams,
            image_channels: env.image.channels * env.image.frames,
            image_height: env.image.height,
            image_width: env.image.width,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.raw_dims.iter().sum()
    }

    /// Feature extractor for one sensor. Physical readings pass through unchanged.
    pub fn extractor_layers(&self, sensor: Sensor) -> Result<(usize, Vec<LayerSpec>)> {
        use Activation::Relu;
        match sensor {
            Sensor::Physical => Ok((crate::env::PHYSICAL_DIM, Vec::new())),
            Sensor::Laser => {
                let (c, n) = (self.laser_frames, self.laser_beams);
                let l1 = conv_output_len(n, 4, 1)
                    .and_then(|l| conv_output_len(l, 4, 1).map(|l2| (l, l2)))
                    .ok_or_else(|| Error::config(format!("laser needs at least 7 beams, got {n}")))?;
                let layers = vec![
                    LayerSpec::Conv1d { channels: c, length: n, filters: 4, size: 4, stride: 1 },
                    LayerSpec::activation(Relu, 4 * l1.0),
                    LayerSpec::Conv1d { channels: 4, length: l1.0, filters: 4, size: 4, stride: 1 },
                    LayerSpec::activation(Relu, 4 * l1.1),
                ];
                Ok((c * n, layers))
            }
            Sensor::Image => {
                let (c, h, w) = (self.image_channels, self.image_height, self.image_width);
                let (mut oh, mut ow) = match (conv_output_len(h, 4, 4), conv_output_len(w, 4, 4)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(Error::config(format!("image {h}x{w} smaller than 4x4"))),
                };
                let mut layers = vec![
                    LayerSpec::Conv2d { channels: c, height: h, width: w, filters: 8, size: 4, stride: 4 },
                    LayerSpec::activation(Relu, 8 * oh * ow),
                ];
                let mut ch = 8;
                while oh >= 2 && ow >= 2 {
                    let f = (ch * 2).min(32);
                    layers.push(LayerSpec::Conv2d {
                        channels: ch,
                        height: oh,
                        width: ow,
                        filters: f,
                        size: 2,
                        stride: 2,
                    });
                    oh /= 2;
                    ow /= 2;
                    ch = f;
                    layers.push(LayerSpec::activation(Relu, ch * oh * ow));
                }
                Ok((c * h * w, layers))
            }
        }
    }
}

/// One feature extractor per sensor, applied block-wise.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub nets: Vec<Network>,
    raw_dims: Vec<usize>,
    feature_dims: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EncoderTape {
    tapes: Vec<Tape>,
    batch: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(layout: &StateLayout, rng: &mut R) -> Result<Self> {
        let mut nets = Vec::new();
        for &s in &layout.sensors {
            let (input, layers) = layout.extractor_layers(s)?;
            nets.push(Network::new(input, layers, rng)?);
        }
        Ok(Self::from_nets(nets))
    }

    pub fn from_nets(nets: Vec<Network>) -> Self {
        Self {
            raw_dims: nets.iter().map(Network::in_dim).collect(),
            feature_dims: nets.iter().map(Network::out_dim).collect(),
            nets,
        }
    }

    pub fn feature_dims(&self) -> &[usize] {
        &self.feature_dims
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dims.iter().sum()
    }

    pub fn state_dim(&self) -> usize {
        self.raw_dims.iter().sum()
    }

    /// Row-major `[batch, feature_dim]` features for `batch` flattened states.
    pub fn encode(&self, states: &[f64], batch: usize) -> Result<(Vec<f64>, EncoderTape)> {
        let width = self.state_dim();
        if states.len() != batch * width {
            return Err(Error::config(format!(
                "expected {batch} states of width {width}, got {} values",
                states.len()
            )));
        }
        let fdim = self.feature_dim();
        let mut features = vec![0.0; batch * fdim];
        let mut tapes = Vec::with_capacity(self.nets.len());
        let (mut raw_at, mut feat_at) = (0, 0);
        for (k, net) in self.nets.iter().enumerate() {
            let (rd, fd) = (self.raw_dims[k], self.feature_dims[k]);
            let mut block = Vec::with_capacity(batch * rd);
            for row in states.chunks_exact(width) {
                block.extend_from_slice(&row[raw_at..raw_at + rd]);
            }
            let tape = net.forward_batch(&block, batch)?;
            for (dst, src) in features.chunks_exact_mut(fdim).zip(tape.output().chunks_exact(fd)) {
                dst[feat_at..feat_at + fd].copy_from_slice(src);
            }
            tapes.push(tape);
            raw_at += rd;
            feat_at += fd;
        }
        Ok((features, EncoderTape { tapes, batch }))
    }

    /// Returns per-network parameter gradients and the `[batch, state_dim]` input gradient.
    pub fn backward(&self, tape: &EncoderTape, feature_grad: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let (batch, fdim, width) = (tape.batch, self.feature_dim(), self.state_dim());
        if feature_grad.len() != batch * fdim {
            return Err(Error::config("feature gradient has the wrong length"));
        }
        let mut grads = Vec::with_capacity(self.nets.len());
        let mut input_grad = vec![0.0; batch * width];
        let (mut raw_at, mut feat_at) = (0, 0);
        for (k, net) in self.nets.iter().enumerate() {
            let (rd, fd) = (self.raw_dims[k], self.feature_dims[k]);
            let mut up = Vec::with_capacity(batch * fd);
            for row in feature_grad.chunks_exact(fdim) {
                up.extend_from_slice(&row[feat_at..feat_at + fd]);
            }
            let (g, gin) = net.backward_batch(&tape.tapes[k], &up)?;
            for (dst, src) in input_grad.chunks_exact_mut(width).zip(gin.chunks_exact(rd)) {
                dst[raw_at..raw_at + rd].copy_from_slice(src);
            }
            grads.push(g);
            raw_at += rd;
            feat_at += fd;
        }
        Ok((grads, input_grad))
    }
}

/// Multiplicative mask on fused features.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMask {
    Identity,
    /// One multiplier per feature, shared by every row.
    Shared(Vec<f64>),
    /// `[batch, feature_dim]` multipliers.
    PerRow(Vec<f64>),
}

impl FeatureMask {
    fn multiplier(&self, row: usize, col: usize, width: usize) -> f64 {
        match self {
            FeatureMask::Identity => 1.0,
            FeatureMask::Shared(m) => m[col],
            FeatureMask::PerRow(m) => m[row * width + col],
        }
    }

    fn check(&self, batch: usize, width: usize) -> Result<()> {
        let ok = match self {
            FeatureMask::Identity => true,
            FeatureMask::Shared(m) => m.len() == width,
            FeatureMask::PerRow(m) => m.len() == batch * width,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("feature mask does not match the feature width"))
        }
    }

    fn apply_into(&self, features: &[f64], width: usize, out: &mut Vec<f64>) {
        match self {
            FeatureMask::Identity => out.extend_from_slice(features),
            _ => {
                for (r, row) in features.chunks_exact(width).enumerate() {
                    out.extend(row.iter().enumerate().map(|(c, v)| v * self.multiplier(r, c, width)));
                }
            }
        }
    }
}

/// Fully connected head `F -> H -> H -> out` with ReLU hidden layers.
pub fn mlp_head<R: Rng + ?Sized>(
    inputs: usize,
    hidden: usize,
    outputs: usize,
    out_act: Option<Activation>,
    last_bound: Option<f64>,
    rng: &mut R,
) -> Result<Network> {
    let mut layers = vec![
        LayerSpec::dense(inputs, hidden),
        LayerSpec::activation(Activation::Relu, hidden),
        LayerSpec::dense(hidden, hidden),
        LayerSpec::activation(Activation::Relu, hidden),
        LayerSpec::dense(hidden, outputs),
    ];
    if let Some(a) = out_act {
        layers.push(LayerSpec::activation(a, outputs));
    }
    let mut net = Network::new(inputs, layers, rng)?;
    if let Some(b) = last_bound {
        net.init_last_layer(b, rng);
    }
    Ok(net)
}

/// Deterministic policy: per-sensor encoders, fused features, tanh head.
#[derive(Debug, Clone)]
pub struct Policy {
    pub encoder: Encoder,
    pub head: Network,
}

/// Cached forward pass of a policy evaluated under several masks at once.
#[derive(Debug, Clone)]
pub struct PolicyPass {
    enc: EncoderTape,
    head: Tape,
    masks: Vec<FeatureMask>,
    batch: usize,
}

impl PolicyPass {
    /// `[masks, batch, 2]` actions.
    pub fn actions(&self) -> &[f64] {
        self.head.output()
    }

    /// `[masks * batch, hidden]` activations of the last hidden layer
    /// (output of the second ReLU in the head).
    pub fn last_hidden(&self) -> &[f64] {
        self.head.layer_output(3).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(layout: &StateLayout, hidden: usize, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::new(layout, rng)?;
        let head = mlp_head(encoder.feature_dim(), hidden, 2, Some(Activation::Tanh), Some(3e-3), rng)?;
        Ok(Self { encoder, head })
    }

    pub fn nets(&self) -> Vec<&Network> {
        self.encoder.nets.iter().chain(std::iter::once(&self.head)).collect()
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Network> {
        self.encoder.nets.iter_mut().chain(std::iter::once(&mut self.head)).collect()
    }

    /// Runs the shared encoder once and the head once per mask.
    pub fn forward(&self, states: &[f64], batch: usize, masks: Vec<FeatureMask>) -> Result<PolicyPass> {
        if masks.is_empty() {
            return Err(Error::config("policy pass needs at least one mask"));
        }
        let (features, enc) = self.encoder.encode(states, batch)?;
        let fdim = self.encoder.feature_dim();
        let mut stacked = Vec::with_capacity(masks.len() * features.len());
        for m in &masks {
            m.check(batch, fdim)?;
            m.apply_into(&features, fdim, &mut stacked);
        }
        let head = self.head.forward_batch(&stacked, masks.len() * batch)?;
        Ok(PolicyPass { enc, head, masks, batch })
    }

    /// `upstream` is `[masks, batch, 2]`. Returns gradients aligned with
    /// [`Policy::nets`] and the input gradient.
    pub fn backward(&self, pass: &PolicyPass, upstream: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let (hg, masked_grad) = self.head.backward_batch(&pass.head, upstream)?;
        let fdim = self.encoder.feature_dim();
        let block = pass.batch * fdim;
        let mut feature_grad = vec![0.0; block];
        for (m, g) in pass.masks.iter().zip(masked_grad.chunks_exact(block)) {
            for (r, (dst, src)) in feature_grad
                .chunks_exact_mut(fdim)
                .zip(g.chunks_exact(fdim))
                .enumerate()
            {
                for (c, (d, s)) in dst.iter_mut().zip(src).enumerate() {
                    *d += s * m.multiplier(r, c, fdim);
                }
            }
        }
        let (mut grads, input_grad) = self.encoder.backward(&pass.enc, &feature_grad)?;
        grads.push(hg);
        Ok((grads, input_grad))
    }
}

/// Action-value critic: own encoder, action appended to the fused features.
#[derive(Debug, Clone)]
pub struct Critic {
    pub encoder: Encoder,
    pub head: Network,
}

#[derive(Debug, Clone)]
pub struct CriticPass {
    enc: EncoderTape,
    head: Tape,
    batch: usize,
    repeats: usize,
}

impl CriticPass {
    pub fn values(&self) -> &[f64] {
        self.head.output()
    }
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(layout: &StateLayout, hidden: usize, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::new(layout, rng)?;
        let head = mlp_head(encoder.feature_dim() + 2, hidden, 1, None, Some(3e-3), rng)?;
        Ok(Self { encoder, head })
    }

    pub fn nets(&self) -> Vec<&Network> {
        self.encoder.nets.iter().chain(std::iter::once(&self.head)).collect()
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Network> {
        self.encoder.nets.iter_mut().chain(std::iter::once(&mut self.head)).collect()
    }

    /// Q for `batch` states, each paired with `actions.len() / (2 * batch)`
    /// action sets laid out `[set, batch, 2]`. Values come back `[set, batch]`.
    pub fn forward(&self, states: &[f64], batch: usize, actions: &[f64]) -> Result<CriticPass> {
        if batch == 0 || actions.len() % (2 * batch) != 0 || actions.is_empty() {
            return Err(Error::config("critic actions must be a whole number of [batch, 2] sets"));
        }
        let repeats = actions.len() / (2 * batch);
        let (features, enc) = self.encoder.encode(states, batch)?;
        let fdim = self.encoder.feature_dim();
        let mut input = Vec::with_capacity(repeats * batch * (fdim + 2));
        for (i, a) in actions.chunks_exact(2).enumerate() {
            let row = i % batch;
            input.extend_from_slice(&features[row * fdim..(row + 1) * fdim]);
            input.extend_from_slice(a);
        }
        let head = self.head.forward_batch(&input, repeats * batch)?;
        Ok(CriticPass { enc, head, batch, repeats })
    }

    /// Backpropagates `dL/dQ` (`[set, batch]`). Returns parameter gradients
    /// aligned with [`Critic::nets`] (encoder skipped when `encoder` is false,
    /// leaving empty vectors) and the `[set, batch, 2]` action gradient.
    pub fn backward(&self, pass: &CriticPass, upstream: &[f64], encoder: bool) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let (hg, gin) = self.head.backward_batch(&pass.head, upstream)?;
        let fdim = self.encoder.feature_dim();
        let mut action_grad = Vec::with_capacity(pass.repeats * pass.batch * 2);
        let mut feature_grad = vec![0.0; pass.batch * fdim];
        for (i, row) in gin.chunks_exact(fdim + 2).enumerate() {
            action_grad.extend_from_slice(&row[fdim..]);
            if encoder {
                let r = i % pass.batch;
                for (d, s) in feature_grad[r * fdim..(r + 1) * fdim].iter_mut().zip(&row[..fdim]) {
                    *d += s;
                }
            }
        }
        let mut grads = if encoder {
            self.encoder.backward(&pass.enc, &feature_grad)?.0
        } else {
            self.encoder.nets.iter().map(|_| Vec::new()).collect()
        };
        grads.push(hg);
        Ok((grads, action_grad))
    }
}

/// Adam states for a list of networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub states: Vec<crate::nn::AdamState>,
}

impl Optimizer {
    pub fn new(nets: &[&Network], lr: f64) -> Self {
        Self {
            states: nets
                .iter()
                .map(|n| crate::nn::AdamState::new(n.param_count(), lr))
                .collect(),
        }
    }

    /// Applies one step; networks with an empty gradient are skipped.
    pub fn step(&mut self, nets: Vec<&mut Network>, grads: &[Vec<f64>]) -> Result<()> {
        if nets.len() != self.states.len() || grads.len() != nets.len() {
            return Err(Error::config("optimizer, network and gradient lists differ in length"));
        }
        for ((net, st), g) in nets.into_iter().zip(&mut self.states).zip(grads) {
            if g.is_empty() {
                continue;
            }
            st.step(net.params_mut(), g)?;
        }
        Ok(())
    }
}

/// Polyak-averages every target network toward its online twin.
pub fn soft_update_all(targets: Vec<&mut Network>, online: Vec<&Network>, tau: f64) -> Result<()> {
    if targets.len() != online.len() {
        return Err(Error::config("target and online network lists differ"));
    }
    for (t, o) in targets.into_iter().zip(online) {
        if !t.same_architecture(o) {
            return Err(Error::config("target and online architectures differ"));
        }
        crate::nn::soft_update(t.params_mut(), o.params(), tau)?;
    }
    Ok(())
}
