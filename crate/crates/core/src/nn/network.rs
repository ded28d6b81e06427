use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::layer::LayerSpec;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// A sequential feed-forward network with all parameters in one flat buffer.
///
/// A network with no layers is the identity on `in_dim` inputs.
#[derive(Debug)]
pub struct Network {
    in_dim: usize,
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    id: u64,
    generation: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            in_dim: self.in_dim,
            layers: self.layers.clone(),
            offsets: self.offsets.clone(),
            params: self.params.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

/// Activations cached by [`Network::forward`], consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    net_id: u64,
    generation: u64,
    batch: usize,
    /// `values[i]` is the input to layer `i`; the last entry is the output.
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Output of layer `index` (the input of layer `index + 1`).
    pub fn layer_output(&self, index: usize) -> Option<&[f64]> {
        self.values.get(index + 1).map(Vec::as_slice)
    }
}

impl Network {
    /// Builds a network with zeroed parameters.
    pub fn zeroed(in_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if in_dim == 0 {
            return Err(Error::config("network input width must be positive"));
        }
        let mut width = in_dim;
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for (i, layer) in layers.iter().enumerate() {
            layer.validate()?;
            if layer.in_dim() != width {
                return Err(Error::config(format!(
                    "layer {i} expects {} inputs but receives {width}",
                    layer.in_dim()
                )));
            }
            offsets.push(total);
            total += layer.param_count();
            width = layer.out_dim();
        }
        offsets.push(total);
        Ok(Self {
            in_dim,
            layers,
            offsets,
            params: vec![0.0; total],
            id: fresh_id(),
            generation: 0,
        })
    }

    /// Builds a network with weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(in_dim, layers)?;
        for i in 0..net.layers.len() {
            let fan_in = net.layers[i].fan_in();
            if fan_in == 0 {
                continue;
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            let (a, b) = (net.offsets[i], net.offsets[i + 1]);
            for p in &mut net.params[a..b] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    /// Re-draws the last parametrized layer uniformly in `±bound`.
    pub fn init_last_layer<R: Rng + ?Sized>(&mut self, bound: f64, rng: &mut R) {
        if let Some(i) = (0..self.layers.len())
            .rev()
            .find(|&i| self.layers[i].param_count() > 0)
        {
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            for p in &mut self.params[a..b] {
                *p = rng.random_range(-bound..=bound);
            }
            self.generation += 1;
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(self.in_dim, LayerSpec::out_dim)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `(name, shape, range)` for every parameter array, in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut at = self.offsets[i];
            for (name, shape) in layer.param_shapes() {
                let n: usize = shape.iter().product();
                out.push((format!("layer{i}.{name}"), shape, at..at + n));
                at += n;
            }
        }
        out
    }

    /// Runs `batch` rows stored contiguously in `input`.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<Tape> {
        if batch == 0 || input.len() != batch * self.in_dim {
            return Err(Error::config(format!(
                "network expects {batch} x {} inputs, got {} values",
                self.in_dim,
                input.len()
            )));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; batch * layer.out_dim()];
            let params = &self.params[self.offsets[i]..self.offsets[i + 1]];
            layer.forward(params, &values[i], &mut out, batch);
            if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    format!("layer {i}"),
                    format!("non-finite activation {bad}"),
                ));
            }
            values.push(out);
        }
        Ok(Tape {
            net_id: self.id,
            generation: self.generation,
            batch,
            values,
        })
    }

    /// Returns `(param_grads, input_grad)` for the rows recorded in `tape`.
    pub fn backward_batch(&self, tape: &Tape, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if tape.net_id != self.id || tape.generation != self.generation {
            return Err(Error::Usage(
                "tape was produced by a different network or before a parameter update".into(),
            ));
        }
        let batch = tape.batch;
        if upstream.len() != batch * self.out_dim() {
            return Err(Error::config(format!(
                "upstream gradient has {} values, expected {}",
                upstream.len(),
                batch * self.out_dim()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut gin = vec![0.0; batch * layer.in_dim()];
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            layer.backward(
                &self.params[a..b],
                &tape.values[i],
                &tape.values[i + 1],
                &g,
                &mut grads[a..b],
                &mut gin,
                batch,
            );
            g = gin;
        }
        if let Some(bad) = grads.iter().chain(g.iter()).find(|v| !v.is_finite()) {
            return Err(Error::numeric("backward", format!("non-finite gradient {bad}")));
        }
        Ok((grads, g))
    }

    /// Tensor front end for [`Network::forward_batch`]: `input` is `[batch, in_dim]` or `[in_dim]`.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tape)> {
        let (rows, width) = input.rows_and_width();
        if width != self.in_dim {
            return Err(Error::config(format!(
                "input width {width} does not match network input {}",
                self.in_dim
            )));
        }
        let tape = self.forward_batch(&input.data, rows)?;
        let out = Tensor::matrix(rows, self.out_dim(), tape.output().to_vec())?;
        Ok((out, tape))
    }

    /// Tensor front end for [`Network::backward_batch`]; the input gradient
    /// comes back as a `[batch, in_dim]` tensor.
    pub fn backward(&self, tape: &Tape, upstream: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let (grads, gin) = self.backward_batch(tape, &upstream.data)?;
        let input_grad = Tensor::matrix(tape.batch, self.in_dim, gin)?;
        Ok((grads, input_grad))
    }

    /// Overwrites all parameters, checking the length.
    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params.copy_from_slice(values);
        self.generation += 1;
        Ok(())
    }

    /// True when both networks have the same layer list.
    pub fn same_architecture(&self, other: &Network) -> bool {
        self.in_dim == other.in_dim && self.layers == other.layers
    }
}
