use std::fmt;

use crate::error::{Error, Result};

/// Element-wise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        };
        f.write_str(s)
    }
}

/// One layer of a feed-forward network.
///
/// Per-sample layouts are row-major: conv1d inputs are `[channels, length]`,
/// conv2d inputs are `[channels, height, width]`, and conv outputs put the
/// filter index first. Dense weights are stored `[inputs, outputs]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv1d {
        channels: usize,
        length: usize,
        filters: usize,
        size: usize,
        stride: usize,
    },
    Conv2d {
        channels: usize,
        height: usize,
        width: usize,
        filters: usize,
        size: usize,
        stride: usize,
    },
    Activation {
        kind: Activation,
        width: usize,
    },
}

/// Output length of a valid (unpadded) convolution, `None` when the filter does not fit.
pub fn conv_output_len(input: usize, size: usize, stride: usize) -> Option<usize> {
    if size == 0 || stride == 0 || size > input {
        return None;
    }
    Some((input - size) / stride + 1)
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    pub fn activation(kind: Activation, width: usize) -> Self {
        LayerSpec::Activation { kind, width }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Dense { inputs, outputs } => inputs > 0 && outputs > 0,
            LayerSpec::Conv1d {
                channels,
                length,
                filters,
                size,
                stride,
            } => channels > 0 && filters > 0 && conv_output_len(length, size, stride).is_some(),
            LayerSpec::Conv2d {
                channels,
                height,
                width,
                filters,
                size,
                stride,
            } => {
                channels > 0
                    && filters > 0
                    && conv_output_len(height, size, stride).is_some()
                    && conv_output_len(width, size, stride).is_some()
            }
            LayerSpec::Activation { width, .. } => width > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid layer {self:?}")))
        }
    }

    pub fn in_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv1d {
                channels, length, ..
            } => channels * length,
            LayerSpec::Conv2d {
                channels,
                height,
                width,
                ..
            } => channels * height * width,
            LayerSpec::Activation { width, .. } => width,
        }
    }

    pub fn out_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv1d {
                length,
                filters,
                size,
                stride,
                ..
            } => filters * conv_output_len(length, size, stride).unwrap_or(0),
            LayerSpec::Conv2d {
                height,
                width,
                filters,
                size,
                stride,
                ..
            } => {
                filters
                    * conv_output_len(height, size, stride).unwrap_or(0)
                    * conv_output_len(width, size, stride).unwrap_or(0)
            }
            LayerSpec::Activation { width, .. } => width,
        }
    }

    /// Shapes of the weight and bias arrays, empty for parameter-free layers.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                vec![("weight", vec![inputs, outputs]), ("bias", vec![outputs])]
            }
            LayerSpec::Conv1d {
                channels,
                filters,
                size,
                ..
            } => vec![
                ("weight", vec![filters, channels, size]),
                ("bias", vec![filters]),
            ],
            LayerSpec::Conv2d {
                channels,
                filters,
                size,
                ..
            } => vec![
                ("weight", vec![filters, channels, size, size]),
                ("bias", vec![filters]),
            ],
            LayerSpec::Activation { .. } => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Fan-in used by the uniform initializer.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv1d { channels, size, .. } => channels * size,
            LayerSpec::Conv2d { channels, size, .. } => channels * size * size,
            LayerSpec::Activation { .. } => 0,
        }
    }

    /// Forward pass over `batch` rows. `params` is this layer's slice.
    pub(crate) fn forward(&self, params: &[f64], input: &[f64], out: &mut [f64], batch: usize) {
        let (din, dout) = (self.in_dim(), self.out_dim());
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = params.split_at(inputs * outputs);
                for r in 0..batch {
                    let x = &input[r * din..(r + 1) * din];
                    let y = &mut out[r * dout..(r + 1) * dout];
                    y.copy_from_slice(b);
                    for (i, &xi) in x.iter().enumerate() {
                        if xi == 0.0 {
                            continue;
                        }
                        let row = &w[i * outputs..(i + 1) * outputs];
                        for (yo, &wo) in y.iter_mut().zip(row) {
                            *yo += xi * wo;
                        }
                    }
                }
            }
            LayerSpec::Conv1d {
                channels,
                length,
                filters,
                size,
                stride,
            } => {
                let lo = dout / filters;
                let (w, b) = params.split_at(filters * channels * size);
                for r in 0..batch {
                    let x = &input[r * din..(r + 1) * din];
                    let y = &mut out[r * dout..(r + 1) * dout];
                    for f in 0..filters {
                        for t in 0..lo {
                            let mut acc = b[f];
                            for c in 0..channels {
                                let xs = &x[c * length + t * stride..c * length + t * stride + size];
                                let ws = &w[(f * channels + c) * size..(f * channels + c + 1) * size];
                                acc += dot(xs, ws);
                            }
                            y[f * lo + t] = acc;
                        }
                    }
                }
            }
            LayerSpec::Conv2d {
                channels,
                height,
                width,
                filters,
                size,
                stride,
            } => {
                let ho = conv_output_len(height, size, stride).unwrap_or(0);
                let wo = conv_output_len(width, size, stride).unwrap_or(0);
                let ksq = size * size;
                let (w, b) = params.split_at(filters * channels * ksq);
                for r in 0..batch {
                    let x = &input[r * din..(r + 1) * din];
                    let y = &mut out[r * dout..(r + 1) * dout];
                    for f in 0..filters {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let mut acc = b[f];
                                for c in 0..channels {
                                    let wbase = (f * channels + c) * ksq;
                                    for ky in 0..size {
                                        let iy = oy * stride + ky;
                                        let xbase = (c * height + iy) * width + ox * stride;
                                        acc += dot(
                                            &x[xbase..xbase + size],
                                            &w[wbase + ky * size..wbase + (ky + 1) * size],
                                        );
                                    }
                                }
                                y[(f * ho + oy) * wo + ox] = acc;
                            }
                        }
                    }
                }
            }
            LayerSpec::Activation { kind, .. } => {
                for (y, &x) in out.iter_mut().zip(input) {
                    *y = kind.apply(x);
                }
            }
        }
    }

    /// Backward pass. Accumulates into `param_grad`, overwrites `input_grad`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        output: &[f64],
        upstream: &[f64],
        param_grad: &mut [f64],
        input_grad: &mut [f64],
        batch: usize,
    ) {
        let (din, dout) = (self.in_dim(), self.out_dim());
        input_grad.iter_mut().for_each(|g| *g = 0.0);
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, _) = params.split_at(inputs * outputs);
                let (gw, gb) = param_grad.split_at_mut(inputs * outputs);
                for r in 0..batch {
                    let x = &input[r * din..(r + 1) * din];
                    let g = &upstream[r * dout..(r + 1) * dout];
                    let gx = &mut input_grad[r * din..(r + 1) * din];
                    for (acc, &go) in gb.iter_mut().zip(g) {
                        *acc += go;
                    }
                    for i in 0..inputs {
                        let row = &w[i * outputs..(i + 1) * outputs];
                        gx[i] = dot(g, row);
                        let xi = x[i];
                        if xi != 0.0 {
                            let grow = &mut gw[i * outputs..(i + 1) * outputs];
                            for (gwo, &go) in grow.iter_mut().zip(g) {
                                *gwo += xi * go;
                            }
                        }
                    }
                }
            }
            LayerSpec::Conv1d {
                channels,
                length,
                filters,
                size,
                stride,
            } => {
                let lo = dout / filters;
                let (w, _) = params.split_at(filters * channels * size);
                let (gw, gb) = param_grad.split_at_mut(filters * channels * size);
                for r in 0..batch {
                    let x = &input[r * din..(r + 1) * din];
                    let g = &upstream[r * dout..(r + 1) * dout];
                    let gx = &mut input_grad[r * din..(r + 1) * din];
                    for f in 0..filters {
                        for t in 0..lo {
                            let go = g[f * lo + t];
                            if go == 0.0 {
                                continue;
                            }
                            gb[f] += go;
                            for c in 0..channels {
                                let xo = c * length + t * stride;
                                let wo = (f * channels + c) * size;
                                for k in 0..size {
                                    gw[wo + k] += go * x[xo + k];
                                    gx[xo + k] += go * w[wo + k];
                                }
                            }
                        }
                    }
                }
            }
            LayerSpec::Conv2d {
                channels,
                height,
                width,
                filters,
                size,
                stride,
            } => {
                let ho = conv_output_len(height, size, stride).unwrap_or(0);
                let wo = conv_output_len(width, size, stride).unwrap_or(0);
                let ksq = size * size;
                let (w, _) = params.split_at(filters * channels * ksq);
                let (gw, gb) = param_grad.split_at_mut(filters * channels * ksq);
                for r in 0..batch {
                    let x = &input[r * din..(r + 1) * din];
                    let g = &upstream[r * dout..(r + 1) * dout];
                    let gx = &mut input_grad[r * din..(r + 1) * din];
                    for f in 0..filters {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let go = g[(f * ho + oy) * wo + ox];
                                if go == 0.0 {
                                    continue;
                                }
                                gb[f] += go;
                                for c in 0..channels {
                                    let wbase = (f * channels + c) * ksq;
                                    for ky in 0..size {
                                        let xbase =
                                            (c * height + oy * stride + ky) * width + ox * stride;
                                        let wrow = wbase + ky * size;
                                        for kx in 0..size {
                                            gw[wrow + kx] += go * x[xbase + kx];
                                            gx[xbase + kx] += go * w[wrow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerSpec::Activation { kind, .. } => {
                for ((gx, &y), &g) in input_grad.iter_mut().zip(output).zip(upstream) {
                    *gx = g * kind.derivative_from_output(y);
                }
            }
        }
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..n {
        s += a[j] * b[j];
    }
    s
}
