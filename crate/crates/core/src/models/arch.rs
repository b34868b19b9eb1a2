use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, ParamSet, Tensor};

/// One stage of a feed-forward stack. Shapes exclude the batch dimension.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense { out: usize },
    Relu,
    /// Reinterprets flat features, e.g. `[1, 28, 28]` for MNIST images.
    Reshape { shape: Vec<usize> },
    Conv2d { out_channels: usize, kernel: usize, padding: usize },
    MaxPool2d { size: usize },
    Flatten,
}

/// Input width plus a layer list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

impl Architecture {
    /// `input → hidden[0] ReLU → … → out` (no activation on the last layer).
    pub fn mlp(input_dim: usize, hidden: &[usize], out: usize) -> Self {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(Layer::Dense { out: h });
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Dense { out });
        Self { input_dim, layers }
    }

    /// Per-sample shape after every layer; validates the stack.
    fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut cur = vec![self.input_dim];
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Dense { out } => {
                    if cur.len() != 1 {
                        return Err(Error::Architecture(format!(
                            "layer {i}: dense needs flat input, got {cur:?}"
                        )));
                    }
                    vec![*out]
                }
                Layer::Relu => cur,
                Layer::Reshape { shape } => {
                    if shape.iter().product::<usize>() != cur.iter().product::<usize>() {
                        return Err(Error::Architecture(format!(
                            "layer {i}: cannot reshape {cur:?} into {shape:?}"
                        )));
                    }
                    shape.clone()
                }
                Layer::Conv2d {
                    out_channels,
                    kernel,
                    padding,
                } => match cur.as_slice() {
                    &[_, h, w] if h + 2 * padding >= *kernel && w + 2 * padding >= *kernel => vec![
                        *out_channels,
                        h + 2 * padding - kernel + 1,
                        w + 2 * padding - kernel + 1,
                    ],
                    _ => {
                        return Err(Error::Architecture(format!(
                            "layer {i}: conv2d does not fit input {cur:?}"
                        )))
                    }
                },
                Layer::MaxPool2d { size } => match cur.as_slice() {
                    &[c, h, w] if *size > 0 && h >= *size && w >= *size => vec![c, h / size, w / size],
                    _ => {
                        return Err(Error::Architecture(format!(
                            "layer {i}: max pool {size} does not fit input {cur:?}"
                        )))
                    }
                },
                Layer::Flatten => vec![cur.iter().product()],
            };
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Flat width of the final layer.
    pub fn output_dim(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        let last = shapes.last().cloned().unwrap_or_else(|| vec![self.input_dim]);
        if last.len() != 1 {
            return Err(Error::Architecture(format!(
                "network must end flat, ends with {last:?}"
            )));
        }
        Ok(last[0])
    }

    /// Kaiming-uniform weights (bound √(6/fan_in)) and zero biases.
    pub fn init_params(&self, rng: &mut ChaCha8Rng, prefix: &str) -> Result<ParamSet> {
        let mut params = ParamSet::new();
        let mut cur = vec![self.input_dim];
        let shapes = self.shapes()?;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense { out } => {
                    let fan_in = cur[0];
                    params.push(format!("{prefix}{i}.weight"), kaiming(rng, vec![fan_in, *out], fan_in));
                    params.push(format!("{prefix}{i}.bias"), Tensor::zeros(&[*out]));
                }
                Layer::Conv2d {
                    out_channels, kernel, ..
                } => {
                    let fan_in = cur[0] * kernel * kernel;
                    params.push(
                        format!("{prefix}{i}.weight"),
                        kaiming(rng, vec![*out_channels, cur[0], *kernel, *kernel], fan_in),
                    );
                    params.push(format!("{prefix}{i}.bias"), Tensor::zeros(&[*out_channels]));
                }
                _ => {}
            }
            cur = shapes[i].clone();
        }
        Ok(params)
    }

    /// Number of parameter tensors the stack owns.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Dense { .. } | Layer::Conv2d { .. }))
            .count()
            * 2
    }

    /// Records the stack on `g`, reading parameters `offset..` of `params`.
    /// `x` is `[batch, input_dim]`; the result is `[batch, output_dim]`.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, offset: usize, x: NodeId) -> Result<NodeId> {
        let (batch, width) = g.value(x).dims2()?;
        if width != self.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} input features, batch has {width}",
                self.input_dim
            )));
        }
        let mut h = x;
        let mut p = offset;
        for layer in &self.layers {
            h = match layer {
                Layer::Dense { .. } => {
                    let (w, b) = (g.param(params, p), g.param(params, p + 1));
                    p += 2;
                    g.dense(h, w, b)?
                }
                Layer::Relu => g.relu(h),
                Layer::Reshape { shape } => {
                    let mut full = vec![batch];
                    full.extend(shape);
                    g.reshape(h, full)?
                }
                Layer::Conv2d { padding, .. } => {
                    let (w, b) = (g.param(params, p), g.param(params, p + 1));
                    p += 2;
                    g.conv2d(h, w, b, *padding)?
                }
                Layer::MaxPool2d { size } => g.max_pool2d(h, *size)?,
                Layer::Flatten => {
                    let n = g.value(h).numel() / batch.max(1);
                    g.reshape(h, vec![batch, n])?
                }
            };
        }
        Ok(h)
    }
}

fn kaiming(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape product")
}

/// Deterministic generator for a (seed, stream) pair.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
