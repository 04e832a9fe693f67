//! Layers with analytic forward/backward passes.
//!
//! Besides gradients, a training-mode forward/backward pair leaves a
//! [`CaptureBuffer`] on every parameterised layer holding the quantities the
//! Kronecker-factor machinery consumes: the (augmented) layer input and the
//! per-sample gradient of the loss with respect to the layer's
//! pre-activation.
//!
//! Conventions:
//! - Dense and conv weights carry the bias as their last column, so a dense
//!   layer's weight is `out x (in + 1)` and its input is augmented with a
//!   trailing `1.0`.
//! - Gradients are batch means (the loss is a batch mean).
//! - Captured `s` is the gradient of each sample's own loss, i.e. the
//!   batch-mean gradient multiplied by the batch size, so factor estimates do
//!   not depend on how a batch is split.

mod conv;
mod gradcheck;
mod loss;

pub use conv::{col2im, im2col, ConvGeometry};
pub use gradcheck::{gradient_check, BlockCheck};
pub use loss::{nll_softmax_loss, softmax};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

/// Variance epsilon of the normalisation layers.
pub const NORM_EPS: f64 = 1e-5;
/// Running-statistics momentum of batch normalisation.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        c_in: usize,
        c_out: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
    },
    LayerNorm {
        features: usize,
    },
    Activation(Activation),
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::LayerNorm { .. } => "layernorm",
            LayerKind::Activation(Activation::Relu) => "relu",
            LayerKind::Activation(Activation::Tanh) => "tanh",
        }
    }

    pub fn has_params(&self) -> bool {
        !matches!(self, LayerKind::Activation(_))
    }

    pub fn is_norm(&self) -> bool {
        matches!(self, LayerKind::BatchNorm { .. } | LayerKind::LayerNorm { .. })
    }

    /// Shapes of the parameter blocks, in storage order.
    ///
    /// Dense/conv layers have one weight block with the bias as last column;
    /// normalisation layers have a scale block followed by a shift block.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Dense {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features + 1]],
            LayerKind::Conv2d {
                c_in,
                c_out,
                k_h,
                k_w,
                ..
            } => vec![vec![c_out, c_in * k_h * k_w + 1]],
            LayerKind::BatchNorm { channels } => vec![vec![channels], vec![channels]],
            LayerKind::LayerNorm { features } => vec![vec![features], vec![features]],
            LayerKind::Activation(_) => Vec::new(),
        }
    }

    fn geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerKind::Conv2d {
                k_h,
                k_w,
                stride,
                padding,
                ..
            } => Some(ConvGeometry {
                k_h,
                k_w,
                stride,
                padding,
            }),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let flat: usize = input.iter().product();
        match *self {
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                if flat != in_features {
                    return Err(Error::dim(format!(
                        "dense layer expects {in_features} inputs, got shape {input:?}"
                    )));
                }
                Ok(vec![out_features])
            }
            LayerKind::Conv2d { c_in, c_out, .. } => {
                let geom = self.geometry().expect("conv geometry");
                match *input {
                    [c, h, w] if c == c_in => {
                        let (oh, ow) = geom.output_dims(h, w)?;
                        Ok(vec![c_out, oh, ow])
                    }
                    _ => Err(Error::dim(format!(
                        "conv layer expects {c_in} x H x W input, got {input:?}"
                    ))),
                }
            }
            LayerKind::BatchNorm { channels } => {
                if input.first() != Some(&channels) || input.len() > 3 {
                    return Err(Error::dim(format!(
                        "batchnorm over {channels} channels got input {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerKind::LayerNorm { features } => {
                if flat != features {
                    return Err(Error::dim(format!(
                        "layernorm over {features} features got input {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerKind::Activation(_) => Ok(input.to_vec()),
        }
    }
}

/// Per-batch quantities captured for the Fisher factors.
///
/// `h_bar` has one column per sample (dense), per sample and output location
/// (conv, columns ordered `n * |T| + t`), or per sample and location over
/// which statistics are pooled (normalisation layers, where it holds the
/// normalised pre-affine activations). `s` is column-aligned with `h_bar`.
#[derive(Clone, Debug)]
pub struct CaptureBuffer {
    pub h_bar: Tensor,
    pub s: Tensor,
    /// Output locations per sample; 1 for dense layers.
    pub spatial_count: usize,
}

#[derive(Clone, Debug)]
enum Cache {
    Dense {
        x_aug: Tensor,
        in_shape: Vec<usize>,
    },
    Conv {
        cols: Tensor,
        in_shape: Vec<usize>,
        spatial: usize,
    },
    BatchNorm {
        x_hat: Tensor,
        inv_std: Vec<f64>,
        in_shape: Vec<usize>,
        batch_stats: bool,
    },
    LayerNorm {
        x_hat: Tensor,
        inv_std: Vec<f64>,
        in_shape: Vec<usize>,
    },
    Activation {
        input: Tensor,
    },
}

#[derive(Clone, Debug)]
struct RunningStats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Layer {
    kind: LayerKind,
    params: Vec<Tensor>,
    grads: Vec<Tensor>,
    running: Option<RunningStats>,
    cache: Option<Cache>,
    capture: Option<CaptureBuffer>,
    capture_next: bool,
}

impl Layer {
    fn new(kind: LayerKind, rng: &mut SeededRng) -> Self {
        let shapes = kind.param_shapes();
        let params = match kind {
            LayerKind::Dense { .. } | LayerKind::Conv2d { .. } => {
                let shape = &shapes[0];
                let fan_in = shape[1] - 1;
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut w = Tensor::zeros(shape);
                for v in w.data_mut() {
                    *v = rng.uniform_range(-bound, bound);
                }
                vec![w]
            }
            LayerKind::BatchNorm { .. } | LayerKind::LayerNorm { .. } => {
                vec![Tensor::ones(&shapes[0]), Tensor::zeros(&shapes[1])]
            }
            LayerKind::Activation(_) => Vec::new(),
        };
        let running = match kind {
            LayerKind::BatchNorm { channels } => Some(RunningStats {
                mean: vec![0.0; channels],
                var: vec![1.0; channels],
            }),
            _ => None,
        };
        let grads = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Self {
            kind,
            params,
            grads,
            running,
            cache: None,
            capture: None,
            capture_next: false,
        }
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [Tensor] {
        &mut self.grads
    }

    /// Parameters (mutable) alongside their gradients.
    pub fn params_and_grads_mut(&mut self) -> (&mut [Tensor], &[Tensor]) {
        (&mut self.params, &self.grads)
    }

    pub fn capture(&self) -> Option<&CaptureBuffer> {
        self.capture.as_ref()
    }

    fn forward(&mut self, x: Tensor, training: bool) -> Result<Tensor> {
        self.capture = None;
        self.capture_next = training;
        let kind = self.kind.clone();
        match kind {
            LayerKind::Dense { in_features, .. } => self.dense_forward(x, in_features),
            LayerKind::Conv2d { .. } => self.conv_forward(x),
            LayerKind::BatchNorm { channels } => self.batchnorm_forward(x, channels, training),
            LayerKind::LayerNorm { features } => self.layernorm_forward(x, features),
            LayerKind::Activation(act) => {
                let y = x.map(|v| act.apply(v));
                self.cache = Some(Cache::Activation { input: x });
                Ok(y)
            }
        }
    }

    fn dense_forward(&mut self, x: Tensor, in_features: usize) -> Result<Tensor> {
        let b = x.rows();
        if x.cols() != in_features {
            return Err(Error::dim(format!(
                "dense layer expects {in_features} features, got {:?}",
                x.shape()
            )));
        }
        let mut aug = Vec::with_capacity(b * (in_features + 1));
        for n in 0..b {
            aug.extend_from_slice(&x.data()[n * in_features..(n + 1) * in_features]);
            aug.push(1.0);
        }
        let x_aug = Tensor::new(&[b, in_features + 1], aug)?;
        let y = x_aug.matmul_nt(&self.params[0])?;
        self.cache = Some(Cache::Dense {
            x_aug,
            in_shape: x.shape().to_vec(),
        });
        Ok(y)
    }

    fn conv_forward(&mut self, x: Tensor) -> Result<Tensor> {
        let geom = self.kind.geometry().expect("conv geometry");
        let out_shape = self.kind.output_shape(&x.shape()[1..])?;
        let b = x.rows();
        let spatial = out_shape[1] * out_shape[2];
        let patches = im2col(&x, geom)?;
        let (k, ncols) = (patches.rows(), patches.cols());
        let mut data = patches.into_data();
        data.extend(std::iter::repeat_n(1.0, ncols));
        let cols = Tensor::new(&[k + 1, ncols], data)?;
        let a = self.params[0].matmul(&cols)?;
        let c_out = out_shape[0];
        let mut y = vec![0.0; b * c_out * spatial];
        for c in 0..c_out {
            let row = a.row(c);
            for n in 0..b {
                y[(n * c_out + c) * spatial..(n * c_out + c + 1) * spatial]
                    .copy_from_slice(&row[n * spatial..(n + 1) * spatial]);
            }
        }
        self.cache = Some(Cache::Conv {
            cols,
            in_shape: x.shape().to_vec(),
            spatial,
        });
        let mut shape = vec![b];
        shape.extend(out_shape);
        Tensor::new(&shape, y)
    }

    fn batchnorm_forward(&mut self, x: Tensor, channels: usize, training: bool) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        if shape.len() < 2 || shape[1] != channels {
            return Err(Error::dim(format!("batchnorm over {channels} channels got {shape:?}")));
        }
        let b = shape[0];
        let spatial: usize = shape[2..].iter().product();
        let count = b * spatial;
        let xd = x.data();
        let at = |n: usize, c: usize, t: usize| xd[(n * channels + c) * spatial + t];

        let running = self.running.as_mut().expect("batchnorm running stats");
        let mut inv_std = vec![0.0; channels];
        let mut x_hat = Tensor::zeros(&[channels, count]);
        let mut y = Tensor::zeros(&shape);
        for c in 0..channels {
            let (mean, var) = if training {
                let mut mean = 0.0;
                for n in 0..b {
                    for t in 0..spatial {
                        mean += at(n, c, t);
                    }
                }
                mean /= count as f64;
                let mut var = 0.0;
                for n in 0..b {
                    for t in 0..spatial {
                        var += (at(n, c, t) - mean).powi(2);
                    }
                }
                var /= count as f64;
                let unbiased = if count > 1 {
                    var * count as f64 / (count - 1) as f64
                } else {
                    var
                };
                running.mean[c] = (1.0 - BN_MOMENTUM) * running.mean[c] + BN_MOMENTUM * mean;
                running.var[c] = (1.0 - BN_MOMENTUM) * running.var[c] + BN_MOMENTUM * unbiased;
                (mean, var)
            } else {
                (running.mean[c], running.var[c])
            };
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[c] = is;
            let (scale, shift) = (self.params[0].data()[c], self.params[1].data()[c]);
            for n in 0..b {
                for t in 0..spatial {
                    let xh = (at(n, c, t) - mean) * is;
                    x_hat.data_mut()[c * count + n * spatial + t] = xh;
                    y.data_mut()[(n * channels + c) * spatial + t] = scale * xh + shift;
                }
            }
        }
        self.cache = Some(Cache::BatchNorm {
            x_hat,
            inv_std,
            in_shape: shape,
            batch_stats: training,
        });
        Ok(y)
    }

    fn layernorm_forward(&mut self, x: Tensor, features: usize) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        let b = shape[0];
        if x.cols() != features {
            return Err(Error::dim(format!("layernorm over {features} features got {shape:?}")));
        }
        let mut inv_std = vec![0.0; b];
        let mut x_hat = Tensor::zeros(&[b, features]);
        let mut y = Tensor::zeros(&shape);
        for n in 0..b {
            let row = &x.data()[n * features..(n + 1) * features];
            let mean = row.iter().sum::<f64>() / features as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / features as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[n] = is;
            for f in 0..features {
                let xh = (row[f] - mean) * is;
                x_hat.data_mut()[n * features + f] = xh;
                y.data_mut()[n * features + f] =
                    self.params[0].data()[f] * xh + self.params[1].data()[f];
            }
        }
        self.cache = Some(Cache::LayerNorm {
            x_hat,
            inv_std,
            in_shape: shape,
        });
        Ok(y)
    }

    /// Consumes the gradient w.r.t. this layer's output, stores parameter
    /// gradients and returns the gradient w.r.t. its input.
    fn backward(&mut self, dy: Tensor) -> Result<Tensor> {
        let capture = self.capture_next;
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("backward called without a preceding forward"))?;
        match cache {
            Cache::Dense { x_aug, in_shape } => {
                let b = dy.rows();
                let dy = dy.reshape(&[b, self.params[0].rows()])?;
                self.grads[0] = dy.matmul_tn(x_aug)?;
                let dx_aug = dy.matmul(&self.params[0])?;
                let inp = x_aug.cols() - 1;
                let mut dx = Vec::with_capacity(b * inp);
                for n in 0..b {
                    dx.extend_from_slice(&dx_aug.row(n)[..inp]);
                }
                if capture {
                    self.capture = Some(CaptureBuffer {
                        h_bar: x_aug.transpose()?,
                        s: dy.transpose()?.scale(b as f64),
                        spatial_count: 1,
                    });
                }
                Tensor::new(in_shape, dx)
            }
            Cache::Conv {
                cols,
                in_shape,
                spatial,
            } => {
                let b = in_shape[0];
                let spatial = *spatial;
                let c_out = self.params[0].rows();
                let ncols = b * spatial;
                let mut s = vec![0.0; c_out * ncols];
                for n in 0..b {
                    for c in 0..c_out {
                        s[c * ncols + n * spatial..c * ncols + (n + 1) * spatial].copy_from_slice(
                            &dy.data()[(n * c_out + c) * spatial..(n * c_out + c + 1) * spatial],
                        );
                    }
                }
                let s = Tensor::new(&[c_out, ncols], s)?;
                self.grads[0] = s.matmul_nt(cols)?;
                let dcols_aug = self.params[0].matmul_tn(&s)?;
                let k = cols.rows() - 1;
                let dcols = Tensor::new(&[k, ncols], dcols_aug.data()[..k * ncols].to_vec())?;
                let geom = self.kind.geometry().expect("conv geometry");
                let dx = col2im(&dcols, in_shape, geom)?;
                if capture {
                    self.capture = Some(CaptureBuffer {
                        h_bar: cols.clone(),
                        s: s.scale(b as f64),
                        spatial_count: spatial,
                    });
                }
                Ok(dx)
            }
            Cache::BatchNorm {
                x_hat,
                inv_std,
                in_shape,
                batch_stats,
            } => {
                let channels = inv_std.len();
                let b = in_shape[0];
                let spatial: usize = in_shape[2..].iter().product();
                let count = b * spatial;
                let mut ds = Tensor::zeros(&[channels, count]);
                let mut dx = Tensor::zeros(in_shape);
                for c in 0..channels {
                    let scale = self.params[0].data()[c];
                    let xh = &x_hat.data()[c * count..(c + 1) * count];
                    let mut g_scale = 0.0;
                    let mut g_shift = 0.0;
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for n in 0..b {
                        for t in 0..spatial {
                            let j = n * spatial + t;
                            let d = dy.data()[(n * channels + c) * spatial + t];
                            ds.data_mut()[c * count + j] = d;
                            g_scale += d * xh[j];
                            g_shift += d;
                            sum_dxh += d * scale;
                            sum_dxh_xh += d * scale * xh[j];
                        }
                    }
                    self.grads[0].data_mut()[c] = g_scale;
                    self.grads[1].data_mut()[c] = g_shift;
                    let is = inv_std[c];
                    let m = count as f64;
                    for n in 0..b {
                        for t in 0..spatial {
                            let j = n * spatial + t;
                            let dxh = ds.data()[c * count + j] * scale;
                            let v = if *batch_stats {
                                is / m * (m * dxh - sum_dxh - xh[j] * sum_dxh_xh)
                            } else {
                                dxh * is
                            };
                            dx.data_mut()[(n * channels + c) * spatial + t] = v;
                        }
                    }
                }
                if capture {
                    self.capture = Some(CaptureBuffer {
                        h_bar: x_hat.clone(),
                        s: ds.scale(b as f64),
                        spatial_count: spatial,
                    });
                }
                Ok(dx)
            }
            Cache::LayerNorm {
                x_hat,
                inv_std,
                in_shape,
            } => {
                let b = in_shape[0];
                let features = x_hat.cols();
                let dy = dy.reshape(&[b, features])?;
                let mut g_scale = vec![0.0; features];
                let mut g_shift = vec![0.0; features];
                let mut dx = vec![0.0; b * features];
                let f = features as f64;
                for n in 0..b {
                    let xh = x_hat.row(n);
                    let d = dy.row(n);
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..features {
                        g_scale[j] += d[j] * xh[j];
                        g_shift[j] += d[j];
                        let dxh = d[j] * self.params[0].data()[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    for j in 0..features {
                        let dxh = d[j] * self.params[0].data()[j];
                        dx[n * features + j] = inv_std[n] / f * (f * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
                self.grads[0] = Tensor::vector(g_scale)?;
                self.grads[1] = Tensor::vector(g_shift)?;
                if capture {
                    self.capture = Some(CaptureBuffer {
                        h_bar: x_hat.transpose()?,
                        s: dy.transpose()?.scale(b as f64),
                        spatial_count: 1,
                    });
                }
                Tensor::new(in_shape, dx)
            }
            Cache::Activation { input } => {
                let act = match self.kind {
                    LayerKind::Activation(a) => a,
                    _ => unreachable!(),
                };
                let dy = dy.reshape(input.shape())?;
                let data = dy
                    .data()
                    .iter()
                    .zip(input.data())
                    .map(|(&d, &x)| d * act.derivative(x))
                    .collect();
                Tensor::new(input.shape(), data)
            }
        }
    }
}

/// Ordered stack of layers ending in class logits.
#[derive(Clone, Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds and initialises a network.
    ///
    /// `input_shape` is the per-sample input shape. Dense/conv weights are
    /// drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; normalisation layers
    /// start at scale 1, shift 0.
    pub fn new(input_shape: &[usize], kinds: Vec<LayerKind>, seed: u64) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let mut shape = input_shape.to_vec();
        for kind in &kinds {
            shape = kind.output_shape(&shape)?;
        }
        if shape.len() != 1 {
            return Err(Error::dim(format!(
                "network must end in a flat logits vector, ends in {shape:?}"
            )));
        }
        let mut rng = SeededRng::new(seed);
        let layers = kinds.into_iter().map(|k| Layer::new(k, &mut rng)).collect();
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn class_count(&self) -> usize {
        let mut shape = self.input_shape.clone();
        for l in &self.layers {
            shape = l.kind.output_shape(&shape).expect("validated at construction");
        }
        shape[0]
    }

    /// Per-sample output shape of every layer.
    pub fn output_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.kind.output_shape(&shape).expect("validated at construction");
                shape.clone()
            })
            .collect()
    }

    /// Output locations per sample for each layer: `H * W` for conv and
    /// feature-map batch norm, 1 otherwise.
    pub fn spatial_counts(&self) -> Vec<usize> {
        self.output_shapes()
            .iter()
            .zip(&self.layers)
            .map(|(shape, l)| match l.kind {
                LayerKind::Conv2d { .. } | LayerKind::BatchNorm { .. } => shape[1..].iter().product(),
                _ => 1,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(Tensor::len).sum()
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let b = x.rows();
        let per_sample: usize = self.input_shape.iter().product();
        if x.cols() != per_sample {
            return Err(Error::dim(format!(
                "input {:?} does not match network input {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        let mut shape = vec![b];
        shape.extend_from_slice(&self.input_shape);
        let mut h = x.clone().reshape(&shape)?;
        for layer in &mut self.layers {
            h = layer.forward(h, training)?;
        }
        let classes = h.cols();
        h.reshape(&[b, classes])
    }

    /// Backpropagates the gradient of the loss w.r.t. the logits.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<()> {
        let mut d = dlogits.clone();
        for layer in self.layers.iter_mut().rev() {
            d = layer.backward(d)?;
        }
        Ok(())
    }

    /// Training-mode forward, mean NLL loss and backward in one call.
    pub fn forward_backward(&mut self, x: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
        let logits = self.forward(x, true)?;
        let (loss, dlogits) = nll_softmax_loss(&logits, targets)?;
        self.backward(&dlogits)?;
        Ok((loss, logits))
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| &l.params)
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn grads_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| &l.grads)
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    fn write_flat(&mut self, values: &[f64], grads: bool) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::dim(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let blocks = if grads { &mut layer.grads } else { &mut layer.params };
            for t in blocks {
                let n = t.len();
                t.data_mut().copy_from_slice(&values[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        self.write_flat(values, false)
    }

    pub fn set_grads_flat(&mut self, values: &[f64]) -> Result<()> {
        self.write_flat(values, true)
    }

    /// Copies parameters and normalisation running statistics from `other`.
    pub fn copy_state_from(&mut self, other: &Network) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self.layers.iter().zip(&other.layers).any(|(a, b)| a.kind != b.kind)
        {
            return Err(Error::dim("copy_state_from between different architectures"));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.params.clone_from(&src.params);
            dst.running.clone_from(&src.running);
        }
        Ok(())
    }
}
