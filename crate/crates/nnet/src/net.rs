//! U-Net topology, forward pass with a recorded tape, and reverse-mode
//! gradients.
//!
//! Layer order (also the order of weights in a checkpoint):
//!
//! | index            | layer                                         |
//! |------------------|-----------------------------------------------|
//! | `2l`, `2l+1`     | encoder level `l`: two k×k conv + ReLU        |
//! | `2d`, `2d+1`     | bottleneck: two k×k conv + ReLU               |
//! | `2d+2+2j`, `+1`  | decoder step `j` (level `d-1-j`): upsample, concat skip, two k×k conv + ReLU |
//! | `4d+2`           | 1×1 output conv, linear                       |
//!
//! Level `l` has `base·2^l` channels; max pooling halves the frame between
//! levels, nearest upsampling doubles it back.

use ndarray::{Array2, Array3, ArrayView2, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spend_core::rng::substream;
use spend_core::{Error, Result};

use crate::layers::{
    concat_backward, concat_forward, conv_backward, conv_forward, maxpool_backward,
    maxpool_forward, relu_backward, relu_inplace, upsample_backward, upsample_forward, Conv, Real,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub base_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_skip")]
    pub skip_connections: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_kernel() -> usize {
    3
}

fn default_skip() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 2,
            base_channels: 16,
            kernel: 3,
            activation: Activation::Relu,
            skip_connections: true,
            seed: 0,
        }
    }
}

pub const MAX_DEPTH: usize = 6;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DEPTH).contains(&self.depth) {
            return Err(Error::InvalidArgument(format!(
                "depth must be in 1..={MAX_DEPTH}, got {}",
                self.depth
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidArgument("base_channels must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }

    /// Frame sides must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn check_frame(&self, rows: usize, cols: usize) -> Result<()> {
        let d = self.divisor();
        if rows == 0 || cols == 0 || rows % d != 0 || cols % d != 0 {
            return Err(Error::Shape(format!(
                "frame {rows}x{cols} is not divisible by 2^{} = {d}",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// `(c_out, c_in, kernel)` for every layer, in layer order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (d, k) = (self.depth, self.kernel);
        let mut shapes = Vec::with_capacity(4 * d + 3);
        let mut c_in = 1;
        for l in 0..=d {
            let c = self.channels(l);
            shapes.push((c, c_in, k));
            shapes.push((c, c, k));
            c_in = c;
        }
        for l in (0..d).rev() {
            let c = self.channels(l);
            let skip = if self.skip_connections { c } else { 0 };
            shapes.push((c, c_in + skip, k));
            shapes.push((c, c, k));
            c_in = c;
        }
        shapes.push((1, c_in, 1));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(o, i, k)| o * i * k * k + o)
            .sum()
    }

    fn enc(&self, level: usize) -> usize {
        2 * level
    }

    fn dec(&self, level: usize) -> usize {
        2 * self.depth + 2 + 2 * (self.depth - 1 - level)
    }

    fn output_layer(&self) -> usize {
        4 * self.depth + 2
    }
}

/// Network weights in scalar type `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Net<T> {
    pub config: ModelConfig,
    pub layers: Vec<Conv<T>>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Tape<T> {
    inputs: Vec<Array3<T>>,
    outputs: Vec<Array3<T>>,
    pools: Vec<Array3<u8>>,
}

impl<T: Real> Net<T> {
    /// He-uniform weights (bound √(6/fan_in)), zero biases. Each layer draws
    /// from its own substream of the config seed.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (o, c, k))| {
                let mut conv = Conv::zeros(o, c, k);
                let bound = (6.0 / (c * k * k) as f64).sqrt();
                let mut rng = substream(config.seed, &[i as u64]);
                conv.w
                    .mapv_inplace(|_| T::from_f64(rng.random_range(-bound..bound)));
                conv
            })
            .collect();
        Ok(Net {
            config: config.clone(),
            layers,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(o, c, k)| Conv::zeros(o, c, k))
            .collect();
        Ok(Net {
            config: config.clone(),
            layers,
        })
    }

    /// Weights that pass non-negative inputs through unchanged: channel 0 of
    /// every level-0 layer copies channel 0 through its centre tap, the
    /// level-0 decoder reads the skip branch, and deeper levels stay zero.
    /// Needs skip connections.
    pub fn identity(config: &ModelConfig) -> Result<Self> {
        if !config.skip_connections {
            return Err(Error::InvalidArgument(
                "the identity construction needs skip connections".into(),
            ));
        }
        let mut net = Self::zeros(config)?;
        let c = config.kernel / 2;
        let one = T::one();
        let e = config.enc(0);
        *net.layers[e].tap_mut(0, 0, c, c) = one;
        *net.layers[e + 1].tap_mut(0, 0, c, c) = one;
        let dl = config.dec(0);
        // the skip channels follow the upsampled ones
        let skip0 = config.channels(1);
        *net.layers[dl].tap_mut(0, skip0, c, c) = one;
        *net.layers[dl + 1].tap_mut(0, 0, c, c) = one;
        let out = config.output_layer();
        *net.layers[out].tap_mut(0, 0, 0, 0) = one;
        Ok(net)
    }

    pub fn cast<U: Real>(&self) -> Net<U> {
        Net {
            config: self.config.clone(),
            layers: self.layers.iter().map(Conv::cast).collect(),
        }
    }

    pub fn zeros_like(&self) -> Vec<Conv<T>> {
        self.layers
            .iter()
            .map(|l| Conv::zeros(l.c_out(), l.c_in(), l.k))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv::len).sum()
    }

    fn check_layer(&self, index: usize, a: &Array3<T>) -> Result<()> {
        if a.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("output of layer {index}")))
        }
    }

    /// Forward pass on one frame, recording what the backward pass needs.
    pub fn forward_tape(&self, frame: ArrayView2<T>) -> Result<(Array2<T>, Tape<T>)> {
        let cfg = &self.config;
        let (rows, cols) = frame.dim();
        cfg.check_frame(rows, cols)?;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
            pools: Vec::with_capacity(cfg.depth),
        };
        let step = |h: Array3<T>, relu: bool, tape: &mut Tape<T>| -> Result<Array3<T>> {
            let i = tape.inputs.len();
            let mut out = conv_forward(&self.layers[i], h.view());
            // before the rectifier, which would map NaN to zero
            self.check_layer(i, &out)?;
            if relu {
                relu_inplace(&mut out);
            }
            tape.inputs.push(h);
            tape.outputs.push(out.clone());
            Ok(out)
        };
        let mut h = frame.to_owned().insert_axis(ndarray::Axis(0));
        let mut skips = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            h = step(h, true, &mut tape)?;
            h = step(h, true, &mut tape)?;
            let (pooled, arg) = maxpool_forward(h.view());
            skips.push(h);
            tape.pools.push(arg);
            h = pooled;
        }
        h = step(h, true, &mut tape)?;
        h = step(h, true, &mut tape)?;
        for l in (0..cfg.depth).rev() {
            h = upsample_forward(h.view());
            if cfg.skip_connections {
                h = concat_forward(h.view(), skips[l].view());
            }
            h = step(h, true, &mut tape)?;
            h = step(h, true, &mut tape)?;
        }
        h = step(h, false, &mut tape)?;
        let out = h
            .into_shape_with_order((rows, cols))
            .expect("single output channel");
        Ok((out, tape))
    }

    pub fn forward(&self, frame: ArrayView2<T>) -> Result<Array2<T>> {
        self.forward_tape(frame).map(|(y, _)| y)
    }

    /// Backpropagates `dy` (gradient of the loss w.r.t. the output frame)
    /// and accumulates into `grads`. Returns the gradient w.r.t. the input
    /// frame.
    pub fn backward(&self, tape: &Tape<T>, dy: ArrayView2<T>, grads: &mut [Conv<T>]) -> Array2<T> {
        let cfg = &self.config;
        let (rows, cols) = dy.dim();
        let back = |i: usize, relu: bool, dout: Array3<T>, grads: &mut [Conv<T>]| -> Array3<T> {
            let dpre = if relu {
                relu_backward(tape.outputs[i].view(), dout)
            } else {
                dout
            };
            conv_backward(
                &self.layers[i],
                tape.inputs[i].view(),
                dpre.view(),
                &mut grads[i],
                true,
            )
            .expect("requested input gradient")
        };
        let out = cfg.output_layer();
        let mut g = back(
            out,
            false,
            dy.to_owned().insert_axis(ndarray::Axis(0)),
            grads,
        );
        let mut skip_grads: Vec<Option<Array3<T>>> = vec![None; cfg.depth];
        for l in 0..cfg.depth {
            let i = cfg.dec(l);
            g = back(i + 1, true, g, grads);
            g = back(i, true, g, grads);
            if cfg.skip_connections {
                let (up, skip) = concat_backward(g.view(), cfg.channels(l + 1));
                skip_grads[l] = Some(skip);
                g = up;
            }
            g = upsample_backward(g.view());
        }
        let b = 2 * cfg.depth;
        g = back(b + 1, true, g, grads);
        g = back(b, true, g, grads);
        for l in (0..cfg.depth).rev() {
            g = maxpool_backward(g.view(), &tape.pools[l]);
            if let Some(s) = &skip_grads[l] {
                g += s;
            }
            let i = cfg.enc(l);
            g = back(i + 1, true, g, grads);
            g = back(i, true, g, grads);
        }
        g.into_shape_with_order((rows, cols))
            .expect("single input channel")
    }

    /// Mean squared error over every pixel of every frame and its gradient
    /// with respect to all weights. Frames run in parallel; per-frame
    /// gradients are summed in frame order so the result does not depend on
    /// the thread count.
    pub fn loss_and_grad(
        &self,
        inputs: &[Array2<T>],
        targets: &[Array2<T>],
    ) -> Result<(f64, Vec<Conv<T>>)> {
        check_batch(inputs, targets)?;
        let total: usize = inputs.iter().map(|f| f.len()).sum();
        let scale = T::from_f64(2.0 / total as f64);
        let per_frame: Vec<(f64, Vec<Conv<T>>)> = inputs
            .par_iter()
            .zip(targets.par_iter())
            .map(|(x, t)| {
                let (y, tape) = self.forward_tape(x.view())?;
                let r = &y - t;
                let sse = r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
                let dy = r.mapv(|v| v * scale);
                let mut grads = self.zeros_like();
                self.backward(&tape, dy.view(), &mut grads);
                Ok((sse, grads))
            })
            .collect::<Result<_>>()?;
        let mut sse = 0.0;
        let mut grads = self.zeros_like();
        for (s, g) in per_frame {
            sse += s;
            for (acc, part) in grads.iter_mut().zip(g) {
                acc.w += &part.w;
                acc.b += &part.b;
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of layer {i}")));
            }
        }
        Ok((sse / total as f64, grads))
    }

    /// Forward pass over a batch, frames in parallel, results in order.
    pub fn forward_batch(&self, frames: &[Array2<T>]) -> Result<Vec<Array2<T>>> {
        frames.par_iter().map(|f| self.forward(f.view())).collect()
    }

    /// Mean squared error without gradients.
    pub fn mse(&self, inputs: &[Array2<T>], targets: &[Array2<T>]) -> Result<f64> {
        check_batch(inputs, targets)?;
        let outputs = self.forward_batch(inputs)?;
        let total: usize = inputs.iter().map(|f| f.len()).sum();
        let mut sse = 0.0;
        for (y, t) in outputs.iter().zip(targets) {
            Zip::from(y).and(t).for_each(|&a, &b| {
                let d = (a - b).as_f64();
                sse += d * d;
            });
        }
        Ok(sse / total as f64)
    }
}

fn check_batch<T>(inputs: &[Array2<T>], targets: &[Array2<T>]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} inputs for {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    for (i, (x, t)) in inputs.iter().zip(targets).enumerate() {
        if x.dim() != t.dim() {
            return Err(Error::Shape(format!(
                "frame {i}: input {:?} vs target {:?}",
                x.dim(),
                t.dim()
            )));
        }
    }
    Ok(())
}
