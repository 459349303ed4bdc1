//! The trained denoiser: weights, input scaling and training record, plus
//! frame and cube inference.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use spend_core::cubeio::stack_frames;
use spend_core::{Axis, Error, HyperCube, Result};

use crate::layers::reflect;
use crate::net::{ModelConfig, Net};

/// Affine input scaling: the network sees `(x - offset) / scale` and its
/// output is mapped back with the inverse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            offset: 0.0,
            scale: 1.0,
        }
    }
}

pub const PERCENTILE_LOW: f64 = 0.01;
pub const PERCENTILE_HIGH: f64 = 0.998;

impl Normalization {
    /// Percentile scaling: the 1st percentile maps to 0 and the 99.8th to 1,
    /// so most of the signal enters the network non-negative. A flat set
    /// keeps unit scale.
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a Array2<f32>>) -> Self {
        let mut values: Vec<f32> = frames.into_iter().flat_map(|f| f.iter().cloned()).collect();
        if values.is_empty() {
            return Self::default();
        }
        values.sort_unstable_by(f32::total_cmp);
        let at = |q: f64| {
            let pos = q * (values.len() - 1) as f64;
            let (i, t) = (pos.floor() as usize, pos.fract());
            let j = (i + 1).min(values.len() - 1);
            values[i] as f64 * (1.0 - t) + values[j] as f64 * t
        };
        let (lo, hi) = (at(PERCENTILE_LOW), at(PERCENTILE_HIGH));
        let scale = if hi > lo { hi - lo } else { 1.0 };
        Normalization { offset: lo, scale }
    }

    pub fn apply(&self, f: &Array2<f32>) -> Array2<f32> {
        let (o, s) = (self.offset, self.scale);
        f.mapv(|v| ((v as f64 - o) / s) as f32)
    }

    pub fn invert(&self, f: &Array2<f32>) -> Array2<f32> {
        let (o, s) = (self.offset, self.scale);
        f.mapv(|v| (v as f64 * s + o) as f32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub net: Net<f32>,
    pub normalization: Normalization,
    /// Permutation axis the model was trained on; inference slices frames
    /// perpendicular to it.
    pub axis: Option<Axis>,
    pub history: Vec<EpochRecord>,
}

impl DenoiserModel {
    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn wrap(net: Net<f32>) -> Self {
        DenoiserModel {
            net,
            normalization: Normalization::default(),
            axis: None,
            history: Vec::new(),
        }
    }

    /// All-zero weights and biases: the output is zero for any input.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Net::zeros(config).map(Self::wrap)
    }

    /// Analytic identity for non-negative inputs (see [`Net::identity`]).
    pub fn identity(config: &ModelConfig) -> Result<Self> {
        Net::identity(config).map(Self::wrap)
    }

    /// Forward pass on raw frames. Frame sides must be multiples of
    /// `2^depth`; use [`predict`] for arbitrary sizes.
    pub fn forward(&self, frames: &[Array2<f32>]) -> Result<Vec<Array2<f32>>> {
        let cfg = self.config();
        for f in frames {
            cfg.check_frame(f.nrows(), f.ncols())?;
        }
        let normed: Vec<Array2<f32>> = frames.iter().map(|f| self.normalization.apply(f)).collect();
        let out = self.net.forward_batch(&normed)?;
        Ok(out.iter().map(|f| self.normalization.invert(f)).collect())
    }

    /// Loss and weight gradients in normalized units for raw frame pairs.
    pub fn loss_and_grad(
        &self,
        inputs: &[Array2<f32>],
        targets: &[Array2<f32>],
    ) -> Result<(f64, Vec<crate::layers::Conv<f32>>)> {
        let n = &self.normalization;
        let xi: Vec<_> = inputs.iter().map(|f| n.apply(f)).collect();
        let ti: Vec<_> = targets.iter().map(|f| n.apply(f)).collect();
        self.net.loss_and_grad(&xi, &ti)
    }
}

/// Initialized model from a validated config.
pub fn build_model(config: &ModelConfig) -> Result<DenoiserModel> {
    Net::init(config).map(DenoiserModel::wrap)
}

/// Reflect-pads `frame` at the bottom and right to multiples of `d`.
pub fn pad_to_multiple(frame: ArrayView2<f32>, d: usize) -> Array2<f32> {
    let (h, w) = frame.dim();
    let (hp, wp) = (h.div_ceil(d) * d, w.div_ceil(d) * d);
    Array2::from_shape_fn((hp, wp), |(i, j)| {
        frame[[reflect(i as isize, h), reflect(j as isize, w)]]
    })
}

/// Denoises every frame perpendicular to the model's axis (ω when unset),
/// in original order, padding and cropping frames whose sides are not
/// multiples of `2^depth`.
pub fn predict(model: &DenoiserModel, cube: &HyperCube) -> Result<HyperCube> {
    predict_along(model, cube, model.axis.unwrap_or(Axis::W))
}

pub fn predict_along(model: &DenoiserModel, cube: &HyperCube, axis: Axis) -> Result<HyperCube> {
    let d = model.config().divisor();
    let frames = cube.frames(axis);
    let (h, w) = frames
        .first()
        .map(|f| f.dim())
        .ok_or_else(|| Error::InvalidArgument("cube has no frames".into()))?;
    let padded: Vec<Array2<f32>> = frames.iter().map(|f| pad_to_multiple(f.view(), d)).collect();
    let out: Vec<Array2<f32>> = model
        .forward(&padded)?
        .into_iter()
        .map(|f| f.slice(s![..h, ..w]).to_owned())
        .collect();
    cube.with_data(stack_frames(axis, &out)?)
}
