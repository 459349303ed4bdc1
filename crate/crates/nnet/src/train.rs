//! Noise2Noise training with Adam, a held-out validation split and
//! best-checkpoint selection.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use spend_core::permute::PairSet;
use spend_core::rng::substream;
use spend_core::{Error, Result};

use crate::augment::augment_frames;
use crate::layers::Conv;
use crate::model::{DenoiserModel, EpochRecord, Normalization};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub validation_fraction: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            validation_fraction: 0.1,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }

    /// Frames held out from `n`: ⌊fraction·n⌋, but at least one when there
    /// are two or more frames so checkpoint selection always has data.
    pub fn validation_count(&self, n: usize) -> usize {
        let k = (self.validation_fraction * n as f64).floor() as usize;
        if k == 0 && n >= 2 {
            1
        } else {
            k
        }
    }
}

/// First and second moment estimates, one pair per layer.
pub struct Adam {
    m: Vec<Conv<f32>>,
    v: Vec<Conv<f32>>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(template: &[Conv<f32>], tc: &TrainConfig) -> Self {
        let zeros = || {
            template
                .iter()
                .map(|c| Conv::zeros(c.c_out(), c.c_in(), c.k))
                .collect::<Vec<_>>()
        };
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr: tc.learning_rate,
            beta1: tc.beta1,
            beta2: tc.beta2,
            eps: tc.epsilon,
        }
    }

    pub fn step(&mut self, params: &mut [Conv<f32>], grads: &[Conv<f32>]) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = (1.0 - self.beta1.powi(self.t)) as f32;
        let c2 = (1.0 - self.beta2.powi(self.t)) as f32;
        let (lr, eps) = (self.lr as f32, self.eps as f32);
        let update = |p: &mut f32, g: f32, m: &mut f32, v: &mut f32| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        };
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut p.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut p.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss, carrying the
    /// full history of the run.
    pub model: DenoiserModel,
    pub best_epoch: usize,
    /// Epoch whose losses became non-finite, if training was aborted.
    pub diverged_at: Option<usize>,
    /// Source frame indices (within the pair set) used for validation.
    pub validation_frames: Vec<usize>,
}

const SPLIT_STREAM: u64 = 0x5e1;
const SHUFFLE_STREAM: u64 = 0x5f1;

/// Splits `0..n` into sorted (training, validation) index lists.
pub fn split_indices(n: usize, tc: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(tc.seed, &[SPLIT_STREAM]));
    let k = tc.validation_count(n);
    let mut val = order[..k].to_vec();
    let mut train = order[k..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Trains `model` on the pairs. A fresh model (empty history) gets its input
/// scaling fitted to the training inputs; a model with history keeps its
/// scaling and continues. Validation frames are held out before
/// augmentation so no flipped copy of them is seen in training.
pub fn train(model: &DenoiserModel, pairs: &PairSet, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    pairs.check()?;
    let frames = pairs.frame_pairs();
    let n = frames.len();
    if n < tc.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{n} frame pairs is fewer than the batch size {}",
            tc.batch_size
        )));
    }
    let (rows, cols) = frames[0].0.dim();
    model.config().check_frame(rows, cols)?;

    let (train_idx, val_idx) = split_indices(n, tc);
    let mut model = model.clone();
    if model.history.is_empty() {
        model.normalization = Normalization::fit(train_idx.iter().map(|&i| &frames[i].0));
    }
    model.axis = Some(pairs.axis);
    let norm = model.normalization;
    let pick = |idx: &[usize], which: usize| -> Vec<Array2<f32>> {
        idx.iter()
            .map(|&i| {
                let f = if which == 0 { &frames[i].0 } else { &frames[i].1 };
                norm.apply(f)
            })
            .collect()
    };
    let (mut tx, mut tt) = (pick(&train_idx, 0), pick(&train_idx, 1));
    if tc.augment {
        tx = augment_frames(&tx);
        tt = augment_frames(&tt);
    }
    let (vx, vt) = (pick(&val_idx, 0), pick(&val_idx, 1));

    let mut adam = Adam::new(&model.net.layers, tc);
    let start = model.history.last().map_or(0, |r| r.epoch);
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = start;
    let mut diverged_at = None;
    let mut order: Vec<usize> = (0..tx.len()).collect();

    for epoch in start + 1..=start + tc.epochs {
        order.sort_unstable();
        order.shuffle(&mut substream(tc.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut sum = 0.0;
        let mut failed = false;
        for batch in order.chunks(tc.batch_size) {
            let bx: Vec<_> = batch.iter().map(|&i| tx[i].clone()).collect();
            let bt: Vec<_> = batch.iter().map(|&i| tt[i].clone()).collect();
            match model.net.loss_and_grad(&bx, &bt) {
                Ok((loss, grads)) if loss.is_finite() => {
                    sum += loss * batch.len() as f64;
                    adam.step(&mut model.net.layers, &grads);
                }
                Ok(_) | Err(Error::NonFinite(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = sum / tx.len() as f64;
        let val_loss = if failed || !model.net.layers.iter().all(Conv::is_finite) {
            f64::NAN
        } else if vx.is_empty() {
            train_loss
        } else {
            match model.net.mse(&vx, &vt) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => f64::NAN,
                Err(e) => return Err(e),
            }
        };
        if !val_loss.is_finite() || failed {
            log::warn!("training diverged at epoch {epoch}");
            diverged_at = Some(epoch);
            break;
        }
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        model.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best.net = model.net.clone();
        }
    }
    best.history = model.history;
    best.normalization = norm;
    best.axis = Some(pairs.axis);
    Ok(TrainOutcome {
        model: best,
        best_epoch,
        diverged_at,
        validation_frames: val_idx,
    })
}
