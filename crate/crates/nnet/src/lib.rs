//! Single-channel U-Net denoiser trained on permutation pairs.
//!
//! * [`layers`]: convolution (im2col + GEMM, reflected borders), ReLU, max
//!   pooling, upsampling and concatenation, each with its adjoint.
//! * [`net`]: the encoder-decoder topology, forward tape and reverse-mode
//!   gradients, generic over `f32`/`f64`.
//! * [`model`]: [`DenoiserModel`] with input scaling, batch forward and
//!   cube inference.
//! * [`augment`]: flip augmentation.
//! * [`train`]: Adam training with validation hold-out and best checkpoint.
//! * [`checkpoint`]: versioned on-disk weights.

pub mod augment;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod net;
pub mod train;

pub use augment::augment;
pub use checkpoint::{load_model, save_model};
pub use model::{build_model, predict, predict_along, DenoiserModel, EpochRecord, Normalization};
pub use net::{Activation, ModelConfig, Net};
pub use train::{train, TrainConfig, TrainOutcome};
