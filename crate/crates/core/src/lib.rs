//! Core numerics for self-supervised permutation denoising of hyperspectral
//! stacks.
//!
//! The crate is organised around [`HyperCube`], a dense `(x, y, ω)` stack of
//! 32-bit reals. Around it live:
//!
//! * [`cubeio`]: the on-disk cube format (JSON sidecar + raw payload).
//! * [`synth`]: ground-truth phantoms and the three noise classes
//!   (white, fast-axis correlated, signal-proportional spectral noise).
//! * [`noisestats`]: per-axis PSD, adjacent-pixel correlation, noise vs
//!   signal curves and permutation-axis selection.
//! * [`permute`]: odd/even slice permutation into training pairs.
//! * [`unmix`]: LASSO, MCR-ALS and spectral phasor unmixing.
//! * [`baseline`]: arPLS baseline correction.
//! * [`metrics`]: SSIM, PSNR, SNR gain, FRC, Fréchet distortion, Welch t-test.
//! * [`raster`]: a small PNG writer for previews and plots.

pub mod baseline;
pub mod cubeio;
pub mod error;
pub mod metrics;
pub mod noisestats;
pub mod permute;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod unmix;

pub use cubeio::{Axis, HyperCube, Image};
pub use error::{Error, Result};
