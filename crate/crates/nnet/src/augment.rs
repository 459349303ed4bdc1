//! Flip augmentation of training pairs.
//!
//! Only the flips that keep rows as rows are used: a 90° rotation would turn
//! the fast scan axis into the slow one and misplace direction-dependent
//! noise.

use ndarray::{s, Array2, ArrayView2};
use spend_core::cubeio::stack_frames;
use spend_core::permute::PairSet;
use spend_core::{Axis, HyperCube, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flip {
    Identity,
    /// Mirror left-right (reverse columns).
    Horizontal,
    /// Mirror top-bottom (reverse rows).
    Vertical,
    Rotate180,
}

impl Flip {
    /// Output order of [`augment`] for each source frame.
    pub const ALL: [Flip; 4] = [Flip::Identity, Flip::Horizontal, Flip::Vertical, Flip::Rotate180];

    pub fn apply(self, f: ArrayView2<f32>) -> Array2<f32> {
        match self {
            Flip::Identity => f.to_owned(),
            Flip::Horizontal => f.slice(s![.., ..;-1]).to_owned(),
            Flip::Vertical => f.slice(s![..;-1, ..]).to_owned(),
            Flip::Rotate180 => f.slice(s![..;-1, ..;-1]).to_owned(),
        }
    }
}

/// The four flips of every frame, source frames in order.
pub fn augment_frames(frames: &[Array2<f32>]) -> Vec<Array2<f32>> {
    frames
        .iter()
        .flat_map(|f| Flip::ALL.map(|t| t.apply(f.view())))
        .collect()
}

fn augment_stack(cube: &HyperCube, axis: Axis) -> Result<HyperCube> {
    let data = stack_frames(axis, &augment_frames(&cube.frames(axis)))?;
    let mut template = cube.clone();
    if axis == Axis::W {
        template.wavenumbers = None;
    }
    template.with_data(data)
}

/// Fourfold pair set: identity, horizontal, vertical and 180° versions of
/// each pair, the same flip on input and target.
pub fn augment(pairs: &PairSet) -> Result<PairSet> {
    Ok(PairSet {
        input: augment_stack(&pairs.input, pairs.axis)?,
        target: augment_stack(&pairs.target, pairs.axis)?,
        augmented: true,
        ..pairs.clone()
    })
}
