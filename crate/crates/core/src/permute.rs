//! Odd/even slice permutation into Noise2Noise training pairs.
//!
//! Slices `s₀ … s_{n−1}` along the permutation axis are split by 0-based
//! parity (evens are `s₀, s₂, …`). With `m = ⌊n/2⌋`:
//!
//! ```text
//! input  = s₀ s₂ … s_{2m−2} | s₁ s₃ … s_{2m−1}
//! target = s₁ s₃ … s_{2m−1} | s₀ s₂ … s_{2m−2}
//! ```
//!
//! so frame `i` of the input and frame `i` of the target are neighbouring
//! slices (original indices differ by exactly one). An unpaired last slice of
//! an odd-length stack is dropped from the pairs.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cubeio::{load_cube, save_cube, stack_frames, Axis, HyperCube};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub input: HyperCube,
    pub target: HyperCube,
    pub axis: Axis,
    /// Extent of the source cube along `axis`.
    pub n_original: usize,
    /// The source had an odd extent and its last slice is not in the pairs.
    pub parity_dropped: bool,
    /// Frames were multiplied by flip augmentation; the permutation can no
    /// longer be inverted.
    pub augmented: bool,
}

/// Original slice index of input frame `i` for `m` pairs.
pub fn input_source(i: usize, m: usize) -> usize {
    if i < m {
        2 * i
    } else {
        2 * (i - m) + 1
    }
}

/// Original slice index of target frame `i` for `m` pairs.
pub fn target_source(i: usize, m: usize) -> usize {
    if i < m {
        2 * i + 1
    } else {
        2 * (i - m)
    }
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.input.extent(self.axis)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Aligned `(input, target)` frames.
    pub fn frame_pairs(&self) -> Vec<(Array2<f32>, Array2<f32>)> {
        self.input
            .frames(self.axis)
            .into_iter()
            .zip(self.target.frames(self.axis))
            .collect()
    }

    /// Checks the bookkeeping fields against the stacks.
    pub fn check(&self) -> Result<()> {
        if self.input.dims() != self.target.dims() {
            return Err(Error::invalid(format!(
                "input {:?} and target {:?} differ in shape",
                self.input.dims(),
                self.target.dims()
            )));
        }
        if self.augmented {
            return Ok(());
        }
        let m = self.n_original / 2;
        if self.len() != 2 * m {
            return Err(Error::invalid(format!(
                "pair extent {} does not match n_original {}",
                self.len(),
                self.n_original
            )));
        }
        if self.parity_dropped != (self.n_original % 2 == 1) {
            return Err(Error::invalid(format!(
                "parity flag {} inconsistent with n_original {}",
                self.parity_dropped, self.n_original
            )));
        }
        Ok(())
    }
}

fn permuted_stack(cube: &HyperCube, axis: Axis, indices: &[usize]) -> Result<HyperCube> {
    let frames: Vec<Array2<f32>> = indices
        .iter()
        .map(|&i| cube.frame(axis, i).map(|f| f.to_owned()))
        .collect::<Result<_>>()?;
    let data = stack_frames(axis, &frames)?;
    let mut template = cube.clone();
    if axis == Axis::W {
        // reordered spectral frames no longer follow the wavenumber axis
        template.wavenumbers = None;
    }
    template.with_data(data)
}

pub fn split_permute(cube: &HyperCube, axis: Axis) -> Result<PairSet> {
    let n = cube.extent(axis);
    if n < 2 {
        return Err(Error::invalid(format!(
            "permutation along {axis} needs an extent of at least 2, got {n}"
        )));
    }
    let m = n / 2;
    let input_idx: Vec<usize> = (0..2 * m).map(|i| input_source(i, m)).collect();
    let target_idx: Vec<usize> = (0..2 * m).map(|i| target_source(i, m)).collect();
    Ok(PairSet {
        input: permuted_stack(cube, axis, &input_idx)?,
        target: permuted_stack(cube, axis, &target_idx)?,
        axis,
        n_original: n,
        parity_dropped: n % 2 == 1,
        augmented: false,
    })
}

/// Undoes the permutation of both stacks. Each result is the source cube
/// without any dropped slice.
pub fn restore_order(pairs: &PairSet) -> Result<(HyperCube, HyperCube)> {
    pairs.check()?;
    if pairs.augmented {
        return Err(Error::invalid("augmented pair sets cannot be restored"));
    }
    let m = pairs.n_original / 2;
    let restore = |stack: &HyperCube, source: fn(usize, usize) -> usize| -> Result<HyperCube> {
        let mut frames: Vec<Option<Array2<f32>>> = vec![None; 2 * m];
        for (i, f) in stack.frames(pairs.axis).into_iter().enumerate() {
            frames[source(i, m)] = Some(f);
        }
        let frames: Vec<Array2<f32>> = frames.into_iter().map(|f| f.expect("bijection")).collect();
        stack.with_data(stack_frames(pairs.axis, &frames)?)
    };
    Ok((
        restore(&pairs.input, input_source)?,
        restore(&pairs.target, target_source)?,
    ))
}

/// Sidecar describing a saved pair set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairMeta {
    pub version: u32,
    pub axis: Axis,
    pub n_original: usize,
    pub parity_dropped: bool,
    #[serde(default)]
    pub augmented: bool,
    pub convention: String,
    pub input_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
}

pub const CONVENTION: &str =
    "0-based parity (evens = 0,2,4,...); input = evens ++ odds; target = odds ++ evens; \
     an odd final slice is dropped";

impl PairMeta {
    pub fn of(pairs: &PairSet) -> Self {
        let m = pairs.n_original / 2;
        let (input_indices, target_indices) = if pairs.augmented {
            (Vec::new(), Vec::new())
        } else {
            (
                (0..2 * m).map(|i| input_source(i, m)).collect(),
                (0..2 * m).map(|i| target_source(i, m)).collect(),
            )
        };
        Self {
            version: 1,
            axis: pairs.axis,
            n_original: pairs.n_original,
            parity_dropped: pairs.parity_dropped,
            augmented: pairs.augmented,
            convention: CONVENTION.to_string(),
            input_indices,
            target_indices,
        }
    }
}

pub fn save_pairs(
    pairs: &PairSet,
    input: impl AsRef<Path>,
    target: impl AsRef<Path>,
    meta: impl AsRef<Path>,
) -> Result<()> {
    pairs.check()?;
    save_cube(&pairs.input, input)?;
    save_cube(&pairs.target, target)?;
    let meta = meta.as_ref();
    let mut text = serde_json::to_string_pretty(&PairMeta::of(pairs))?;
    text.push('\n');
    fs::write(meta, text).map_err(|e| Error::io(meta, e))
}

pub fn load_pairs(
    input: impl AsRef<Path>,
    target: impl AsRef<Path>,
    meta: impl AsRef<Path>,
) -> Result<PairSet> {
    let meta_path = meta.as_ref();
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: PairMeta = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: meta_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let pairs = PairSet {
        input: load_cube(input)?,
        target: load_cube(target)?,
        axis: meta.axis,
        n_original: meta.n_original,
        parity_dropped: meta.parity_dropped,
        augmented: meta.augmented,
    };
    pairs.check()?;
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    /// Slice `i` along ω is filled with the value `i`.
    fn labelled(n: usize) -> HyperCube {
        HyperCube::new(Array3::from_shape_fn((2, 3, n), |(_, _, w)| w as f32)).unwrap()
    }

    fn labels(cube: &HyperCube) -> Vec<usize> {
        cube.frames(Axis::W).iter().map(|f| f[[0, 0]] as usize).collect()
    }

    #[test]
    fn four_slices() {
        // A B C D -> input A C B D, target B D A C
        let p = split_permute(&labelled(4), Axis::W).unwrap();
        assert_eq!(labels(&p.input), vec![0, 2, 1, 3]);
        assert_eq!(labels(&p.target), vec![1, 3, 0, 2]);
        assert!(!p.parity_dropped);
        let (a, b) = restore_order(&p).unwrap();
        assert_eq!(labels(&a), vec![0, 1, 2, 3]);
        assert_eq!(labels(&b), vec![0, 1, 2, 3]);
    }

    #[test]
    fn three_slices_drop_the_last() {
        let p = split_permute(&labelled(3), Axis::W).unwrap();
        assert_eq!(labels(&p.input), vec![0, 1]);
        assert_eq!(labels(&p.target), vec![1, 0]);
        assert!(p.parity_dropped);
        let (a, _) = restore_order(&p).unwrap();
        assert_eq!(labels(&a), vec![0, 1]);
    }

    #[test]
    fn aligned_frames_are_neighbours() {
        let p = split_permute(&labelled(10), Axis::W).unwrap();
        for (a, b) in labels(&p.input).into_iter().zip(labels(&p.target)) {
            assert_eq!(a.abs_diff(b), 1);
        }
    }

    #[test]
    fn rejects_short_axis_and_bad_bookkeeping() {
        assert!(split_permute(&labelled(1), Axis::W).is_err());
        let mut p = split_permute(&labelled(4), Axis::W).unwrap();
        p.n_original = 5;
        assert!(restore_order(&p).is_err());
        p.n_original = 4;
        p.parity_dropped = true;
        assert!(restore_order(&p).is_err());
    }

    #[test]
    fn wavenumbers_dropped_only_for_spectral_permutation() {
        let mut c = labelled(4);
        c.wavenumbers = Some(vec![1.0, 2.0, 3.0, 4.0]);
        assert!(split_permute(&c, Axis::W).unwrap().input.wavenumbers.is_none());
        assert!(split_permute(&c, Axis::X).unwrap().input.wavenumbers.is_some());
    }

    #[test]
    fn saved_pairs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = split_permute(&labelled(5), Axis::W).unwrap();
        let (a, b, m) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("m.json"));
        save_pairs(&p, &a, &b, &m).unwrap();
        assert_eq!(load_pairs(&a, &b, &m).unwrap(), p);
        let meta: PairMeta = serde_json::from_str(&fs::read_to_string(&m).unwrap()).unwrap();
        assert_eq!(meta.input_indices, vec![0, 2, 1, 3]);
        assert_eq!(meta.target_indices, vec![1, 3, 0, 2]);
    }
}
