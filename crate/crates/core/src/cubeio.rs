//! Hyperspectral cube container and its on-disk format.
//!
//! A cube named `name` is stored as two files:
//!
//! * `name.json`: `dims`, `axis_order`, `dtype` (always `"f32le"`),
//!   optional `wavenumbers`, optional `pixel_size_nm`, `fast_axis`,
//!   `checksum` (CRC32 of the payload bytes) and an optional `seed`.
//! * `name.raw`: `n_x * n_y * n_ω` little-endian `f32` values in `(x, y, ω)`
//!   order with ω varying fastest.
//!
//! Paths passed to [`load_cube`] / [`save_cube`] may name either file or the
//! bare stem.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView2, Axis as NdAxis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three cube axes. `W` is the spectral (ω) axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "w", alias = "ω", alias = "omega")]
    W,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::W];

    /// Position of this axis in the `(x, y, ω)` storage order.
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::W => 2,
        }
    }

    pub fn nd(self) -> NdAxis {
        NdAxis(self.index())
    }

    pub fn is_spatial(self) -> bool {
        self != Axis::W
    }

    /// The two remaining axes, in storage order.
    pub fn others(self) -> [Axis; 2] {
        match self {
            Axis::X => [Axis::Y, Axis::W],
            Axis::Y => [Axis::X, Axis::W],
            Axis::W => [Axis::X, Axis::Y],
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::W => "w",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "w" | "W" | "ω" | "omega" => Ok(Axis::W),
            other => Err(Error::invalid(format!("unknown axis {other:?}"))),
        }
    }
}

/// Acquisition order of the three axes, fastest first (`x-y-w` is the usual
/// raster scan that steps the wavenumber last).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ScanOrder(pub [Axis; 3]);

impl ScanOrder {
    pub fn new(order: [Axis; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for a in order {
            if seen[a.index()] {
                return Err(Error::invalid(format!(
                    "axis order {order:?} is not a permutation of x, y, w"
                )));
            }
            seen[a.index()] = true;
        }
        Ok(Self(order))
    }

    pub fn fastest(&self) -> Axis {
        self.0[0]
    }
}

impl Default for ScanOrder {
    fn default() -> Self {
        Self([Axis::X, Axis::Y, Axis::W])
    }
}

impl fmt::Display for ScanOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.0[0], self.0[1], self.0[2])
    }
}

impl TryFrom<String> for ScanOrder {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("axis order {s:?} must look like x-y-w")));
        }
        let mut order = [Axis::X; 3];
        for (slot, p) in order.iter_mut().zip(parts) {
            *slot = p.parse()?;
        }
        ScanOrder::new(order)
    }
}

impl FromStr for ScanOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::try_from(s.to_string())
    }
}

impl From<ScanOrder> for String {
    fn from(o: ScanOrder) -> String {
        o.to_string()
    }
}

/// Dense `(n_x, n_y, n_ω)` stack of 32-bit reals plus acquisition metadata.
///
/// The sample array is private so its shape can only change through
/// constructors that re-check the invariants; metadata fields are public and
/// checked by [`HyperCube::validate`] (called by [`save_cube`]).
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    data: Array3<f32>,
    pub axis_order: ScanOrder,
    pub wavenumbers: Option<Vec<f64>>,
    pub pixel_size: Option<f64>,
    pub fast_axis: Axis,
    pub seed: Option<u64>,
}

impl HyperCube {
    /// Wraps a sample array with default metadata (`x-y-w` scan, fast axis x).
    pub fn new(data: Array3<f32>) -> Result<Self> {
        check_samples(&data)?;
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            axis_order: ScanOrder::default(),
            wavenumbers: None,
            pixel_size: None,
            fast_axis: Axis::X,
            seed: None,
        })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self> {
        Self::new(Array3::zeros(dims))
    }

    /// A cube with new samples but this cube's metadata.
    pub fn with_data(&self, data: Array3<f32>) -> Result<Self> {
        check_samples(&data)?;
        if let Some(w) = &self.wavenumbers {
            if w.len() != data.dim().2 {
                return Err(Error::Shape(format!(
                    "{} wavenumbers for a spectral extent of {}",
                    w.len(),
                    data.dim().2
                )));
            }
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            data: Array3::zeros((0, 0, 0)),
            axis_order: self.axis_order,
            wavenumbers: self.wavenumbers.clone(),
            pixel_size: self.pixel_size,
            fast_axis: self.fast_axis,
            seed: self.seed,
        }
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn extent(&self, axis: Axis) -> usize {
        self.data.len_of(axis.nd())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Full metadata and sample check.
    pub fn validate(&self) -> Result<()> {
        check_samples(&self.data)?;
        if let Some(w) = &self.wavenumbers {
            check_wavenumbers(w, self.dims().2)?;
        }
        if let Some(p) = self.pixel_size {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::invalid(format!("pixel size {p} must be positive")));
            }
        }
        Ok(())
    }

    /// The 2-D plane at `index` along `axis`; the remaining axes keep storage
    /// order, e.g. an ω slice is an `(x, y)` image.
    pub fn frame(&self, axis: Axis, index: usize) -> Result<ArrayView2<'_, f32>> {
        let extent = self.extent(axis);
        if index >= extent {
            return Err(Error::IndexOutOfRange {
                axis,
                index,
                extent,
            });
        }
        Ok(self.data.index_axis(axis.nd(), index))
    }

    /// All frames along `axis`, in order.
    pub fn frames(&self, axis: Axis) -> Vec<Array2<f32>> {
        self.data
            .axis_iter(axis.nd())
            .map(|f| f.to_owned())
            .collect()
    }

    /// Per-pixel spectrum at `(x, y)`.
    pub fn spectrum(&self, x: usize, y: usize) -> Vec<f32> {
        self.data.slice(ndarray::s![x, y, ..]).to_vec()
    }
}

/// Reassembles frames taken along `axis` into an `(x, y, ω)` array.
pub fn stack_frames(axis: Axis, frames: &[Array2<f32>]) -> Result<Array3<f32>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("cannot stack zero frames"))?;
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    if frames.iter().any(|f| f.dim() != first.dim()) {
        return Err(Error::Shape("frames differ in shape".into()));
    }
    ndarray::stack(axis.nd(), &views).map_err(|e| Error::Shape(e.to_string()))
}

fn check_samples(data: &Array3<f32>) -> Result<()> {
    let (nx, ny, nw) = data.dim();
    if nx == 0 || ny == 0 || nw == 0 {
        return Err(Error::Shape(format!(
            "cube dimensions must be at least 1, got {nx}x{ny}x{nw}"
        )));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("cube sample #{pos}")));
    }
    Ok(())
}

fn check_wavenumbers(w: &[f64], n_w: usize) -> Result<()> {
    if w.len() != n_w {
        return Err(Error::Shape(format!(
            "{} wavenumbers for a spectral extent of {n_w}",
            w.len()
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("wavenumbers".into()));
    }
    let increasing = w.windows(2).all(|p| p[1] > p[0]);
    let decreasing = w.windows(2).all(|p| p[1] < p[0]);
    if !(increasing || decreasing) {
        return Err(Error::invalid("wavenumbers must be strictly monotone"));
    }
    Ok(())
}

/// Single 2-D frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub data: Array2<f32>,
    pub pixel_size: Option<f64>,
}

impl Image {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::Shape("image dimensions must be at least 1".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        Ok(Self {
            data,
            pixel_size: None,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }
}

pub fn slice_frame(cube: &HyperCube, axis: Axis, index: usize) -> Result<Image> {
    let frame = cube.frame(axis, index)?.to_owned();
    Ok(Image {
        data: frame,
        pixel_size: cube.pixel_size,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    axis_order: ScanOrder,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wavenumbers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pixel_size_nm: Option<f64>,
    fast_axis: Axis,
    checksum: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

const DTYPE: &str = "f32le";

/// `(sidecar, payload)` paths for a cube name, `name.json` or `name.raw`.
pub fn cube_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut raw = stem.into_os_string();
    raw.push(".raw");
    (json.into(), raw.into())
}

/// Payload bytes in storage order.
pub fn payload_bytes(data: &Array3<f32>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn checksum(cube: &HyperCube) -> u32 {
    crc32fast::hash(&payload_bytes(&cube.data))
}

pub fn save_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    cube.validate()?;
    let (json_path, raw_path) = cube_paths(path.as_ref());
    let bytes = payload_bytes(&cube.data);
    let (nx, ny, nw) = cube.dims();
    let sidecar = Sidecar {
        dims: [nx, ny, nw],
        axis_order: cube.axis_order,
        dtype: DTYPE.to_string(),
        wavenumbers: cube.wavenumbers.clone(),
        pixel_size_nm: cube.pixel_size,
        fast_axis: cube.fast_axis,
        checksum: crc32fast::hash(&bytes),
        seed: cube.seed,
    };
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&raw_path, &bytes).map_err(|e| Error::io(&raw_path, e))?;
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    let (json_path, raw_path) = cube_paths(path.as_ref());
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    if sidecar.dtype != DTYPE {
        return Err(Error::Header {
            path: json_path,
            reason: format!("unsupported dtype {:?}, expected {DTYPE:?}", sidecar.dtype),
        });
    }
    let [nx, ny, nw] = sidecar.dims;
    if nx == 0 || ny == 0 || nw == 0 {
        return Err(Error::Header {
            path: json_path,
            reason: format!("dimensions must be at least 1, got {nx}x{ny}x{nw}"),
        });
    }
    let expected = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nw))
        .ok_or_else(|| Error::Header {
            path: json_path.clone(),
            reason: "dimensions overflow".into(),
        })?;

    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::PayloadMismatch {
            expected,
            got: bytes.len() / 4,
        });
    }
    let got = crc32fast::hash(&bytes);
    if got != sidecar.checksum {
        return Err(Error::Checksum {
            expected: sidecar.checksum,
            got,
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let data = Array3::from_shape_vec((nx, ny, nw), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let cube = HyperCube {
        data,
        axis_order: sidecar.axis_order,
        wavenumbers: sidecar.wavenumbers,
        pixel_size: sidecar.pixel_size_nm,
        fast_axis: sidecar.fast_axis,
        seed: sidecar.seed,
    };
    cube.validate()?;
    Ok(cube)
}
