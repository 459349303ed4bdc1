//! Checkpoint files.
//!
//! Layout: the 8-byte magic `SPENDNN\0`, a little-endian `u32` header
//! length, a JSON header, then every layer's weights (row-major) followed by
//! its biases as little-endian `f32`, in layer order. The header carries the
//! config, normalization, training history, layer shapes and a CRC32 of the
//! payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spend_core::{Axis, Error, Result};

use crate::layers::Conv;
use crate::model::{DenoiserModel, EpochRecord, Normalization};
use crate::net::{ModelConfig, Net};

pub const MAGIC: &[u8; 8] = b"SPENDNN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
    pub normalization: Normalization,
    pub axis: Option<Axis>,
    pub history: Vec<EpochRecord>,
    /// `(c_out, c_in, kernel)` per layer.
    pub layers: Vec<(usize, usize, usize)>,
    pub param_count: usize,
    pub checksum: u32,
}

fn payload(net: &Net<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * net.param_count());
    for l in &net.layers {
        for v in l.w.iter().chain(l.b.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn to_bytes(model: &DenoiserModel) -> Result<Vec<u8>> {
    let body = payload(&model.net);
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        config: model.config().clone(),
        normalization: model.normalization,
        axis: model.axis,
        history: model.history.clone(),
        layers: model.config().layer_shapes(),
        param_count: model.param_count(),
        checksum: crc32fast::hash(&body),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<DenoiserModel> {
    let header_err = |reason: String| Error::Header {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(header_err("not a checkpoint (bad magic)".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| header_err("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| header_err(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(header_err(format!(
            "unsupported version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    header.config.validate()?;
    let shapes = header.config.layer_shapes();
    if shapes != header.layers || header.config.param_count() != header.param_count {
        return Err(header_err("layer table does not match the config".into()));
    }
    let body = &bytes[12 + len..];
    if body.len() != 4 * header.param_count {
        return Err(Error::PayloadMismatch {
            expected: header.param_count,
            got: body.len() / 4,
        });
    }
    let got = crc32fast::hash(body);
    if got != header.checksum {
        return Err(Error::Checksum {
            expected: header.checksum,
            got,
        });
    }
    let mut values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut layers = Vec::with_capacity(shapes.len());
    for (i, &(o, c, k)) in shapes.iter().enumerate() {
        let mut conv = Conv::<f32>::zeros(o, c, k);
        for v in conv.w.iter_mut().chain(conv.b.iter_mut()) {
            *v = values.next().expect("length checked");
        }
        if !conv.is_finite() {
            return Err(Error::NonFinite(format!("weights of layer {i}")));
        }
        layers.push(conv);
    }
    Ok(DenoiserModel {
        net: Net {
            config: header.config,
            layers,
        },
        normalization: header.normalization,
        axis: header.axis,
        history: header.history,
    })
}

pub fn save_model(model: &DenoiserModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)?).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DenoiserModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes, path)
}
