//! Model file format: one JSON header line, then the JSON payload.
//!
//! The header carries the format name, version, payload length, and a SHA-256
//! of the payload. Versions are checked before anything else.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::GeoModel;

pub const MODEL_FORMAT: &str = "geoloc-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    length: usize,
    sha256: String,
}

pub fn model_to_bytes(model: &GeoModel) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(model)?;
    let header = Header {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        length: payload.len(),
        sha256: hex::encode(Sha256::digest(&payload)),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend(payload);
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<GeoModel> {
    let split = bytes.iter().position(|&b| b == b'\n').ok_or(Error::Checksum)?;
    let header: Header = serde_json::from_slice(&bytes[..split]).map_err(|_| Error::Checksum)?;
    if header.format != MODEL_FORMAT {
        return Err(Error::InvalidArgument(format!("not a model file (format {:?})", header.format)));
    }
    if header.version != MODEL_VERSION {
        return Err(Error::UnsupportedModelVersion {
            found: header.version,
            expected: MODEL_VERSION,
        });
    }
    let payload = &bytes[split + 1..];
    if payload.len() != header.length || hex::encode(Sha256::digest(payload)) != header.sha256 {
        return Err(Error::Checksum);
    }
    Ok(serde_json::from_slice(payload)?)
}

pub fn save_model(model: &GeoModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GeoModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
