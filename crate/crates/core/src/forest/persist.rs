//! Single-file model artifact.
//!
//! Layout: one ASCII header line
//! `riskxai-model <version> <payload-bytes> <sha256-hex>` followed by the
//! JSON payload.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{scalar_name, Forest};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "riskxai-model";

pub fn to_bytes<T: Scalar>(model: &Forest<T>) -> Vec<u8> {
    let payload = serde_json::to_vec(model).expect("model serializes");
    let digest = hex::encode(Sha256::digest(&payload));
    let mut out = format!("{MAGIC} {FORMAT_VERSION} {} {digest}\n", payload.len()).into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Forest<T>> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or(Error::Checksum)?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Checksum)?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 4 || parts[0] != MAGIC {
        return Err(Error::Parse("not a model artifact".into()));
    }
    let version: u32 = parts[1].parse().map_err(|_| Error::Checksum)?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len: usize = parts[2].parse().map_err(|_| Error::Checksum)?;
    let payload = &bytes[nl + 1..];
    if payload.len() != len || hex::encode(Sha256::digest(payload)) != parts[3] {
        return Err(Error::Checksum);
    }
    let model: Forest<T> =
        serde_json::from_slice(payload).map_err(|e| Error::Parse(format!("model payload: {e}")))?;
    if model.metadata.scalar != scalar_name::<T>() {
        return Err(Error::Parse(format!(
            "model was trained with scalar `{}`, requested `{}`",
            model.metadata.scalar,
            scalar_name::<T>()
        )));
    }
    model.schema.validate()?;
    Ok(model)
}

pub fn save_model<T: Scalar>(model: &Forest<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Forest<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
