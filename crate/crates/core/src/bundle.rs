//! Model bundles: a versioned, checksummed binary container.
//!
//! Layout (little-endian):
//!
//! | bytes   | content                               |
//! |---------|---------------------------------------|
//! | 8       | magic `BIORECMB`                      |
//! | 4       | format version (u32)                  |
//! | 8       | payload length (u64)                  |
//! | n       | bincode payload                       |
//! | 32      | SHA-256 over everything above         |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::pipeline::TrainedPipeline;

pub const MAGIC: &[u8; 8] = b"BIORECMB";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ExperimentConfig,
    pub pipeline: TrainedPipeline,
}

// the config goes in as TOML text: bincode cannot carry its tagged enums
#[derive(Serialize, Deserialize)]
struct Payload {
    config_toml: String,
    pipeline: TrainedPipeline,
}

pub fn encode_bundle(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let payload = Payload {
        config_toml: bundle.config.to_toml(),
        pipeline: bundle.pipeline.clone(),
    };
    let body =
        bincode::serialize(&payload).map_err(|e| Error::InvalidArgument(format!("cannot serialize bundle: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(Error::CorruptBundle(format!(
            "file is {} bytes, shorter than the fixed header and checksum",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::CorruptBundle("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::BundleVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let end = (HEADER_LEN as u64)
        .checked_add(len)
        .filter(|&e| e.checked_add(DIGEST_LEN as u64) == Some(bytes.len() as u64))
        .ok_or_else(|| {
            Error::CorruptBundle(format!(
                "declared payload of {len} bytes does not match file size {}",
                bytes.len()
            ))
        })? as usize;
    let digest = Sha256::digest(&bytes[..end]);
    if digest.as_slice() != &bytes[end..] {
        return Err(Error::CorruptBundle("checksum mismatch".into()));
    }
    let payload: Payload = bincode::deserialize(&bytes[HEADER_LEN..end])
        .map_err(|e| Error::CorruptBundle(format!("undecodable payload: {e}")))?;
    let config = ExperimentConfig::from_toml(&payload.config_toml)
        .map_err(|e| Error::CorruptBundle(format!("embedded config: {e}")))?;
    Ok(ModelBundle {
        config,
        pipeline: payload.pipeline,
    })
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    fs::write(path, encode_bundle(bundle)?)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    decode_bundle(&fs::read(path)?)
}
