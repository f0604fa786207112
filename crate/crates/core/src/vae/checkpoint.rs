//! Binary checkpoint container.
//!
//! Layout: magic "VAEU", u32 LE version, u32 LE descriptor length, a JSON
//! descriptor, u64 LE parameter count, raw little-endian f64 parameters,
//! and a trailing CRC32 of everything before it. Serialization is
//! deterministic, so save -> load -> save reproduces identical bytes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diffcore::ParamVector;
use crate::error::{Error, Result};
use crate::vae::{ModelMeta, VaeArch, VaeModel};

pub const MAGIC: [u8; 4] = *b"VAEU";
pub const VERSION: u32 = 1;

pub fn checkpoint_bytes<D: Serialize>(desc: &D, params: &ParamVector) -> Result<Vec<u8>> {
    let desc_json = serde_json::to_vec(desc)?;
    let mut out = Vec::with_capacity(4 + 4 + 4 + desc_json.len() + 8 + params.len() * 8 + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(desc_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&desc_json);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn parse_checkpoint<D: DeserializeOwned>(bytes: &[u8]) -> Result<(D, ParamVector)> {
    let need = |n: usize, what: &'static str| -> Result<()> {
        if bytes.len() < n {
            Err(Error::CheckpointTruncated(what))
        } else {
            Ok(())
        }
    };

    need(4, "magic")?;
    if bytes[0..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    need(8, "version")?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    need(12, "descriptor length")?;
    let desc_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    need(12 + desc_len, "descriptor")?;
    let desc_bytes = &bytes[12..12 + desc_len];

    let mut cursor = 12 + desc_len;
    need(cursor + 8, "parameter count")?;
    let count = u64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap()) as usize;
    cursor += 8;
    need(cursor + count * 8 + 4, "parameters")?;

    let body_end = cursor + count * 8;
    let stored = u32::from_le_bytes(bytes[body_end..body_end + 4].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let desc: D =
        serde_json::from_slice(desc_bytes).map_err(|e| Error::Descriptor(e.to_string()))?;
    let mut params = Vec::with_capacity(count);
    for chunk in bytes[cursor..body_end].chunks_exact(8) {
        params.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((desc, ParamVector::from_vec(params)))
}

pub fn save_checkpoint<D: Serialize>(path: &Path, desc: &D, params: &ParamVector) -> Result<()> {
    fs::write(path, checkpoint_bytes(desc, params)?)?;
    Ok(())
}

pub fn load_checkpoint<D: DeserializeOwned>(path: &Path) -> Result<(D, ParamVector)> {
    parse_checkpoint(&fs::read(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeDescriptor {
    pub kind: String,
    pub arch: VaeArch,
    pub meta: ModelMeta,
    pub config_hash: Option<String>,
}

impl VaeModel {
    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        let desc = VaeDescriptor {
            kind: "vae".to_string(),
            arch: self.arch.clone(),
            meta: self.meta.clone(),
            config_hash: config_hash.map(str::to_string),
        };
        save_checkpoint(path, &desc, &self.params)
    }

    /// Load a model along with the config hash it was produced under.
    pub fn load(path: &Path) -> Result<(VaeModel, Option<String>)> {
        let (desc, params): (VaeDescriptor, ParamVector) = load_checkpoint(path)?;
        if desc.kind != "vae" {
            return Err(Error::Descriptor(format!(
                "expected a vae checkpoint, found kind {:?}",
                desc.kind
            )));
        }
        if params.len() != desc.arch.param_count() {
            return Err(Error::DimensionMismatch {
                what: "checkpoint parameters",
                expected: desc.arch.param_count(),
                actual: params.len(),
            });
        }
        Ok((
            VaeModel {
                arch: desc.arch,
                params,
                meta: desc.meta,
            },
            desc.config_hash,
        ))
    }
}
