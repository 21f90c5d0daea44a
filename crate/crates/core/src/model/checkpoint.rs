//! Checkpoint files.
//!
//! Layout: the 8-byte magic `GFTECKPT`, a little-endian `u64` manifest
//! length, the JSON manifest, then every tensor as little-endian `f32`
//! values at the offsets the manifest lists.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Direction, Model, ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::features::Vocabulary;
use crate::nn::{ParamSet, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GFTECKPT";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config_fingerprint: String,
    config: ModelConfig,
    vocab: Option<Vocabulary>,
    tensors: Vec<TensorEntry>,
    blob_bytes: usize,
    blob_sha256: String,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.params.iter() {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        config_fingerprint: model.config.fingerprint(),
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        tensors,
        blob_bytes: blob.len(),
        blob_sha256: Sha256::digest(&blob).iter().map(|b| format!("{b:02x}")).collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::parse("checkpoint manifest", e))?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let corrupt = |m: &str| Error::CheckpointCorrupt(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing checkpoint header"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|e| *e <= bytes.len())
        .ok_or_else(|| corrupt("manifest extends past the end of the file"))?;
    let json = &bytes[16..end];
    let blob = &bytes[end..];

    // Check the version before the full schema so old files get a clear error.
    let value: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| Error::CheckpointCorrupt(format!("manifest: {e}")))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("manifest has no format_version"))?;
    if found != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::CheckpointVersion {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: CHECKPOINT_VERSION,
        });
    }
    let m: Manifest =
        serde_json::from_value(value).map_err(|e| Error::CheckpointCorrupt(format!("manifest: {e}")))?;

    if blob.len() != m.blob_bytes {
        return Err(Error::CheckpointCorrupt(format!(
            "blob has {} bytes, manifest declares {}",
            blob.len(),
            m.blob_bytes
        )));
    }
    let digest: String = Sha256::digest(blob).iter().map(|b| format!("{b:02x}")).collect();
    if digest != m.blob_sha256 {
        return Err(corrupt("blob checksum mismatch"));
    }
    m.config
        .validate()
        .map_err(|e| Error::ConfigMismatch(format!("stored config is invalid: {e}")))?;
    if m.config.fingerprint() != m.config_fingerprint {
        return Err(corrupt("config fingerprint mismatch"));
    }
    if m.config.vocab_fingerprint != m.vocab.as_ref().map(Vocabulary::fingerprint) {
        return Err(Error::ConfigMismatch("stored vocabulary does not match the config".into()));
    }

    let arch = m.config.architecture();
    let mut params = ParamSet::new();
    for (name, expected) in &arch {
        let entry = m
            .tensors
            .iter()
            .find(|t| &t.name == name)
            .ok_or_else(|| Error::ConfigMismatch(format!("checkpoint lacks parameter {name}")))?;
        if &entry.shape != expected {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                stored: entry.shape.clone(),
                expected: expected.clone(),
            });
        }
        let n: usize = expected.iter().product();
        let bytes = entry
            .offset
            .checked_add(4 * n)
            .and_then(|e| blob.get(entry.offset..e))
            .ok_or_else(|| Error::CheckpointCorrupt(format!("tensor {name} lies outside the blob")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        params.insert(name.clone(), Tensor::new(expected.clone(), data)?)?;
    }
    if m.tensors.len() != arch.len() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint stores {} tensors, architecture has {}",
            m.tensors.len(),
            arch.len()
        )));
    }
    Ok(Model {
        config: m.config,
        params,
        vocab: m.vocab,
    })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads and insists on a variant and, optionally, a direction.
pub fn load_checkpoint_as(path: &Path, variant: Variant, direction: Option<Direction>) -> Result<Model> {
    let m = load_checkpoint(path)?;
    if m.config.variant != variant {
        return Err(Error::ConfigMismatch(format!(
            "{} holds a {} model, expected {}",
            path.display(),
            m.config.variant.label(),
            variant.label()
        )));
    }
    if let Some(d) = direction {
        if m.config.direction != d {
            return Err(Error::ConfigMismatch(format!(
                "{} holds a {:?} model, expected {d:?}",
                path.display(),
                m.config.direction
            )));
        }
    }
    Ok(m)
}
