//! Checkpoint format: `<stem>.json` manifest plus `<stem>.bin`, the
//! little-endian `f64` contents of every named array concatenated in
//! manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamWConfig;
use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::io::{f64s_to_le_bytes, le_bytes_to_f64s, manifest_and_blob, read_required, write_atomic};

pub const CHECKPOINT_FORMAT: &str = "gatesid-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub arrays: Vec<ArrayEntry>,
    pub optimizer: Option<AdamWConfig>,
    pub step: u64,
    /// Owner-specific settings (model variant, loss config, ...).
    pub metadata: serde_json::Value,
}

pub fn save_checkpoint(
    stem: &Path,
    store: &ParamStore,
    optimizer: Option<(&AdamWConfig, u64)>,
    metadata: serde_json::Value,
) -> Result<()> {
    let arrays = store
        .iter()
        .map(|(_, p)| ArrayEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
        })
        .collect();
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        arrays,
        optimizer: optimizer.map(|(c, _)| c.clone()),
        step: optimizer.map_or(0, |(_, s)| s),
        metadata,
    };
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    for (_, p) in store.iter() {
        f64s_to_le_bytes(p.value.data(), &mut blob);
    }
    let (json_path, bin_path) = manifest_and_blob(stem);
    write_atomic(&bin_path, &blob)?;
    write_atomic(&json_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

/// Reads a checkpoint into `(name, tensor)` pairs in manifest order.
pub fn read_checkpoint(stem: &Path) -> Result<(CheckpointManifest, Vec<(String, Tensor)>)> {
    let (json_path, bin_path) = manifest_and_blob(stem);
    let manifest: CheckpointManifest = serde_json::from_slice(&read_required(&json_path)?)?;
    let fmt_err = |reason: String| Error::Format {
        path: bin_path.clone(),
        reason,
    };
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(fmt_err(format!("unknown format `{}`", manifest.format)));
    }
    let values = le_bytes_to_f64s(&read_required(&bin_path)?)
        .ok_or_else(|| fmt_err("length not a multiple of 8".into()))?;
    let expected: usize = manifest
        .arrays
        .iter()
        .map(|a| a.shape.iter().product::<usize>())
        .sum();
    if expected != values.len() {
        return Err(fmt_err(format!(
            "manifest declares {expected} values, blob holds {}",
            values.len()
        )));
    }
    let mut off = 0;
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for entry in &manifest.arrays {
        let n: usize = entry.shape.iter().product();
        let t = Tensor::new(entry.shape.clone(), values[off..off + n].to_vec())?;
        arrays.push((entry.name.clone(), t));
        off += n;
    }
    Ok((manifest, arrays))
}

/// Overwrites the values of `store` with a checkpoint's arrays. Every store
/// parameter must be present with a matching shape.
pub fn load_into(stem: &Path, store: &mut ParamStore) -> Result<CheckpointManifest> {
    let (manifest, arrays) = read_checkpoint(stem)?;
    for (name, t) in arrays {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Invalid(format!("checkpoint array `{name}` not in model")))?;
        let p = store.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(Error::Shape {
                op: "load_checkpoint",
                detail: format!("`{name}`: {:?} vs {:?}", p.value.shape(), t.shape()),
            });
        }
        p.value = t;
    }
    if manifest.arrays.len() != store.len() {
        return Err(Error::Invalid(format!(
            "checkpoint has {} arrays, model has {}",
            manifest.arrays.len(),
            store.len()
        )));
    }
    Ok(manifest)
}
