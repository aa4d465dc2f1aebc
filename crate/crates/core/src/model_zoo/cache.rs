//! On-disk backbone weight cache: `<cache>/<backbone>/weights.safetensors`
//! plus `source.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ZooError;
use crate::backbones::{build_backbone, BackboneName};
use crate::nn::{sha256_hex, SurrogateSource, WeightStore};

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const SOURCE_FILE: &str = "source.json";
pub const CACHE_ENV: &str = "PADDYDOC_WEIGHTS_CACHE";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub backbone: String,
    /// Where the checkpoint came from, e.g. the Keras constructor call.
    pub origin: String,
    pub content_hash: String,
    /// True when the tensors are seeded stand-ins rather than ImageNet weights.
    #[serde(default)]
    pub surrogate: bool,
}

/// `$PADDYDOC_WEIGHTS_CACHE`, else `$HOME/.cache/paddydoc/weights`, else
/// `./weights`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    match std::env::var_os("HOME") {
        Some(home) => Path::new(&home).join(".cache/paddydoc/weights"),
        None => PathBuf::from("weights"),
    }
}

pub fn entry_dir(cache: &Path, name: BackboneName) -> PathBuf {
    cache.join(name.as_str())
}

/// Loads and hash-verifies a cached checkpoint.
pub fn load_cached(cache: &Path, name: BackboneName) -> Result<(WeightStore, SourceRecord), ZooError> {
    let dir = entry_dir(cache, name);
    let unavailable = |reason: String| ZooError::WeightsUnavailable { backbone: name, reason };
    let source_text = std::fs::read_to_string(dir.join(SOURCE_FILE))
        .map_err(|e| unavailable(format!("{}: {e}", dir.join(SOURCE_FILE).display())))?;
    let source: SourceRecord =
        serde_json::from_str(&source_text).map_err(|e| unavailable(format!("bad {SOURCE_FILE}: {e}")))?;
    let bytes = std::fs::read(dir.join(WEIGHTS_FILE))
        .map_err(|e| unavailable(format!("{}: {e}", dir.join(WEIGHTS_FILE).display())))?;
    let digest = sha256_hex(&bytes);
    if digest != source.content_hash {
        return Err(unavailable(format!(
            "content hash mismatch: {SOURCE_FILE} says {}, file is {digest}",
            source.content_hash
        )));
    }
    let store = WeightStore::from_bytes(&bytes).map_err(|e| unavailable(e.to_string()))?;
    Ok((store, source))
}

/// Writes `store` as the cache entry for `name`.
pub fn write_entry(
    cache: &Path,
    name: BackboneName,
    store: &WeightStore,
    origin: &str,
    surrogate: bool,
) -> Result<SourceRecord, ZooError> {
    let dir = entry_dir(cache, name);
    std::fs::create_dir_all(&dir)?;
    let bytes = store.to_bytes()?;
    std::fs::write(dir.join(WEIGHTS_FILE), &bytes)?;
    let record = SourceRecord {
        backbone: name.as_str().to_string(),
        origin: origin.to_string(),
        content_hash: sha256_hex(&bytes),
        surrogate,
    };
    std::fs::write(
        dir.join(SOURCE_FILE),
        serde_json::to_string_pretty(&record).expect("source record serializes"),
    )?;
    Ok(record)
}

/// Generates the seeded stand-in parameters for `name` and caches them.
pub fn write_surrogate_entry(cache: &Path, name: BackboneName, seed: u64) -> Result<SourceRecord, ZooError> {
    let mut src = SurrogateSource::new(seed);
    build_backbone(name, &mut src)?;
    write_entry(cache, name, &src.into_store(), &format!("surrogate(seed={seed})"), true)
}
