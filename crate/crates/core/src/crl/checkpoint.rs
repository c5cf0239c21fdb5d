//! Versioned JSON checkpoints. `f64` values round-trip bit-exactly.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::CrlError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    version: u32,
    kind: String,
    state: T,
}

pub fn to_json<T: Serialize>(kind: &str, state: &T) -> Result<String, CrlError> {
    serde_json::to_string(&Envelope {
        version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        state,
    })
    .map_err(|e| CrlError::Checkpoint(e.to_string()))
}

pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T, CrlError> {
    let env: Envelope<T> =
        serde_json::from_str(text).map_err(|e| CrlError::Checkpoint(e.to_string()))?;
    if env.version != CHECKPOINT_VERSION {
        return Err(CrlError::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            env.version
        )));
    }
    if env.kind != kind {
        return Err(CrlError::Checkpoint(format!(
            "checkpoint holds `{}`, expected `{kind}`",
            env.kind
        )));
    }
    Ok(env.state)
}

/// Writes through a temporary file so a crash never leaves half a checkpoint.
pub fn save<T: Serialize>(path: impl AsRef<Path>, kind: &str, state: &T) -> Result<(), CrlError> {
    let path = path.as_ref();
    let text = to_json(kind, state)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| CrlError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load<T: DeserializeOwned>(path: impl AsRef<Path>, kind: &str) -> Result<T, CrlError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| CrlError::Checkpoint(format!("{}: {e}", path.display())))?;
    from_json(kind, &text)
}

/// Reads only the `kind` tag of a checkpoint file.
pub fn peek_kind(path: impl AsRef<Path>) -> Result<String, CrlError> {
    #[derive(Deserialize)]
    struct Head {
        kind: String,
    }
    let text =
        std::fs::read_to_string(path.as_ref()).map_err(|e| CrlError::Checkpoint(e.to_string()))?;
    let head: Head =
        serde_json::from_str(&text).map_err(|e| CrlError::Checkpoint(e.to_string()))?;
    Ok(head.kind)
}
