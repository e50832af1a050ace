//! Saving and restoring sessions under a data directory.
//!
//! ```text
//! <data>/checkpoints/<sha256>.ckpt        extractor checkpoints by content hash
//! <data>/sessions/<id>/session.json       strokes, head, config, history
//! <data>/sessions/<id>/frame-<i>.image    uploaded image bytes, verbatim
//! <data>/sessions/<id>/frame-<i>.cloud    uploaded point cloud text, verbatim
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use terrainnav::featnet::{decode_checkpoint, encode_checkpoint, Network};
use terrainnav::ground::CloudFormat;
use terrainnav::patch::HeadModel;

use crate::session::{Frame, SessionConfig, SessionState, StoredStroke, TrainingEvent};

pub const SESSION_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("integrity check failed for {hash}: {reason}")]
    Integrity { hash: String, reason: String },
    #[error("no saved session at {0}")]
    Missing(PathBuf),
    #[error("saved session is malformed: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn cloud_format_name(f: CloudFormat) -> &'static str {
    match f {
        CloudFormat::Csv => "csv",
        CloudFormat::Ply => "ply",
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SavedCloud {
    file: String,
    format: String,
    sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SavedFrame {
    image: String,
    image_sha256: String,
    cloud: Option<SavedCloud>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SavedSession {
    format: u32,
    id: String,
    checkpoint: String,
    config: SessionConfig,
    frames: Vec<SavedFrame>,
    strokes: Vec<StoredStroke>,
    model_version: u64,
    head: Option<HeadModel>,
    history: Vec<TrainingEvent>,
}

pub fn checkpoint_path(data_dir: &Path, hash: &str) -> PathBuf {
    data_dir.join("checkpoints").join(format!("{hash}.ckpt"))
}

pub fn session_dir(data_dir: &Path, id: &str) -> PathBuf {
    data_dir.join("sessions").join(id)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Stores checkpoint bytes under their hash and returns the hash.
pub fn store_checkpoint(data_dir: &Path, bytes: &[u8]) -> Result<String, PersistError> {
    let hash = sha256_hex(bytes);
    let path = checkpoint_path(data_dir, &hash);
    if !path.exists() {
        fs::create_dir_all(path.parent().expect("checkpoint path has a parent"))?;
        fs::write(&path, bytes)?;
    }
    Ok(hash)
}

/// Loads the checkpoint with content hash `hash`, verifying the bytes.
pub fn load_checkpoint_by_hash(data_dir: &Path, hash: &str) -> Result<Network, PersistError> {
    let path = checkpoint_path(data_dir, hash);
    let bytes = fs::read(&path).map_err(|e| PersistError::Integrity {
        hash: hash.to_string(),
        reason: format!("checkpoint {}: {e}", path.display()),
    })?;
    let actual = sha256_hex(&bytes);
    if actual != hash {
        return Err(PersistError::Integrity {
            hash: hash.to_string(),
            reason: format!("checkpoint content hashes to {actual}"),
        });
    }
    decode_checkpoint(&bytes).map_err(|e| PersistError::Integrity {
        hash: hash.to_string(),
        reason: e.to_string(),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `state` under `data_dir` and returns the session directory.
pub fn persist_session(state: &SessionState, data_dir: &Path) -> Result<PathBuf, PersistError> {
    if !valid_id(&state.id) {
        return Err(PersistError::Format(format!("session id {:?} is not a safe file name", state.id)));
    }
    if !checkpoint_path(data_dir, &state.checkpoint).exists() {
        let hash = store_checkpoint(data_dir, &encode_checkpoint(&state.network))?;
        if hash != state.checkpoint {
            return Err(PersistError::Integrity {
                hash: state.checkpoint.clone(),
                reason: format!("re-encoded checkpoint hashes to {hash}"),
            });
        }
    }
    let dir = session_dir(data_dir, &state.id);
    fs::create_dir_all(&dir)?;
    let mut frames = Vec::with_capacity(state.frames.len());
    for (i, frame) in state.frames.iter().enumerate() {
        let image = format!("frame-{i}.image");
        write_atomic(&dir.join(&image), &frame.image_bytes)?;
        let cloud = match &frame.cloud_payload {
            Some((format, text)) => {
                let file = format!("frame-{i}.cloud");
                write_atomic(&dir.join(&file), text.as_bytes())?;
                Some(SavedCloud {
                    file,
                    format: cloud_format_name(*format).to_string(),
                    sha256: sha256_hex(text.as_bytes()),
                })
            }
            None => None,
        };
        frames.push(SavedFrame {
            image,
            image_sha256: sha256_hex(&frame.image_bytes),
            cloud,
        });
    }
    let saved = SavedSession {
        format: SESSION_FORMAT,
        id: state.id.clone(),
        checkpoint: state.checkpoint.clone(),
        config: state.config.clone(),
        frames,
        strokes: state.strokes.clone(),
        model_version: state.model_version,
        head: state.head.as_deref().cloned(),
        history: state.history.clone(),
    };
    let json = serde_json::to_vec_pretty(&saved).map_err(|e| PersistError::Format(e.to_string()))?;
    write_atomic(&dir.join("session.json"), &json)?;
    Ok(dir)
}

fn read_verified(path: &Path, hash: &str) -> Result<Vec<u8>, PersistError> {
    let bytes = fs::read(path).map_err(|e| PersistError::Integrity {
        hash: hash.to_string(),
        reason: format!("{}: {e}", path.display()),
    })?;
    let actual = sha256_hex(&bytes);
    if actual != hash {
        return Err(PersistError::Integrity {
            hash: hash.to_string(),
            reason: format!("{} hashes to {actual}", path.display()),
        });
    }
    Ok(bytes)
}

/// Restores session `id`. `known` short-circuits loading a checkpoint that
/// is already in memory under the same hash.
pub fn restore_session(
    data_dir: &Path,
    id: &str,
    known: Option<(&str, Arc<Network>)>,
) -> Result<SessionState, PersistError> {
    if !valid_id(id) {
        return Err(PersistError::Format(format!("session id {id:?} is not a safe file name")));
    }
    let dir = session_dir(data_dir, id);
    let json_path = dir.join("session.json");
    if !json_path.exists() {
        return Err(PersistError::Missing(json_path));
    }
    let saved: SavedSession =
        serde_json::from_slice(&fs::read(&json_path)?).map_err(|e| PersistError::Format(e.to_string()))?;
    if saved.format != SESSION_FORMAT {
        return Err(PersistError::Format(format!("unsupported session format {}", saved.format)));
    }
    if saved.id != id {
        return Err(PersistError::Format(format!("session.json belongs to {:?}", saved.id)));
    }
    let network = match known {
        Some((hash, net)) if hash == saved.checkpoint && checkpoint_path(data_dir, hash).exists() => {
            // Still verify the stored file so a corrupted directory is caught.
            read_verified(&checkpoint_path(data_dir, hash), hash)?;
            net
        }
        _ => Arc::new(load_checkpoint_by_hash(data_dir, &saved.checkpoint)?),
    };
    let mut frames = Vec::with_capacity(saved.frames.len());
    for f in &saved.frames {
        let image = read_verified(&dir.join(&f.image), &f.image_sha256)?;
        let cloud = match &f.cloud {
            Some(c) => {
                let bytes = read_verified(&dir.join(&c.file), &c.sha256)?;
                let format: CloudFormat = c.format.parse().map_err(|e| PersistError::Format(format!("{e}")))?;
                let text = String::from_utf8(bytes).map_err(|e| PersistError::Format(e.to_string()))?;
                Some((format, text))
            }
            None => None,
        };
        let frame = Frame::decode(image, cloud).map_err(|e| PersistError::Format(e.to_string()))?;
        frames.push(Arc::new(frame));
    }
    if saved.strokes.iter().any(|s| s.frame >= frames.len()) {
        return Err(PersistError::Format("stroke refers to a missing frame".into()));
    }
    Ok(SessionState {
        id: saved.id,
        network,
        checkpoint: saved.checkpoint,
        config: saved.config,
        frames,
        strokes: saved.strokes,
        model_version: saved.model_version,
        head: saved.head.map(Arc::new),
        history: saved.history,
    })
}
