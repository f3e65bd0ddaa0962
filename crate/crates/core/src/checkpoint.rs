//! Round-granular checkpoints shared by every rollout runner.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const FILE: &str = "checkpoint.json";

/// Where and whether to checkpoint a run.
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from the checkpoint in `checkpoint_dir`.
    pub resume: bool,
    /// Hash of the run configuration; a checkpoint written under a different
    /// hash is refused.
    pub config_hash: String,
    /// Stop after this round (the checkpoint stays resumable).
    pub stop_after: Option<usize>,
}

impl RunControl {
    pub fn in_dir(dir: impl Into<PathBuf>, config_hash: impl Into<String>) -> Self {
        Self {
            checkpoint_dir: Some(dir.into()),
            config_hash: config_hash.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<S> {
    pub config_hash: String,
    pub completed_rounds: usize,
    pub state: S,
}

pub fn save<S: Serialize>(dir: &Path, config_hash: &str, completed_rounds: usize, state: &S) -> Result<()> {
    #[derive(Serialize)]
    struct Borrowed<'a, S> {
        config_hash: &'a str,
        completed_rounds: usize,
        state: &'a S,
    }
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!("{FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec(&Borrowed { config_hash, completed_rounds, state })?)?;
    fs::rename(tmp, dir.join(FILE))?;
    Ok(())
}

pub fn load<S: DeserializeOwned>(dir: &Path, expected_hash: &str) -> Result<Checkpoint<S>> {
    let path = dir.join(FILE);
    if !path.exists() {
        return Err(Error::Checkpoint(format!("no checkpoint in {}", dir.display())));
    }
    let cp: Checkpoint<S> = serde_json::from_slice(&fs::read(path)?)?;
    if cp.config_hash != expected_hash {
        return Err(Error::Checkpoint(format!(
            "checkpoint was written under config hash {} but the current config hashes to {expected_hash}",
            cp.config_hash
        )));
    }
    Ok(cp)
}

/// Loads the checkpoint when resuming, otherwise `None`.
pub(crate) fn start<S: DeserializeOwned>(control: &RunControl) -> Result<Option<Checkpoint<S>>> {
    if !control.resume {
        return Ok(None);
    }
    let dir = control
        .checkpoint_dir
        .as_deref()
        .ok_or_else(|| Error::Checkpoint("resume requested without a checkpoint directory".into()))?;
    load(dir, &control.config_hash).map(Some)
}

/// Saves after a completed round when a directory is configured.
pub(crate) fn commit<S: Serialize>(control: &RunControl, completed_rounds: usize, state: &S) -> Result<()> {
    match &control.checkpoint_dir {
        Some(dir) => save(dir, &control.config_hash, completed_rounds, state),
        None => Ok(()),
    }
}
