//! Run manifests: written beside every primary output so the run can be
//! repeated exactly with `pet-turtle replay --manifest PATH`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::jobs::{sibling, write_json, Job, RunRecord, TrialTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    /// The resolved job with every default filled in; replay runs this.
    pub job: Job,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub trials: Vec<TrialTime>,
}

impl RunManifest {
    pub fn new(argv: Vec<String>, job: Job, record: RunRecord) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: job.name().into(),
            argv,
            job,
            inputs: record.inputs,
            outputs: record.outputs,
            seeds: record.seeds,
            trials: record.trials,
        }
    }

    pub fn path_for(job: &Job) -> PathBuf {
        sibling(job.primary_output(), "manifest.json")
    }

    pub fn write(&self) -> anyhow::Result<PathBuf> {
        let path = Self::path_for(&self.job);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{}: not a run manifest", path.display()))
    }
}
