//! The run manifest: resolved config, artifacts with checksums, per-seed
//! metrics, medians, checks and timings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use elevator_core::metrics::MetricReport;
use elevator_core::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Mode, RunConfig};
use crate::error::{CliError, Result};
use crate::render::Normalization;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub arm: String,
    pub seed: u64,
    pub latent: String,
    pub sha256: String,
    pub metrics: MetricReport,
    pub ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<Normalization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roundtrip_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub t2v: NoiseSchedule,
    pub t2i: NoiseSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub steps: Vec<usize>,
    pub refine: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    /// Sum of per-seed wall-clock times.
    pub seeds_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub mode: Mode,
    pub config: RunConfig,
    pub schedules: Schedules,
    pub grid: GridRecord,
    pub jobs: usize,
    pub files: Vec<FileRecord>,
    pub runs: Vec<SeedRecord>,
    pub medians: BTreeMap<String, MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roundtrip_max_error: Option<f64>,
    pub checks: Vec<CheckRecord>,
    pub timings: Timings,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.into(),
            source,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| CliError::Json {
            path: path.into(),
            source,
        })?;
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn failed_checks(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }

    pub fn run(&self, arm: &str, seed: u64) -> Option<&SeedRecord> {
        self.runs.iter().find(|r| r.arm == arm && r.seed == seed)
    }

    pub fn median(&self, arm: &str) -> Option<&MetricReport> {
        self.medians.get(arm)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_record(dir: &Path, rel: &str) -> Result<FileRecord> {
    let path = dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(FileRecord {
        path: rel.to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}
