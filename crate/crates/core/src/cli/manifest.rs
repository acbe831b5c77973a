//! Run manifests and the result documents the `report` command re-renders.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::{LoadStats, SplitData};
use crate::error::{Error, Result};
use crate::lipschitz::LipReport;
use crate::model::NetworkSpec;
use crate::trainer::{Mode, RunSummary, SeedRun, SweepResult};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataStats {
    pub train_rows: usize,
    pub test_rows: usize,
    pub features: usize,
    /// Group id `i` is `groups[i]`.
    pub groups: Vec<String>,
    pub train_stats: LoadStats,
    pub test_stats: LoadStats,
}

impl DataStats {
    pub fn of(data: &SplitData) -> Self {
        Self {
            train_rows: data.train.len(),
            test_rows: data.test.len(),
            features: data.train.width(),
            groups: data.manifest.sensitive_groups.clone(),
            train_stats: data.train_stats.clone(),
            test_stats: data.test_stats.clone(),
        }
    }
}

/// Everything needed to re-run a command: pass the manifest itself as
/// `--config` to the same subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub spec: Option<NetworkSpec>,
    pub seeds: Vec<u64>,
    /// File holding the fitted encoding, relative to the manifest.
    pub encoding: Option<String>,
    pub data: Option<DataStats>,
    /// Result document the CSV/SVG outputs are rendered from.
    pub result: String,
    /// Artifact name to file name.
    pub outputs: BTreeMap<String, String>,
    /// How per-seed numbers are combined in the aggregated outputs.
    pub aggregation: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, result: &str) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config: config.clone(),
            spec: None,
            seeds: vec![],
            encoding: None,
            data: None,
            result: result.into(),
            outputs: BTreeMap::new(),
            aggregation: vec![],
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST_FILE))
    }
}

/// `train` result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub seed: u64,
    pub summary: RunSummary,
}

/// `sweep` result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepDoc {
    pub etas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub sweep: SweepResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRuns {
    pub mode: Mode,
    pub lambda: f64,
    pub runs: Vec<SeedRun>,
}

/// `compare` result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareDoc {
    pub seeds: Vec<u64>,
    /// Epochs at or below this are excluded from timing means.
    pub warmup: usize,
    pub modes: Vec<ModeRuns>,
}

/// `lipaudit` result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipDoc {
    pub params_source: String,
    pub report: LipReport,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
