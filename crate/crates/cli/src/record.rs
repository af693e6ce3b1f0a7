//! Per-run report files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mtdc_opf::strategy::{StrategyMode, StrategyOptions, StrategyReport};

/// Bumped whenever a field of [`RunRecord`] changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const REPORT_DIR: &str = "reports";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Converged,
    /// Converged after the droop gains were recomputed.
    Fallback,
    Failed,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::Fallback => "fallback",
            Outcome::Failed => "failed",
        }
    }
}

/// Everything needed to re-check one (scenario, mode) run without the
/// original input files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub case_file: String,
    pub case_text: String,
    /// `None` for the implicit no-outage scenario.
    pub scenario_file: Option<String>,
    pub scenario_text: String,
    pub scenario_name: String,
    pub mode: StrategyMode,
    pub options: StrategyOptions,
    pub outcome: Outcome,
    pub error: Option<String>,
    pub report: Option<StrategyReport>,
}

/// File name of a run inside the report directory. The scenario position keeps
/// names unique when two scenario files share a stem.
pub fn report_file_name(scenario_index: usize, scenario_stem: &str, mode: StrategyMode) -> String {
    format!(
        "{:02}-{}__{}.json",
        scenario_index + 1,
        scenario_stem,
        mode.label()
    )
}

pub fn write_record(out: &Path, name: &str, record: &RunRecord) -> Result<PathBuf> {
    let dir = out.join(REPORT_DIR);
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(record)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

/// Reads every report under `out`, sorted by file name.
pub fn load_records(out: &Path) -> Result<Vec<(PathBuf, RunRecord)>> {
    let dir = out.join(REPORT_DIR);
    let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect(),
        Err(_) => Vec::new(),
    };
    if paths.is_empty() {
        bail!("no reports found in {}", dir.display());
    }
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let record: RunRecord = serde_json::from_str(&text)
                .with_context(|| format!("{} is not a run report", path.display()))?;
            if record.schema_version != SCHEMA_VERSION {
                bail!(
                    "{}: schema version {} (expected {SCHEMA_VERSION})",
                    path.display(),
                    record.schema_version
                );
            }
            Ok((path, record))
        })
        .collect()
}
