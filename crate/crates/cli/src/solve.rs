use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use rayon::prelude::*;

use mtdc_opf::case::{
    apply_scenario, parse_case_str, parse_scenario_str, serialize_scenario, NetworkCase, Scenario,
};
use mtdc_opf::strategy::{run_strategy, StrategyMode, StrategyOptions};

use crate::record::{report_file_name, write_record, Outcome, RunRecord, SCHEMA_VERSION};
use crate::tables;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "table" => Format::Table,
            "csv" => Format::Csv,
            "json" => Format::Json,
            other => bail!("unknown format {other:?} (expected table, csv or json)"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case: PathBuf,
    /// Empty means a single no-outage scenario.
    pub scenarios: Vec<PathBuf>,
    pub modes: Vec<StrategyMode>,
    pub options: StrategyOptions,
    pub out: PathBuf,
    pub formats: Vec<Format>,
    /// Recorded in every report. The solver itself draws no random numbers.
    pub seed: u64,
    pub workers: usize,
}

struct ScenarioInput {
    file: Option<String>,
    stem: String,
    text: String,
    scenario: Scenario,
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn load_scenarios(case: &NetworkCase, paths: &[PathBuf]) -> Result<Vec<ScenarioInput>> {
    if paths.is_empty() {
        let scenario = Scenario::normal("normal");
        return Ok(vec![ScenarioInput {
            file: None,
            stem: "normal".into(),
            text: serialize_scenario(&scenario),
            scenario,
        }]);
    }
    paths
        .iter()
        .map(|path| {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read scenario {}", path.display()))?;
            let scenario = parse_scenario_str(&text)
                .with_context(|| format!("scenario {}", path.display()))?;
            // surface unknown ids before any solve starts
            apply_scenario(case, &scenario)
                .with_context(|| format!("scenario {}", path.display()))?;
            let stem = path
                .file_stem()
                .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
            Ok(ScenarioInput {
                file: Some(file_name(path)),
                stem,
                text,
                scenario,
            })
        })
        .collect()
}

/// Runs every (scenario, mode) pair and writes the outputs. Returns the
/// process exit code.
pub fn cmd_solve(config: &RunConfig) -> Result<i32> {
    if config.modes.is_empty() {
        bail!("at least one mode is required");
    }
    let case_text = fs::read_to_string(&config.case)
        .with_context(|| format!("cannot read case {}", config.case.display()))?;
    let case =
        parse_case_str(&case_text).with_context(|| format!("case {}", config.case.display()))?;
    let scenarios = load_scenarios(&case, &config.scenarios)?;
    fs::create_dir_all(&config.out)
        .with_context(|| format!("cannot create output directory {}", config.out.display()))?;

    let started = Instant::now();
    let jobs: Vec<(usize, StrategyMode)> = (0..scenarios.len())
        .flat_map(|s| config.modes.iter().map(move |&m| (s, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()?;
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, mode)| {
                let t = Instant::now();
                let result = run_strategy(&case, &scenarios[s].scenario, mode, &config.options);
                info!(
                    "{} / {}: done in {:?}",
                    scenarios[s].scenario.name,
                    mode.label(),
                    t.elapsed()
                );
                (s, mode, result, t.elapsed())
            })
            .collect()
    });

    let case_file = file_name(&config.case);
    let mut records = Vec::with_capacity(results.len());
    for (s, mode, result, elapsed) in results {
        let input = &scenarios[s];
        let (outcome, error, report) = match result {
            Ok(r) if r.fallback_triggered => (Outcome::Fallback, None, Some(r)),
            Ok(r) => (Outcome::Converged, None, Some(r)),
            Err(e) => (Outcome::Failed, Some(e.to_string()), None),
        };
        let record = RunRecord {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            case_file: case_file.clone(),
            case_text: case_text.clone(),
            scenario_file: input.file.clone(),
            scenario_text: input.text.clone(),
            scenario_name: input.scenario.name.clone(),
            mode,
            options: config.options.clone(),
            outcome,
            error,
            report,
        };
        let name = report_file_name(s, &input.stem, mode);
        if config.formats.contains(&Format::Json) {
            write_record(&config.out, &name, &record)?;
        }
        info!("{name}: {} ms", elapsed.as_millis());
        records.push(record);
    }

    if config.formats.contains(&Format::Csv) {
        tables::write_aggregates(&config.out, &case, &records)?;
    }
    if config.formats.contains(&Format::Table) {
        print!("{}", tables::summary(&records));
    }
    // timings stay out of the output directory so reruns are byte-identical
    info!(
        "{} runs in {:?} on {} workers",
        records.len(),
        started.elapsed(),
        config.workers.max(1)
    );

    for r in records.iter().filter(|r| r.outcome == Outcome::Failed) {
        eprintln!(
            "error: {} / {}: {}",
            r.scenario_name,
            r.mode.label(),
            r.error.as_deref().unwrap_or("failed")
        );
    }
    Ok(exit_code(&records))
}

/// 1 if any run failed, else 2 if any run needed the fallback, else 0.
pub fn exit_code(records: &[RunRecord]) -> i32 {
    if records.iter().any(|r| r.outcome == Outcome::Failed) {
        1
    } else if records.iter().any(|r| r.outcome == Outcome::Fallback) {
        2
    } else {
        0
    }
}
