use std::path::Path;

use anyhow::{Context, Result};

use mtdc_opf::case::{apply_scenario, parse_case_str, parse_scenario_str};
use mtdc_opf::strategy::StageNetwork;
use mtdc_opf::validation::verify_solution;

use crate::record::load_records;

/// One verified stage.
#[derive(Debug, Clone)]
pub struct StageCheck {
    pub report: String,
    pub stage: u8,
    /// `None` when the stage did not converge and was not checked.
    pub passed: Option<bool>,
    pub equation_residual: Option<f64>,
    pub max_discrepancy: Option<f64>,
    pub note: String,
}

/// Re-checks every converged stage of every stored report.
pub fn check_reports(out: &Path) -> Result<Vec<StageCheck>> {
    let mut checks = Vec::new();
    for (path, record) in load_records(out)? {
        let name = path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let base =
            parse_case_str(&record.case_text).with_context(|| format!("{name}: embedded case"))?;
        let scenario = parse_scenario_str(&record.scenario_text)
            .with_context(|| format!("{name}: embedded scenario"))?;
        let post = apply_scenario(&base, &scenario).with_context(|| format!("{name}: scenario"))?;
        let Some(report) = &record.report else {
            checks.push(StageCheck {
                report: name,
                stage: 0,
                passed: None,
                equation_residual: None,
                max_discrepancy: None,
                note: format!("no solution stored ({})", record.outcome.label()),
            });
            continue;
        };
        for stage in &report.stages {
            let mut check = StageCheck {
                report: name.clone(),
                stage: stage.stage,
                passed: None,
                equation_residual: None,
                max_discrepancy: None,
                note: String::new(),
            };
            if !stage.converged() {
                check.note = format!("not converged ({:?}), skipped", stage.solution.status);
                checks.push(check);
                continue;
            }
            let case = match stage.network {
                StageNetwork::Base => &base,
                StageNetwork::PostScenario => &post,
            };
            let verdict = verify_solution(case, &stage.point, &stage.control_snapshot);
            check.passed = Some(verdict.passed);
            check.equation_residual = Some(verdict.equation_residual);
            check.max_discrepancy = verdict.max_discrepancy;
            check.note = verdict
                .error
                .or(verdict.worst_variable.map(|v| format!("worst: {v}")))
                .unwrap_or_default();
            checks.push(check);
        }
    }
    Ok(checks)
}

/// Prints the verdict table; exit code 0 iff every checked stage passed.
pub fn cmd_validate(out: &Path) -> Result<i32> {
    let checks = check_reports(out)?;
    println!(
        "{:<44} {:>5} {:<6} {:>11} {:>11}  note",
        "report", "stage", "result", "residual", "discrepancy"
    );
    let mut failed = 0;
    for c in &checks {
        let result = match c.passed {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        let sci = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:.2e}"));
        println!(
            "{:<44} {:>5} {:<6} {:>11} {:>11}  {}",
            c.report,
            c.stage,
            result,
            sci(c.equation_residual),
            sci(c.max_discrepancy),
            c.note
        );
    }
    let checked = checks.iter().filter(|c| c.passed.is_some()).count();
    println!("{} of {checked} checked stages passed", checked - failed);
    Ok(if failed == 0 { 0 } else { 1 })
}
