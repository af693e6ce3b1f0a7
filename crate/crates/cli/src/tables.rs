//! Aggregate tables across runs. Every run gets its rows even when it failed;
//! missing values are written as `-`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use mtdc_opf::case::{ControlMode, NetworkCase};
use mtdc_opf::strategy::{StageResult, StrategyMode};

use crate::record::{Outcome, RunRecord};

pub const DROOP_FILE: &str = "droop_coefficients.csv";
pub const OBJECTIVE_FILE: &str = "objectives.csv";
pub const VDEV_FILE: &str = "voltage_deviation.csv";
pub const DC_VOLTAGE_FILE: &str = "dc_voltages.csv";

const MISSING: &str = "-";

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |v| v.to_string())
}

fn final_stage(record: &RunRecord) -> Option<&StageResult> {
    record.report.as_ref().map(|r| r.final_stage())
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the four aggregate CSV files into `out`.
pub fn write_aggregates(out: &Path, case: &NetworkCase, records: &[RunRecord]) -> Result<()> {
    let mut droop = Vec::new();
    for r in records
        .iter()
        .filter(|r| r.mode != StrategyMode::ActivePowerControl)
    {
        for conv in &case.converters {
            let k = final_stage(r)
                .and_then(|s| s.control(conv.id))
                .filter(|c| c.mode == ControlMode::Droop)
                .map(|c| c.k_droop);
            droop.push(vec![
                r.scenario_name.clone(),
                r.mode.label().into(),
                r.outcome.label().into(),
                conv.id.to_string(),
                num(k),
            ]);
        }
    }
    write_csv(
        &out.join(DROOP_FILE),
        &["scenario", "mode", "outcome", "converter", "k_droop"],
        droop,
    )?;

    let summary_rows = |value: fn(&RunRecord) -> Option<f64>| {
        records
            .iter()
            .map(|r| {
                vec![
                    r.scenario_name.clone(),
                    r.mode.label().into(),
                    r.outcome.label().into(),
                    r.report
                        .as_ref()
                        .map_or(MISSING.into(), |rep| rep.fallback_triggered.to_string()),
                    num(value(r)),
                ]
            })
            .collect::<Vec<_>>()
    };
    write_csv(
        &out.join(OBJECTIVE_FILE),
        &["scenario", "mode", "outcome", "fallback_triggered", "cost"],
        summary_rows(|r| r.report.as_ref().map(|rep| rep.final_cost)),
    )?;
    write_csv(
        &out.join(VDEV_FILE),
        &["scenario", "mode", "outcome", "fallback_triggered", "vdev"],
        summary_rows(|r| r.report.as_ref().map(|rep| rep.final_vdev)),
    )?;

    let mut voltages = Vec::new();
    for r in records {
        for bus in &case.dc_buses {
            let u = final_stage(r)
                .and_then(|s| s.point.dc_buses.iter().find(|b| b.id == bus.id))
                .map(|b| b.u_dc);
            voltages.push(vec![
                r.scenario_name.clone(),
                r.mode.label().into(),
                bus.id.to_string(),
                num(u),
            ]);
        }
    }
    write_csv(
        &out.join(DC_VOLTAGE_FILE),
        &["scenario", "mode", "dc_bus", "u_dc"],
        voltages,
    )
}

/// Relative cost gap of the proposed strategy over adaptive droop, in percent.
pub fn cost_gap_percent(adaptive: f64, proposed: f64) -> f64 {
    (proposed - adaptive) / adaptive.abs() * 100.0
}

/// Human-readable per-scenario summary.
pub fn summary(records: &[RunRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<28} {:<15} {:<10} {:>16} {:>14}",
        "scenario", "mode", "outcome", "cost", "vdev"
    );
    let mut scenarios: Vec<&str> = Vec::new();
    for r in records {
        if !scenarios.contains(&r.scenario_name.as_str()) {
            scenarios.push(&r.scenario_name);
        }
    }
    for name in scenarios {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.scenario_name == name).collect();
        for r in &runs {
            let (cost, vdev) = r
                .report
                .as_ref()
                .map_or((MISSING.into(), MISSING.into()), |rep| {
                    (
                        format!("{:.4}", rep.final_cost),
                        format!("{:.4e}", rep.final_vdev),
                    )
                });
            let _ = writeln!(
                s,
                "{:<28} {:<15} {:<10} {:>16} {:>14}",
                name,
                r.mode.label(),
                r.outcome.label(),
                cost,
                vdev
            );
        }
        let cost_of = |mode| {
            runs.iter()
                .find(|r| r.mode == mode && r.outcome != Outcome::Failed)
                .and_then(|r| r.report.as_ref())
                .map(|rep| rep.final_cost)
        };
        if let (Some(a), Some(p)) = (
            cost_of(StrategyMode::AdaptiveDroop),
            cost_of(StrategyMode::ProposedDroop),
        ) {
            let _ = writeln!(
                s,
                "{:<28} proposed vs adaptive cost gap: {:+.4}%",
                name,
                cost_gap_percent(a, p)
            );
        }
    }
    s
}
