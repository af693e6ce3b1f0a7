//! Outage scenarios and their application to a base case.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CaseError, NetworkCase};

pub const SCENARIO_HEADER: &str = "mtdc-scenario 1";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Generator ids.
    pub generator_outages: BTreeSet<u32>,
    /// Converter ids.
    pub converter_outages: BTreeSet<u32>,
}

impl Scenario {
    pub fn normal(name: impl Into<String>) -> Self {
        Scenario {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.generator_outages.is_empty() && self.converter_outages.is_empty()
    }
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario, CaseError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, CaseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, l)) if l == SCENARIO_HEADER => {}
        other => {
            return Err(CaseError::Parse {
                line: other.map_or(1, |(n, _)| n),
                field: "header".into(),
                message: format!("expected '{SCENARIO_HEADER}'"),
            })
        }
    }
    let mut scenario = Scenario::default();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["name", rest @ ..] => scenario.name = rest.join(" "),
            [kind @ ("gen_outage" | "conv_outage"), id] => {
                let id: u32 = id.parse().map_err(|_| CaseError::Parse {
                    line: n,
                    field: kind.to_string(),
                    message: format!("invalid id '{id}'"),
                })?;
                if *kind == "gen_outage" {
                    scenario.generator_outages.insert(id);
                } else {
                    scenario.converter_outages.insert(id);
                }
            }
            [word, ..] => {
                return Err(CaseError::Parse {
                    line: n,
                    field: word.to_string(),
                    message: "unknown keyword".into(),
                })
            }
            [] => unreachable!(),
        }
    }
    Ok(scenario)
}

pub fn serialize_scenario(scenario: &Scenario) -> String {
    let mut out = format!("{SCENARIO_HEADER}\nname {}\n", scenario.name);
    for id in &scenario.generator_outages {
        let _ = writeln!(out, "gen_outage {id}");
    }
    for id in &scenario.converter_outages {
        let _ = writeln!(out, "conv_outage {id}");
    }
    out
}

/// Returns a copy of `case` with the scenario's generators and converters
/// removed. Elements already removed by an earlier application are accepted,
/// so applying a scenario twice is the same as applying it once.
pub fn apply_scenario(case: &NetworkCase, scenario: &Scenario) -> Result<NetworkCase, CaseError> {
    for id in &scenario.generator_outages {
        if case.generator_index(*id).is_none() && !case.outages.generators.contains(id) {
            return Err(CaseError::UnknownElement(format!("generator {id}")));
        }
    }
    for id in &scenario.converter_outages {
        if case.converter_index(*id).is_none() && !case.outages.converters.contains(id) {
            return Err(CaseError::UnknownElement(format!("converter {id}")));
        }
    }
    let mut out = case.clone();
    out.generators
        .retain(|g| !scenario.generator_outages.contains(&g.id));
    out.converters
        .retain(|c| !scenario.converter_outages.contains(&c.id));
    out.outages
        .generators
        .extend(scenario.generator_outages.iter().copied());
    out.outages
        .converters
        .extend(scenario.converter_outages.iter().copied());
    out.validate()?;
    Ok(out)
}
