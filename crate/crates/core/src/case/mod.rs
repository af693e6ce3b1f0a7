//! Network data model for hybrid AC/DC cases.
//!
//! All electrical quantities held by [`NetworkCase`] are per-unit on the
//! case's MVA base. Conversion from physical units happens in [`format`].

mod format;
mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{parse_case, parse_case_str, serialize_case, FORMAT_HEADER};
pub use scenario::{
    apply_scenario, parse_scenario, parse_scenario_str, serialize_scenario, Scenario,
    SCENARIO_HEADER,
};

/// Default DC bus voltage band when a case omits it.
pub const DEFAULT_DC_V_MIN: f64 = 0.9;
pub const DEFAULT_DC_V_MAX: f64 = 1.1;
/// Droop gain range used throughout the strategy.
pub const DEFAULT_K_MIN: f64 = 0.001;
pub const DEFAULT_K_MAX: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {field}: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("{element} references unknown {reference}")]
    DanglingReference { element: String, reference: String },
    #[error("{element}: {message}")]
    Invariant { element: String, message: String },
    #[error("scenario references unknown {0}")]
    UnknownElement(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaseWarning {
    /// A DC bus with a single DC branch and no converter left to inject into it.
    InjectionFreeLeaf { dc_bus: u32 },
}

impl fmt::Display for CaseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseWarning::InjectionFreeLeaf { dc_bus } => {
                write!(f, "DC bus {dc_bus} is a leaf with no converter injection")
            }
        }
    }
}

/// Matpower bus type code, kept for transcription fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusType {
    Pq,
    Pv,
    Reference,
    Isolated,
}

impl BusType {
    pub fn code(self) -> u8 {
        match self {
            BusType::Pq => 1,
            BusType::Pv => 2,
            BusType::Reference => 3,
            BusType::Isolated => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BusType::Pq),
            2 => Some(BusType::Pv),
            3 => Some(BusType::Reference),
            4 => Some(BusType::Isolated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcBus {
    pub id: u32,
    pub bus_type: BusType,
    pub load_p: f64,
    pub load_q: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
    pub voltage_setpoint: f64,
    /// Radians.
    pub angle: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub angle_min: f64,
    pub angle_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Stable identifier, referenced by scenario files.
    pub id: u32,
    pub bus: u32,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Quadratic cost coefficient, currency per pu².
    pub cost_alpha: f64,
    pub cost_beta: f64,
    pub cost_gamma: f64,
}

impl Generator {
    pub fn cost(&self, p: f64) -> f64 {
        self.cost_alpha * p * p + self.cost_beta * p + self.cost_gamma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcBranch {
    pub from: u32,
    pub to: u32,
    /// Series resistance and reactance in pu; `series_g`/`series_b` derive from them.
    pub r: f64,
    pub x: f64,
    pub charging_b: f64,
    pub tap_ratio: f64,
}

impl AcBranch {
    pub fn series_g(&self) -> f64 {
        self.r / (self.r * self.r + self.x * self.x)
    }

    pub fn series_b(&self) -> f64 {
        -self.x / (self.r * self.r + self.x * self.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcBus {
    pub id: u32,
    pub v_nominal: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcBranch {
    pub from: u32,
    pub to: u32,
    pub resistance: f64,
}

impl DcBranch {
    pub fn admittance(&self) -> f64 {
        1.0 / self.resistance
    }
}

/// Coefficients of `a + b·I + c·I²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTriple {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub rectifier: LossTriple,
    pub inverter: LossTriple,
}

impl LossCoefficients {
    /// Rectifier and inverter rows of the reference MMC loss table.
    pub const MMC_TABLE: LossCoefficients = LossCoefficients {
        rectifier: LossTriple {
            a: 0.011,
            b: 0.003,
            c: 0.004,
        },
        inverter: LossTriple {
            a: 0.011,
            b: 0.003,
            c: 0.007,
        },
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    PControl,
    VControl,
    Droop,
}

impl ControlMode {
    pub fn code(self) -> u8 {
        match self {
            ControlMode::PControl => 1,
            ControlMode::VControl => 2,
            ControlMode::Droop => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ControlMode::PControl),
            2 => Some(ControlMode::VControl),
            3 => Some(ControlMode::Droop),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterControl {
    pub mode: ControlMode,
    pub p_ref: f64,
    pub u_ref: f64,
    /// ΔU/ΔP gain, only meaningful in droop mode.
    pub k_droop: f64,
    pub k_min: f64,
    pub k_max: f64,
}

impl ConverterControl {
    pub fn p_control(p_ref: f64) -> Self {
        ConverterControl {
            mode: ControlMode::PControl,
            p_ref,
            u_ref: 1.0,
            k_droop: (DEFAULT_K_MIN * DEFAULT_K_MAX).sqrt(),
            k_min: DEFAULT_K_MIN,
            k_max: DEFAULT_K_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterStation {
    pub id: u32,
    pub ac_bus: u32,
    pub dc_bus: u32,
    pub losses: LossCoefficients,
    pub p_dc_min: f64,
    pub p_dc_max: f64,
    pub i_max: f64,
    pub control: ConverterControl,
}

/// Elements removed by applied scenarios.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outages {
    pub generators: BTreeSet<u32>,
    pub converters: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    /// MVA.
    pub s_nominal: f64,
    /// kV.
    pub v_dc_nominal: f64,
    pub ac_buses: Vec<AcBus>,
    pub generators: Vec<Generator>,
    pub ac_branches: Vec<AcBranch>,
    pub dc_buses: Vec<DcBus>,
    pub dc_branches: Vec<DcBranch>,
    pub converters: Vec<ConverterStation>,
    pub outages: Outages,
}

impl NetworkCase {
    pub fn ac_index(&self, id: u32) -> Option<usize> {
        self.ac_buses.iter().position(|b| b.id == id)
    }

    pub fn dc_index(&self, id: u32) -> Option<usize> {
        self.dc_buses.iter().position(|b| b.id == id)
    }

    pub fn converter_index(&self, id: u32) -> Option<usize> {
        self.converters.iter().position(|c| c.id == id)
    }

    pub fn generator_index(&self, id: u32) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    /// Index of the angle reference: the first AC bus hosting a generator.
    pub fn reference_bus(&self) -> Option<usize> {
        self.ac_buses
            .iter()
            .position(|b| self.generators.iter().any(|g| g.bus == b.id))
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.ac_buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.load_p, q + b.load_q))
    }

    /// Checks every invariant. Returns non-fatal findings as warnings.
    pub fn validate(&self) -> Result<Vec<CaseWarning>, CaseError> {
        if !(self.s_nominal > 0.0) {
            return Err(invariant("case", "base MVA must be positive"));
        }
        let mut seen = BTreeSet::new();
        for bus in &self.ac_buses {
            let el = format!("bus {}", bus.id);
            if !seen.insert(bus.id) {
                return Err(invariant(&el, "duplicate bus id"));
            }
            if !(bus.v_min > 0.0) {
                return Err(invariant(&el, "v_min must be positive"));
            }
            if bus.v_min > bus.v_max {
                return Err(invariant(&el, "v_min exceeds v_max"));
            }
            if bus.angle_min > 0.0 || bus.angle_max < 0.0 {
                return Err(invariant(&el, "angle bounds must contain 0"));
            }
        }
        if self.generators.is_empty() {
            return Err(invariant("case", "at least one generator is required"));
        }
        let mut gen_ids = BTreeSet::new();
        for g in &self.generators {
            let el = format!("generator {}", g.id);
            if !gen_ids.insert(g.id) {
                return Err(invariant(&el, "duplicate generator id"));
            }
            if self.ac_index(g.bus).is_none() {
                return Err(dangling(&el, format!("bus {}", g.bus)));
            }
            if g.p_min > g.p_max {
                return Err(invariant(&el, "p_min exceeds p_max"));
            }
            if g.q_min > g.q_max {
                return Err(invariant(&el, "q_min exceeds q_max"));
            }
            if g.cost_alpha < 0.0 {
                return Err(invariant(
                    &el,
                    "quadratic cost coefficient must be non-negative",
                ));
            }
        }
        for (k, br) in self.ac_branches.iter().enumerate() {
            let el = format!("branch {} ({}-{})", k + 1, br.from, br.to);
            for end in [br.from, br.to] {
                if self.ac_index(end).is_none() {
                    return Err(dangling(&el, format!("bus {end}")));
                }
            }
            if br.from == br.to {
                return Err(invariant(&el, "branch endpoints must differ"));
            }
            if !(br.tap_ratio > 0.0) {
                return Err(invariant(&el, "tap ratio must be positive"));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(invariant(&el, "zero series impedance"));
            }
        }
        let mut seen = BTreeSet::new();
        for bus in &self.dc_buses {
            let el = format!("dc bus {}", bus.id);
            if !seen.insert(bus.id) {
                return Err(invariant(&el, "duplicate DC bus id"));
            }
            if !(bus.v_min <= bus.v_nominal && bus.v_nominal <= bus.v_max) {
                return Err(invariant(&el, "v_nominal must lie within [v_min, v_max]"));
            }
            if !(bus.v_min > 0.0) {
                return Err(invariant(&el, "v_min must be positive"));
            }
        }
        for (k, br) in self.dc_branches.iter().enumerate() {
            let el = format!("dc branch {} ({}-{})", k + 1, br.from, br.to);
            for end in [br.from, br.to] {
                if self.dc_index(end).is_none() {
                    return Err(dangling(&el, format!("dc bus {end}")));
                }
            }
            if br.from == br.to {
                return Err(invariant(&el, "branch endpoints must differ"));
            }
            if !(br.resistance > 0.0) {
                return Err(invariant(&el, "resistance must be positive"));
            }
        }
        let mut seen = BTreeSet::new();
        for conv in &self.converters {
            let el = format!("converter {}", conv.id);
            if !seen.insert(conv.id) {
                return Err(invariant(&el, "duplicate converter id"));
            }
            if self.ac_index(conv.ac_bus).is_none() {
                return Err(dangling(&el, format!("bus {}", conv.ac_bus)));
            }
            if self.dc_index(conv.dc_bus).is_none() {
                return Err(dangling(&el, format!("dc bus {}", conv.dc_bus)));
            }
            for t in [conv.losses.rectifier, conv.losses.inverter] {
                if t.a < 0.0 || t.b < 0.0 || t.c < 0.0 {
                    return Err(invariant(&el, "loss coefficients must be non-negative"));
                }
            }
            if conv.p_dc_min > conv.p_dc_max {
                return Err(invariant(&el, "p_dc_min exceeds p_dc_max"));
            }
            if !(conv.i_max > 0.0) {
                return Err(invariant(&el, "i_max must be positive"));
            }
            let ctl = &conv.control;
            if !(ctl.k_min > 0.0) || ctl.k_min > ctl.k_max {
                return Err(invariant(
                    &el,
                    "droop gain bounds must satisfy 0 < k_min <= k_max",
                ));
            }
            if ctl.mode == ControlMode::Droop && !(ctl.k_min..=ctl.k_max).contains(&ctl.k_droop) {
                return Err(invariant(&el, "k_droop outside [k_min, k_max]"));
            }
        }

        let ac_edges: Vec<(u32, u32)> = self.ac_branches.iter().map(|b| (b.from, b.to)).collect();
        if let Some(id) = disconnected(&ac_edges) {
            return Err(invariant(
                &format!("bus {id}"),
                "AC network is not connected",
            ));
        }
        let dc_edges: Vec<(u32, u32)> = self.dc_branches.iter().map(|b| (b.from, b.to)).collect();
        if let Some(id) = disconnected(&dc_edges) {
            return Err(invariant(
                &format!("dc bus {id}"),
                "DC network is not connected",
            ));
        }

        let mut warnings = Vec::new();
        for bus in &self.dc_buses {
            let degree = dc_edges
                .iter()
                .filter(|(f, t)| *f == bus.id || *t == bus.id)
                .count();
            let fed = self.converters.iter().any(|c| c.dc_bus == bus.id);
            if degree == 1 && !fed {
                warnings.push(CaseWarning::InjectionFreeLeaf { dc_bus: bus.id });
            }
        }
        Ok(warnings)
    }
}

fn invariant(element: &str, message: &str) -> CaseError {
    CaseError::Invariant {
        element: element.to_string(),
        message: message.to_string(),
    }
}

fn dangling(element: &str, reference: String) -> CaseError {
    CaseError::DanglingReference {
        element: element.to_string(),
        reference,
    }
}

/// Connectivity over the nodes that appear in at least one edge. Returns a
/// node outside the component of the first node, if any.
fn disconnected(edges: &[(u32, u32)]) -> Option<u32> {
    let mut adjacency: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(f, t) in edges {
        adjacency.entry(f).or_default().push(t);
        adjacency.entry(t).or_default().push(f);
    }
    let start = *adjacency.keys().next()?;
    let mut visited = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for &m in &adjacency[&n] {
            if visited.insert(m) {
                stack.push(m);
            }
        }
    }
    adjacency.keys().find(|k| !visited.contains(k)).copied()
}
