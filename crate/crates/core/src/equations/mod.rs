//! Residuals and objectives of the hybrid AC/DC OPF over a flat variable vector.
//!
//! Sign conventions:
//! - `P_dc` is the power a converter injects into its DC bus.
//! - `P_c`, `Q_c` are the powers a converter draws from its AC bus, so a
//!   rectifier has `P_c > 0` and an inverter `P_c < 0`.
//! - The converter power balance `P_c = P_dc + P_loss` holds in both
//!   directions; losses are always drawn from the AC side of the path.
//! - Converter current obeys `P_c² + Q_c² = (U_ac·I_c)²` in per-unit, which is
//!   the apparent-power definition `|S| = U·I`. The literal `P² + Q² = 3·U·I`
//!   form mixes physical per-phase units and is not used.

mod admittance;
mod point;

use thiserror::Error;

pub use admittance::{DcNetwork, Ybus};
pub use point::{AcBusState, ConverterState, DcBusState, GeneratorState, OperatingPoint};

use crate::case::{ConverterStation, LossCoefficients, LossTriple, NetworkCase};
use crate::sparse::Triplets;

#[derive(Debug, Error, PartialEq)]
pub enum EquationError {
    #[error("converter current must be non-negative, got {0}")]
    NegativeCurrent(f64),
    #[error("converter {converter}: k_droop {k} outside [{min}, {max}]")]
    DroopGainOutOfRange {
        converter: u32,
        k: f64,
        min: f64,
        max: f64,
    },
    #[error("{0} out of range")]
    Index(String),
}

/// Loss triple selection. `P_dc ≥ 0` (AC→DC) uses the rectifier row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossDirection {
    Rectifier,
    Inverter,
}

impl LossDirection {
    pub fn from_p_dc(p_dc: f64) -> Self {
        if p_dc >= 0.0 {
            LossDirection::Rectifier
        } else {
            LossDirection::Inverter
        }
    }

    pub fn select(self, coeffs: &LossCoefficients) -> LossTriple {
        match self {
            LossDirection::Rectifier => coeffs.rectifier,
            LossDirection::Inverter => coeffs.inverter,
        }
    }
}

/// `a + b·i_c + c·i_c²`
pub fn converter_loss(
    i_c: f64,
    direction: LossDirection,
    coeffs: &LossCoefficients,
) -> Result<f64, EquationError> {
    if i_c < 0.0 {
        return Err(EquationError::NegativeCurrent(i_c));
    }
    let t = direction.select(coeffs);
    Ok(t.a + t.b * i_c + t.c * i_c * i_c)
}

/// How a droop gain enters a problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DroopGain {
    Fixed(f64),
    Variable { min: f64, max: f64 },
}

/// Control law imposed on one converter in a given problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConverterLaw {
    /// No control-law residual; `P_dc` is a free bounded variable.
    Free,
    PControl {
        p_ref: f64,
    },
    VControl {
        u_ref: f64,
    },
    Droop {
        p_ref: f64,
        u_ref: f64,
        gain: DroopGain,
    },
}

impl ConverterLaw {
    pub fn has_residual(&self) -> bool {
        !matches!(self, ConverterLaw::Free)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterSlots {
    pub p_dc: usize,
    pub p_c: usize,
    pub q_c: usize,
    pub i_c: usize,
    pub p_loss: usize,
    pub k_droop: Option<usize>,
}

/// Slot assignment for every decision variable.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    pub vm: Vec<usize>,
    /// `None` for the reference bus, whose angle is fixed at zero.
    pub va: Vec<Option<usize>>,
    pub pg: Vec<usize>,
    pub qg: Vec<usize>,
    pub vdc: Vec<usize>,
    pub conv: Vec<ConverterSlots>,
    pub reference_bus: Option<usize>,
    len: usize,
}

impl VariableLayout {
    pub fn new(case: &NetworkCase, laws: &[ConverterLaw]) -> Self {
        let mut next = 0usize;
        let mut take = || {
            next += 1;
            next - 1
        };
        let reference_bus = case.reference_bus();
        let vm = (0..case.ac_buses.len()).map(|_| take()).collect();
        let va = (0..case.ac_buses.len())
            .map(|i| (Some(i) != reference_bus).then(&mut take))
            .collect();
        let pg = (0..case.generators.len()).map(|_| take()).collect();
        let qg = (0..case.generators.len()).map(|_| take()).collect();
        let vdc = (0..case.dc_buses.len()).map(|_| take()).collect();
        let mut conv: Vec<ConverterSlots> = (0..case.converters.len())
            .map(|_| ConverterSlots {
                p_dc: take(),
                p_c: take(),
                q_c: take(),
                i_c: take(),
                p_loss: take(),
                k_droop: None,
            })
            .collect();
        for (slots, law) in conv.iter_mut().zip(laws) {
            if let ConverterLaw::Droop {
                gain: DroopGain::Variable { .. },
                ..
            } = law
            {
                slots.k_droop = Some(take());
            }
        }
        VariableLayout {
            vm,
            va,
            pg,
            qg,
            vdc,
            conv,
            reference_bus,
            len: next,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn angle(&self, x: &[f64], bus: usize) -> f64 {
        self.va[bus].map_or(0.0, |s| x[s])
    }

    pub fn magnitudes(&self, x: &[f64]) -> Vec<f64> {
        self.vm.iter().map(|&s| x[s]).collect()
    }

    pub fn angles(&self, x: &[f64]) -> Vec<f64> {
        (0..self.vm.len()).map(|i| self.angle(x, i)).collect()
    }

    pub fn dc_voltages(&self, x: &[f64]) -> Vec<f64> {
        self.vdc.iter().map(|&s| x[s]).collect()
    }

    /// Human-readable name of a slot.
    pub fn describe(&self, slot: usize) -> String {
        let find = |v: &[usize], what: &str| {
            v.iter()
                .position(|&s| s == slot)
                .map(|i| format!("{what}[{i}]"))
        };
        if let Some(s) = find(&self.vm, "U") {
            return s;
        }
        if let Some(i) = self.va.iter().position(|&s| s == Some(slot)) {
            return format!("delta[{i}]");
        }
        for (v, what) in [(&self.pg, "P_G"), (&self.qg, "Q_G"), (&self.vdc, "U_dc")] {
            if let Some(s) = find(v, what) {
                return s;
            }
        }
        for (i, c) in self.conv.iter().enumerate() {
            let named = [
                (c.p_dc, "P_dc"),
                (c.p_c, "P_c"),
                (c.q_c, "Q_c"),
                (c.i_c, "I_c"),
                (c.p_loss, "P_loss"),
            ];
            if let Some((_, n)) = named.iter().find(|(s, _)| *s == slot) {
                return format!("{n}[{i}]");
            }
            if c.k_droop == Some(slot) {
                return format!("k_droop[{i}]");
            }
        }
        format!("x[{slot}]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    AcActiveBalance,
    AcReactiveBalance,
    DcCurrentBalance,
    ConverterPowerBalance,
    ConverterCoupling,
    ConverterLossDef,
    DroopLaw,
    PControlLaw,
    VControlLaw,
}

/// One equality constraint: its kind and the index of the element it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Residual {
    pub kind: ResidualKind,
    pub element: usize,
}

/// The full equality set of one OPF problem, in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub entries: Vec<Residual>,
}

impl ResidualSet {
    pub fn new(case: &NetworkCase, laws: &[ConverterLaw]) -> Self {
        let mut entries = Vec::new();
        for i in 0..case.ac_buses.len() {
            entries.push(Residual {
                kind: ResidualKind::AcActiveBalance,
                element: i,
            });
            entries.push(Residual {
                kind: ResidualKind::AcReactiveBalance,
                element: i,
            });
        }
        for i in 0..case.dc_buses.len() {
            entries.push(Residual {
                kind: ResidualKind::DcCurrentBalance,
                element: i,
            });
        }
        for (c, law) in laws.iter().enumerate() {
            for kind in [
                ResidualKind::ConverterCoupling,
                ResidualKind::ConverterLossDef,
                ResidualKind::ConverterPowerBalance,
            ] {
                entries.push(Residual { kind, element: c });
            }
            let kind = match law {
                ConverterLaw::Free => continue,
                ConverterLaw::PControl { .. } => ResidualKind::PControlLaw,
                ConverterLaw::VControl { .. } => ResidualKind::VControlLaw,
                ConverterLaw::Droop { .. } => ResidualKind::DroopLaw,
            };
            entries.push(Residual { kind, element: c });
        }
        ResidualSet { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `P_i`, `Q_i` injected into the network at AC bus `i`.
pub fn ac_injection(
    vm: &[f64],
    va: &[f64],
    ybus: &Ybus,
    i: usize,
) -> Result<(f64, f64), EquationError> {
    if i >= ybus.len() || vm.len() != ybus.len() || va.len() != ybus.len() {
        return Err(EquationError::Index(format!("bus {i}")));
    }
    let (mut p, mut q) = (0.0, 0.0);
    for &(j, g, b) in ybus.row(i) {
        let (s, c) = (va[i] - va[j]).sin_cos();
        p += vm[j] * (g * c + b * s);
        q += vm[j] * (g * s - b * c);
    }
    Ok((vm[i] * p, vm[i] * q))
}

/// Case, network matrices, control laws and variable layout of one OPF problem.
#[derive(Debug, Clone)]
pub struct OpfModel {
    pub case: NetworkCase,
    pub ybus: Ybus,
    pub dc: DcNetwork,
    pub laws: Vec<ConverterLaw>,
    pub layout: VariableLayout,
    pub residuals: ResidualSet,
    gens_at_bus: Vec<Vec<usize>>,
    convs_at_ac: Vec<Vec<usize>>,
    convs_at_dc: Vec<Vec<usize>>,
}

impl OpfModel {
    pub fn new(case: NetworkCase, laws: Vec<ConverterLaw>) -> Result<Self, EquationError> {
        assert_eq!(
            laws.len(),
            case.converters.len(),
            "one control law per converter"
        );
        for (conv, law) in case.converters.iter().zip(&laws) {
            if let ConverterLaw::Droop {
                gain: DroopGain::Fixed(k),
                ..
            } = law
            {
                let (min, max) = (conv.control.k_min, conv.control.k_max);
                if !(min..=max).contains(k) || *k <= 0.0 {
                    return Err(EquationError::DroopGainOutOfRange {
                        converter: conv.id,
                        k: *k,
                        min,
                        max,
                    });
                }
            }
        }
        let mut gens_at_bus = vec![Vec::new(); case.ac_buses.len()];
        for (g, gen) in case.generators.iter().enumerate() {
            if let Some(i) = case.ac_index(gen.bus) {
                gens_at_bus[i].push(g);
            }
        }
        let mut convs_at_ac = vec![Vec::new(); case.ac_buses.len()];
        let mut convs_at_dc = vec![Vec::new(); case.dc_buses.len()];
        for (c, conv) in case.converters.iter().enumerate() {
            if let Some(i) = case.ac_index(conv.ac_bus) {
                convs_at_ac[i].push(c);
            }
            if let Some(i) = case.dc_index(conv.dc_bus) {
                convs_at_dc[i].push(c);
            }
        }
        Ok(OpfModel {
            ybus: Ybus::build(&case),
            dc: DcNetwork::build(&case),
            layout: VariableLayout::new(&case, &laws),
            residuals: ResidualSet::new(&case, &laws),
            laws,
            case,
            gens_at_bus,
            convs_at_ac,
            convs_at_dc,
        })
    }

    pub fn converter(&self, c: usize) -> &ConverterStation {
        &self.case.converters[c]
    }

    pub fn ac_bus_of(&self, c: usize) -> usize {
        self.case
            .ac_index(self.case.converters[c].ac_bus)
            .expect("validated case")
    }

    pub fn dc_bus_of(&self, c: usize) -> usize {
        self.case
            .dc_index(self.case.converters[c].dc_bus)
            .expect("validated case")
    }

    pub fn generators_at(&self, bus: usize) -> &[usize] {
        &self.gens_at_bus[bus]
    }

    pub fn converters_at_ac(&self, bus: usize) -> &[usize] {
        &self.convs_at_ac[bus]
    }

    pub fn converters_at_dc(&self, bus: usize) -> &[usize] {
        &self.convs_at_dc[bus]
    }

    pub fn droop_gain(&self, x: &[f64], c: usize) -> Option<f64> {
        match self.laws[c] {
            ConverterLaw::Droop {
                gain: DroopGain::Fixed(k),
                ..
            } => Some(k),
            ConverterLaw::Droop {
                gain: DroopGain::Variable { .. },
                ..
            } => self.layout.conv[c].k_droop.map(|s| x[s]),
            _ => None,
        }
    }

    pub fn loss_directions(&self, x: &[f64]) -> Vec<LossDirection> {
        self.layout
            .conv
            .iter()
            .map(|s| LossDirection::from_p_dc(x[s.p_dc]))
            .collect()
    }

    /// `(r_P, r_Q)` at AC bus `i`: generation − demand − converter draw − injection.
    pub fn ac_balance_residual(&self, x: &[f64], i: usize) -> Result<(f64, f64), EquationError> {
        let vm = self.layout.magnitudes(x);
        let va = self.layout.angles(x);
        let (p, q) = ac_injection(&vm, &va, &self.ybus, i)?;
        Ok(self.ac_balance_from(x, i, p, q))
    }

    fn ac_balance_from(&self, x: &[f64], i: usize, p: f64, q: f64) -> (f64, f64) {
        let bus = &self.case.ac_buses[i];
        let mut rp = -bus.load_p - p;
        let mut rq = -bus.load_q - q;
        for &g in &self.gens_at_bus[i] {
            rp += x[self.layout.pg[g]];
            rq += x[self.layout.qg[g]];
        }
        for &c in &self.convs_at_ac[i] {
            rp -= x[self.layout.conv[c].p_c];
            rq -= x[self.layout.conv[c].q_c];
        }
        (rp, rq)
    }

    /// `Σ P_dc − 2·U_dc,i·I_dc,i` at DC bus `i`.
    pub fn dc_balance_residual(&self, x: &[f64], i: usize) -> Result<f64, EquationError> {
        if i >= self.case.dc_buses.len() {
            return Err(EquationError::Index(format!("dc bus {i}")));
        }
        let v = self.layout.dc_voltages(x);
        let injected: f64 = self.convs_at_dc[i]
            .iter()
            .map(|&c| x[self.layout.conv[c].p_dc])
            .sum();
        Ok(injected - 2.0 * v[i] * self.dc.current(&v, i))
    }

    /// `(r_couple, r_balance)`: `P_c² + Q_c² − (U_ac·I_c)²` and `P_c − P_dc − P_loss`.
    pub fn converter_coupling_residual(&self, x: &[f64], c: usize) -> (f64, f64) {
        let s = &self.layout.conv[c];
        let u = x[self.layout.vm[self.ac_bus_of(c)]];
        let (pc, qc, ic) = (x[s.p_c], x[s.q_c], x[s.i_c]);
        let couple = pc * pc + qc * qc - (u * ic) * (u * ic);
        let balance = pc - x[s.p_dc] - x[s.p_loss];
        (couple, balance)
    }

    /// `P_loss − (a + b·I_c + c·I_c²)` with the triple picked by `direction`.
    /// Evaluates the polynomial at negative currents too, as interior iterates
    /// are never negative but finite-difference probes may be.
    pub fn loss_definition_residual(&self, x: &[f64], c: usize, direction: LossDirection) -> f64 {
        let s = &self.layout.conv[c];
        let t = direction.select(&self.converter(c).losses);
        let i = x[s.i_c];
        x[s.p_loss] - (t.a + t.b * i + t.c * i * i)
    }

    pub fn control_law_residual(&self, x: &[f64], c: usize) -> Option<f64> {
        let s = &self.layout.conv[c];
        match self.laws[c] {
            ConverterLaw::Free => None,
            ConverterLaw::PControl { p_ref } => Some(x[s.p_dc] - p_ref),
            ConverterLaw::VControl { u_ref } => Some(x[self.layout.vdc[self.dc_bus_of(c)]] - u_ref),
            ConverterLaw::Droop { p_ref, u_ref, .. } => {
                let k = self.droop_gain(x, c).expect("droop gain");
                let u = x[self.layout.vdc[self.dc_bus_of(c)]];
                Some(x[s.p_dc] - p_ref + (u - u_ref) / k)
            }
        }
    }

    /// Every residual in [`ResidualSet`] order.
    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let dirs = self.loss_directions(x);
        self.residuals_with(x, &dirs)
    }

    pub fn residuals_with(&self, x: &[f64], dirs: &[LossDirection]) -> Vec<f64> {
        let vm = self.layout.magnitudes(x);
        let va = self.layout.angles(x);
        let mut injections = Vec::with_capacity(vm.len());
        for i in 0..vm.len() {
            injections.push(ac_injection(&vm, &va, &self.ybus, i).expect("consistent dimensions"));
        }
        self.residuals
            .entries
            .iter()
            .map(|r| match r.kind {
                ResidualKind::AcActiveBalance => {
                    let (p, q) = injections[r.element];
                    self.ac_balance_from(x, r.element, p, q).0
                }
                ResidualKind::AcReactiveBalance => {
                    let (p, q) = injections[r.element];
                    self.ac_balance_from(x, r.element, p, q).1
                }
                ResidualKind::DcCurrentBalance => self
                    .dc_balance_residual(x, r.element)
                    .expect("dc bus in range"),
                ResidualKind::ConverterCoupling => self.converter_coupling_residual(x, r.element).0,
                ResidualKind::ConverterPowerBalance => {
                    self.converter_coupling_residual(x, r.element).1
                }
                ResidualKind::ConverterLossDef => {
                    self.loss_definition_residual(x, r.element, dirs[r.element])
                }
                ResidualKind::DroopLaw | ResidualKind::PControlLaw | ResidualKind::VControlLaw => {
                    self.control_law_residual(x, r.element)
                        .expect("law has a residual")
                }
            })
            .collect()
    }

    pub fn describe_residual(&self, row: usize) -> String {
        let r = self.residuals.entries[row];
        let id = match r.kind {
            ResidualKind::AcActiveBalance | ResidualKind::AcReactiveBalance => {
                format!("bus {}", self.case.ac_buses[r.element].id)
            }
            ResidualKind::DcCurrentBalance => {
                format!("dc bus {}", self.case.dc_buses[r.element].id)
            }
            _ => format!("converter {}", self.case.converters[r.element].id),
        };
        format!("{:?} at {id}", r.kind)
    }

    /// Analytic `∂r/∂x`, loss directions taken from `x`.
    pub fn residual_jacobian(&self, x: &[f64]) -> Triplets {
        let dirs = self.loss_directions(x);
        self.residual_jacobian_with(x, &dirs)
    }

    pub fn residual_jacobian_with(&self, x: &[f64], dirs: &[LossDirection]) -> Triplets {
        let l = &self.layout;
        let vm = l.magnitudes(x);
        let va = l.angles(x);
        let vdc = l.dc_voltages(x);
        let mut jac = Triplets::new(self.residuals.len(), l.len());

        for (row, r) in self.residuals.entries.iter().enumerate() {
            let e = r.element;
            match r.kind {
                ResidualKind::AcActiveBalance | ResidualKind::AcReactiveBalance => {
                    let active = r.kind == ResidualKind::AcActiveBalance;
                    let i = e;
                    let (p, q) = ac_injection(&vm, &va, &self.ybus, i).expect("dimensions");
                    let (gii, bii) = self.ybus.diagonal(i);
                    for &(j, g, b) in self.ybus.row(i) {
                        if j == i {
                            continue;
                        }
                        let (s, c) = (va[i] - va[j]).sin_cos();
                        let (d_dva_j, d_dvm_j) = if active {
                            (vm[i] * vm[j] * (g * s - b * c), vm[i] * (g * c + b * s))
                        } else {
                            (-vm[i] * vm[j] * (g * c + b * s), vm[i] * (g * s - b * c))
                        };
                        if let Some(sj) = l.va[j] {
                            jac.push(row, sj, -d_dva_j);
                        }
                        jac.push(row, l.vm[j], -d_dvm_j);
                    }
                    let (d_dva_i, d_dvm_i) = if active {
                        (-q - bii * vm[i] * vm[i], p / vm[i] + gii * vm[i])
                    } else {
                        (p - gii * vm[i] * vm[i], q / vm[i] - bii * vm[i])
                    };
                    if let Some(si) = l.va[i] {
                        jac.push(row, si, -d_dva_i);
                    }
                    jac.push(row, l.vm[i], -d_dvm_i);
                    for &g in &self.gens_at_bus[i] {
                        jac.push(row, if active { l.pg[g] } else { l.qg[g] }, 1.0);
                    }
                    for &c in &self.convs_at_ac[i] {
                        let s = &l.conv[c];
                        jac.push(row, if active { s.p_c } else { s.q_c }, -1.0);
                    }
                }
                ResidualKind::DcCurrentBalance => {
                    let i = e;
                    let mut diag = 0.0;
                    for &(j, y) in self.dc.neighbors(i) {
                        diag -= 2.0 * y * (2.0 * vdc[i] - vdc[j]);
                        jac.push(row, l.vdc[j], 2.0 * vdc[i] * y);
                    }
                    jac.push(row, l.vdc[i], diag);
                    for &c in &self.convs_at_dc[i] {
                        jac.push(row, l.conv[c].p_dc, 1.0);
                    }
                }
                ResidualKind::ConverterCoupling => {
                    let s = &l.conv[e];
                    let bus = self.ac_bus_of(e);
                    let (u, ic) = (vm[bus], x[s.i_c]);
                    jac.push(row, s.p_c, 2.0 * x[s.p_c]);
                    jac.push(row, s.q_c, 2.0 * x[s.q_c]);
                    jac.push(row, l.vm[bus], -2.0 * u * ic * ic);
                    jac.push(row, s.i_c, -2.0 * u * u * ic);
                }
                ResidualKind::ConverterLossDef => {
                    let s = &l.conv[e];
                    let t = dirs[e].select(&self.converter(e).losses);
                    jac.push(row, s.p_loss, 1.0);
                    jac.push(row, s.i_c, -(t.b + 2.0 * t.c * x[s.i_c]));
                }
                ResidualKind::ConverterPowerBalance => {
                    let s = &l.conv[e];
                    jac.push(row, s.p_c, 1.0);
                    jac.push(row, s.p_dc, -1.0);
                    jac.push(row, s.p_loss, -1.0);
                }
                ResidualKind::PControlLaw => {
                    jac.push(row, l.conv[e].p_dc, 1.0);
                }
                ResidualKind::VControlLaw => {
                    jac.push(row, l.vdc[self.dc_bus_of(e)], 1.0);
                }
                ResidualKind::DroopLaw => {
                    let s = &l.conv[e];
                    let ConverterLaw::Droop { u_ref, .. } = self.laws[e] else {
                        unreachable!("droop residual without droop law")
                    };
                    let k = self.droop_gain(x, e).expect("droop gain");
                    let slot = l.vdc[self.dc_bus_of(e)];
                    jac.push(row, s.p_dc, 1.0);
                    jac.push(row, slot, 1.0 / k);
                    if let Some(ks) = s.k_droop {
                        jac.push(row, ks, -(x[slot] - u_ref) / (k * k));
                    }
                }
            }
        }
        jac
    }

    /// `Σ α·P_G² + β·P_G + γ` over in-service generators.
    pub fn objective_cost(&self, x: &[f64]) -> f64 {
        self.case
            .generators
            .iter()
            .zip(&self.layout.pg)
            .map(|(g, &s)| g.cost(x[s]))
            .sum()
    }

    /// `Σ (U_dc,i − U_dc,N)²` over DC buses.
    pub fn objective_vdev(&self, x: &[f64]) -> f64 {
        self.case
            .dc_buses
            .iter()
            .zip(&self.layout.vdc)
            .map(|(b, &s)| (x[s] - b.v_nominal).powi(2))
            .sum()
    }
}
