//! Newton–Raphson AC/DC power flow with pinned controls, used to cross-check
//! OPF operating points.
//!
//! The AC network is handled in complex form (`S = V·conj(Y·V)`) with its own
//! admittance assembly, so agreement with the OPF residuals is evidence
//! rather than a re-evaluation of the same code.

use std::collections::BTreeSet;

use log::debug;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{ControlMode, ConverterControl, NetworkCase};
use crate::equations::{
    AcBusState, ConverterLaw, ConverterState, DcBusState, DroopGain, GeneratorState,
    OperatingPoint, OpfModel,
};
use crate::strategy::ControlSnapshot;

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-10;
/// Residual and per-variable agreement required for a passing verdict.
pub const AGREEMENT: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PowerFlowError {
    #[error("singular jacobian at {location}")]
    Singular { location: String },
    #[error("no convergence after {iterations} iterations (max mismatch {mismatch:.3e})")]
    Diverged { iterations: usize, mismatch: f64 },
    #[error("invalid setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnedConverter {
    pub id: u32,
    pub control: ConverterControl,
    pub q_c: f64,
}

/// Square power-flow problem: generator dispatch, voltage set points at
/// generator buses, converter laws and reactive draws are all fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSetup {
    pub case: NetworkCase,
    pub slack_bus: u32,
    /// Active and reactive output per generator; the slack bus generators
    /// and the reactive output at voltage-controlled buses are recomputed.
    pub dispatch: Vec<GeneratorState>,
    /// Voltage magnitude held at each generator bus.
    pub voltage_setpoints: Vec<(u32, f64)>,
    pub converters: Vec<PinnedConverter>,
    /// Converters switched to voltage control to anchor a DC grid.
    pub promoted: Vec<u32>,
}

impl PowerFlowSetup {
    /// Pins everything at `point` under `controls`. A DC grid without any
    /// voltage-setting converter gets the converter with the widest `P_dc`
    /// range switched to voltage control at its solved voltage.
    pub fn pinned(
        case: &NetworkCase,
        point: &OperatingPoint,
        controls: &[ControlSnapshot],
    ) -> Result<Self, PowerFlowError> {
        let slack = case
            .reference_bus()
            .ok_or_else(|| PowerFlowError::Setup("no generator to act as slack".into()))?;
        let gen_buses: BTreeSet<u32> = case.generators.iter().map(|g| g.bus).collect();
        let mut voltage_setpoints = Vec::new();
        for b in &point.ac_buses {
            if gen_buses.contains(&b.id) {
                voltage_setpoints.push((b.id, b.vm));
            }
        }
        let mut converters = Vec::new();
        for conv in &case.converters {
            let state = point.converter(conv.id).ok_or_else(|| {
                PowerFlowError::Setup(format!("no state for converter {}", conv.id))
            })?;
            let control = controls
                .iter()
                .find(|s| s.converter == conv.id)
                .map_or(conv.control, |s| s.control);
            converters.push(PinnedConverter {
                id: conv.id,
                control,
                q_c: state.q_c,
            });
        }
        let mut promoted = Vec::new();
        for component in dc_components(case) {
            let members: Vec<usize> = (0..case.converters.len())
                .filter(|&c| {
                    case.dc_index(case.converters[c].dc_bus)
                        .is_some_and(|d| component.contains(&d))
                })
                .collect();
            let anchored = members
                .iter()
                .any(|&c| converters[c].control.mode != ControlMode::PControl);
            if anchored || members.is_empty() {
                continue;
            }
            let widest = *members
                .iter()
                .max_by(|&&a, &&b| {
                    let ra = case.converters[a].p_dc_max - case.converters[a].p_dc_min;
                    let rb = case.converters[b].p_dc_max - case.converters[b].p_dc_min;
                    ra.total_cmp(&rb).then(b.cmp(&a))
                })
                .expect("non-empty");
            let id = case.converters[widest].id;
            let u = point.converter(id).map_or(1.0, |s| s.u_dc);
            converters[widest].control.mode = ControlMode::VControl;
            converters[widest].control.u_ref = u;
            promoted.push(id);
        }
        Ok(PowerFlowSetup {
            case: case.clone(),
            slack_bus: case.ac_buses[slack].id,
            dispatch: point.generators.clone(),
            voltage_setpoints,
            converters,
            promoted,
        })
    }
}

fn dc_components(case: &NetworkCase) -> Vec<BTreeSet<usize>> {
    let n = case.dc_buses.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for br in &case.dc_branches {
        if let (Some(a), Some(b)) = (case.dc_index(br.from), case.dc_index(br.to)) {
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<BTreeSet<usize>> = Vec::new();
    let mut roots = Vec::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        match roots.iter().position(|&x| x == r) {
            Some(k) => {
                groups[k].insert(i);
            }
            None => {
                roots.push(r);
                groups.push(BTreeSet::from([i]));
            }
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowState {
    pub point: OperatingPoint,
    pub iterations: usize,
    /// Max mismatch before each Newton step and at the solution.
    pub mismatch_history: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum BusKind {
    Slack,
    Pv,
    Pq,
}

struct Indexing {
    kind: Vec<BusKind>,
    ang: Vec<Option<usize>>,
    mag: Vec<Option<usize>>,
    udc: Vec<usize>,
    pdc: Vec<usize>,
    pc: Vec<usize>,
    /// Equation rows.
    row_p: Vec<Option<usize>>,
    row_q: Vec<Option<usize>>,
    dim: usize,
}

struct Network {
    y: DMatrix<Complex64>,
    g_dc: DMatrix<f64>,
    vm_fixed: Vec<f64>,
    p_gen: Vec<f64>,
    q_gen: Vec<f64>,
    conv_ac: Vec<usize>,
    conv_dc: Vec<usize>,
}

fn build_network(setup: &PowerFlowSetup) -> Result<Network, PowerFlowError> {
    let case = &setup.case;
    let n = case.ac_buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (i, b) in case.ac_buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(b.shunt_g, b.shunt_b);
    }
    for br in &case.ac_branches {
        let (Some(f), Some(t)) = (case.ac_index(br.from), case.ac_index(br.to)) else {
            continue;
        };
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let half = Complex64::new(0.0, br.charging_b / 2.0);
        let tap = br.tap_ratio;
        y[(f, f)] += (ys + half) / (tap * tap);
        y[(t, t)] += ys + half;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
    }
    let nd = case.dc_buses.len();
    let mut g_dc = DMatrix::zeros(nd, nd);
    for br in &case.dc_branches {
        let (Some(f), Some(t)) = (case.dc_index(br.from), case.dc_index(br.to)) else {
            continue;
        };
        let g = 1.0 / br.resistance;
        g_dc[(f, f)] += g;
        g_dc[(t, t)] += g;
        g_dc[(f, t)] -= g;
        g_dc[(t, f)] -= g;
    }
    let mut vm_fixed = vec![1.0; n];
    for &(id, v) in &setup.voltage_setpoints {
        let i = case
            .ac_index(id)
            .ok_or_else(|| PowerFlowError::Setup(format!("unknown bus {id}")))?;
        vm_fixed[i] = v;
    }
    let mut p_gen = vec![0.0; n];
    let mut q_gen = vec![0.0; n];
    for g in &setup.dispatch {
        let k = case
            .generator_index(g.id)
            .ok_or_else(|| PowerFlowError::Setup(format!("unknown generator {}", g.id)))?;
        let i = case
            .ac_index(case.generators[k].bus)
            .expect("validated case");
        p_gen[i] += g.p;
        q_gen[i] += g.q;
    }
    let conv_ac = case
        .converters
        .iter()
        .map(|c| case.ac_index(c.ac_bus).expect("validated case"))
        .collect();
    let conv_dc = case
        .converters
        .iter()
        .map(|c| case.dc_index(c.dc_bus).expect("validated case"))
        .collect();
    Ok(Network {
        y,
        g_dc,
        vm_fixed,
        p_gen,
        q_gen,
        conv_ac,
        conv_dc,
    })
}

fn indexing(setup: &PowerFlowSetup) -> Result<Indexing, PowerFlowError> {
    let case = &setup.case;
    let slack = case
        .ac_index(setup.slack_bus)
        .ok_or_else(|| PowerFlowError::Setup(format!("unknown slack bus {}", setup.slack_bus)))?;
    let gen_buses: BTreeSet<u32> = case.generators.iter().map(|g| g.bus).collect();
    let kind: Vec<BusKind> = case
        .ac_buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if i == slack {
                BusKind::Slack
            } else if gen_buses.contains(&b.id) {
                BusKind::Pv
            } else {
                BusKind::Pq
            }
        })
        .collect();
    let mut next = 0;
    let mut take = |cond: bool| {
        cond.then(|| {
            next += 1;
            next - 1
        })
    };
    let ang: Vec<_> = kind.iter().map(|k| take(*k != BusKind::Slack)).collect();
    let mag: Vec<_> = kind.iter().map(|k| take(*k == BusKind::Pq)).collect();
    let udc: Vec<_> = (0..case.dc_buses.len())
        .map(|_| take(true).unwrap())
        .collect();
    let pdc: Vec<_> = (0..case.converters.len())
        .map(|_| take(true).unwrap())
        .collect();
    let pc: Vec<_> = (0..case.converters.len())
        .map(|_| take(true).unwrap())
        .collect();
    // rows mirror the unknowns: P at non-slack, Q at PQ buses, then
    // DC balance, control law and converter balance
    Ok(Indexing {
        row_p: ang.clone(),
        row_q: mag.clone(),
        kind,
        ang,
        mag,
        udc,
        pdc,
        pc,
        dim: next,
    })
}

struct Evaluated {
    v: DVector<Complex64>,
    s: DVector<Complex64>,
    f: DVector<f64>,
    jac: DMatrix<f64>,
}

fn evaluate(setup: &PowerFlowSetup, net: &Network, ix: &Indexing, z: &DVector<f64>) -> Evaluated {
    let case = &setup.case;
    let n = case.ac_buses.len();
    let nd = case.dc_buses.len();
    let nc = case.converters.len();
    let vm: Vec<f64> = (0..n)
        .map(|i| ix.mag[i].map_or(net.vm_fixed[i], |k| z[k]))
        .collect();
    let va: Vec<f64> = (0..n).map(|i| ix.ang[i].map_or(0.0, |k| z[k])).collect();
    let v = DVector::from_iterator(n, (0..n).map(|i| Complex64::from_polar(vm[i], va[i])));
    let ibus = &net.y * &v;
    let s = DVector::from_iterator(n, (0..n).map(|i| v[i] * ibus[i].conj()));

    // dS/dVa = j·diag(V)·conj(diag(I) − Y·diag(V))
    // dS/dVm = diag(V)·conj(Y·diag(V/|V|)) + conj(diag(I))·diag(V/|V|)
    let vnorm: Vec<Complex64> = (0..n).map(|i| v[i] / vm[i]).collect();
    let j = Complex64::new(0.0, 1.0);
    let ds_dva = |r: usize, c: usize| {
        let mut t = -net.y[(r, c)] * v[c];
        if r == c {
            t += ibus[r];
        }
        j * v[r] * t.conj()
    };
    let ds_dvm = |r: usize, c: usize| {
        let mut t = v[r] * (net.y[(r, c)] * vnorm[c]).conj();
        if r == c {
            t += ibus[r].conj() * vnorm[r];
        }
        t
    };

    let dim = ix.dim;
    let mut f = DVector::zeros(dim);
    let mut jac = DMatrix::zeros(dim, dim);

    let mut pc_at = vec![0.0; n];
    let mut qc_at = vec![0.0; n];
    for c in 0..nc {
        pc_at[net.conv_ac[c]] += z[ix.pc[c]];
        qc_at[net.conv_ac[c]] += setup.converters[c].q_c;
    }
    for r in 0..n {
        let bus = &case.ac_buses[r];
        if let Some(row) = ix.row_p[r] {
            f[row] = s[r].re + bus.load_p + pc_at[r] - net.p_gen[r];
        }
        if let Some(row) = ix.row_q[r] {
            f[row] = s[r].im + bus.load_q + qc_at[r] - net.q_gen[r];
        }
        for c in 0..n {
            if net.y[(r, c)] == Complex64::new(0.0, 0.0) && r != c {
                continue;
            }
            let a = ix.ang[c].map(|k| (k, ds_dva(r, c)));
            let m = ix.mag[c].map(|k| (k, ds_dvm(r, c)));
            for (col, d) in a.into_iter().chain(m) {
                if let Some(row) = ix.row_p[r] {
                    jac[(row, col)] += d.re;
                }
                if let Some(row) = ix.row_q[r] {
                    jac[(row, col)] += d.im;
                }
            }
        }
    }
    for c in 0..nc {
        if let Some(row) = ix.row_p[net.conv_ac[c]] {
            jac[(row, ix.pc[c])] += 1.0;
        }
    }

    let u: Vec<f64> = ix.udc.iter().map(|&k| z[k]).collect();
    let gu = &net.g_dc * DVector::from_column_slice(&u);
    let dc_row = |d: usize| ix.udc[d];
    for d in 0..nd {
        let row = dc_row(d);
        f[row] = 2.0 * u[d] * gu[d];
        jac[(row, ix.udc[d])] += 2.0 * gu[d];
        for k in 0..nd {
            let g = net.g_dc[(d, k)];
            if g != 0.0 {
                jac[(row, ix.udc[k])] += 2.0 * u[d] * g;
            }
        }
    }
    for c in 0..nc {
        let row = dc_row(net.conv_dc[c]);
        f[row] -= z[ix.pdc[c]];
        jac[(row, ix.pdc[c])] -= 1.0;
    }

    for (c, pinned) in setup.converters.iter().enumerate() {
        let station = &case.converters[c];
        let law_row = ix.pdc[c];
        let bal_row = ix.pc[c];
        let p_dc = z[ix.pdc[c]];
        let ud = ix.udc[net.conv_dc[c]];
        let ctl = &pinned.control;
        match ctl.mode {
            ControlMode::PControl => {
                f[law_row] = p_dc - ctl.p_ref;
                jac[(law_row, ix.pdc[c])] = 1.0;
            }
            ControlMode::VControl => {
                f[law_row] = z[ud] - ctl.u_ref;
                jac[(law_row, ud)] = 1.0;
            }
            ControlMode::Droop => {
                f[law_row] = p_dc - ctl.p_ref + (z[ud] - ctl.u_ref) / ctl.k_droop;
                jac[(law_row, ix.pdc[c])] = 1.0;
                jac[(law_row, ud)] = 1.0 / ctl.k_droop;
            }
        }
        let ac = net.conv_ac[c];
        let p_c = z[ix.pc[c]];
        let q_c = pinned.q_c;
        let s_abs = p_c.hypot(q_c);
        let i_c = s_abs / vm[ac];
        let t = if p_dc >= 0.0 {
            station.losses.rectifier
        } else {
            station.losses.inverter
        };
        let loss = t.a + t.b * i_c + t.c * i_c * i_c;
        let dloss_di = t.b + 2.0 * t.c * i_c;
        f[bal_row] = p_c - p_dc - loss;
        jac[(bal_row, ix.pdc[c])] = -1.0;
        let di_dpc = if s_abs > 0.0 {
            p_c / (s_abs * vm[ac])
        } else {
            0.0
        };
        jac[(bal_row, ix.pc[c])] = 1.0 - dloss_di * di_dpc;
        if let Some(k) = ix.mag[ac] {
            jac[(bal_row, k)] += dloss_di * i_c / vm[ac];
        }
    }
    Evaluated { v, s, f, jac }
}

fn locate_singularity(setup: &PowerFlowSetup, ix: &Indexing, jac: &DMatrix<f64>) -> String {
    let case = &setup.case;
    let zero_col = (0..ix.dim).find(|&c| jac.column(c).iter().all(|v| *v == 0.0));
    let zero_row = (0..ix.dim).find(|&r| jac.row(r).iter().all(|v| *v == 0.0));
    if let Some(k) = zero_col.or(zero_row) {
        for i in 0..case.ac_buses.len() {
            if ix.ang[i] == Some(k) || ix.mag[i] == Some(k) {
                return format!("AC bus {}", case.ac_buses[i].id);
            }
        }
        for (d, &slot) in ix.udc.iter().enumerate() {
            if slot == k {
                return format!("DC bus {}", case.dc_buses[d].id);
            }
        }
        for c in 0..case.converters.len() {
            if ix.pdc[c] == k || ix.pc[c] == k {
                return format!("converter {}", case.converters[c].id);
            }
        }
    }
    "an underdetermined part of the network".into()
}

/// Solves the pinned power flow from a flat start.
pub fn newton_powerflow(setup: &PowerFlowSetup) -> Result<PowerFlowState, PowerFlowError> {
    let case = &setup.case;
    if setup.converters.len() != case.converters.len() {
        return Err(PowerFlowError::Setup(
            "one pinned control per converter required".into(),
        ));
    }
    for pc in &setup.converters {
        if pc.control.mode == ControlMode::Droop && !(pc.control.k_droop > 0.0) {
            return Err(PowerFlowError::Setup(format!(
                "converter {}: droop gain must be positive",
                pc.id
            )));
        }
    }
    let net = build_network(setup)?;
    let ix = indexing(setup)?;
    let mut z = DVector::zeros(ix.dim);
    for i in 0..case.ac_buses.len() {
        if let Some(k) = ix.mag[i] {
            z[k] = 1.0;
        }
    }
    for (d, &k) in ix.udc.iter().enumerate() {
        z[k] = case.dc_buses[d].v_nominal;
    }
    for (c, pc) in setup.converters.iter().enumerate() {
        if pc.control.mode != ControlMode::VControl {
            z[ix.pdc[c]] = pc.control.p_ref;
            z[ix.pc[c]] = pc.control.p_ref;
        }
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    let ev = loop {
        let ev = evaluate(setup, &net, &ix, &z);
        let mismatch = ev.f.amax();
        history.push(mismatch);
        debug!("power flow iter {iterations}: mismatch {mismatch:.3e}");
        if mismatch <= TOLERANCE {
            break ev;
        }
        if iterations >= MAX_ITERATIONS || !mismatch.is_finite() {
            return Err(PowerFlowError::Diverged {
                iterations,
                mismatch,
            });
        }
        let lu = ev.jac.clone().lu();
        let step = lu
            .solve(&(-&ev.f))
            .filter(|s| s.iter().all(|v| v.is_finite()));
        let Some(step) = step else {
            return Err(PowerFlowError::Singular {
                location: locate_singularity(setup, &ix, &ev.jac),
            });
        };
        z += step;
        iterations += 1;
    };

    Ok(PowerFlowState {
        point: extract_point(setup, &net, &ix, &z, &ev),
        iterations,
        mismatch_history: history,
    })
}

fn extract_point(
    setup: &PowerFlowSetup,
    net: &Network,
    ix: &Indexing,
    z: &DVector<f64>,
    ev: &Evaluated,
) -> OperatingPoint {
    let case = &setup.case;
    let n = case.ac_buses.len();
    // generation each bus must supply
    let mut need_p = vec![0.0; n];
    let mut need_q = vec![0.0; n];
    for i in 0..n {
        need_p[i] = ev.s[i].re + case.ac_buses[i].load_p;
        need_q[i] = ev.s[i].im + case.ac_buses[i].load_q;
    }
    for (c, pc) in setup.converters.iter().enumerate() {
        need_p[net.conv_ac[c]] += z[ix.pc[c]];
        need_q[net.conv_ac[c]] += pc.q_c;
    }
    let mut generators: Vec<GeneratorState> = setup.dispatch.clone();
    let mut adjusted_p = vec![false; n];
    let mut adjusted_q = vec![false; n];
    for g in generators.iter_mut() {
        let k = case.generator_index(g.id).expect("checked in setup");
        let i = case
            .ac_index(case.generators[k].bus)
            .expect("validated case");
        // the first generator at a bus absorbs the recomputed remainder
        if ix.kind[i] == BusKind::Slack && !adjusted_p[i] {
            g.p += need_p[i] - net.p_gen[i];
            adjusted_p[i] = true;
        }
        if ix.kind[i] != BusKind::Pq && !adjusted_q[i] {
            g.q += need_q[i] - net.q_gen[i];
            adjusted_q[i] = true;
        }
    }
    OperatingPoint {
        ac_buses: case
            .ac_buses
            .iter()
            .enumerate()
            .map(|(i, b)| AcBusState {
                id: b.id,
                vm: ev.v[i].norm(),
                va: ev.v[i].arg(),
            })
            .collect(),
        generators,
        dc_buses: case
            .dc_buses
            .iter()
            .enumerate()
            .map(|(d, b)| DcBusState {
                id: b.id,
                u_dc: z[ix.udc[d]],
            })
            .collect(),
        converters: case
            .converters
            .iter()
            .enumerate()
            .map(|(c, station)| {
                let pc = &setup.converters[c];
                let ac = net.conv_ac[c];
                let p_c = z[ix.pc[c]];
                let p_dc = z[ix.pdc[c]];
                let i_c = p_c.hypot(pc.q_c) / ev.v[ac].norm();
                ConverterState {
                    id: station.id,
                    p_dc,
                    p_c,
                    q_c: pc.q_c,
                    i_c,
                    p_loss: p_c - p_dc,
                    u_dc: z[ix.udc[net.conv_dc[c]]],
                    k_droop: (pc.control.mode == ControlMode::Droop).then_some(pc.control.k_droop),
                }
            })
            .collect(),
    }
}

/// Outcome of checking one operating point by both evaluation paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Max residual of the OPF equations at the point.
    pub equation_residual: f64,
    /// Final mismatch of the pinned power flow.
    pub powerflow_mismatch: Option<f64>,
    pub powerflow_iterations: Option<usize>,
    /// Largest per-variable difference between the point and the power flow.
    pub max_discrepancy: Option<f64>,
    pub worst_variable: Option<String>,
    pub promoted_converters: Vec<u32>,
    pub error: Option<String>,
    pub passed: bool,
}

/// OPF control laws equivalent to a control snapshot.
pub fn laws_from_controls(case: &NetworkCase, controls: &[ControlSnapshot]) -> Vec<ConverterLaw> {
    case.converters
        .iter()
        .map(|conv| {
            let ctl = controls
                .iter()
                .find(|s| s.converter == conv.id)
                .map_or(conv.control, |s| s.control);
            match ctl.mode {
                ControlMode::PControl => ConverterLaw::PControl { p_ref: ctl.p_ref },
                ControlMode::VControl => ConverterLaw::VControl { u_ref: ctl.u_ref },
                ControlMode::Droop => ConverterLaw::Droop {
                    p_ref: ctl.p_ref,
                    u_ref: ctl.u_ref,
                    gain: DroopGain::Fixed(ctl.k_droop),
                },
            }
        })
        .collect()
}

/// Max residual of the OPF equations at `point` under `controls`.
pub fn equation_residual(
    case: &NetworkCase,
    point: &OperatingPoint,
    controls: &[ControlSnapshot],
) -> Result<f64, String> {
    let model = OpfModel::new(case.clone(), laws_from_controls(case, controls))
        .map_err(|e| e.to_string())?;
    let mut x = vec![0.0; model.layout.len()];
    point.fill(&model, &mut x);
    Ok(model.residuals(&x).iter().fold(0.0, |a, r| a.max(r.abs())))
}

/// Largest difference between two operating points of the same network.
pub fn discrepancy(a: &OperatingPoint, b: &OperatingPoint) -> (f64, String) {
    let mut worst = (0.0f64, String::from("none"));
    let mut check = |x: f64, y: f64, name: String| {
        let d = (x - y).abs();
        if d > worst.0 || d.is_nan() {
            worst = (d, name);
        }
    };
    for (p, q) in a.ac_buses.iter().zip(&b.ac_buses) {
        check(p.vm, q.vm, format!("U at bus {}", p.id));
        check(p.va, q.va, format!("delta at bus {}", p.id));
    }
    for (p, q) in a.generators.iter().zip(&b.generators) {
        check(p.p, q.p, format!("P_G of generator {}", p.id));
        check(p.q, q.q, format!("Q_G of generator {}", p.id));
    }
    for (p, q) in a.dc_buses.iter().zip(&b.dc_buses) {
        check(p.u_dc, q.u_dc, format!("U_dc at DC bus {}", p.id));
    }
    for (p, q) in a.converters.iter().zip(&b.converters) {
        check(p.p_dc, q.p_dc, format!("P_dc of converter {}", p.id));
        check(p.p_c, q.p_c, format!("P_c of converter {}", p.id));
        check(p.i_c, q.i_c, format!("I_c of converter {}", p.id));
        check(p.p_loss, q.p_loss, format!("P_loss of converter {}", p.id));
    }
    worst
}

/// Re-evaluates the OPF residuals at `point` and re-solves the network with
/// controls pinned at `point`.
pub fn verify_solution(
    case: &NetworkCase,
    point: &OperatingPoint,
    controls: &[ControlSnapshot],
) -> Verdict {
    let mut verdict = Verdict {
        equation_residual: f64::INFINITY,
        powerflow_mismatch: None,
        powerflow_iterations: None,
        max_discrepancy: None,
        worst_variable: None,
        promoted_converters: Vec::new(),
        error: None,
        passed: false,
    };
    match equation_residual(case, point, controls) {
        Ok(r) => verdict.equation_residual = r,
        Err(e) => {
            verdict.error = Some(e);
            return verdict;
        }
    }
    let result = PowerFlowSetup::pinned(case, point, controls).and_then(|setup| {
        let promoted = setup.promoted.clone();
        newton_powerflow(&setup).map(|s| (s, promoted))
    });
    match result {
        Ok((state, promoted)) => {
            let (d, name) = discrepancy(point, &state.point);
            verdict.powerflow_mismatch = state.mismatch_history.last().copied();
            verdict.powerflow_iterations = Some(state.iterations);
            verdict.max_discrepancy = Some(d);
            verdict.worst_variable = Some(name);
            verdict.promoted_converters = promoted;
            verdict.passed = verdict.equation_residual <= AGREEMENT && d <= AGREEMENT;
        }
        Err(e) => verdict.error = Some(e.to_string()),
    }
    verdict
}
