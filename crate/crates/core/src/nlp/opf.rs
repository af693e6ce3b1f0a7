use serde::{Deserialize, Serialize};

use super::{fd_hessian, NlpProblem};
use crate::equations::{ConverterLaw, DroopGain, LossDirection, OpfModel, ResidualKind};
use crate::sparse::Triplets;

/// Lower bound on converter current. At zero current the PQ-current coupling
/// has a vanishing gradient while the linear loss term keeps a kink, so an
/// idle converter is not a KKT point. Any point above the floor satisfies the
/// exact equations (the converter carries a little reactive power) and costs
/// at most `b·MIN_CURRENT` in extra loss.
pub const MIN_CURRENT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// Quadratic generation cost.
    Cost,
    /// Squared DC voltage deviation from nominal.
    Vdev,
}

/// An [`OpfModel`] with an objective, variable bounds and a starting point.
#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub model: OpfModel,
    pub objective: ObjectiveKind,
    /// Warm start; the flat start is used when `None`.
    pub start: Option<Vec<f64>>,
    /// Optional `weight·Σ(x − anchor)²` over the AC-side slots (voltages,
    /// angles, generator outputs, converter reactive power) and droop gains.
    /// The voltage deviation objective can leave all of these without
    /// curvature.
    pub proximal: Option<Proximal>,
}

#[derive(Debug, Clone)]
pub struct Proximal {
    pub anchor: Vec<f64>,
    pub weight: f64,
}

impl OpfProblem {
    pub fn new(model: OpfModel, objective: ObjectiveKind) -> Self {
        OpfProblem {
            model,
            objective,
            start: None,
            proximal: None,
        }
    }

    pub fn with_proximal(mut self, anchor: Vec<f64>, weight: f64) -> Self {
        self.proximal = Some(Proximal { anchor, weight });
        self
    }

    /// Slots covered by the proximal term.
    pub fn proximal_cover(&self) -> Vec<usize> {
        let l = &self.model.layout;
        let mut slots: Vec<usize> = l.vm.clone();
        slots.extend(l.va.iter().flatten());
        slots.extend(&l.pg);
        slots.extend(&l.qg);
        slots.extend(l.conv.iter().map(|c| c.q_c));
        slots.extend(l.conv.iter().filter_map(|c| c.k_droop));
        slots
    }

    /// `(row, converter)` of every droop residual.
    fn droop_rows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.model
            .residuals
            .entries
            .iter()
            .enumerate()
            .filter(|(_, r)| r.kind == ResidualKind::DroopLaw)
            .map(|(row, r)| (row, r.element))
    }

    /// Droop rows are multiplied by their gain: `k·(P_dc − p_ref) + (U_dc − u_ref)`
    /// has the same zero set as the `1/k` form for `k > 0` but no `1/k`
    /// curvature, which otherwise dominates near small gains.
    fn scaled_residuals(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.model.residuals(x);
        for (row, c) in self.droop_rows() {
            r[row] *= self.model.droop_gain(x, c).expect("droop law");
        }
        r
    }

    fn scaled_jacobian_with(&self, x: &[f64], dirs: &[LossDirection]) -> Triplets {
        let m = &self.model;
        let mut jac = m.residual_jacobian_with(x, dirs);
        let mut gain = vec![None; jac.nrows];
        for (row, c) in self.droop_rows() {
            gain[row] = Some((c, m.droop_gain(x, c).expect("droop law")));
        }
        for (row, _, v) in &mut jac.entries {
            if let Some((_, k)) = gain[*row] {
                *v *= k;
            }
        }
        let base = m.residuals_with(x, dirs);
        for (row, g) in gain.iter().enumerate() {
            if let Some((c, _)) = g {
                if let Some(ks) = m.layout.conv[*c].k_droop {
                    jac.push(row, ks, base[row]);
                }
            }
        }
        jac
    }

    fn proximal_slots(&self) -> Option<(&Proximal, Vec<usize>)> {
        self.proximal
            .as_ref()
            .filter(|p| p.anchor.len() == self.model.layout.len())
            .map(|p| (p, self.proximal_cover()))
    }

    pub fn with_start(mut self, x: Vec<f64>) -> Self {
        self.start = Some(x);
        self
    }

    /// `U = 1`, `δ = 0`, generators mid-range, converters idle.
    pub fn flat_start(&self) -> Vec<f64> {
        let m = &self.model;
        let l = &m.layout;
        let mut x = vec![0.0; l.len()];
        for &s in &l.vm {
            x[s] = 1.0;
        }
        for (g, gen) in m.case.generators.iter().enumerate() {
            x[l.pg[g]] = 0.5 * (gen.p_min + gen.p_max);
            x[l.qg[g]] = 0.5 * (gen.q_min + gen.q_max);
        }
        for (i, bus) in m.case.dc_buses.iter().enumerate() {
            x[l.vdc[i]] = bus.v_nominal;
        }
        for (c, conv) in m.case.converters.iter().enumerate() {
            let s = &l.conv[c];
            // on the PQ circle at P_c = 0, where the transfer can move
            // either way to first order
            let i0 = 0.1 * conv.i_max;
            let l = conv.losses.rectifier;
            x[s.i_c] = i0;
            x[s.q_c] = i0;
            x[s.p_loss] = l.a + l.b * i0 + l.c * i0 * i0;
            x[s.p_dc] = -x[s.p_loss];
            if let Some(ks) = s.k_droop {
                x[ks] = (conv.control.k_min * conv.control.k_max).sqrt();
            }
        }
        x
    }
}

impl NlpProblem for OpfProblem {
    fn num_variables(&self) -> usize {
        self.model.layout.len()
    }

    fn num_constraints(&self) -> usize {
        self.model.residuals.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let m = &self.model;
        let l = &m.layout;
        let n = l.len();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for (i, bus) in m.case.ac_buses.iter().enumerate() {
            lo[l.vm[i]] = bus.v_min;
            hi[l.vm[i]] = bus.v_max;
            if let Some(s) = l.va[i] {
                lo[s] = bus.angle_min;
                hi[s] = bus.angle_max;
            }
        }
        for (g, gen) in m.case.generators.iter().enumerate() {
            lo[l.pg[g]] = gen.p_min;
            hi[l.pg[g]] = gen.p_max;
            lo[l.qg[g]] = gen.q_min;
            hi[l.qg[g]] = gen.q_max;
        }
        for (i, bus) in m.case.dc_buses.iter().enumerate() {
            lo[l.vdc[i]] = bus.v_min;
            hi[l.vdc[i]] = bus.v_max;
        }
        for (c, conv) in m.case.converters.iter().enumerate() {
            let s = &l.conv[c];
            lo[s.p_dc] = conv.p_dc_min;
            hi[s.p_dc] = conv.p_dc_max;
            lo[s.i_c] = MIN_CURRENT.min(conv.i_max);
            hi[s.i_c] = conv.i_max;
            if let (
                Some(ks),
                ConverterLaw::Droop {
                    gain: DroopGain::Variable { min, max },
                    ..
                },
            ) = (s.k_droop, m.laws[c])
            {
                lo[ks] = min;
                hi[ks] = max;
            }
        }
        (lo, hi)
    }

    fn initial_point(&self) -> Vec<f64> {
        match &self.start {
            Some(x) if x.len() == self.num_variables() => x.clone(),
            _ => self.flat_start(),
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let base = match self.objective {
            ObjectiveKind::Cost => self.model.objective_cost(x),
            ObjectiveKind::Vdev => self.model.objective_vdev(x),
        };
        match self.proximal_slots() {
            Some((p, slots)) => {
                base + p.weight
                    * slots
                        .iter()
                        .map(|&s| (x[s] - p.anchor[s]).powi(2))
                        .sum::<f64>()
            }
            None => base,
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let m = &self.model;
        let mut g = vec![0.0; x.len()];
        match self.objective {
            ObjectiveKind::Cost => {
                for (gen, &s) in m.case.generators.iter().zip(&m.layout.pg) {
                    g[s] = 2.0 * gen.cost_alpha * x[s] + gen.cost_beta;
                }
            }
            ObjectiveKind::Vdev => {
                for (bus, &s) in m.case.dc_buses.iter().zip(&m.layout.vdc) {
                    g[s] = 2.0 * (x[s] - bus.v_nominal);
                }
            }
        }
        if let Some((p, slots)) = self.proximal_slots() {
            for s in slots {
                g[s] += 2.0 * p.weight * (x[s] - p.anchor[s]);
            }
        }
        g
    }

    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        self.scaled_residuals(x)
    }

    fn jacobian(&self, x: &[f64]) -> Triplets {
        self.scaled_jacobian_with(x, &self.model.loss_directions(x))
    }

    /// Analytic objective curvature plus differenced constraint curvature,
    /// with converter loss directions frozen at `x`.
    fn lagrangian_hessian(&self, x: &[f64], lambda: &[f64]) -> Triplets {
        let m = &self.model;
        let dirs = m.loss_directions(x);
        let mut h = fd_hessian(x, |p| {
            self.scaled_jacobian_with(p, &dirs)
                .tr_mul_vec(lambda)
                .into_iter()
                .map(|v| -v)
                .collect()
        });
        match self.objective {
            ObjectiveKind::Cost => {
                for (gen, &s) in m.case.generators.iter().zip(&m.layout.pg) {
                    h.push(s, s, 2.0 * gen.cost_alpha);
                }
            }
            ObjectiveKind::Vdev => {
                for &s in &m.layout.vdc {
                    h.push(s, s, 2.0);
                }
            }
        }
        if let Some((p, slots)) = self.proximal_slots() {
            for s in slots {
                h.push(s, s, 2.0 * p.weight);
            }
        }
        h
    }

    fn constraint_name(&self, i: usize) -> String {
        self.model.describe_residual(i)
    }

    fn variable_name(&self, j: usize) -> String {
        self.model.layout.describe(j)
    }
}
