use serde::{Deserialize, Serialize};

use super::OpfModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcBusState {
    pub id: u32,
    pub vm: f64,
    /// Radians, zero at the reference bus.
    pub va: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub id: u32,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcBusState {
    pub id: u32,
    pub u_dc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterState {
    pub id: u32,
    pub p_dc: f64,
    pub p_c: f64,
    pub q_c: f64,
    pub i_c: f64,
    pub p_loss: f64,
    /// DC voltage at the converter's DC bus.
    pub u_dc: f64,
    pub k_droop: Option<f64>,
}

/// Operating point keyed by element ids, independent of any variable layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub ac_buses: Vec<AcBusState>,
    pub generators: Vec<GeneratorState>,
    pub dc_buses: Vec<DcBusState>,
    pub converters: Vec<ConverterState>,
}

impl OperatingPoint {
    pub fn extract(model: &OpfModel, x: &[f64]) -> Self {
        let l = &model.layout;
        let case = &model.case;
        OperatingPoint {
            ac_buses: case
                .ac_buses
                .iter()
                .enumerate()
                .map(|(i, b)| AcBusState {
                    id: b.id,
                    vm: x[l.vm[i]],
                    va: l.angle(x, i),
                })
                .collect(),
            generators: case
                .generators
                .iter()
                .enumerate()
                .map(|(g, gen)| GeneratorState {
                    id: gen.id,
                    p: x[l.pg[g]],
                    q: x[l.qg[g]],
                })
                .collect(),
            dc_buses: case
                .dc_buses
                .iter()
                .enumerate()
                .map(|(i, b)| DcBusState {
                    id: b.id,
                    u_dc: x[l.vdc[i]],
                })
                .collect(),
            converters: case
                .converters
                .iter()
                .enumerate()
                .map(|(c, conv)| {
                    let s = &l.conv[c];
                    ConverterState {
                        id: conv.id,
                        p_dc: x[s.p_dc],
                        p_c: x[s.p_c],
                        q_c: x[s.q_c],
                        i_c: x[s.i_c],
                        p_loss: x[s.p_loss],
                        u_dc: x[l.vdc[model.dc_bus_of(c)]],
                        k_droop: model.droop_gain(x, c),
                    }
                })
                .collect(),
        }
    }

    /// Writes every element present in both `self` and `model` into `x`;
    /// other slots keep their value. Angles are re-referenced to the model's
    /// reference bus.
    pub fn fill(&self, model: &OpfModel, x: &mut [f64]) {
        let l = &model.layout;
        let case = &model.case;
        let shift = l
            .reference_bus
            .and_then(|r| self.ac_buses.iter().find(|b| b.id == case.ac_buses[r].id))
            .map_or(0.0, |b| b.va);
        for b in &self.ac_buses {
            if let Some(i) = case.ac_index(b.id) {
                x[l.vm[i]] = b.vm;
                if let Some(s) = l.va[i] {
                    x[s] = b.va - shift;
                }
            }
        }
        for g in &self.generators {
            if let Some(k) = case.generator_index(g.id) {
                x[l.pg[k]] = g.p;
                x[l.qg[k]] = g.q;
            }
        }
        for b in &self.dc_buses {
            if let Some(i) = case.dc_index(b.id) {
                x[l.vdc[i]] = b.u_dc;
            }
        }
        for c in &self.converters {
            if let Some(k) = case.converter_index(c.id) {
                let s = &l.conv[k];
                x[s.p_dc] = c.p_dc;
                x[s.p_c] = c.p_c;
                x[s.q_c] = c.q_c;
                x[s.i_c] = c.i_c;
                x[s.p_loss] = c.p_loss;
                if let (Some(ks), Some(k)) = (s.k_droop, c.k_droop) {
                    x[ks] = k;
                }
            }
        }
    }

    pub fn converter(&self, id: u32) -> Option<&ConverterState> {
        self.converters.iter().find(|c| c.id == id)
    }
}
