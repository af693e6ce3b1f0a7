use crate::case::NetworkCase;

/// Bus admittance matrix stored row-wise as `(column, G, B)` entries,
/// diagonal included.
#[derive(Debug, Clone, PartialEq)]
pub struct Ybus {
    rows: Vec<Vec<(usize, f64, f64)>>,
}

impl Ybus {
    /// Standard π-model assembly with off-nominal taps on the from side.
    pub fn build(case: &NetworkCase) -> Self {
        let n = case.ac_buses.len();
        let mut dense_rows: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
        let mut add = |i: usize, j: usize, g: f64, b: f64| {
            if let Some(e) = dense_rows[i].iter_mut().find(|e| e.0 == j) {
                e.1 += g;
                e.2 += b;
            } else {
                dense_rows[i].push((j, g, b));
            }
        };
        for (i, bus) in case.ac_buses.iter().enumerate() {
            add(i, i, bus.shunt_g, bus.shunt_b);
        }
        for br in &case.ac_branches {
            let (Some(f), Some(t)) = (case.ac_index(br.from), case.ac_index(br.to)) else {
                continue;
            };
            let (gs, bs) = (br.series_g(), br.series_b());
            let tap = br.tap_ratio;
            add(
                f,
                f,
                gs / (tap * tap),
                (bs + br.charging_b / 2.0) / (tap * tap),
            );
            add(t, t, gs, bs + br.charging_b / 2.0);
            add(f, t, -gs / tap, -bs / tap);
            add(t, f, -gs / tap, -bs / tap);
        }
        for row in &mut dense_rows {
            row.sort_by_key(|e| e.0);
        }
        Ybus { rows: dense_rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64, f64)] {
        &self.rows[i]
    }

    pub fn diagonal(&self, i: usize) -> (f64, f64) {
        self.rows[i]
            .iter()
            .find(|e| e.0 == i)
            .map_or((0.0, 0.0), |e| (e.1, e.2))
    }
}

/// DC network conductances between distinct buses, parallel branches summed.
#[derive(Debug, Clone, PartialEq)]
pub struct DcNetwork {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl DcNetwork {
    pub fn build(case: &NetworkCase) -> Self {
        let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); case.dc_buses.len()];
        for br in &case.dc_branches {
            let (Some(f), Some(t)) = (case.dc_index(br.from), case.dc_index(br.to)) else {
                continue;
            };
            let y = br.admittance();
            for (a, b) in [(f, t), (t, f)] {
                match neighbors[a].iter_mut().find(|e| e.0 == b) {
                    Some(e) => e.1 += y,
                    None => neighbors[a].push((b, y)),
                }
            }
        }
        for row in &mut neighbors {
            row.sort_by_key(|e| e.0);
        }
        DcNetwork { neighbors }
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Current injected into the network at bus `i`.
    pub fn current(&self, v: &[f64], i: usize) -> f64 {
        self.neighbors[i]
            .iter()
            .map(|&(j, y)| y * (v[i] - v[j]))
            .sum()
    }
}
