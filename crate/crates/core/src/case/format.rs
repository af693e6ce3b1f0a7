//! Text case format (see `docs/FORMAT.md`).
//!
//! Columns follow Matpower/MatACDC naming. Powers are MW/MVAr, angles are
//! degrees, impedances and voltages are per-unit. Cost coefficients are per
//! MW² / MW as in Matpower `gencost` and are rescaled to per-unit power here.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    AcBranch, AcBus, BusType, CaseError, ControlMode, ConverterControl, ConverterStation, DcBranch,
    DcBus, Generator, LossCoefficients, LossTriple, NetworkCase, Outages, DEFAULT_DC_V_MAX,
    DEFAULT_DC_V_MIN, DEFAULT_K_MAX, DEFAULT_K_MIN,
};

pub const FORMAT_HEADER: &str = "mtdc-case 1";

const DEFAULT_ANGLE_LIMIT_DEG: f64 = 90.0;

const BUS_COLUMNS: &[&str] = &[
    "bus_i", "type", "Pd", "Qd", "Gs", "Bs", "Vm", "Va", "Vmax", "Vmin", "angmin", "angmax",
];
const GEN_COLUMNS: &[&str] = &[
    "id", "bus", "Pmax", "Pmin", "Qmax", "Qmin", "c2", "c1", "c0",
];
const BRANCH_COLUMNS: &[&str] = &["fbus", "tbus", "r", "x", "b", "ratio"];
const BUSDC_COLUMNS: &[&str] = &["busdc_i", "Vdc", "Vdcmax", "Vdcmin"];
const BRANCHDC_COLUMNS: &[&str] = &["fbusdc", "tbusdc", "r"];
const CONVDC_COLUMNS: &[&str] = &[
    "id",
    "busac_i",
    "busdc_i",
    "Pdcmin",
    "Pdcmax",
    "Imax",
    "LossA_rec",
    "LossB_rec",
    "LossC_rec",
    "LossA_inv",
    "LossB_inv",
    "LossC_inv",
    "mode",
    "Pdcset",
    "Vdcset",
    "kdroop",
    "kmin",
    "kmax",
];

pub fn parse_case(path: impl AsRef<Path>) -> Result<NetworkCase, CaseError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case_str(&text)
}

/// Row of whitespace-separated fields tagged with its source line.
struct Row<'a> {
    line: usize,
    fields: Vec<&'a str>,
    columns: &'static [&'static str],
}

impl Row<'_> {
    fn require(&self, min: usize) -> Result<(), CaseError> {
        if self.fields.len() < min || self.fields.len() > self.columns.len() {
            return Err(CaseError::Parse {
                line: self.line,
                field: self.columns[self.fields.len().min(self.columns.len() - 1)].to_string(),
                message: format!(
                    "expected {}..{} fields, found {}",
                    min,
                    self.columns.len(),
                    self.fields.len()
                ),
            });
        }
        Ok(())
    }

    fn num(&self, col: usize) -> Result<f64, CaseError> {
        let raw = self.fields[col];
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| CaseError::Parse {
                line: self.line,
                field: self.columns[col].to_string(),
                message: format!("invalid number '{raw}'"),
            })
    }

    fn num_or(&self, col: usize, default: f64) -> Result<f64, CaseError> {
        if col < self.fields.len() {
            self.num(col)
        } else {
            Ok(default)
        }
    }

    fn id(&self, col: usize) -> Result<u32, CaseError> {
        let raw = self.fields[col];
        raw.parse::<u32>().map_err(|_| CaseError::Parse {
            line: self.line,
            field: self.columns[col].to_string(),
            message: format!("invalid integer '{raw}'"),
        })
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Bus,
    Gen,
    Branch,
    BusDc,
    BranchDc,
    ConvDc,
    Outages,
}

impl Section {
    fn from_keyword(word: &str) -> Option<Self> {
        Some(match word {
            "bus" => Section::Bus,
            "gen" => Section::Gen,
            "branch" => Section::Branch,
            "busdc" => Section::BusDc,
            "branchdc" => Section::BranchDc,
            "convdc" => Section::ConvDc,
            "outages" => Section::Outages,
            _ => return None,
        })
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            Section::Bus => BUS_COLUMNS,
            Section::Gen => GEN_COLUMNS,
            Section::Branch => BRANCH_COLUMNS,
            Section::BusDc => BUSDC_COLUMNS,
            Section::BranchDc => BRANCHDC_COLUMNS,
            Section::ConvDc => CONVDC_COLUMNS,
            Section::Outages => &["kind", "id"],
        }
    }
}

pub fn parse_case_str(text: &str) -> Result<NetworkCase, CaseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    match lines.next() {
        Some((_, l)) if l == FORMAT_HEADER => {}
        Some((n, l)) => {
            return Err(CaseError::Parse {
                line: n,
                field: "header".into(),
                message: format!("expected '{FORMAT_HEADER}', found '{l}'"),
            })
        }
        None => {
            return Err(CaseError::Parse {
                line: 1,
                field: "header".into(),
                message: "empty file".into(),
            })
        }
    }

    let mut name = String::new();
    let mut base_mva = None;
    let mut base_kv_dc = None;
    let mut case = NetworkCase {
        name: String::new(),
        s_nominal: 0.0,
        v_dc_nominal: 0.0,
        ac_buses: vec![],
        generators: vec![],
        ac_branches: vec![],
        dc_buses: vec![],
        dc_branches: vec![],
        converters: vec![],
        outages: Outages::default(),
    };
    let mut section: Option<Section> = None;
    let mut pending: Vec<(Section, Row)> = Vec::new();

    for (n, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match section {
            None => match fields[0] {
                "name" => name = fields[1..].join(" "),
                "baseMVA" | "baseKVdc" => {
                    let value = fields
                        .get(1)
                        .and_then(|v| v.parse::<f64>().ok())
                        .filter(|v| *v > 0.0)
                        .ok_or_else(|| CaseError::Parse {
                            line: n,
                            field: fields[0].to_string(),
                            message: "expected a positive number".into(),
                        })?;
                    if fields[0] == "baseMVA" {
                        base_mva = Some(value);
                    } else {
                        base_kv_dc = Some(value);
                    }
                }
                word => match Section::from_keyword(word) {
                    Some(s) if fields.len() == 1 => section = Some(s),
                    _ => {
                        return Err(CaseError::Parse {
                            line: n,
                            field: word.to_string(),
                            message: "unknown keyword".into(),
                        })
                    }
                },
            },
            Some(s) => {
                if fields == ["end"] {
                    section = None;
                } else {
                    pending.push((
                        s,
                        Row {
                            line: n,
                            fields,
                            columns: s.columns(),
                        },
                    ));
                }
            }
        }
    }
    if section.is_some() {
        return Err(CaseError::Parse {
            line: text.lines().count(),
            field: "end".into(),
            message: "section not terminated".into(),
        });
    }

    let s = base_mva.ok_or_else(|| CaseError::Parse {
        line: 1,
        field: "baseMVA".into(),
        message: "missing".into(),
    })?;
    case.name = name;
    case.s_nominal = s;
    case.v_dc_nominal = base_kv_dc.unwrap_or(0.0);

    for (sec, row) in &pending {
        match sec {
            Section::Bus => {
                row.require(10)?;
                let code = row.id(1)?;
                let bus_type = BusType::from_code(code as u8).ok_or_else(|| CaseError::Parse {
                    line: row.line,
                    field: "type".into(),
                    message: format!("unknown bus type {code}"),
                })?;
                case.ac_buses.push(AcBus {
                    id: row.id(0)?,
                    bus_type,
                    load_p: row.num(2)? / s,
                    load_q: row.num(3)? / s,
                    shunt_g: row.num(4)? / s,
                    shunt_b: row.num(5)? / s,
                    voltage_setpoint: row.num(6)?,
                    angle: row.num(7)?.to_radians(),
                    v_max: row.num(8)?,
                    v_min: row.num(9)?,
                    angle_min: row.num_or(10, -DEFAULT_ANGLE_LIMIT_DEG)?.to_radians(),
                    angle_max: row.num_or(11, DEFAULT_ANGLE_LIMIT_DEG)?.to_radians(),
                });
            }
            Section::Gen => {
                row.require(9)?;
                case.generators.push(Generator {
                    id: row.id(0)?,
                    bus: row.id(1)?,
                    p_max: row.num(2)? / s,
                    p_min: row.num(3)? / s,
                    q_max: row.num(4)? / s,
                    q_min: row.num(5)? / s,
                    cost_alpha: row.num(6)? * s * s,
                    cost_beta: row.num(7)? * s,
                    cost_gamma: row.num(8)?,
                });
            }
            Section::Branch => {
                row.require(5)?;
                let ratio = row.num_or(5, 0.0)?;
                case.ac_branches.push(AcBranch {
                    from: row.id(0)?,
                    to: row.id(1)?,
                    r: row.num(2)?,
                    x: row.num(3)?,
                    charging_b: row.num(4)?,
                    // Matpower: ratio 0 denotes a line
                    tap_ratio: if ratio == 0.0 { 1.0 } else { ratio },
                });
            }
            Section::BusDc => {
                row.require(2)?;
                case.dc_buses.push(DcBus {
                    id: row.id(0)?,
                    v_nominal: row.num(1)?,
                    v_max: row.num_or(2, DEFAULT_DC_V_MAX)?,
                    v_min: row.num_or(3, DEFAULT_DC_V_MIN)?,
                });
            }
            Section::BranchDc => {
                row.require(3)?;
                case.dc_branches.push(DcBranch {
                    from: row.id(0)?,
                    to: row.id(1)?,
                    resistance: row.num(2)?,
                });
            }
            Section::ConvDc => {
                row.require(16)?;
                let code = row.id(12)?;
                let mode = ControlMode::from_code(code as u8).ok_or_else(|| CaseError::Parse {
                    line: row.line,
                    field: "mode".into(),
                    message: format!("unknown control mode {code}"),
                })?;
                case.converters.push(ConverterStation {
                    id: row.id(0)?,
                    ac_bus: row.id(1)?,
                    dc_bus: row.id(2)?,
                    p_dc_min: row.num(3)? / s,
                    p_dc_max: row.num(4)? / s,
                    i_max: row.num(5)?,
                    losses: LossCoefficients {
                        rectifier: LossTriple {
                            a: row.num(6)?,
                            b: row.num(7)?,
                            c: row.num(8)?,
                        },
                        inverter: LossTriple {
                            a: row.num(9)?,
                            b: row.num(10)?,
                            c: row.num(11)?,
                        },
                    },
                    control: ConverterControl {
                        mode,
                        p_ref: row.num(13)? / s,
                        u_ref: row.num(14)?,
                        k_droop: row.num(15)?,
                        k_min: row.num_or(16, DEFAULT_K_MIN)?,
                        k_max: row.num_or(17, DEFAULT_K_MAX)?,
                    },
                });
            }
            Section::Outages => {
                row.require(2)?;
                let id = row.id(1)?;
                match row.fields[0] {
                    "gen" => case.outages.generators.insert(id),
                    "conv" => case.outages.converters.insert(id),
                    other => {
                        return Err(CaseError::Parse {
                            line: row.line,
                            field: "kind".into(),
                            message: format!("unknown outage kind '{other}'"),
                        })
                    }
                };
            }
        }
    }

    case.validate()?;
    Ok(case)
}

/// Canonical text form. Re-parsing the output yields an equal case.
pub fn serialize_case(case: &NetworkCase) -> String {
    let s = case.s_nominal;
    let mut out = String::new();
    let _ = writeln!(out, "{FORMAT_HEADER}");
    if !case.name.is_empty() {
        let _ = writeln!(out, "name {}", case.name);
    }
    let _ = writeln!(out, "baseMVA {}", num(s));
    if case.v_dc_nominal > 0.0 {
        let _ = writeln!(out, "baseKVdc {}", num(case.v_dc_nominal));
    }

    section(
        &mut out,
        "bus",
        BUS_COLUMNS,
        case.ac_buses.iter().map(|b| {
            vec![
                b.id.to_string(),
                b.bus_type.code().to_string(),
                num(b.load_p * s),
                num(b.load_q * s),
                num(b.shunt_g * s),
                num(b.shunt_b * s),
                num(b.voltage_setpoint),
                num(b.angle.to_degrees()),
                num(b.v_max),
                num(b.v_min),
                num(b.angle_min.to_degrees()),
                num(b.angle_max.to_degrees()),
            ]
        }),
    );
    section(
        &mut out,
        "gen",
        GEN_COLUMNS,
        case.generators.iter().map(|g| {
            vec![
                g.id.to_string(),
                g.bus.to_string(),
                num(g.p_max * s),
                num(g.p_min * s),
                num(g.q_max * s),
                num(g.q_min * s),
                num(g.cost_alpha / (s * s)),
                num(g.cost_beta / s),
                num(g.cost_gamma),
            ]
        }),
    );
    section(
        &mut out,
        "branch",
        BRANCH_COLUMNS,
        case.ac_branches.iter().map(|b| {
            vec![
                b.from.to_string(),
                b.to.to_string(),
                num(b.r),
                num(b.x),
                num(b.charging_b),
                num(b.tap_ratio),
            ]
        }),
    );
    if !case.dc_buses.is_empty() {
        section(
            &mut out,
            "busdc",
            BUSDC_COLUMNS,
            case.dc_buses.iter().map(|b| {
                vec![
                    b.id.to_string(),
                    num(b.v_nominal),
                    num(b.v_max),
                    num(b.v_min),
                ]
            }),
        );
    }
    if !case.dc_branches.is_empty() {
        section(
            &mut out,
            "branchdc",
            BRANCHDC_COLUMNS,
            case.dc_branches
                .iter()
                .map(|b| vec![b.from.to_string(), b.to.to_string(), num(b.resistance)]),
        );
    }
    if !case.converters.is_empty() {
        section(
            &mut out,
            "convdc",
            CONVDC_COLUMNS,
            case.converters.iter().map(|c| {
                let (r, i, ctl) = (c.losses.rectifier, c.losses.inverter, c.control);
                vec![
                    c.id.to_string(),
                    c.ac_bus.to_string(),
                    c.dc_bus.to_string(),
                    num(c.p_dc_min * s),
                    num(c.p_dc_max * s),
                    num(c.i_max),
                    num(r.a),
                    num(r.b),
                    num(r.c),
                    num(i.a),
                    num(i.b),
                    num(i.c),
                    ctl.mode.code().to_string(),
                    num(ctl.p_ref * s),
                    num(ctl.u_ref),
                    num(ctl.k_droop),
                    num(ctl.k_min),
                    num(ctl.k_max),
                ]
            }),
        );
    }
    let outaged = case
        .outages
        .generators
        .iter()
        .map(|id| vec!["gen".to_string(), id.to_string()])
        .chain(
            case.outages
                .converters
                .iter()
                .map(|id| vec!["conv".to_string(), id.to_string()]),
        )
        .collect::<Vec<_>>();
    if !outaged.is_empty() {
        section(&mut out, "outages", &["kind", "id"], outaged.into_iter());
    }
    out
}

fn section(
    out: &mut String,
    keyword: &str,
    columns: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) {
    let _ = writeln!(out, "\n{keyword}\n# {}", columns.join(" "));
    for row in rows {
        let _ = writeln!(out, "{}", row.join(" "));
    }
    let _ = writeln!(out, "end");
}

/// Shortest decimal form rounded to nine places.
pub(crate) fn num(v: f64) -> String {
    let rounded = (v * 1e9).round() / 1e9;
    if rounded == 0.0 {
        return "0".to_string();
    }
    let mut s = format!("{rounded:.9}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
mtdc-case 1
name two-bus
baseMVA 100
bus
1 3 0 0 0 0 1 0 1.1 0.9
2 1 50 20 0 0 1 0 1.1 0.9
end
gen
1 1 200 0 100 -100 0.01 10 0
end
branch
1 2 0.01 0.1 0.02
end
";

    #[test]
    fn minimal_pure_ac_case() {
        let case = parse_case_str(MINIMAL).unwrap();
        assert_eq!(case.ac_buses.len(), 2);
        assert_eq!(case.converters.len(), 0);
        assert_eq!(case.ac_buses[1].load_p, 0.5);
        assert_eq!(case.generators[0].cost_alpha, 100.0);
        assert_eq!(case.generators[0].cost_beta, 1000.0);
        assert_eq!(case.ac_branches[0].tap_ratio, 1.0);
    }

    #[test]
    fn converter_with_unknown_dc_bus_is_named() {
        let text = format!(
            "{MINIMAL}busdc\n1 1\n2 1\nend\nbranchdc\n1 2 0.01\nend\nconvdc\n\
             7 2 99 -100 100 1.2 0.011 0.003 0.004 0.011 0.003 0.007 1 0 1 0.1\nend\n"
        );
        let err = parse_case_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, CaseError::DanglingReference { .. }), "{msg}");
        assert!(msg.contains("converter 7") && msg.contains("99"), "{msg}");
    }

    #[test]
    fn bad_number_reports_line_and_field() {
        let text = MINIMAL.replace("2 1 50 20", "2 1 5x0 20");
        match parse_case_str(&text).unwrap_err() {
            CaseError::Parse { line, field, .. } => {
                assert_eq!(line, 6);
                assert_eq!(field, "Pd");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn header_is_required() {
        let err = parse_case_str("bus\nend\n").unwrap_err();
        assert!(matches!(err, CaseError::Parse { line: 1, .. }));
    }

    #[test]
    fn unterminated_section_is_rejected() {
        let text = MINIMAL.trim_end().trim_end_matches("end");
        assert!(parse_case_str(text).is_err());
    }

    #[test]
    fn dc_voltage_band_defaults() {
        let text = format!("{MINIMAL}busdc\n1 1\nend\n");
        let case = parse_case_str(&text).unwrap();
        assert_eq!(case.dc_buses[0].v_min, 0.9);
        assert_eq!(case.dc_buses[0].v_max, 1.1);
    }

    #[test]
    fn droop_gain_outside_bounds_is_rejected() {
        let text = format!(
            "{MINIMAL}busdc\n1 1\nend\nconvdc\n\
             1 2 1 -100 100 1.2 0.011 0.003 0.004 0.011 0.003 0.007 3 0 1 0.9\nend\n"
        );
        let err = parse_case_str(&text).unwrap_err();
        assert!(err.to_string().contains("k_droop"), "{err}");
    }

    #[test]
    fn number_formatting() {
        assert_eq!(num(0.0), "0");
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(150.0), "150");
        assert_eq!(num(0.011), "0.011");
        assert_eq!(num(0.07 * 100.0), "7");
        assert_eq!(num(-12.5), "-12.5");
    }
}
