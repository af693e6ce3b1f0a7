//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtdc_opf::case::{
    apply_scenario, parse_case, parse_case_str, parse_scenario, parse_scenario_str, serialize_case,
    LossCoefficients, NetworkCase, Scenario,
};
use mtdc_opf::equations::{
    converter_loss, ConverterLaw, DroopGain, LossDirection, OperatingPoint, OpfModel,
};
use mtdc_opf::nlp::{solve, NlpProblem, SolveStatus, SolverOptions};
use mtdc_opf::sparse::Triplets;
use mtdc_opf::strategy::{
    run_strategy, StageNetwork, StageResult, StrategyMode, StrategyOptions, StrategyReport,
};
use mtdc_opf::validation::{equation_residual, laws_from_controls, verify_solution};

// Tolerances and budgets.
const FD_STEP: f64 = 1e-6;
const FD_REL: f64 = 1e-6;
const FD_ABS: f64 = 1e-8;
const FD_POINTS: usize = 100;
const FD_BUDGET: Duration = Duration::from_secs(10);
const KKT_TOL: f64 = 1e-8;
const KKT_BUDGET: Duration = Duration::from_secs(1);
const RESIDUAL_TOL: f64 = 1e-6;
const BALANCE_TOL: f64 = 1e-5;
const AGREEMENT_TOL: f64 = 1e-6;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const K_MIN: f64 = 0.001;
const K_MAX: f64 = 0.5;
const ORDER_REL: f64 = 1e-6;
const MATRIX_BUDGET: Duration = Duration::from_secs(120);

type Check = Result<String, String>;

fn cases() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases")
}

const SCENARIOS: [&str; 3] = ["normal", "gen_outage_16", "conv_outage_4"];

/// Output of one full nordic-like matrix run through the binary.
struct MatrixRun {
    elapsed: Duration,
    exit: Option<i32>,
    reports: Vec<(String, StrategyReport)>,
}

fn run_matrix(out: &Path, workers: Option<usize>) -> MatrixRun {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mtdc-opf"));
    cmd.env_remove("MTDC_OPF_OUT")
        .env("RUST_LOG", "off")
        .args(["solve", "--format", "csv,json", "--seed", "1", "--case"])
        .arg(cases().join("nordic_like.case"))
        .arg("--out")
        .arg(out)
        .arg("--scenario");
    for s in SCENARIOS {
        cmd.arg(cases().join(format!("{s}.scenario")));
    }
    if let Some(w) = workers {
        cmd.args(["--workers", &w.to_string()]);
    }
    let t = Instant::now();
    let output = cmd.output().expect("binary runs");
    let elapsed = t.elapsed();
    let mut reports = Vec::new();
    if let Ok(entries) = fs::read_dir(out.join("reports")) {
        let mut paths: Vec<PathBuf> = entries.map(|e| e.unwrap().path()).collect();
        paths.sort();
        for p in paths {
            let v: serde_json::Value =
                serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
            if let Ok(r) = serde_json::from_value::<StrategyReport>(v["report"].clone()) {
                reports.push((
                    v["scenario_text"].as_str().unwrap_or_default().to_string(),
                    r,
                ));
            }
        }
    }
    MatrixRun {
        elapsed,
        exit: output.status.code(),
        reports,
    }
}

/// Every (network, stage) pair to inspect: the nordic-like matrix plus all
/// modes on the normal scenario of the other bundled cases.
struct Stage {
    label: String,
    network: NetworkCase,
    result: StageResult,
}

fn collect_stages(nordic: &[(String, StrategyReport)]) -> Result<Vec<Stage>, String> {
    let mut out = Vec::new();
    let push =
        |out: &mut Vec<Stage>, case: &NetworkCase, scenario: &Scenario, r: &StrategyReport| {
            let post = apply_scenario(case, scenario).unwrap();
            for s in &r.stages {
                out.push(Stage {
                    label: format!(
                        "{} / {} / {} / stage {}",
                        r.case_name,
                        r.scenario_name,
                        r.mode.label(),
                        s.stage
                    ),
                    network: match s.network {
                        StageNetwork::Base => case.clone(),
                        StageNetwork::PostScenario => post.clone(),
                    },
                    result: s.clone(),
                });
            }
        };
    let nordic_case = parse_case(cases().join("nordic_like.case")).unwrap();
    for (text, r) in nordic {
        push(
            &mut out,
            &nordic_case,
            &parse_scenario_str(text).unwrap(),
            r,
        );
    }
    for name in ["three_terminal.case", "wscc9.case"] {
        let case = parse_case(cases().join(name)).unwrap();
        let normal = Scenario::normal("normal");
        let modes: &[StrategyMode] = if case.converters.is_empty() {
            &[StrategyMode::ActivePowerControl]
        } else {
            &StrategyMode::ALL
        };
        for &mode in modes {
            let r = run_strategy(&case, &normal, mode, &StrategyOptions::default())
                .map_err(|e| format!("{name} {}: {e}", mode.label()))?;
            push(&mut out, &case, &normal, &r);
        }
    }
    Ok(out)
}

// ---- 1 ----------------------------------------------------------------

fn random_point(model: &OpfModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let l = &model.layout;
    let case = &model.case;
    let mut x = vec![0.0; l.len()];
    for (i, b) in case.ac_buses.iter().enumerate() {
        x[l.vm[i]] = rng.gen_range(b.v_min..b.v_max);
        if let Some(s) = l.va[i] {
            x[s] = rng.gen_range(-0.5..0.5);
        }
    }
    for (g, gen) in case.generators.iter().enumerate() {
        x[l.pg[g]] = rng.gen_range(gen.p_min..=gen.p_max);
        x[l.qg[g]] = rng.gen_range(gen.q_min..=gen.q_max);
    }
    for (d, b) in case.dc_buses.iter().enumerate() {
        x[l.vdc[d]] = rng.gen_range(b.v_min..b.v_max);
    }
    for (c, conv) in case.converters.iter().enumerate() {
        let s = l.conv[c];
        x[s.p_dc] = rng.gen_range(conv.p_dc_min..conv.p_dc_max);
        x[s.p_c] = rng.gen_range(-conv.i_max..conv.i_max);
        x[s.q_c] = rng.gen_range(-conv.i_max..conv.i_max);
        x[s.i_c] = rng.gen_range(0.0..conv.i_max);
        x[s.p_loss] = rng.gen_range(0.0..0.05);
        if let Some(k) = s.k_droop {
            x[k] = rng.gen_range(conv.control.k_min..conv.control.k_max);
        }
    }
    x
}

fn criterion_1() -> Check {
    let case = parse_case(cases().join("three_terminal.case")).unwrap();
    let mut laws = laws_from_controls(&case, &[]);
    let last = laws.len() - 1;
    laws[last] = ConverterLaw::Droop {
        p_ref: 0.2,
        u_ref: 1.0,
        gain: DroopGain::Variable {
            min: K_MIN,
            max: K_MAX,
        },
    };
    let model = OpfModel::new(case, laws).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let t = Instant::now();
    let mut entries = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..FD_POINTS {
        let x = random_point(&model, &mut rng);
        let dirs = model.loss_directions(&x);
        let jac = model.residual_jacobian_with(&x, &dirs).to_dense();
        for col in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[col] += FD_STEP;
            xm[col] -= FD_STEP;
            let (rp, rm) = (
                model.residuals_with(&xp, &dirs),
                model.residuals_with(&xm, &dirs),
            );
            for row in 0..rp.len() {
                let fd = (rp[row] - rm[row]) / (2.0 * FD_STEP);
                let a = jac[(row, col)];
                let err = (a - fd).abs();
                entries += 1;
                worst = worst.max(err / FD_ABS.max(FD_REL * a.abs()));
                if err > FD_ABS.max(FD_REL * a.abs()) {
                    return Err(format!(
                        "{} / {}: analytic {a:e}, difference {fd:e}",
                        model.describe_residual(row),
                        model.layout.describe(col)
                    ));
                }
            }
        }
    }
    let elapsed = t.elapsed();
    if elapsed > FD_BUDGET {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("{entries} entries over {FD_POINTS} points, worst error {worst:.2} of tolerance, {elapsed:.2?}"))
}

// ---- 2 ----------------------------------------------------------------

struct Quadratic {
    n: usize,
    lo: Vec<f64>,
    f: fn(&[f64]) -> f64,
    g: fn(&[f64]) -> Vec<f64>,
    c: fn(&[f64]) -> Vec<f64>,
    j: fn() -> Vec<Vec<f64>>,
}

impl NlpProblem for Quadratic {
    fn num_variables(&self) -> usize {
        self.n
    }
    fn num_constraints(&self) -> usize {
        (self.j)().len()
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lo.clone(), vec![f64::INFINITY; self.n])
    }
    fn initial_point(&self) -> Vec<f64> {
        self.lo
            .iter()
            .map(|l: &f64| if l.is_finite() { l + 2.0 } else { 0.3 })
            .collect()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.g)(x)
    }
    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        (self.c)(x)
    }
    fn jacobian(&self, _: &[f64]) -> Triplets {
        let rows = (self.j)();
        let mut t = Triplets::new(rows.len(), self.n);
        for (i, r) in rows.iter().enumerate() {
            for (k, &v) in r.iter().enumerate() {
                t.push(i, k, v);
            }
        }
        t
    }
}

fn criterion_2() -> Check {
    let t = Instant::now();
    let opts = SolverOptions::default();
    let bound = Quadratic {
        n: 1,
        lo: vec![1.0],
        f: |x| x[0] * x[0],
        g: |x| vec![2.0 * x[0]],
        c: |_| vec![],
        j: Vec::new,
    };
    let s = solve(&bound, &opts).map_err(|e| e.to_string())?;
    if s.status != SolveStatus::Converged || (s.x[0] - 1.0).abs() > KKT_TOL {
        return Err(format!("bounded: {:?} at {:?}", s.status, s.x));
    }
    let equality = Quadratic {
        n: 2,
        lo: vec![f64::NEG_INFINITY; 2],
        f: |x| (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2),
        g: |x| vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] - 1.0)],
        c: |x| vec![x[0] + x[1] - 1.0],
        j: || vec![vec![1.0, 1.0]],
    };
    let s = solve(&equality, &opts).map_err(|e| e.to_string())?;
    if s.status != SolveStatus::Converged
        || (s.x[0] - 1.0).abs() > KKT_TOL
        || s.x[1].abs() > KKT_TOL
    {
        return Err(format!("equality: {:?} at {:?}", s.status, s.x));
    }
    let contradictory = Quadratic {
        n: 1,
        lo: vec![f64::NEG_INFINITY],
        f: |x| x[0] * x[0],
        g: |x| vec![2.0 * x[0]],
        c: |x| vec![x[0], x[0] - 1.0],
        j: || vec![vec![1.0], vec![1.0]],
    };
    let s = solve(&contradictory, &opts).map_err(|e| e.to_string())?;
    if s.status != SolveStatus::Infeasible {
        return Err(format!("contradictory: {:?}", s.status));
    }
    let elapsed = t.elapsed();
    if elapsed > KKT_BUDGET {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("x = 1, (1, 0) and Infeasible in {elapsed:.2?}"))
}

// ---- 3 ----------------------------------------------------------------

/// Active power balance of the AC side, with branch flows from the π-model.
fn ac_imbalance(case: &NetworkCase, p: &OperatingPoint) -> f64 {
    let v = |id: u32| {
        let b = p.ac_buses.iter().find(|b| b.id == id).unwrap();
        Complex64::from_polar(b.vm, b.va)
    };
    let mut loss = 0.0;
    for br in &case.ac_branches {
        let t = if br.tap_ratio == 0.0 {
            1.0
        } else {
            br.tap_ratio
        };
        let y = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let half = Complex64::new(0.0, br.charging_b / 2.0);
        let (vf, vt) = (v(br.from), v(br.to));
        let i_from = (y + half) / (t * t) * vf - y / t * vt;
        let i_to = (y + half) * vt - y / t * vf;
        loss += (vf * i_from.conj() + vt * i_to.conj()).re;
    }
    let shunt: f64 = case
        .ac_buses
        .iter()
        .map(|b| b.shunt_g * v(b.id).norm_sqr())
        .sum();
    let gen: f64 = p.generators.iter().map(|g| g.p).sum();
    let load: f64 = case.ac_buses.iter().map(|b| b.load_p).sum();
    let to_dc: f64 = p.converters.iter().map(|c| c.p_c).sum();
    gen - load - shunt - loss - to_dc
}

/// DC power balance of a bipolar grid.
fn dc_imbalance(case: &NetworkCase, p: &OperatingPoint) -> f64 {
    let u = |id: u32| p.dc_buses.iter().find(|b| b.id == id).unwrap().u_dc;
    let injected: f64 = p.converters.iter().map(|c| c.p_dc).sum();
    let lost: f64 = case
        .dc_branches
        .iter()
        .map(|br| 2.0 * (u(br.from) - u(br.to)).powi(2) / br.resistance)
        .sum();
    injected - lost
}

/// Converter power balance with the loss recomputed from the loss table.
fn converter_imbalance(case: &NetworkCase, p: &OperatingPoint) -> f64 {
    let mut worst = 0.0f64;
    for c in &p.converters {
        let conv = case.converters.iter().find(|k| k.id == c.id).unwrap();
        let t = if c.p_dc >= 0.0 {
            conv.losses.rectifier
        } else {
            conv.losses.inverter
        };
        let loss = t.a + t.b * c.i_c + t.c * c.i_c * c.i_c;
        worst = worst.max((c.p_c - c.p_dc - loss).abs());
    }
    worst
}

fn criterion_3(stages: &[Stage]) -> Check {
    let (mut checked, mut worst_res, mut worst_bal) = (0, 0.0f64, 0.0f64);
    for s in stages.iter().filter(|s| s.result.converged()) {
        let res = equation_residual(&s.network, &s.result.point, &s.result.control_snapshot)?;
        let bal = ac_imbalance(&s.network, &s.result.point)
            .abs()
            .max(dc_imbalance(&s.network, &s.result.point).abs())
            .max(converter_imbalance(&s.network, &s.result.point));
        if res > RESIDUAL_TOL || bal > BALANCE_TOL {
            return Err(format!("{}: residual {res:e}, balance {bal:e}", s.label));
        }
        checked += 1;
        worst_res = worst_res.max(res);
        worst_bal = worst_bal.max(bal);
    }
    Ok(format!(
        "{checked} stages, max residual {worst_res:.1e}, max balance error {worst_bal:.1e}"
    ))
}

// ---- 4 ----------------------------------------------------------------

fn criterion_4(stages: &[Stage]) -> Check {
    let t = Instant::now();
    let (mut checked, mut worst) = (0, 0.0f64);
    for s in stages.iter().filter(|s| s.result.converged()) {
        let v = verify_solution(&s.network, &s.result.point, &s.result.control_snapshot);
        let d = v
            .max_discrepancy
            .ok_or_else(|| format!("{}: {}", s.label, v.error.clone().unwrap_or_default()))?;
        if d > AGREEMENT_TOL {
            return Err(format!("{}: {d:e} at {:?}", s.label, v.worst_variable));
        }
        checked += 1;
        worst = worst.max(d);
    }
    let elapsed = t.elapsed();
    if elapsed > ORACLE_BUDGET {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "{checked} stages, max discrepancy {worst:.1e}, {elapsed:.2?}"
    ))
}

// ---- 5 ----------------------------------------------------------------

fn criterion_5(stages: &[Stage]) -> Check {
    let (mut gains, mut frozen) = (0, 0);
    let mut previous_stage2: Option<&StageResult> = None;
    for s in stages {
        match s.result.stage {
            2 => {
                for snap in &s.result.control_snapshot {
                    let k = snap.control.k_droop;
                    if !(K_MIN..=K_MAX).contains(&k) {
                        return Err(format!("{}: converter {} k = {k}", s.label, snap.converter));
                    }
                    gains += 1;
                }
                previous_stage2 = Some(&s.result);
            }
            3 => {
                let s2 = previous_stage2.ok_or_else(|| format!("{}: no stage 2", s.label))?;
                for snap in &s.result.control_snapshot {
                    let k2 = s2.control(snap.converter).map(|c| c.k_droop.to_bits());
                    if k2 != Some(snap.control.k_droop.to_bits()) {
                        return Err(format!(
                            "{}: converter {} gain changed",
                            s.label, snap.converter
                        ));
                    }
                    frozen += 1;
                }
            }
            _ => {}
        }
    }
    Ok(format!(
        "{gains} stage-2 gains in [{K_MIN}, {K_MAX}], {frozen} frozen gains bitwise equal"
    ))
}

// ---- 6 ----------------------------------------------------------------

fn le(a: f64, b: f64) -> bool {
    a <= b + ORDER_REL * a.abs().max(b.abs())
}

fn criterion_6(nordic: &[(String, StrategyReport)]) -> Check {
    let mut gaps = Vec::new();
    for text in SCENARIOS {
        let scenario = parse_scenario(cases().join(format!("{text}.scenario"))).unwrap();
        let get = |m: StrategyMode| {
            nordic
                .iter()
                .map(|(_, r)| r)
                .find(|r| r.scenario_name == scenario.name && r.mode == m)
                .ok_or_else(|| format!("{}: no {} report", scenario.name, m.label()))
        };
        let ap = get(StrategyMode::ActivePowerControl)?;
        let ad = get(StrategyMode::AdaptiveDroop)?;
        let pr = get(StrategyMode::ProposedDroop)?;
        if !(le(pr.final_vdev, ad.final_vdev) && le(ad.final_vdev, ap.final_vdev)) {
            return Err(format!(
                "{}: vdev {:e} / {:e} / {:e}",
                scenario.name, ap.final_vdev, ad.final_vdev, pr.final_vdev
            ));
        }
        if !(le(ap.final_cost, ad.final_cost) && le(ap.final_cost, pr.final_cost)) {
            return Err(format!(
                "{}: cost {} / {} / {}",
                scenario.name, ap.final_cost, ad.final_cost, pr.final_cost
            ));
        }
        let gap = (pr.final_cost - ad.final_cost) / ad.final_cost.abs() * 100.0;
        gaps.push(format!("{} {gap:+.4}%", scenario.name));
    }
    Ok(format!(
        "orderings hold; proposed vs adaptive cost gap: {}",
        gaps.join(", ")
    ))
}

// ---- 7 ----------------------------------------------------------------

fn criterion_7(run: &MatrixRun) -> Check {
    let r = run
        .reports
        .iter()
        .map(|(_, r)| r)
        .find(|r| r.mode == StrategyMode::ProposedDroop && r.scenario_name == "converter 4 outage")
        .ok_or("no converter-outage report")?;
    let stages: Vec<u8> = r.stages.iter().map(|s| s.stage).collect();
    if !r.fallback_triggered || stages != [1, 2, 3, 1, 2, 3] {
        return Err(format!(
            "fallback {} with stages {stages:?}",
            r.fallback_triggered
        ));
    }
    if r.stages[2].converged() || !r.final_stage().converged() {
        return Err("unexpected convergence pattern".into());
    }
    if run.exit != Some(2) {
        return Err(format!("exit code {:?}", run.exit));
    }
    Ok(format!(
        "stage 3 {:?}, one recomputation, final stage converged, exit code 2",
        r.stages[2].solution.status
    ))
}

// ---- 8 ----------------------------------------------------------------

fn criterion_8() -> Check {
    let table = LossCoefficients::MMC_TABLE;
    let l0 = converter_loss(0.0, LossDirection::Rectifier, &table).map_err(|e| e.to_string())?;
    if l0 != 0.011 {
        return Err(format!("loss at zero current {l0}"));
    }
    let case = parse_case(cases().join("nordic_like.case")).unwrap();
    let again = parse_case_str(&serialize_case(&case)).map_err(|e| e.to_string())?;
    for c in case.converters.iter().chain(&again.converters) {
        if c.losses != table {
            return Err(format!("converter {} coefficients {:?}", c.id, c.losses));
        }
    }
    Ok("loss(0, rectifier) = 0.011; coefficient sets round-trip exactly".into())
}

// ---- 9 ----------------------------------------------------------------

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn criterion_9(a: &Path, b: &Path) -> Check {
    let (fa, fb) = (files(a), files(b));
    let rel = |fs: &[PathBuf], root: &Path| -> Vec<PathBuf> {
        fs.iter()
            .map(|p| p.strip_prefix(root).unwrap().to_path_buf())
            .collect()
    };
    if rel(&fa, a) != rel(&fb, b) {
        return Err("different file sets".into());
    }
    for (pa, pb) in fa.iter().zip(&fb) {
        if fs::read(pa).unwrap() != fs::read(pb).unwrap() {
            return Err(format!("{} differs", pa.strip_prefix(a).unwrap().display()));
        }
    }
    Ok(format!(
        "{} files byte-identical across default and single-worker runs",
        fa.len()
    ))
}

// ---- 10 ---------------------------------------------------------------

fn criterion_10(run: &MatrixRun) -> Check {
    if run.reports.len() != 9 {
        return Err(format!(
            "{} of 9 runs produced a solution",
            run.reports.len()
        ));
    }
    if run.elapsed > MATRIX_BUDGET {
        return Err(format!("took {:?}", run.elapsed));
    }
    Ok(format!("3 scenarios x 3 modes in {:.2?}", run.elapsed))
}

#[test]
fn acceptance() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_matrix(a.path(), None);
    // second run only feeds the determinism check
    let _ = run_matrix(b.path(), Some(1));
    let stages = collect_stages(&first.reports);

    let with_stages = |f: fn(&[Stage]) -> Check| match &stages {
        Ok(s) => f(s),
        Err(e) => Err(e.clone()),
    };
    let results: Vec<(&str, Check)> = vec![
        ("gradient fidelity", criterion_1()),
        ("solver on analytic problems", criterion_2()),
        ("feasibility and conservation", with_stages(criterion_3)),
        ("power-flow oracle agreement", with_stages(criterion_4)),
        ("droop gain bounds", with_stages(criterion_5)),
        ("mode orderings", criterion_6(&first.reports)),
        ("fallback path", criterion_7(&first)),
        ("loss model", criterion_8()),
        ("determinism", criterion_9(a.path(), b.path())),
        ("performance", criterion_10(&first)),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
