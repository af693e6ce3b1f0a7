//! Staged droop-coefficient selection.
//!
//! 1. Cost-optimal dispatch with free converter transfers gives the set points.
//! 2. DC voltage deviation is minimized with every converter in droop mode and
//!    its gain free; the solved `(P_dc, U_dc)` become the new references.
//! 3. After a disturbance, cost is re-optimized with the gains frozen.
//!
//! If stage 3 is infeasible the three stages are recomputed once on the
//! post-disturbance network.

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{
    apply_scenario, CaseError, ControlMode, ConverterControl, NetworkCase, Scenario,
};
use crate::equations::{ConverterLaw, DroopGain, EquationError, OperatingPoint, OpfModel};
use crate::nlp::{solve, ObjectiveKind, OpfProblem, OpfSolution, SolverError, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyMode {
    ActivePowerControl,
    AdaptiveDroop,
    ProposedDroop,
}

impl StrategyMode {
    pub const ALL: [StrategyMode; 3] = [
        StrategyMode::ActivePowerControl,
        StrategyMode::AdaptiveDroop,
        StrategyMode::ProposedDroop,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyMode::ActivePowerControl => "active-power",
            StrategyMode::AdaptiveDroop => "adaptive-droop",
            StrategyMode::ProposedDroop => "proposed-droop",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == s)
    }
}

/// Network a stage was solved on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageNetwork {
    Base,
    PostScenario,
}

/// Voltage reference used by the droop laws of stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoltageAnchor {
    /// Rated DC voltage of each bus.
    Nominal,
    /// DC voltage solved in stage 1.
    StageOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSnapshot {
    pub converter: u32,
    pub control: ConverterControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: u8,
    pub network: StageNetwork,
    pub objective_kind: ObjectiveKind,
    pub solution: OpfSolution,
    pub point: OperatingPoint,
    pub control_snapshot: Vec<ControlSnapshot>,
    /// Generation cost at the solution.
    pub cost: f64,
    /// DC voltage deviation at the solution.
    pub vdev: f64,
}

impl StageResult {
    pub fn converged(&self) -> bool {
        self.solution.converged()
    }

    pub fn control(&self, converter: u32) -> Option<&ConverterControl> {
        self.control_snapshot
            .iter()
            .find(|s| s.converter == converter)
            .map(|s| &s.control)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub case_name: String,
    pub scenario_name: String,
    pub mode: StrategyMode,
    pub stages: Vec<StageResult>,
    pub final_cost: f64,
    pub final_vdev: f64,
    pub fallback_triggered: bool,
}

impl StrategyReport {
    pub fn final_stage(&self) -> &StageResult {
        self.stages.last().expect("at least one stage")
    }
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Equation(#[from] EquationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("stage {stage} did not converge ({status:?}): {diagnostic}")]
    StageFailed {
        stage: u8,
        status: crate::nlp::SolveStatus,
        diagnostic: String,
        solution: Box<OpfSolution>,
    },
    #[error("stage 3 infeasible before and after recomputing droop gains: {first}; {second}")]
    Unrecoverable {
        first: String,
        second: String,
        certificates: Box<[OpfSolution; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOptions {
    pub solver: SolverOptions,
    /// Weight of the pull toward the warm start on AC-side variables in
    /// stage 2; selects one point out of the otherwise flat optimal set.
    pub proximal_weight: f64,
}

impl Default for StrategyOptions {
    fn default() -> Self {
        StrategyOptions {
            solver: SolverOptions::default(),
            proximal_weight: 1e-2,
        }
    }
}

fn finish_stage(
    stage: u8,
    network: StageNetwork,
    objective: ObjectiveKind,
    model: &OpfModel,
    solution: OpfSolution,
    control_snapshot: Vec<ControlSnapshot>,
) -> StageResult {
    let point = OperatingPoint::extract(model, &solution.x);
    StageResult {
        stage,
        network,
        objective_kind: objective,
        cost: model.objective_cost(&solution.x),
        vdev: model.objective_vdev(&solution.x),
        point,
        control_snapshot,
        solution,
    }
}

fn require_converged(stage: u8, solution: &OpfSolution) -> Result<(), StrategyError> {
    if solution.converged() {
        return Ok(());
    }
    Err(StrategyError::StageFailed {
        stage,
        status: solution.status,
        diagnostic: solution.diagnostic.clone().unwrap_or_default(),
        solution: Box::new(solution.clone()),
    })
}

fn warm_start(model: &OpfModel, problem: &OpfProblem, from: &OperatingPoint) -> Vec<f64> {
    let mut x = problem.flat_start();
    from.fill(model, &mut x);
    x
}

/// Cost-optimal dispatch with every converter transfer free within its bounds.
pub fn run_stage1(
    case: &NetworkCase,
    network: StageNetwork,
    options: &StrategyOptions,
) -> Result<StageResult, StrategyError> {
    let laws = vec![ConverterLaw::Free; case.converters.len()];
    let model = OpfModel::new(case.clone(), laws)?;
    let problem = OpfProblem::new(model, ObjectiveKind::Cost);
    let solution = solve(&problem, &options.solver)?;
    debug!(
        "stage 1: {:?} after {} iterations",
        solution.status, solution.iterations
    );
    require_converged(1, &solution)?;
    let model = &problem.model;
    let snapshot = model
        .case
        .converters
        .iter()
        .enumerate()
        .map(|(c, conv)| ControlSnapshot {
            converter: conv.id,
            control: ConverterControl {
                mode: ControlMode::PControl,
                p_ref: solution.x[model.layout.conv[c].p_dc],
                u_ref: solution.x[model.layout.vdc[model.dc_bus_of(c)]],
                ..conv.control
            },
        })
        .collect();
    Ok(finish_stage(
        1,
        network,
        ObjectiveKind::Cost,
        model,
        solution,
        snapshot,
    ))
}

/// Voltage-deviation minimization in droop mode with free gains, anchored at
/// the stage-1 transfers. Converters missing from `stage1` keep their case
/// references.
pub fn run_stage2(
    case: &NetworkCase,
    network: StageNetwork,
    stage1: &StageResult,
    anchor: VoltageAnchor,
    options: &StrategyOptions,
) -> Result<StageResult, StrategyError> {
    let laws = case
        .converters
        .iter()
        .map(|conv| {
            let (p_ref, u_stage1) = stage1
                .point
                .converter(conv.id)
                .map_or((conv.control.p_ref, conv.control.u_ref), |s| {
                    (s.p_dc, s.u_dc)
                });
            let u_ref = match anchor {
                VoltageAnchor::Nominal => {
                    let bus = case.dc_index(conv.dc_bus).expect("validated case");
                    case.dc_buses[bus].v_nominal
                }
                VoltageAnchor::StageOne => u_stage1,
            };
            ConverterLaw::Droop {
                p_ref,
                u_ref,
                gain: DroopGain::Variable {
                    min: conv.control.k_min,
                    max: conv.control.k_max,
                },
            }
        })
        .collect();
    let model = OpfModel::new(case.clone(), laws)?;
    let mut problem = OpfProblem::new(model, ObjectiveKind::Vdev);
    let start = warm_start(&problem.model, &problem, &stage1.point);
    problem = problem.with_proximal(start.clone(), options.proximal_weight);
    problem.start = Some(start);
    let solution = solve(&problem, &options.solver.warm())?;
    debug!(
        "stage 2: {:?} after {} iterations",
        solution.status, solution.iterations
    );
    require_converged(2, &solution)?;
    let model = &problem.model;
    let snapshot = refreshed_droop_snapshot(model, &solution.x);
    Ok(finish_stage(
        2,
        network,
        ObjectiveKind::Vdev,
        model,
        solution,
        snapshot,
    ))
}

/// Droop controls whose references are the solved operating point.
fn refreshed_droop_snapshot(model: &OpfModel, x: &[f64]) -> Vec<ControlSnapshot> {
    model
        .case
        .converters
        .iter()
        .enumerate()
        .map(|(c, conv)| ControlSnapshot {
            converter: conv.id,
            control: ConverterControl {
                mode: ControlMode::Droop,
                p_ref: x[model.layout.conv[c].p_dc],
                u_ref: x[model.layout.vdc[model.dc_bus_of(c)]],
                k_droop: model.droop_gain(x, c).expect("droop law"),
                ..conv.control
            },
        })
        .collect()
}

/// Cost re-optimization on `case` (usually post-disturbance) with gains and
/// references frozen at the stage-2 values. A non-converged solve is returned
/// as-is so the caller can fall back.
pub fn run_stage3(
    case: &NetworkCase,
    network: StageNetwork,
    stage2: &StageResult,
    options: &StrategyOptions,
) -> Result<StageResult, StrategyError> {
    let mut snapshot = Vec::with_capacity(case.converters.len());
    let mut laws = Vec::with_capacity(case.converters.len());
    for conv in &case.converters {
        let control = stage2
            .control(conv.id)
            .copied()
            .filter(|c| c.mode == ControlMode::Droop)
            .unwrap_or(conv.control);
        laws.push(ConverterLaw::Droop {
            p_ref: control.p_ref,
            u_ref: control.u_ref,
            gain: DroopGain::Fixed(control.k_droop),
        });
        snapshot.push(ControlSnapshot {
            converter: conv.id,
            control,
        });
    }
    let model = OpfModel::new(case.clone(), laws)?;
    let mut problem = OpfProblem::new(model, ObjectiveKind::Cost);
    // The contingency moves the optimum away from the stage-2 point, so only
    // the primal start is reused; a warm barrier would pin it to its bounds.
    problem.start = Some(warm_start(&problem.model, &problem, &stage2.point));
    let solution = solve(&problem, &options.solver)?;
    debug!(
        "stage 3: {:?} after {} iterations",
        solution.status, solution.iterations
    );
    Ok(finish_stage(
        3,
        network,
        ObjectiveKind::Cost,
        &problem.model,
        solution,
        snapshot,
    ))
}

/// Runs one control mode on `case` under `scenario`.
pub fn run_strategy(
    case: &NetworkCase,
    scenario: &Scenario,
    mode: StrategyMode,
    options: &StrategyOptions,
) -> Result<StrategyReport, StrategyError> {
    use StageNetwork::{Base, PostScenario};
    let post = apply_scenario(case, scenario)?;
    let mut fallback_triggered = false;
    let stages = match mode {
        StrategyMode::ActivePowerControl => vec![run_stage1(&post, PostScenario, options)?],
        StrategyMode::AdaptiveDroop => {
            let s1 = run_stage1(&post, PostScenario, options)?;
            let s2 = run_stage2(&post, PostScenario, &s1, VoltageAnchor::StageOne, options)?;
            vec![s1, s2]
        }
        StrategyMode::ProposedDroop => {
            let s1 = run_stage1(case, Base, options)?;
            let s2 = run_stage2(case, Base, &s1, VoltageAnchor::Nominal, options)?;
            let s3 = run_stage3(&post, PostScenario, &s2, options)?;
            if s3.converged() {
                vec![s1, s2, s3]
            } else {
                info!(
                    "{} / {}: stage 3 {:?}, recomputing droop gains",
                    case.name, scenario.name, s3.solution.status
                );
                fallback_triggered = true;
                let r1 = run_stage1(&post, PostScenario, options)?;
                let r2 = run_stage2(&post, PostScenario, &r1, VoltageAnchor::Nominal, options)?;
                let r3 = run_stage3(&post, PostScenario, &r2, options)?;
                if !r3.converged() {
                    return Err(StrategyError::Unrecoverable {
                        first: s3.solution.diagnostic.clone().unwrap_or_default(),
                        second: r3.solution.diagnostic.clone().unwrap_or_default(),
                        certificates: Box::new([s3.solution, r3.solution]),
                    });
                }
                vec![s1, s2, s3, r1, r2, r3]
            }
        }
    };
    let last = stages.last().expect("at least one stage");
    let (final_cost, final_vdev) = recompute_objectives(case, scenario, last)?;
    Ok(StrategyReport {
        case_name: case.name.clone(),
        scenario_name: scenario.name.clone(),
        mode,
        final_cost,
        final_vdev,
        fallback_triggered,
        stages,
    })
}

/// Objectives re-evaluated from a stage's operating point on a freshly built
/// model of its network.
pub fn recompute_objectives(
    case: &NetworkCase,
    scenario: &Scenario,
    stage: &StageResult,
) -> Result<(f64, f64), StrategyError> {
    let network = match stage.network {
        StageNetwork::Base => case.clone(),
        StageNetwork::PostScenario => apply_scenario(case, scenario)?,
    };
    let laws = vec![ConverterLaw::Free; network.converters.len()];
    let model = OpfModel::new(network, laws)?;
    let mut x = vec![0.0; model.layout.len()];
    stage.point.fill(&model, &mut x);
    Ok((model.objective_cost(&x), model.objective_vdev(&x)))
}
