//! Iterative bound tightening.
//!
//! Each outer iteration solves the robust program around the current
//! operating point, runs the exact load flow at the resulting dispatch and
//! makes that state the next operating point. The loop stops once the
//! optimiser voltage `V* = (V⁺ + V⁻)/2` agrees with the load flow to within
//! `eps` in the infinity norm, or after `max_outer` iterations.

use serde::Serialize;
use thiserror::Error;

use crate::bounds::OperatingPoint;
use crate::feeder::{FeederModel, SensitivityMatrices};
use crate::loadflow::{check_admissible, solve_loadflow, LoadFlowError, LoadFlowSettings, LoadFlowState, Violation};
use crate::opf::{
    build_p3, build_p4, extract_schedule, extract_solution, DispatchSchedule, ObjectiveKind, OpfError,
    RobustOpfSolution, Scenario,
};
use crate::qp::{solve_qp, QpSettings};

#[derive(Debug, Clone)]
pub struct TighteningSettings {
    pub eps: f64,
    pub max_outer: usize,
    /// Slack used when validating each iterate against the limits.
    pub validation_slack: f64,
    pub loadflow: LoadFlowSettings,
    pub qp: QpSettings,
}

impl Default for TighteningSettings {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_outer: 20,
            validation_slack: 1e-6,
            loadflow: LoadFlowSettings::default(),
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TighteningError {
    #[error("invalid tightening settings: {0}")]
    InvalidSettings(String),
    #[error("load flow failed at iteration {iteration}: {source}")]
    LoadFlow { iteration: usize, source: LoadFlowError },
    #[error("robust program failed at iteration {iteration}: {source}")]
    Opf { iteration: usize, source: OpfError },
    #[error(transparent)]
    Qp(#[from] crate::qp::QpError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub total_generation: f64,
    /// `‖V* − V⁰‖∞` against the load flow at this iterate's dispatch.
    pub error: f64,
    /// Smallest voltage and largest current of the expansion point used.
    pub op_min_v: f64,
    pub op_max_l: f64,
    pub qp_iterations: usize,
    pub violations: Vec<Violation>,
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct TighteningTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
}

impl TighteningTrace {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialise"));
            out.push('\n');
        }
        out
    }

    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }

    fn push(&mut self, rec: IterationRecord) {
        self.records.push(rec);
        self.iterations = self.records.len();
    }
}

#[derive(Debug, Clone)]
pub struct TightenOutcome {
    /// The selected iterate: best admissible by objective, or the last one
    /// if none was admissible.
    pub solution: RobustOpfSolution,
    /// Exact load flow at the selected dispatch.
    pub state: LoadFlowState,
    pub violations: Vec<Violation>,
    /// 1-based iteration the solution comes from.
    pub selected: usize,
    pub converged: bool,
    pub admissible: bool,
    pub trace: TighteningTrace,
}

impl TightenOutcome {
    /// Set when the loop did not converge or no iterate was admissible.
    pub fn flagged(&self) -> bool {
        !self.converged || !self.admissible
    }
}

fn validate(settings: &TighteningSettings) -> Result<(), TighteningError> {
    if !(settings.eps > 0.0) || settings.max_outer == 0 || !(settings.validation_slack >= 0.0) {
        return Err(TighteningError::InvalidSettings(format!(
            "eps = {}, max_outer = {}, slack = {}",
            settings.eps, settings.max_outer, settings.validation_slack
        )));
    }
    Ok(())
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn op_summary(op: &OperatingPoint) -> (f64, f64) {
    let min_v = op.v.iter().copied().fold(f64::INFINITY, f64::min);
    let max_l = op.l.iter().copied().fold(0.0, f64::max);
    (min_v, max_l)
}

struct Candidate<T> {
    iteration: usize,
    objective: f64,
    value: T,
    admissible: bool,
}

/// Index of the admissible candidate with the smallest objective (latest on
/// ties), else the last candidate.
fn select<T>(cands: &[Candidate<T>]) -> usize {
    let mut best: Option<usize> = None;
    for (i, c) in cands.iter().enumerate() {
        if c.admissible && best.is_none_or(|b| c.objective <= cands[b].objective) {
            best = Some(i);
        }
    }
    best.unwrap_or(cands.len() - 1)
}

/// Runs the tightening loop on a single-period scenario.
pub fn tighten(
    model: &FeederModel,
    mats: &SensitivityMatrices,
    scenario: &Scenario,
    settings: &TighteningSettings,
) -> Result<TightenOutcome, TighteningError> {
    validate(settings)?;
    let forecast = scenario.forecast();
    let mut op = crate::bounds::operating_point(model, &forecast, &settings.loadflow)
        .map_err(|source| TighteningError::LoadFlow { iteration: 0, source })?;

    let mut trace = TighteningTrace::default();
    let mut cands: Vec<Candidate<(RobustOpfSolution, LoadFlowState, Vec<Violation>)>> = Vec::new();
    for k in 1..=settings.max_outer {
        let solved = build_p3(model, mats, &op, scenario).and_then(|prog| {
            let sol = solve_qp(&prog.qp, &settings.qp)?;
            extract_solution(&prog, &sol)
        });
        let sol = match solved {
            Ok(s) => s,
            Err(source) if k == 1 => return Err(TighteningError::Opf { iteration: k, source }),
            Err(e) => {
                log::warn!("tightening stopped at iteration {k}: {e}");
                break;
            }
        };
        let inj = sol.injection(model);
        let state = match solve_loadflow(model, &inj, &settings.loadflow) {
            Ok(s) if s.converged => s,
            Ok(s) => {
                let source = LoadFlowError::NotConverged { iterations: s.iterations, change: f64::NAN };
                if k == 1 {
                    return Err(TighteningError::LoadFlow { iteration: k, source });
                }
                log::warn!("tightening stopped at iteration {k}: {source}");
                break;
            }
            Err(source) if k == 1 => return Err(TighteningError::LoadFlow { iteration: k, source }),
            Err(e) => {
                log::warn!("tightening stopped at iteration {k}: {e}");
                break;
            }
        };
        let error = inf_norm_diff(&sol.v_mid(), &model.to_user_order(&state.v));
        let violations = check_admissible(model, &state, settings.validation_slack);
        let (op_min_v, op_max_l) = op_summary(&op);
        let admissible = violations.is_empty();
        trace.push(IterationRecord {
            iteration: k,
            objective: sol.objective,
            total_generation: sol.total_generation(),
            error,
            op_min_v,
            op_max_l,
            qp_iterations: sol.iterations,
            violations: violations.clone(),
            admissible,
        });
        log::debug!("iteration {k}: objective {:.9e}, error {error:.3e}", sol.objective);
        let next = OperatingPoint::from_state(&state, &inj).expect("state is converged");
        cands.push(Candidate {
            iteration: k,
            objective: sol.objective,
            value: (sol, state, violations),
            admissible,
        });
        if error <= settings.eps {
            trace.converged = true;
            break;
        }
        op = next;
    }

    let idx = select(&cands);
    let cand = cands.swap_remove(idx);
    let (solution, state, violations) = cand.value;
    Ok(TightenOutcome {
        solution,
        state,
        violations,
        selected: cand.iteration,
        converged: trace.converged,
        admissible: cand.admissible,
        trace,
    })
}

/// A single robust solve around the forecast, validated by the load flow.
pub fn one_shot(
    model: &FeederModel,
    mats: &SensitivityMatrices,
    scenario: &Scenario,
    settings: &TighteningSettings,
) -> Result<TightenOutcome, TighteningError> {
    let single = TighteningSettings {
        max_outer: 1,
        ..settings.clone()
    };
    tighten(model, mats, scenario, &single)
}

/// Per-unit bounds of the flexible units: `up[k]` from maximising and
/// `down[k]` from minimising the aggregate injection.
#[derive(Debug, Clone)]
pub struct FlexibilityEnvelope {
    pub nodes: Vec<usize>,
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub up_outcome: Option<TightenOutcome>,
    pub down_outcome: Option<TightenOutcome>,
}

impl FlexibilityEnvelope {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn flexibility_envelope(
    model: &FeederModel,
    mats: &SensitivityMatrices,
    scenario: &Scenario,
    settings: &TighteningSettings,
) -> Result<FlexibilityEnvelope, TighteningError> {
    if scenario.generators.is_empty() {
        return Ok(FlexibilityEnvelope {
            nodes: Vec::new(),
            up: Vec::new(),
            down: Vec::new(),
            up_outcome: None,
            down_outcome: None,
        });
    }
    let mut sc = scenario.clone();
    sc.objective = ObjectiveKind::FlexUp;
    let up = tighten(model, mats, &sc, settings)?;
    sc.objective = ObjectiveKind::FlexDown;
    let down = tighten(model, mats, &sc, settings)?;
    Ok(FlexibilityEnvelope {
        nodes: scenario.generators.iter().map(|g| g.label).collect(),
        up: up.solution.p_g.clone(),
        down: down.solution.p_g.clone(),
        up_outcome: Some(up),
        down_outcome: Some(down),
    })
}

/// Choice of expansion points across the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relinearization {
    /// Each step is expanded around its own forecast, then its own
    /// dispatched state.
    #[default]
    PerStep,
    /// Every step shares the expansion point of step 0.
    Fixed,
}

#[derive(Debug, Clone)]
pub struct MultiPeriodOutcome {
    pub schedule: DispatchSchedule,
    pub states: Vec<LoadFlowState>,
    pub violations: Vec<Vec<Violation>>,
    pub selected: usize,
    pub converged: bool,
    pub admissible: bool,
    pub trace: TighteningTrace,
}

impl MultiPeriodOutcome {
    pub fn flagged(&self) -> bool {
        !self.converged || !self.admissible
    }
}

/// Tightening over a horizon. With `max_outer = 1` this is the one-shot
/// multi-period solve.
pub fn tighten_multiperiod(
    model: &FeederModel,
    mats: &SensitivityMatrices,
    scenario: &Scenario,
    mode: Relinearization,
    settings: &TighteningSettings,
) -> Result<MultiPeriodOutcome, TighteningError> {
    validate(settings)?;
    let steps = scenario.expand_horizon();
    let t_len = steps.len();
    let mut ops: Vec<OperatingPoint> = Vec::with_capacity(t_len);
    for (t, sc) in steps.iter().enumerate() {
        let src = match mode {
            Relinearization::PerStep => sc,
            Relinearization::Fixed => &steps[0],
        };
        if mode == Relinearization::Fixed && t > 0 {
            ops.push(ops[0].clone());
            continue;
        }
        let op = crate::bounds::operating_point(model, &src.forecast(), &settings.loadflow)
            .map_err(|source| TighteningError::LoadFlow { iteration: 0, source })?;
        ops.push(op);
    }

    let mut trace = TighteningTrace::default();
    type Value = (DispatchSchedule, Vec<LoadFlowState>, Vec<Vec<Violation>>);
    let mut cands: Vec<Candidate<Value>> = Vec::new();
    'outer: for k in 1..=settings.max_outer {
        let solved = build_p4(model, mats, &ops, &steps, &scenario.batteries, scenario.dt()).and_then(|prog| {
            let sol = solve_qp(&prog.qp, &settings.qp)?;
            extract_schedule(&prog, &sol)
        });
        let sched = match solved {
            Ok(s) => s,
            Err(source) if k == 1 => return Err(TighteningError::Opf { iteration: k, source }),
            Err(e) => {
                log::warn!("tightening stopped at iteration {k}: {e}");
                break;
            }
        };
        let mut states = Vec::with_capacity(t_len);
        let mut violations = Vec::with_capacity(t_len);
        let mut error = 0.0f64;
        let mut next_ops = Vec::with_capacity(t_len);
        for period in &sched.periods {
            let inj = period.injection(model);
            let state = match solve_loadflow(model, &inj, &settings.loadflow) {
                Ok(s) if s.converged => s,
                other => {
                    let source = match other {
                        Err(e) => e,
                        Ok(s) => LoadFlowError::NotConverged { iterations: s.iterations, change: f64::NAN },
                    };
                    if k == 1 {
                        return Err(TighteningError::LoadFlow { iteration: k, source });
                    }
                    log::warn!("tightening stopped at iteration {k}: {source}");
                    break 'outer;
                }
            };
            error = error.max(inf_norm_diff(&period.v_mid(), &model.to_user_order(&state.v)));
            violations.push(check_admissible(model, &state, settings.validation_slack));
            next_ops.push(OperatingPoint::from_state(&state, &inj).expect("state is converged"));
            states.push(state);
        }
        let admissible = violations.iter().all(|v| v.is_empty());
        let (op_min_v, op_max_l) = ops.iter().map(op_summary).fold((f64::INFINITY, 0.0f64), |a, b| (a.0.min(b.0), a.1.max(b.1)));
        trace.push(IterationRecord {
            iteration: k,
            objective: sched.objective,
            total_generation: sched.total_generation(),
            error,
            op_min_v,
            op_max_l,
            qp_iterations: sched.periods.first().map_or(0, |p| p.iterations),
            violations: violations.iter().flatten().cloned().collect(),
            admissible,
        });
        cands.push(Candidate {
            iteration: k,
            objective: sched.objective,
            value: (sched, states, violations),
            admissible,
        });
        if error <= settings.eps {
            trace.converged = true;
            break;
        }
        ops = match mode {
            Relinearization::PerStep => next_ops,
            Relinearization::Fixed => vec![next_ops[0].clone(); t_len],
        };
    }

    let idx = select(&cands);
    let cand = cands.swap_remove(idx);
    let (schedule, states, violations) = cand.value;
    Ok(MultiPeriodOutcome {
        schedule,
        states,
        violations,
        selected: cand.iteration,
        converged: trace.converged,
        admissible: cand.admissible,
        trace,
    })
}
