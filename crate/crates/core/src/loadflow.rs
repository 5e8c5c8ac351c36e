//! Exact branch-flow load flow on a radial feeder.
//!
//! Sign conventions: `p`, `q` are injections into a node (loads negative).
//! `P_j`, `Q_j` are the flows leaving node `j` towards its parent, measured
//! at node `j`; with these conventions
//!
//! ```text
//! v_j = v_i + 2 (r P_j + x Q_j) - |z|² l_j
//! P_i = p_i + sum_{children j} (P_j - r_j l_j)      (same for Q with x)
//! l_j = (P_j² + Q_j²) / v_j
//! ```
//!
//! The backward sweep accumulates flows and currents from the leaves using
//! the latest voltages; the forward sweep updates voltages from the
//! substation.

use serde::Serialize;
use thiserror::Error;

use crate::feeder::FeederModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoadFlowError {
    #[error("model is not in radial order")]
    NotOrdered,
    #[error("injection profile has length {got}, feeder has {expected} nodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("non-finite injection at node {0}")]
    NonFinite(usize),
    #[error("voltage collapse at node {node} (iteration {iteration}, v = {voltage:.4} pu²)")]
    VoltageCollapse {
        /// User id of the first collapsing node.
        node: usize,
        iteration: usize,
        voltage: f64,
    },
    #[error("load flow did not converge in {iterations} iterations (last change {change:.3e})")]
    NotConverged { iterations: usize, change: f64 },
}

/// Nodal injections in internal node order (index `i` is node `i + 1`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectionProfile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionProfile {
    pub fn zeros(n: usize) -> Self {
        Self {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadFlowSettings {
    /// Stop when the largest voltage change is below this (pu²).
    pub tol: f64,
    pub max_iter: usize,
    /// Abort when any squared voltage drops below this.
    pub collapse_threshold: f64,
}

impl Default for LoadFlowSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            collapse_threshold: 0.25,
        }
    }
}

/// Solution of the load flow, in internal order. `p_flow[j]`, `q_flow[j]`,
/// `l[j]` belong to the branch feeding node `j + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadFlowState {
    pub v: Vec<f64>,
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    pub l: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

impl LoadFlowState {
    /// The no-load state.
    pub fn flat(model: &FeederModel) -> Self {
        let n = model.n();
        Self {
            v: vec![model.v0(); n],
            p_flow: vec![0.0; n],
            q_flow: vec![0.0; n],
            l: vec![0.0; n],
            converged: true,
            iterations: 0,
            residual: 0.0,
        }
    }
}

pub fn solve_loadflow(
    model: &FeederModel,
    inj: &InjectionProfile,
    settings: &LoadFlowSettings,
) -> Result<LoadFlowState, LoadFlowError> {
    if !model.is_ordered() {
        return Err(LoadFlowError::NotOrdered);
    }
    let n = model.n();
    if inj.p.len() != n || inj.q.len() != n {
        return Err(LoadFlowError::DimensionMismatch {
            expected: n,
            got: inj.p.len().min(inj.q.len()),
        });
    }
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(LoadFlowError::InvalidSettings(
            "tol must be positive and max_iter at least 1".into(),
        ));
    }
    if let Some(i) = (0..n).find(|&i| !(inj.p[i].is_finite() && inj.q[i].is_finite())) {
        return Err(LoadFlowError::NonFinite(model.label(i + 1)));
    }

    let branches = model.branches();
    let mut st = LoadFlowState::flat(model);
    let mut acc_p = vec![0.0; n];
    let mut acc_q = vec![0.0; n];

    for it in 1..=settings.max_iter {
        acc_p.copy_from_slice(&inj.p);
        acc_q.copy_from_slice(&inj.q);
        for j in (0..n).rev() {
            let b = &branches[j];
            let (pj, qj) = (acc_p[j], acc_q[j]);
            let lj = (pj * pj + qj * qj) / st.v[j];
            st.p_flow[j] = pj;
            st.q_flow[j] = qj;
            st.l[j] = lj;
            if b.from != 0 {
                acc_p[b.from - 1] += pj - b.r * lj;
                acc_q[b.from - 1] += qj - b.x * lj;
            }
        }

        let mut change: f64 = 0.0;
        for j in 0..n {
            let b = &branches[j];
            let vi = if b.from == 0 { model.v0() } else { st.v[b.from - 1] };
            let vj = vi + 2.0 * (b.r * st.p_flow[j] + b.x * st.q_flow[j]) - b.z2() * st.l[j];
            if !(vj >= settings.collapse_threshold) {
                return Err(LoadFlowError::VoltageCollapse {
                    node: model.label(j + 1),
                    iteration: it,
                    voltage: vj,
                });
            }
            change = change.max((vj - st.v[j]).abs());
            st.v[j] = vj;
        }
        st.iterations = it;
        if change < settings.tol {
            st.converged = true;
            break;
        }
        st.converged = false;
    }
    st.residual = residuals(model, &st, inj).max;
    Ok(st)
}

/// Absolute violations of the four branch-flow equations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Voltage drop equation, per branch.
    pub voltage: Vec<f64>,
    /// Real power balance, per node.
    pub real_power: Vec<f64>,
    /// Reactive power balance, per node.
    pub reactive_power: Vec<f64>,
    /// `|l_j v_j - P_j² - Q_j²|`, per branch.
    pub current: Vec<f64>,
    pub max: f64,
}

impl ResidualReport {
    pub fn max_voltage(&self) -> f64 {
        max_abs(&self.voltage)
    }
    pub fn max_real_power(&self) -> f64 {
        max_abs(&self.real_power)
    }
    pub fn max_reactive_power(&self) -> f64 {
        max_abs(&self.reactive_power)
    }
    pub fn max_current(&self) -> f64 {
        max_abs(&self.current)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn residuals(model: &FeederModel, state: &LoadFlowState, inj: &InjectionProfile) -> ResidualReport {
    let n = model.n();
    let branches = model.branches();
    let mut voltage = vec![0.0; n];
    let mut current = vec![0.0; n];
    let mut real_power: Vec<f64> = (0..n).map(|i| state.p_flow[i] - inj.p[i]).collect();
    let mut reactive_power: Vec<f64> = (0..n).map(|i| state.q_flow[i] - inj.q[i]).collect();
    for j in 0..n {
        let b = &branches[j];
        let vi = if b.from == 0 { model.v0() } else { state.v[b.from - 1] };
        let (pj, qj, lj) = (state.p_flow[j], state.q_flow[j], state.l[j]);
        voltage[j] = (state.v[j] - vi - 2.0 * (b.r * pj + b.x * qj) + b.z2() * lj).abs();
        current[j] = (lj * state.v[j] - pj * pj - qj * qj).abs();
        if b.from != 0 {
            real_power[b.from - 1] -= pj - b.r * lj;
            reactive_power[b.from - 1] -= qj - b.x * lj;
        }
    }
    for v in real_power.iter_mut().chain(reactive_power.iter_mut()) {
        *v = v.abs();
    }
    let max = max_abs(&voltage)
        .max(max_abs(&current))
        .max(max_abs(&real_power))
        .max(max_abs(&reactive_power));
    ResidualReport {
        voltage,
        real_power,
        reactive_power,
        current,
        max,
    }
}

/// Real and reactive power drawn from the substation.
pub fn substation_injection(model: &FeederModel, state: &LoadFlowState) -> (f64, f64) {
    let mut p = 0.0;
    let mut q = 0.0;
    for (j, b) in model.branches().iter().enumerate() {
        if b.from == 0 {
            p += -state.p_flow[j] + b.r * state.l[j];
            q += -state.q_flow[j] + b.x * state.l[j];
        }
    }
    (p, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Voltage,
    RealFlow,
    ReactiveFlow,
    Current,
}

/// A limit violation. `element` is the user id of the node, or of the child
/// node of the branch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub quantity: Quantity,
    pub element: usize,
    pub value: f64,
    pub limit: f64,
    pub amount: f64,
}

/// Lists every quantity outside its limits inflated by `slack`. Limits are
/// inclusive.
pub fn check_admissible(model: &FeederModel, state: &LoadFlowState, slack: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |quantity, j: usize, value: f64, lo: f64, hi: f64| {
        if value < lo - slack {
            out.push(Violation {
                quantity,
                element: model.label(j + 1),
                value,
                limit: lo,
                amount: lo - value,
            });
        } else if value > hi + slack {
            out.push(Violation {
                quantity,
                element: model.label(j + 1),
                value,
                limit: hi,
                amount: value - hi,
            });
        }
    };
    for j in 0..model.n() {
        let lim = model.node_limits(j + 1);
        push(Quantity::Voltage, j, state.v[j], lim.vmin, lim.vmax);
    }
    for (j, b) in model.branches().iter().enumerate() {
        let l = &b.limits;
        push(Quantity::RealFlow, j, state.p_flow[j], l.pmin, l.pmax);
        push(Quantity::ReactiveFlow, j, state.q_flow[j], l.qmin, l.qmax);
        push(Quantity::Current, j, state.l[j], f64::NEG_INFINITY, l.lmax);
    }
    out
}
