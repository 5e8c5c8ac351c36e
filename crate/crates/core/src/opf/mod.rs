//! Robust single-period and multi-period programs.
//!
//! Every step contributes the block
//!
//! ```text
//! variables   p_g, q_g (per generator), l⁺ (per branch), p_b (per battery)
//! P⁺ = C p − D_R l⁻ <= P̄        P⁻ = C p − D_R l⁺ >= P̲
//! Q⁺ = C q − D_X l⁻ <= Q̄        Q⁻ = C q − D_X l⁺ >= Q̲
//! V⁺ = v0 + M_p p + M_q q − H l⁻ <= V̄
//! V⁻ = v0 + M_p p + M_q q − H l⁺ >= V̲
//! l⁺ >= l⁰,  l⁺ >= 2 l⁻ − l⁰,  l⁺ <= l̄
//! ```
//!
//! with `p = Σ p_g + Σ p_b − P_L`, `q = Σ q_g − Q_L` and `l⁻` the affine
//! lower envelope. Steps are coupled only through the battery state of
//! charge `B(t+1) = B(t) − P_b(t) Δt`.

mod scenario;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

pub use scenario::{
    BatteryRecord, BatterySpec, Generator, GeneratorRecord, Horizon, HorizonRecord, LoadRecord,
    ObjectiveKind, Scenario, ScenarioFile,
};

use crate::bounds::{build_envelope, CurrentEnvelope, OperatingPoint};
use crate::feeder::{FeederModel, SensitivityMatrices};
use crate::loadflow::InjectionProfile;
use crate::qp::{QpError, QpProblem, QpSolution, QpStatus, SparseMatrix, INF};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpfError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario refers to unknown node {0}")]
    UnknownNode(usize),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error("invalid battery: {0}")]
    InvalidBattery(String),
    #[error("cost objective needs at least one generator")]
    NoGenerators,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no operating point for step {0}")]
    MissingOperatingPoint(usize),
    #[error("program is infeasible; certificate rows: {}", rows.join(", "))]
    Infeasible { certificate: Vec<f64>, rows: Vec<String> },
    #[error("program is unbounded")]
    Unbounded,
    #[error("solver stopped at the iteration limit after {0} iterations")]
    SolverLimit(usize),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("solution invariant violated: {0}")]
    Invariant(String),
}

/// Column offsets of one step's variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StepLayout {
    pub offset: usize,
    pub generators: usize,
    pub branches: usize,
    pub batteries: usize,
}

impl StepLayout {
    pub fn width(&self) -> usize {
        2 * self.generators + self.branches + self.batteries
    }
    pub fn p_g(&self, k: usize) -> usize {
        self.offset + k
    }
    pub fn q_g(&self, k: usize) -> usize {
        self.offset + self.generators + k
    }
    pub fn l_plus(&self, j: usize) -> usize {
        self.offset + 2 * self.generators + j
    }
    pub fn p_b(&self, b: usize) -> usize {
        self.offset + 2 * self.generators + self.branches + b
    }
}

#[derive(Debug, Clone)]
struct StepData {
    layout: StepLayout,
    scenario: Scenario,
    envelope: CurrentEnvelope,
}

/// An assembled program together with what is needed to read its solution.
#[derive(Debug, Clone)]
pub struct OpfProgram {
    pub qp: QpProblem,
    steps: Vec<StepData>,
    batteries: Vec<BatterySpec>,
    dt: f64,
    mats: SensitivityMatrices,
    labels: Vec<usize>,
}

impl OpfProgram {
    pub fn steps(&self) -> usize {
        self.steps.len()
    }

    pub fn layout(&self, t: usize) -> StepLayout {
        self.steps[t].layout
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn batteries(&self) -> &[BatterySpec] {
        &self.batteries
    }

    /// Net injections of step `t` at the primal point `x`, internal order.
    pub fn injection(&self, t: usize, x: &[f64]) -> InjectionProfile {
        let s = &self.steps[t];
        let (pg, qg, _, pb) = self.split(s.layout, x);
        s.scenario.injection(&pg, &qg, &pb)
    }

    fn split(&self, lay: StepLayout, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let pg = (0..lay.generators).map(|k| x[lay.p_g(k)]).collect();
        let qg = (0..lay.generators).map(|k| x[lay.q_g(k)]).collect();
        let lp = (0..lay.branches).map(|j| x[lay.l_plus(j)]).collect();
        let pb = (0..lay.batteries).map(|b| x[lay.p_b(b)]).collect();
        (pg, qg, lp, pb)
    }

    fn to_user(&self, v: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (i, x) in v.iter().enumerate() {
            out[self.labels[i + 1] - 1] = *x;
        }
        out
    }
}

/// Solved robust program for one period. Per-node and per-branch vectors are
/// in user order: index `k` is node `k + 1`, or the branch feeding it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustOpfSolution {
    pub generator_nodes: Vec<usize>,
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    pub battery_nodes: Vec<usize>,
    pub p_b: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub q_plus: Vec<f64>,
    pub q_minus: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    pub l_minus: Vec<f64>,
    pub l_plus: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
}

impl RobustOpfSolution {
    /// Injections in internal order, ready for the load flow.
    pub fn injection(&self, model: &FeederModel) -> InjectionProfile {
        InjectionProfile {
            p: model.from_user_order(&self.p),
            q: model.from_user_order(&self.q),
        }
    }

    /// `(V⁺ + V⁻) / 2`, user order.
    pub fn v_mid(&self) -> Vec<f64> {
        self.v_plus
            .iter()
            .zip(&self.v_minus)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn total_generation(&self) -> f64 {
        self.p_g.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchSchedule {
    pub steps: usize,
    pub dt: f64,
    pub battery_nodes: Vec<usize>,
    /// `p_b[t][b]`, positive is discharge.
    pub p_b: Vec<Vec<f64>>,
    /// `soc[t][b]` for `t = 0..=T`.
    pub soc: Vec<Vec<f64>>,
    pub periods: Vec<RobustOpfSolution>,
    pub objective: f64,
    pub status: QpStatus,
}

impl DispatchSchedule {
    pub fn total_generation(&self) -> f64 {
        self.periods.iter().map(|s| s.total_generation()).sum()
    }
}

struct Rows {
    trip: Vec<(usize, usize, f64)>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    names: Vec<String>,
}

impl Rows {
    fn push(&mut self, coefs: &[(usize, f64)], lb: f64, ub: f64, name: String) {
        let r = self.lb.len();
        self.trip.extend(coefs.iter().filter(|(_, v)| *v != 0.0).map(|&(c, v)| (r, c, v)));
        self.lb.push(lb);
        self.ub.push(ub);
        self.names.push(name);
    }
}

/// One family of per-branch (or per-node) affine rows
/// `Ap p + Aq q + Al l⁺ + base`.
struct Family<'a> {
    name: &'a str,
    ap: &'a DMatrix<f64>,
    aq: &'a DMatrix<f64>,
    al: Option<&'a DMatrix<f64>>,
    base: DVector<f64>,
}

fn push_family(rows: &mut Rows, fam: &Family, step: &StepData, prefix: &str, labels: &[usize], bounds: impl Fn(usize) -> (f64, f64)) {
    let lay = step.layout;
    let sc = &step.scenario;
    let n = lay.branches;
    let pl = DVector::from_column_slice(&sc.p_load);
    let ql = DVector::from_column_slice(&sc.q_load);
    let konst = &fam.base - fam.ap * &pl - fam.aq * &ql;
    let mut coefs = Vec::new();
    for r in 0..n {
        coefs.clear();
        for (k, g) in sc.generators.iter().enumerate() {
            coefs.push((lay.p_g(k), fam.ap[(r, g.node - 1)]));
            coefs.push((lay.q_g(k), fam.aq[(r, g.node - 1)]));
        }
        if let Some(al) = fam.al {
            for j in 0..n {
                coefs.push((lay.l_plus(j), al[(r, j)]));
            }
        }
        for (b, bat) in sc.batteries.iter().enumerate() {
            coefs.push((lay.p_b(b), fam.ap[(r, bat.node - 1)]));
        }
        let (lo, hi) = bounds(r);
        let shift = |v: f64| if v.abs() >= INF { v } else { v - konst[r] };
        rows.push(&coefs, shift(lo), shift(hi), format!("{prefix}{}[{}]", fam.name, labels[r + 1]));
    }
}

fn check_inputs(model: &FeederModel, mats: &SensitivityMatrices, op: &OperatingPoint, sc: &Scenario, t: usize) -> Result<(), OpfError> {
    let n = model.n();
    if mats.n() != n || op.n() != n || sc.n() != n || sc.q_load.len() != n {
        return Err(OpfError::Dimension(format!(
            "step {t}: model has {n} nodes, matrices {}, operating point {}, scenario {}",
            mats.n(),
            op.n(),
            sc.n()
        )));
    }
    Ok(())
}

/// Single-period robust program around `op`. Batteries in the scenario are
/// ignored.
pub fn build_p3(
    model: &FeederModel,
    mats: &SensitivityMatrices,
    op: &OperatingPoint,
    scenario: &Scenario,
) -> Result<OpfProgram, OpfError> {
    let mut sc = scenario.clone();
    sc.horizon = None;
    sc.batteries.clear();
    build_program(model, mats, std::slice::from_ref(op), std::slice::from_ref(&sc), &[], 1.0, "")
}

/// Multi-period program: one block per step around `ops[t]`, with loads and
/// generators from `steps[t]`, coupled by the battery state of charge.
pub fn build_p4(
    model: &FeederModel,
    mats: &SensitivityMatrices,
    ops: &[OperatingPoint],
    steps: &[Scenario],
    batteries: &[BatterySpec],
    dt: f64,
) -> Result<OpfProgram, OpfError> {
    if steps.is_empty() {
        return Err(OpfError::InvalidScenario("horizon needs T >= 1".into()));
    }
    if ops.len() < steps.len() {
        return Err(OpfError::MissingOperatingPoint(ops.len()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(OpfError::InvalidScenario(format!("dt must be positive, got {dt}")));
    }
    let steps: Vec<Scenario> = steps
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.horizon = None;
            s.batteries = batteries.to_vec();
            s
        })
        .collect();
    build_program(model, mats, &ops[..steps.len()], &steps, batteries, dt, "t")
}

fn build_program(
    model: &FeederModel,
    mats: &SensitivityMatrices,
    ops: &[OperatingPoint],
    steps: &[Scenario],
    batteries: &[BatterySpec],
    dt: f64,
    tag: &str,
) -> Result<OpfProgram, OpfError> {
    let n = model.n();
    let labels = model.labels().to_vec();
    let mut data = Vec::with_capacity(steps.len());
    let mut offset = 0;
    for (t, (sc, op)) in steps.iter().zip(ops).enumerate() {
        check_inputs(model, mats, op, sc, t)?;
        if sc.objective == ObjectiveKind::Cost && sc.generators.is_empty() {
            return Err(OpfError::NoGenerators);
        }
        for g in &sc.generators {
            if g.node == 0 || g.node > n {
                return Err(OpfError::UnknownNode(g.label));
            }
        }
        let layout = StepLayout {
            offset,
            generators: sc.generators.len(),
            branches: n,
            batteries: sc.batteries.len(),
        };
        offset += layout.width();
        data.push(StepData {
            layout,
            scenario: sc.clone(),
            envelope: build_envelope(op, mats),
        });
    }
    let nvars = offset;

    let mut rows = Rows {
        trip: Vec::new(),
        lb: Vec::new(),
        ub: Vec::new(),
        names: Vec::new(),
    };
    let mut g_trip = Vec::new();
    let mut c = vec![0.0; nvars];
    let mut var_names = vec![String::new(); nvars];
    let zero = DMatrix::<f64>::zeros(n, n);
    let eye = DMatrix::<f64>::identity(n, n);
    let vmin = model.vmin();
    let vmax = model.vmax();
    let br: Vec<_> = model.branches().iter().map(|b| b.limits).collect();

    for (t, step) in data.iter().enumerate() {
        let prefix = if tag.is_empty() { String::new() } else { format!("{tag}{t}:") };
        let lay = step.layout;
        let env = &step.envelope;
        for (k, g) in step.scenario.generators.iter().enumerate() {
            var_names[lay.p_g(k)] = format!("{prefix}p_g[{}#{k}]", g.label);
            var_names[lay.q_g(k)] = format!("{prefix}q_g[{}#{k}]", g.label);
            match step.scenario.objective {
                ObjectiveKind::Cost => {
                    g_trip.push((lay.p_g(k), lay.p_g(k), 2.0 * g.c1));
                    c[lay.p_g(k)] = g.c2;
                }
                ObjectiveKind::Hosting | ObjectiveKind::FlexUp => c[lay.p_g(k)] = -1.0,
                ObjectiveKind::FlexDown => c[lay.p_g(k)] = 1.0,
            }
        }
        for j in 0..n {
            var_names[lay.l_plus(j)] = format!("{prefix}l_plus[{}]", labels[j + 1]);
        }
        for (b, bat) in step.scenario.batteries.iter().enumerate() {
            var_names[lay.p_b(b)] = format!("{prefix}p_b[{}#{b}]", bat.label);
        }

        let dr_lop = &mats.d_r * &env.lo_p;
        let dr_loq = &mats.d_r * &env.lo_q;
        let dx_lop = &mats.d_x * &env.lo_p;
        let dx_loq = &mats.d_x * &env.lo_q;
        let h_lop = &mats.h * &env.lo_p;
        let h_loq = &mats.h * &env.lo_q;
        let v0 = DVector::from_element(n, mats.v0);

        let p_plus_p = &mats.c - &dr_lop;
        let p_plus_q = -dr_loq;
        let q_plus_p = -dx_lop;
        let q_plus_q = &mats.c - &dx_loq;
        let v_plus_p = &mats.m_p - &h_lop;
        let v_plus_q = &mats.m_q - &h_loq;
        let neg_dr = -&mats.d_r;
        let neg_dx = -&mats.d_x;
        let neg_h = -&mats.h;
        let epi_p = &env.lo_p * -2.0;
        let epi_q = &env.lo_q * -2.0;

        let families = [
            (
                Family { name: "p_plus", ap: &p_plus_p, aq: &p_plus_q, al: None, base: -(&mats.d_r * &env.lo_const) },
                Box::new(|r: usize| (-INF, br[r].pmax)) as Box<dyn Fn(usize) -> (f64, f64)>,
            ),
            (
                Family { name: "p_minus", ap: &mats.c, aq: &zero, al: Some(&neg_dr), base: DVector::zeros(n) },
                Box::new(|r: usize| (br[r].pmin, INF)),
            ),
            (
                Family { name: "q_plus", ap: &q_plus_p, aq: &q_plus_q, al: None, base: -(&mats.d_x * &env.lo_const) },
                Box::new(|r: usize| (-INF, br[r].qmax)),
            ),
            (
                Family { name: "q_minus", ap: &zero, aq: &mats.c, al: Some(&neg_dx), base: DVector::zeros(n) },
                Box::new(|r: usize| (br[r].qmin, INF)),
            ),
            (
                Family { name: "v_plus_max", ap: &v_plus_p, aq: &v_plus_q, al: None, base: &v0 - &mats.h * &env.lo_const },
                Box::new(|r: usize| (-INF, vmax[r])),
            ),
            (
                Family { name: "v_minus_min", ap: &mats.m_p, aq: &mats.m_q, al: Some(&neg_h), base: v0.clone() },
                Box::new(|r: usize| (vmin[r], INF)),
            ),
            (
                Family { name: "l_plus_max", ap: &zero, aq: &zero, al: Some(&eye), base: DVector::zeros(n) },
                Box::new(|r: usize| (-INF, br[r].lmax)),
            ),
            (
                Family { name: "l_plus_floor", ap: &zero, aq: &zero, al: Some(&eye), base: DVector::zeros(n) },
                Box::new(|r: usize| (env.l0[r], INF)),
            ),
            (
                Family { name: "l_plus_epi", ap: &epi_p, aq: &epi_q, al: Some(&eye), base: &env.lo_const * -2.0 },
                Box::new(|r: usize| (-env.l0[r], INF)),
            ),
        ];
        for (fam, bounds) in &families {
            push_family(&mut rows, fam, step, &prefix, &labels, bounds);
        }

        for (k, g) in step.scenario.generators.iter().enumerate() {
            rows.push(&[(lay.p_g(k), 1.0)], g.p_min, g.p_max, format!("{prefix}p_g_box[{}#{k}]", g.label));
            rows.push(&[(lay.q_g(k), 1.0)], g.q_min, g.q_max, format!("{prefix}q_g_box[{}#{k}]", g.label));
        }
        for (b, bat) in step.scenario.batteries.iter().enumerate() {
            rows.push(&[(lay.p_b(b), 1.0)], -bat.p_rate, bat.p_rate, format!("{prefix}p_b_box[{}#{b}]", bat.label));
        }
    }

    let horizon = data.len();
    for (b, bat) in batteries.iter().enumerate() {
        for t in 1..=horizon {
            let coefs: Vec<_> = data[..t].iter().map(|s| (s.layout.p_b(b), -dt)).collect();
            let (lo, hi) = match (t == horizon, bat.b_final) {
                (true, Some(bf)) => (bf - bat.b0, bf - bat.b0),
                _ => (bat.b_min - bat.b0, bat.b_max - bat.b0),
            };
            rows.push(&coefs, lo, hi, format!("soc[{}#{b}]@{t}", bat.label));
        }
    }

    let m = SparseMatrix::from_triplets(rows.lb.len(), nvars, &rows.trip);
    let g = SparseMatrix::from_triplets(nvars, nvars, &g_trip);
    let qp = QpProblem::with_names(g, c, m, rows.lb, rows.ub, var_names, rows.names)?;
    Ok(OpfProgram {
        qp,
        steps: data,
        batteries: batteries.to_vec(),
        dt,
        mats: mats.clone(),
        labels,
    })
}

fn check_status(program: &OpfProgram, sol: &QpSolution) -> Result<(), OpfError> {
    match sol.status {
        QpStatus::Optimal => Ok(()),
        QpStatus::PrimalInfeasible => {
            let cert = sol.certificate.clone().unwrap_or_default();
            let mut idx: Vec<usize> = (0..cert.len()).filter(|&i| cert[i].abs() > 1e-6).collect();
            idx.sort_by(|&a, &b| cert[b].abs().total_cmp(&cert[a].abs()).then(a.cmp(&b)));
            let rows = idx.iter().map(|&i| program.qp.row_names[i].clone()).collect();
            Err(OpfError::Infeasible { certificate: cert, rows })
        }
        QpStatus::DualInfeasible => Err(OpfError::Unbounded),
        QpStatus::MaxIter => Err(OpfError::SolverLimit(sol.iterations)),
    }
}

/// Projects unit set-points onto their boxes and keeps the state of charge
/// inside its bounds. Moves each value by at most the solver tolerance.
fn snap(program: &OpfProgram, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    for step in &program.steps {
        let lay = step.layout;
        for (k, g) in step.scenario.generators.iter().enumerate() {
            x[lay.p_g(k)] = x[lay.p_g(k)].clamp(g.p_min, g.p_max);
            x[lay.q_g(k)] = x[lay.q_g(k)].clamp(g.q_min, g.q_max);
        }
        for (b, bat) in step.scenario.batteries.iter().enumerate() {
            x[lay.p_b(b)] = x[lay.p_b(b)].clamp(-bat.p_rate, bat.p_rate);
        }
    }
    let dt = program.dt;
    for (b, bat) in program.batteries.iter().enumerate() {
        let mut soc = bat.b0;
        for step in &program.steps {
            let k = step.layout.p_b(b);
            let mut p = x[k];
            let target = (soc - p * dt).clamp(bat.b_min, bat.b_max);
            if target != soc - p * dt {
                p = ((soc - target) / dt).clamp(-bat.p_rate, bat.p_rate);
                let nudge = f64::EPSILON * (p.abs() + soc.abs() / dt).max(f64::MIN_POSITIVE);
                for _ in 0..16 {
                    let next = soc - p * dt;
                    if next > bat.b_max {
                        p += nudge;
                    } else if next < bat.b_min {
                        p -= nudge;
                    } else {
                        break;
                    }
                }
                x[k] = p;
            }
            soc -= p * dt;
        }
    }
    x
}

fn extract_step(program: &OpfProgram, sol: &QpSolution, x: &[f64], t: usize) -> Result<RobustOpfSolution, OpfError> {
    let step = &program.steps[t];
    let mats = &program.mats;
    let (p_g, q_g, lp, p_b) = program.split(step.layout, x);
    let inj = step.scenario.injection(&p_g, &q_g, &p_b);
    let p = DVector::from_column_slice(&inj.p);
    let q = DVector::from_column_slice(&inj.q);
    let l_minus = step.envelope.lower(&p, &q);
    // tightest epigraph value; lowering l⁺ only relaxes its dependent rows
    let l_plus = step.envelope.upper(&p, &q);
    for (j, &v) in lp.iter().enumerate() {
        if v + 1e-6 * (1.0 + v.abs()) < l_plus[j] {
            return Err(OpfError::Invariant(format!(
                "epigraph variable below its envelope at node {} ({v} < {})",
                program.labels[j + 1],
                l_plus[j]
            )));
        }
    }
    let (p_plus, q_plus) = mats.flows(&p, &q, &l_minus);
    let (p_minus, q_minus) = mats.flows(&p, &q, &l_plus);
    let v_plus = mats.voltages(&p, &q, &l_minus);
    let v_minus = mats.voltages(&p, &q, &l_plus);

    let tol = |a: f64, b: f64| 1e-6 * (1.0 + a.abs().max(b.abs()));
    let pairs = [
        ("l", &l_minus, &l_plus),
        ("P", &p_minus, &p_plus),
        ("Q", &q_minus, &q_plus),
        ("V", &v_minus, &v_plus),
    ];
    for (name, lo, hi) in pairs {
        for j in 0..lo.len() {
            if lo[j] > hi[j] + tol(lo[j], hi[j]) {
                return Err(OpfError::Invariant(format!(
                    "{name}⁻ > {name}⁺ at node {} ({} > {})",
                    program.labels[j + 1],
                    lo[j],
                    hi[j]
                )));
            }
        }
    }

    let objective = {
        let lay = step.layout;
        let range = lay.offset..lay.offset + lay.width();
        let lin: f64 = x[range.clone()].iter().zip(&program.qp.c[range.clone()]).map(|(a, b)| a * b).sum();
        let quad: f64 = program
            .qp
            .g
            .triplets()
            .filter(|(i, j, _)| range.contains(i) && range.contains(j))
            .map(|(i, j, v)| 0.5 * v * x[i] * x[j])
            .sum();
        lin + quad
    };

    Ok(RobustOpfSolution {
        generator_nodes: step.scenario.generators.iter().map(|g| g.label).collect(),
        p_g,
        q_g,
        battery_nodes: step.scenario.batteries.iter().map(|b| b.label).collect(),
        p_b,
        p: program.to_user(&p),
        q: program.to_user(&q),
        p_plus: program.to_user(&p_plus),
        p_minus: program.to_user(&p_minus),
        q_plus: program.to_user(&q_plus),
        q_minus: program.to_user(&q_minus),
        v_plus: program.to_user(&v_plus),
        v_minus: program.to_user(&v_minus),
        l_minus: program.to_user(&l_minus),
        l_plus: program.to_user(&l_plus),
        objective,
        status: sol.status,
        primal_res: sol.primal_res,
        dual_res: sol.dual_res,
        iterations: sol.iterations,
    })
}

/// Reads the first period of a solved program. Refuses any status other
/// than optimal; an infeasible status surfaces the certificate.
pub fn extract_solution(program: &OpfProgram, sol: &QpSolution) -> Result<RobustOpfSolution, OpfError> {
    check_status(program, sol)?;
    extract_step(program, sol, &snap(program, &sol.x), 0)
}

pub fn extract_schedule(program: &OpfProgram, sol: &QpSolution) -> Result<DispatchSchedule, OpfError> {
    check_status(program, sol)?;
    let x = snap(program, &sol.x);
    let periods = (0..program.steps())
        .map(|t| extract_step(program, sol, &x, t))
        .collect::<Result<Vec<_>, _>>()?;
    let nb = program.batteries.len();
    let p_b: Vec<Vec<f64>> = (0..program.steps())
        .map(|t| (0..nb).map(|b| x[program.layout(t).p_b(b)]).collect())
        .collect();
    let mut soc = vec![program.batteries.iter().map(|b| b.b0).collect::<Vec<_>>()];
    for pb in &p_b {
        let last = soc.last().unwrap();
        let next = last.iter().zip(pb).map(|(b, p)| b - p * program.dt).collect();
        soc.push(next);
    }
    Ok(DispatchSchedule {
        steps: program.steps(),
        dt: program.dt,
        battery_nodes: program.batteries.iter().map(|b| b.label).collect(),
        p_b,
        soc,
        periods,
        objective: program.qp.objective(&x),
        status: sol.status,
    })
}
