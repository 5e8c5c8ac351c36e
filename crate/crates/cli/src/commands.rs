use std::path::PathBuf;

use feeder_envelope::opf::{BatteryRecord, GeneratorRecord};
use feeder_envelope::{
    check_admissible, flexibility_envelope, one_shot, residuals, solve_loadflow, tighten, tighten_multiperiod,
    FeederModel, InjectionProfile, LoadFlowSettings, LoadFlowState, ObjectiveKind, QpSettings, Relinearization,
    RobustOpfSolution, ScenarioFile, SensitivityMatrices, TightenOutcome, TighteningSettings, Violation,
};
use serde::{Deserialize, Serialize};

use crate::batch;
use crate::error::{CliError, ExitCode};
use crate::io::{num, read, read_feeder, read_scenario, OutDir};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub feeder: PathBuf,
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub eps: f64,
    pub qp_eps: f64,
    pub oracle_tol: f64,
    pub validation_slack: f64,
    pub max_outer: usize,
    pub tighten: bool,
    pub relinearization: Relinearization,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, v) in [
            ("--eps", self.eps),
            ("--qp-eps", self.qp_eps),
            ("--oracle-tol", self.oracle_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::input(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.validation_slack >= 0.0) {
            return Err(CliError::input(format!("--validation-slack must be >= 0, got {}", self.validation_slack)));
        }
        if self.max_outer == 0 {
            return Err(CliError::input("--max-outer must be at least 1"));
        }
        Ok(())
    }

    fn loadflow(&self) -> LoadFlowSettings {
        LoadFlowSettings { tol: self.oracle_tol, ..LoadFlowSettings::default() }
    }

    fn tightening(&self) -> TighteningSettings {
        TighteningSettings {
            eps: self.eps,
            max_outer: self.max_outer,
            validation_slack: self.validation_slack,
            loadflow: self.loadflow(),
            qp: QpSettings { eps_p: self.qp_eps, eps_d: self.qp_eps, ..QpSettings::default() },
        }
    }
}

struct Inputs {
    model: FeederModel,
    mats: SensitivityMatrices,
    file: ScenarioFile,
}

fn inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    cfg.validate()?;
    let model = read_feeder(&cfg.feeder)?;
    let mats = model.build_sensitivities()?;
    let file = read_scenario(&cfg.scenario)?;
    Ok(Inputs { model, mats, file })
}

#[derive(Serialize)]
struct ExactState {
    converged: bool,
    iterations: usize,
    residual: f64,
    #[serde(rename = "V")]
    v: Vec<f64>,
    #[serde(rename = "P")]
    p: Vec<f64>,
    #[serde(rename = "Q")]
    q: Vec<f64>,
    l: Vec<f64>,
}

impl ExactState {
    fn new(model: &FeederModel, state: &LoadFlowState, inj: &InjectionProfile) -> Self {
        Self {
            converged: state.converged,
            iterations: state.iterations,
            residual: residuals(model, state, inj).max,
            v: model.to_user_order(&state.v),
            p: model.to_user_order(&state.p_flow),
            q: model.to_user_order(&state.q_flow),
            l: model.to_user_order(&state.l),
        }
    }
}

#[derive(Serialize)]
struct Validation {
    admissible: bool,
    violation_count: usize,
    slack: f64,
    violations: Vec<Violation>,
}

impl Validation {
    fn new(violations: Vec<Violation>, slack: f64) -> Self {
        Self { admissible: violations.is_empty(), violation_count: violations.len(), slack, violations }
    }
}

fn admissibility_status(count: usize) -> Result<ExitCode, CliError> {
    if count == 0 {
        Ok(ExitCode::Ok)
    } else {
        Err(CliError::new(
            ExitCode::Admissibility,
            format!("{count} limit violation(s) in the exact load flow"),
        ))
    }
}

pub fn loadflow(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let Inputs { model, file, .. } = inputs(cfg)?;
    let sc = file.resolve(&model)?;
    let inj = sc.forecast();
    let state = solve_loadflow(&model, &inj, &cfg.loadflow())?;
    let out = OutDir::create(&cfg.out)?;
    out.json("loadflow.json", &ExactState::new(&model, &state, &inj))?;
    if !state.converged {
        return Err(CliError::new(
            ExitCode::Divergence,
            format!("load flow did not converge in {} iterations", state.iterations),
        ));
    }
    Ok(ExitCode::Ok)
}

#[derive(Serialize)]
struct SolveReport<'a> {
    objective_kind: ObjectiveKind,
    tightened: bool,
    converged: bool,
    iterations: usize,
    selected: usize,
    solution: &'a RobustOpfSolution,
    exact: ExactState,
    validation: Validation,
}

fn run_single(cfg: &RunConfig, inp: &Inputs, file: &ScenarioFile) -> Result<TightenOutcome, CliError> {
    let sc = file.resolve(&inp.model)?;
    let settings = cfg.tightening();
    let out = if cfg.tighten {
        tighten(&inp.model, &inp.mats, &sc, &settings)?
    } else {
        one_shot(&inp.model, &inp.mats, &sc, &settings)?
    };
    if !out.converged && cfg.tighten {
        log::warn!("tightening did not reach eps = {} in {} iterations", cfg.eps, out.trace.iterations);
    }
    Ok(out)
}

fn voltage_rows(model: &FeederModel, sol: &RobustOpfSolution, state: &LoadFlowState) -> Vec<Vec<String>> {
    let v = model.to_user_order(&state.v);
    (0..model.n())
        .map(|k| vec![(k + 1).to_string(), num(sol.v_minus[k]), num(v[k]), num(sol.v_plus[k])])
        .collect()
}

pub fn solve(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let inp = inputs(cfg)?;
    let outcome = run_single(cfg, &inp, &inp.file)?;
    let out = OutDir::create(&cfg.out)?;
    let inj = outcome.solution.injection(&inp.model);
    let report = SolveReport {
        objective_kind: inp.file.objective,
        tightened: cfg.tighten,
        converged: outcome.converged,
        iterations: outcome.trace.iterations,
        selected: outcome.selected,
        solution: &outcome.solution,
        exact: ExactState::new(&inp.model, &outcome.state, &inj),
        validation: Validation::new(outcome.violations.clone(), cfg.validation_slack),
    };
    out.json("solution.json", &report)?;
    out.csv(
        "voltages.csv",
        &["node", "v_minus", "v_exact", "v_plus"],
        &voltage_rows(&inp.model, &outcome.solution, &outcome.state),
    )?;
    out.text("trace.jsonl", &outcome.trace.to_json_lines())?;
    admissibility_status(outcome.violations.len())
}

#[derive(Serialize)]
struct HostingRun {
    nodes: Vec<usize>,
    capacity: Vec<f64>,
    total: f64,
    converged: bool,
    iterations: usize,
    validation: Validation,
}

impl HostingRun {
    fn new(out: &TightenOutcome, slack: f64) -> Self {
        Self {
            nodes: out.solution.generator_nodes.clone(),
            capacity: out.solution.p_g.clone(),
            total: out.solution.total_generation(),
            converged: out.converged,
            iterations: out.trace.iterations,
            validation: Validation::new(out.violations.clone(), slack),
        }
    }
}

#[derive(Serialize)]
struct HostingReport {
    tightened: bool,
    distributed: HostingRun,
    centralized: HostingRun,
}

/// One unit at `node` whose ranges are the sums of the candidate units.
fn centralize_generators(gens: &[GeneratorRecord], node: usize) -> Vec<GeneratorRecord> {
    let sum = |f: fn(&GeneratorRecord) -> f64| gens.iter().map(f).sum::<f64>();
    vec![GeneratorRecord {
        node,
        p_min_pu: sum(|g| g.p_min_pu),
        p_max_pu: sum(|g| g.p_max_pu),
        q_min_pu: sum(|g| g.q_min_pu),
        q_max_pu: sum(|g| g.q_max_pu),
        c1: 0.0,
        c2: 0.0,
    }]
}

pub fn hosting(cfg: &RunConfig, centralized_node: usize) -> Result<ExitCode, CliError> {
    let inp = inputs(cfg)?;
    if inp.file.generators.is_empty() {
        return Err(CliError::input("hosting scenario lists no candidate units"));
    }
    let mut distributed = inp.file.clone();
    distributed.objective = ObjectiveKind::Hosting;
    distributed.horizon = None;
    distributed.batteries.clear();
    let mut centralized = distributed.clone();
    centralized.generators = centralize_generators(&distributed.generators, centralized_node);

    let jobs: Vec<_> = [&distributed, &centralized]
        .into_iter()
        .map(|f| {
            let inp = &inp;
            move || run_single(cfg, inp, f)
        })
        .collect();
    let mut runs = batch::run(jobs, batch::thread_cap()).into_iter();
    let d = runs.next().expect("two runs")?;
    let c = runs.next().expect("two runs")?;
    let report = HostingReport {
        tightened: cfg.tighten,
        distributed: HostingRun::new(&d, cfg.validation_slack),
        centralized: HostingRun::new(&c, cfg.validation_slack),
    };
    log::info!(
        "hosting capacity: distributed {:.6} pu, centralized at node {centralized_node} {:.6} pu",
        report.distributed.total,
        report.centralized.total
    );
    let out = OutDir::create(&cfg.out)?;
    out.json("hosting.json", &report)?;
    out.text("trace.jsonl", &d.trace.to_json_lines())?;
    admissibility_status(d.violations.len() + c.violations.len())
}

#[derive(Serialize)]
struct ScheduleReport {
    objective: f64,
    total_generation: f64,
    converged: bool,
    iterations: usize,
    selected: usize,
    relinearization: Relinearization,
    schedule: feeder_envelope::DispatchSchedule,
    validation: Validation,
}

#[derive(Serialize)]
struct ComparisonEntry {
    configuration: &'static str,
    total_generation: f64,
    objective: f64,
    admissible: bool,
}

fn run_schedule(cfg: &RunConfig, inp: &Inputs, file: &ScenarioFile) -> Result<ScheduleReport, CliError> {
    let sc = file.resolve(&inp.model)?;
    let mut settings = cfg.tightening();
    if !cfg.tighten {
        settings.max_outer = 1;
    }
    let out = tighten_multiperiod(&inp.model, &inp.mats, &sc, cfg.relinearization, &settings)?;
    let violations: Vec<Violation> = out.violations.iter().flatten().cloned().collect();
    Ok(ScheduleReport {
        objective: out.schedule.objective,
        total_generation: out.schedule.total_generation(),
        converged: out.converged,
        iterations: out.trace.iterations,
        selected: out.selected,
        relinearization: cfg.relinearization,
        schedule: out.schedule,
        validation: Validation::new(violations, cfg.validation_slack),
    })
}

fn centralize_batteries(bats: &[BatteryRecord], node: usize) -> Vec<BatteryRecord> {
    let sum = |f: fn(&BatteryRecord) -> f64| bats.iter().map(f).sum::<f64>();
    let b_final_puh = bats.iter().map(|b| b.b_final_puh).sum::<Option<f64>>();
    vec![BatteryRecord {
        node,
        p_rate_pu: sum(|b| b.p_rate_pu),
        b_max_puh: sum(|b| b.b_max_puh),
        b_min_puh: sum(|b| b.b_min_puh),
        b0_puh: sum(|b| b.b0_puh),
        b_final_puh,
    }]
}

fn schedule_rows(inp: &Inputs, file: &ScenarioFile, r: &ScheduleReport) -> Result<Vec<Vec<String>>, CliError> {
    let sc = file.resolve(&inp.model)?;
    let s = &r.schedule;
    Ok((0..s.steps)
        .map(|t| {
            let load: f64 = sc.at_step(t).p_load.iter().sum();
            let discharge: f64 = s.p_b[t].iter().sum();
            let soc: f64 = s.soc[t + 1].iter().sum();
            vec![t.to_string(), num(load), num(discharge), num(s.periods[t].total_generation()), num(soc)]
        })
        .collect())
}

pub fn multiperiod(cfg: &RunConfig, compare: bool, centralized_node: usize) -> Result<ExitCode, CliError> {
    let inp = inputs(cfg)?;
    if inp.file.horizon.is_none() {
        return Err(CliError::input("multiperiod scenario needs a horizon block"));
    }
    let out = OutDir::create(&cfg.out)?;
    let main = run_schedule(cfg, &inp, &inp.file)?;
    out.json("schedule.json", &main)?;
    out.csv(
        "schedule.csv",
        &["t", "load_p", "battery_discharge", "generation", "soc_total"],
        &schedule_rows(&inp, &inp.file, &main)?,
    )?;
    let mut violations = main.validation.violation_count;

    if compare {
        let mut none = inp.file.clone();
        none.batteries.clear();
        let mut central = inp.file.clone();
        central.batteries = centralize_batteries(&inp.file.batteries, centralized_node);
        let configs = [("no-storage", &none), ("centralized", &central)];
        let jobs: Vec<_> = configs
            .iter()
            .map(|&(_, f)| {
                let inp = &inp;
                move || run_schedule(cfg, inp, f)
            })
            .collect();
        let mut entries = Vec::new();
        for ((name, _), res) in configs.iter().zip(batch::run(jobs, batch::thread_cap())) {
            let r = res?;
            violations += r.validation.violation_count;
            entries.push(ComparisonEntry {
                configuration: name,
                total_generation: r.total_generation,
                objective: r.objective,
                admissible: r.validation.admissible,
            });
        }
        entries.push(ComparisonEntry {
            configuration: "distributed",
            total_generation: main.total_generation,
            objective: main.objective,
            admissible: main.validation.admissible,
        });
        for e in &entries {
            log::info!("{}: total generation {:.6} pu", e.configuration, e.total_generation);
        }
        out.json("comparison.json", &entries)?;
    }
    admissibility_status(violations)
}

/// Unit set points, either bare or nested under `solution` as in
/// `solution.json`.
#[derive(Debug, Deserialize)]
struct Dispatch {
    generator_nodes: Vec<usize>,
    p_g: Vec<f64>,
    #[serde(default)]
    q_g: Vec<f64>,
    #[serde(default)]
    battery_nodes: Vec<usize>,
    #[serde(default)]
    p_b: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DispatchFile {
    Nested { solution: Dispatch },
    Bare(Dispatch),
}

fn read_dispatch(path: &std::path::Path) -> Result<Dispatch, CliError> {
    let parsed: DispatchFile = serde_json::from_slice(&read(path)?)
        .map_err(|e| CliError::input(format!("{}: not a dispatch file: {e}", path.display())))?;
    let d = match parsed {
        DispatchFile::Nested { solution } => solution,
        DispatchFile::Bare(d) => d,
    };
    let q_ok = d.q_g.is_empty() || d.q_g.len() == d.generator_nodes.len();
    if d.p_g.len() != d.generator_nodes.len() || !q_ok || d.p_b.len() != d.battery_nodes.len() {
        return Err(CliError::input(format!("{}: set-point and node lists differ in length", path.display())));
    }
    Ok(d)
}

#[derive(Serialize)]
struct ValidateReport {
    exact: ExactState,
    validation: Validation,
}

pub fn validate(cfg: &RunConfig, dispatch: &std::path::Path) -> Result<ExitCode, CliError> {
    let Inputs { model, file, .. } = inputs(cfg)?;
    let d = read_dispatch(dispatch)?;
    let sc = file.resolve(&model)?;
    let mut inj = sc.forecast();
    let node = |label: usize| {
        model.internal_index(label).ok_or_else(|| CliError::input(format!("dispatch refers to unknown node {label}")))
    };
    for (k, &label) in d.generator_nodes.iter().enumerate() {
        let i = node(label)? - 1;
        inj.p[i] += d.p_g[k];
        inj.q[i] += d.q_g.get(k).copied().unwrap_or(0.0);
    }
    for (k, &label) in d.battery_nodes.iter().enumerate() {
        inj.p[node(label)? - 1] += d.p_b[k];
    }
    let state = solve_loadflow(&model, &inj, &cfg.loadflow())?;
    let violations = check_admissible(&model, &state, cfg.validation_slack);
    let count = violations.len();
    let out = OutDir::create(&cfg.out)?;
    out.json(
        "validation.json",
        &ValidateReport { exact: ExactState::new(&model, &state, &inj), validation: Validation::new(violations, cfg.validation_slack) },
    )?;
    if !state.converged {
        return Err(CliError::new(ExitCode::Divergence, "load flow did not converge"));
    }
    admissibility_status(count)
}

/// Per-unit up and down bounds of the scenario's units.
pub fn flexibility(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let inp = inputs(cfg)?;
    let sc = inp.file.resolve(&inp.model)?;
    let env = flexibility_envelope(&inp.model, &inp.mats, &sc, &cfg.tightening())?;
    #[derive(Serialize)]
    struct Report<'a> {
        nodes: &'a [usize],
        up: &'a [f64],
        down: &'a [f64],
        admissible: bool,
    }
    let outcomes = [env.up_outcome.as_ref(), env.down_outcome.as_ref()];
    let violations: usize = outcomes.iter().flatten().map(|o| o.violations.len()).sum();
    let out = OutDir::create(&cfg.out)?;
    out.json("flexibility.json", &Report { nodes: &env.nodes, up: &env.up, down: &env.down, admissible: violations == 0 })?;
    admissibility_status(violations)
}
