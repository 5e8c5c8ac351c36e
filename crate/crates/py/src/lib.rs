//! Python bindings. Node-indexed inputs and outputs are in user order:
//! entry `k` belongs to node `k + 1`, or to the branch feeding it.

use ::feeder_envelope::{
    self as fe, hessian_eigs, jacobian, operating_point, solve_loadflow, FeederModel, InjectionProfile,
    LoadFlowSettings, OperatingPoint, ScenarioFile, SensitivityMatrices, TighteningSettings,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Serialises through JSON into plain Python containers.
fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[pyclass(module = "feeder_envelope", frozen)]
struct Feeder {
    model: FeederModel,
    mats: SensitivityMatrices,
}

impl Feeder {
    fn from_model(model: FeederModel) -> PyResult<Self> {
        let model = model.order_radial();
        let mats = model.build_sensitivities().map_err(value_err)?;
        Ok(Self { model, mats })
    }

    fn injection(&self, p: Vec<f64>, q: Vec<f64>) -> PyResult<InjectionProfile> {
        let n = self.model.n();
        if p.len() != n || q.len() != n {
            return Err(PyValueError::new_err(format!("expected {n} injections, got {} and {}", p.len(), q.len())));
        }
        Ok(InjectionProfile { p: self.model.from_user_order(&p), q: self.model.from_user_order(&q) })
    }

    fn op(&self, p: Vec<f64>, q: Vec<f64>) -> PyResult<OperatingPoint> {
        let inj = self.injection(p, q)?;
        operating_point(&self.model, &inj, &LoadFlowSettings::default()).map_err(runtime_err)
    }

    fn scenario(&self, scenario_json: &str) -> PyResult<fe::Scenario> {
        ScenarioFile::parse(scenario_json.as_bytes())
            .and_then(|f| f.resolve(&self.model))
            .map_err(value_err)
    }
}

#[pymethods]
impl Feeder {
    /// Parses a feeder from JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::from_model(fe::load_feeder(text.as_bytes()).map_err(value_err)?)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| value_err(format!("{}: {e}", path.display())))?;
        Self::from_model(fe::load_feeder(&bytes).map_err(value_err)?)
    }

    /// The bundled 13-node feeder.
    #[staticmethod]
    fn bundled() -> PyResult<Self> {
        Self::from_model(fe::datasets::feeder13())
    }

    #[getter]
    fn n(&self) -> usize {
        self.model.n()
    }

    #[getter]
    fn v0(&self) -> f64 {
        self.model.v0()
    }

    /// Sensitivity matrices as nested lists, keyed `A`, `C`, `D_R`, `D_X`,
    /// `M_p`, `M_q`, `H`. Rows and columns follow the internal radial order.
    fn sensitivities<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        let m = &self.mats;
        for (k, mat) in [("A", &m.a), ("C", &m.c), ("D_R", &m.d_r), ("D_X", &m.d_x), ("M_p", &m.m_p), ("M_q", &m.m_q), ("H", &m.h)] {
            d.set_item(k, rows(mat))?;
        }
        d.set_item("order", self.model.labels()[1..].to_vec())?;
        Ok(d)
    }

    /// Exact load flow for nodal injections `p`, `q` (loads negative).
    fn loadflow(&self, py: Python<'_>, p: Vec<f64>, q: Vec<f64>) -> PyResult<Py<PyAny>> {
        let inj = self.injection(p, q)?;
        let s = solve_loadflow(&self.model, &inj, &LoadFlowSettings::default()).map_err(runtime_err)?;
        let d = PyDict::new(py);
        d.set_item("V", self.model.to_user_order(&s.v))?;
        d.set_item("P", self.model.to_user_order(&s.p_flow))?;
        d.set_item("Q", self.model.to_user_order(&s.q_flow))?;
        d.set_item("l", self.model.to_user_order(&s.l))?;
        d.set_item("converged", s.converged)?;
        d.set_item("iterations", s.iterations)?;
        d.set_item("residual", fe::residuals(&self.model, &s, &inj).max)?;
        Ok(d.into_any().unbind())
    }

    /// Partial derivatives of each branch current with respect to its own
    /// `P`, `Q` and sending-end `v`, at the load flow of `p`, `q`.
    fn jacobian<'py>(&self, py: Python<'py>, p: Vec<f64>, q: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let j = jacobian(&self.op(p, q)?);
        let d = PyDict::new(py);
        d.set_item("jp", self.model.to_user_order(&j.jp))?;
        d.set_item("jq", self.model.to_user_order(&j.jq))?;
        d.set_item("jv", self.model.to_user_order(&j.jv))?;
        Ok(d)
    }

    /// Ascending Hessian eigenvalues of the branch feeding `node`.
    fn hessian_eigs(&self, p: Vec<f64>, q: Vec<f64>, node: usize) -> PyResult<[f64; 3]> {
        let i = self
            .model
            .internal_index(node)
            .filter(|&i| i > 0)
            .ok_or_else(|| PyValueError::new_err(format!("unknown node {node}")))?;
        Ok(hessian_eigs(&self.op(p, q)?, i - 1))
    }

    fn __repr__(&self) -> String {
        format!("Feeder(n={}, v0={})", self.model.n(), self.model.v0())
    }
}

fn settings(tighten: bool, eps: f64) -> TighteningSettings {
    let mut s = TighteningSettings { eps, ..TighteningSettings::default() };
    if !tighten {
        s.max_outer = 1;
    }
    s
}

fn outcome_dict(py: Python<'_>, out: &fe::TightenOutcome) -> PyResult<Py<PyAny>> {
    let d = PyDict::new(py);
    d.set_item("solution", to_py(py, &out.solution)?)?;
    d.set_item("converged", out.converged)?;
    d.set_item("admissible", out.admissible)?;
    d.set_item("iterations", out.trace.iterations)?;
    d.set_item("violations", to_py(py, &out.violations)?)?;
    d.set_item("trace", to_py(py, &out.trace.records)?)?;
    Ok(d.into_any().unbind())
}

/// Robust dispatch for a scenario given as JSON text.
#[pyfunction]
#[pyo3(signature = (feeder, scenario_json, tighten = true, eps = 1e-5))]
fn solve(py: Python<'_>, feeder: &Feeder, scenario_json: &str, tighten: bool, eps: f64) -> PyResult<Py<PyAny>> {
    let sc = feeder.scenario(scenario_json)?;
    let out = py
        .detach(|| fe::tighten(&feeder.model, &feeder.mats, &sc, &settings(tighten, eps)))
        .map_err(runtime_err)?;
    outcome_dict(py, &out)
}

/// Hosting capacity per candidate unit of the scenario.
#[pyfunction]
#[pyo3(signature = (feeder, scenario_json, tighten = true, eps = 1e-5))]
fn hosting(py: Python<'_>, feeder: &Feeder, scenario_json: &str, tighten: bool, eps: f64) -> PyResult<Py<PyAny>> {
    let mut sc = feeder.scenario(scenario_json)?;
    sc.objective = fe::ObjectiveKind::Hosting;
    let out = py
        .detach(|| fe::tighten(&feeder.model, &feeder.mats, &sc, &settings(tighten, eps)))
        .map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("nodes", out.solution.generator_nodes.clone())?;
    d.set_item("capacity", out.solution.p_g.clone())?;
    d.set_item("total", out.solution.total_generation())?;
    d.set_item("admissible", out.admissible)?;
    Ok(d.into_any().unbind())
}

#[pymodule(name = "feeder_envelope")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Feeder>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(hosting, m)?)?;
    Ok(())
}
