use serde::{Deserialize, Serialize};

use super::OpfError;
use crate::feeder::FeederModel;
use crate::loadflow::InjectionProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `Σ (c1 p_g² + c2 p_g)`
    #[default]
    Cost,
    /// maximise `Σ p_g`
    Hosting,
    /// maximise `Σ p_g`
    FlexUp,
    /// minimise `Σ p_g`
    FlexDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRecord {
    pub node: usize,
    pub p_pu: f64,
    pub q_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRecord {
    pub node: usize,
    pub p_min_pu: f64,
    pub p_max_pu: f64,
    pub q_min_pu: f64,
    pub q_max_pu: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonRecord {
    #[serde(rename = "T")]
    pub steps: usize,
    pub dt_h: f64,
    pub load_series: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryRecord {
    pub node: usize,
    pub p_rate_pu: f64,
    pub b_max_puh: f64,
    pub b_min_puh: f64,
    pub b0_puh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_final_puh: Option<f64>,
}

/// Scenario file as written by users. Node ids are user labels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub loads: Vec<LoadRecord>,
    #[serde(default)]
    pub generators: Vec<GeneratorRecord>,
    #[serde(default)]
    pub objective: ObjectiveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<HorizonRecord>,
    #[serde(default)]
    pub batteries: Vec<BatteryRecord>,
}

impl ScenarioFile {
    pub fn parse(source: &[u8]) -> Result<Self, OpfError> {
        serde_json::from_slice(source).map_err(|e| OpfError::Parse(e.to_string()))
    }

    /// Resolves user labels against `model` and validates every record.
    pub fn resolve(&self, model: &FeederModel) -> Result<Scenario, OpfError> {
        let n = model.n();
        let node = |label: usize| -> Result<usize, OpfError> {
            match model.internal_index(label) {
                Some(i) if i > 0 => Ok(i),
                _ => Err(OpfError::UnknownNode(label)),
            }
        };
        let mut p_load = vec![0.0; n];
        let mut q_load = vec![0.0; n];
        for l in &self.loads {
            if !(l.p_pu.is_finite() && l.q_pu.is_finite()) {
                return Err(OpfError::InvalidScenario(format!("load at node {} is not finite", l.node)));
            }
            let i = node(l.node)?;
            p_load[i - 1] += l.p_pu;
            q_load[i - 1] += l.q_pu;
        }
        let generators = self
            .generators
            .iter()
            .map(|g| {
                Generator {
                    node: node(g.node)?,
                    label: g.node,
                    p_min: g.p_min_pu,
                    p_max: g.p_max_pu,
                    q_min: g.q_min_pu,
                    q_max: g.q_max_pu,
                    c1: g.c1,
                    c2: g.c2,
                }
                .validated()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let batteries = self
            .batteries
            .iter()
            .map(|b| {
                BatterySpec {
                    node: node(b.node)?,
                    label: b.node,
                    p_rate: b.p_rate_pu,
                    b_max: b.b_max_puh,
                    b_min: b.b_min_puh,
                    b0: b.b0_puh,
                    b_final: b.b_final_puh,
                }
                .validated()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let horizon = match &self.horizon {
            None => None,
            Some(h) => {
                if h.steps == 0 {
                    return Err(OpfError::InvalidScenario("horizon needs T >= 1".into()));
                }
                if !(h.dt_h.is_finite() && h.dt_h > 0.0) {
                    return Err(OpfError::InvalidScenario(format!("dt_h must be positive, got {}", h.dt_h)));
                }
                if h.load_series.len() != h.steps {
                    return Err(OpfError::InvalidScenario(format!(
                        "load_series has {} entries, expected T = {}",
                        h.load_series.len(),
                        h.steps
                    )));
                }
                if h.load_series.iter().any(|s| !s.is_finite()) {
                    return Err(OpfError::InvalidScenario("load_series is not finite".into()));
                }
                Some(Horizon {
                    steps: h.steps,
                    dt: h.dt_h,
                    load_series: h.load_series.clone(),
                })
            }
        };
        Ok(Scenario {
            p_load,
            q_load,
            generators,
            objective: self.objective,
            horizon,
            batteries,
        })
    }
}

/// Controllable unit. `node` is the internal node number (1-based).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generator {
    pub node: usize,
    pub label: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Generator {
    pub fn validated(self) -> Result<Self, OpfError> {
        let vals = [self.p_min, self.p_max, self.q_min, self.q_max, self.c1, self.c2];
        let bad = |msg: &str| Err(OpfError::InvalidGenerator(format!("node {}: {msg}", self.label)));
        if vals.iter().any(|v| !v.is_finite()) {
            return bad("non-finite data");
        }
        if self.p_min > self.p_max {
            return bad("p_min > p_max");
        }
        if self.q_min > self.q_max {
            return bad("q_min > q_max");
        }
        if self.c1 < 0.0 {
            return bad("negative quadratic cost");
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatterySpec {
    pub node: usize,
    pub label: usize,
    /// Charge/discharge limit; positive battery power is discharge.
    pub p_rate: f64,
    pub b_max: f64,
    pub b_min: f64,
    pub b0: f64,
    /// Required state of charge at the end of the horizon.
    pub b_final: Option<f64>,
}

impl BatterySpec {
    pub fn validated(self) -> Result<Self, OpfError> {
        let bad = |msg: &str| Err(OpfError::InvalidBattery(format!("node {}: {msg}", self.label)));
        let vals = [self.p_rate, self.b_max, self.b_min, self.b0];
        if vals.iter().any(|v| !v.is_finite()) || self.b_final.is_some_and(|b| !b.is_finite()) {
            return bad("non-finite data");
        }
        if self.p_rate < 0.0 {
            return bad("negative power rating");
        }
        if !(self.b_min <= self.b0 && self.b0 <= self.b_max) {
            return bad("initial state of charge outside [b_min, b_max]");
        }
        if let Some(bf) = self.b_final {
            if !(self.b_min <= bf && bf <= self.b_max) {
                return bad("final state of charge outside [b_min, b_max]");
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Horizon {
    pub steps: usize,
    pub dt: f64,
    pub load_series: Vec<f64>,
}

/// Resolved scenario in internal node order: `p_load[i]` is the demand of
/// internal node `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub generators: Vec<Generator>,
    pub objective: ObjectiveKind,
    pub horizon: Option<Horizon>,
    pub batteries: Vec<BatterySpec>,
}

impl Scenario {
    /// Demand only, no controllable units.
    pub fn with_loads(p_load: Vec<f64>, q_load: Vec<f64>) -> Self {
        Self {
            p_load,
            q_load,
            generators: Vec::new(),
            objective: ObjectiveKind::Hosting,
            horizon: None,
            batteries: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.p_load.len()
    }

    /// Net injections `p = Σ p_g + Σ p_b − P_L`, internal order.
    pub fn injection(&self, p_g: &[f64], q_g: &[f64], p_b: &[f64]) -> InjectionProfile {
        let mut p: Vec<f64> = self.p_load.iter().map(|v| -v).collect();
        let mut q: Vec<f64> = self.q_load.iter().map(|v| -v).collect();
        for (g, (&pg, &qg)) in self.generators.iter().zip(p_g.iter().zip(q_g)) {
            p[g.node - 1] += pg;
            q[g.node - 1] += qg;
        }
        for (b, &pb) in self.batteries.iter().zip(p_b) {
            p[b.node - 1] += pb;
        }
        InjectionProfile { p, q }
    }

    /// Forecast injections, demand only.
    pub fn forecast(&self) -> InjectionProfile {
        self.injection(&[], &[], &[])
    }

    pub fn steps(&self) -> usize {
        self.horizon.as_ref().map_or(1, |h| h.steps)
    }

    pub fn dt(&self) -> f64 {
        self.horizon.as_ref().map_or(1.0, |h| h.dt)
    }

    /// Single-period scenario for step `t`, demand scaled by the load series.
    pub fn at_step(&self, t: usize) -> Scenario {
        let s = self.horizon.as_ref().map_or(1.0, |h| h.load_series[t]);
        Scenario {
            p_load: self.p_load.iter().map(|v| v * s).collect(),
            q_load: self.q_load.iter().map(|v| v * s).collect(),
            generators: self.generators.clone(),
            objective: self.objective,
            horizon: None,
            batteries: Vec::new(),
        }
    }

    pub fn expand_horizon(&self) -> Vec<Scenario> {
        (0..self.steps()).map(|t| self.at_step(t)).collect()
    }
}
