//! JSON feeder file.
//!
//! ```json
//! {
//!   "base": {"v0_pu2": 1.0},
//!   "nodes": [{"id": 1, "vmin_pu2": 0.9025, "vmax_pu2": 1.1025}],
//!   "branches": [{"from": 0, "to": 1, "r_pu": 0.01, "x_pu": 0.02,
//!                 "lmax_pu2": 1.0, "pmin_pu": -1.0, "pmax_pu": 1.0,
//!                 "qmin_pu": -1.0, "qmax_pu": 1.0}]
//! }
//! ```
//!
//! Branch limits may be omitted or `null`, meaning unbounded. Unknown fields
//! are rejected.

use serde::{Deserialize, Serialize};

use super::{Branch, BranchLimits, FeederError, FeederModel, NodeLimits};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    pub base: BaseRecord,
    pub nodes: Vec<NodeRecord>,
    pub branches: Vec<BranchRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseRecord {
    pub v0_pu2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: usize,
    pub vmin_pu2: f64,
    pub vmax_pu2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
    #[serde(default)]
    pub lmax_pu2: Option<f64>,
    #[serde(default)]
    pub pmin_pu: Option<f64>,
    #[serde(default)]
    pub pmax_pu: Option<f64>,
    #[serde(default)]
    pub qmin_pu: Option<f64>,
    #[serde(default)]
    pub qmax_pu: Option<f64>,
}

impl FeederFile {
    pub fn into_model(self) -> Result<FeederModel, FeederError> {
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| {
                (
                    n.id,
                    NodeLimits {
                        vmin: n.vmin_pu2,
                        vmax: n.vmax_pu2,
                    },
                )
            })
            .collect();
        let branches = self
            .branches
            .into_iter()
            .map(|b| Branch {
                from: b.from,
                to: b.to,
                r: b.r_pu,
                x: b.x_pu,
                limits: BranchLimits {
                    lmax: b.lmax_pu2.unwrap_or(f64::INFINITY),
                    pmin: b.pmin_pu.unwrap_or(f64::NEG_INFINITY),
                    pmax: b.pmax_pu.unwrap_or(f64::INFINITY),
                    qmin: b.qmin_pu.unwrap_or(f64::NEG_INFINITY),
                    qmax: b.qmax_pu.unwrap_or(f64::INFINITY),
                },
            })
            .collect();
        FeederModel::new(self.base.v0_pu2, nodes, branches)
    }
}

/// Parses and validates a feeder file. The returned model keeps the file's
/// numbering; call [`FeederModel::order_radial`] before building matrices.
pub fn load_feeder(source: &[u8]) -> Result<FeederModel, FeederError> {
    let file: FeederFile =
        serde_json::from_slice(source).map_err(|e| FeederError::Parse(e.to_string()))?;
    file.into_model()
}
