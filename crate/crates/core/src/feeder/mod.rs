//! Radial feeder description and the linear branch-flow operators derived
//! from it.
//!
//! Node `0` is always the substation. A model with `n` non-substation nodes
//! carries exactly `n` branches. Before any matrix is built the model has to
//! be renumbered by [`FeederModel::order_radial`] so that every branch is
//! identified with its child node and parents precede children.

mod file;
mod matrices;
mod ordering;

use std::collections::VecDeque;

use thiserror::Error;

pub use file::{load_feeder, BaseRecord, BranchRecord, FeederFile, NodeRecord};
pub use matrices::SensitivityMatrices;

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("feeder file parse error: {0}")]
    Parse(String),
    #[error("non-radial feeder: {0}")]
    NonRadial(String),
    #[error("branch {from}->{to} has negative or non-finite impedance (r={r}, x={x})")]
    NegativeImpedance { from: usize, to: usize, r: f64, x: f64 },
    #[error("missing substation: no branch is incident to node 0")]
    MissingSubstation,
    #[error("invalid node set: {0}")]
    InvalidNodes(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("model is not in radial order; call order_radial first")]
    NotOrdered,
    #[error("I - A is singular: branch {0} does not point from a lower to a higher index")]
    SingularOrdering(usize),
}

/// Squared-voltage limits of a node (pu²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeLimits {
    pub vmin: f64,
    pub vmax: f64,
}

/// Operating limits of a branch. `lmax` is a squared current (pu²), the
/// flow limits are in pu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchLimits {
    pub lmax: f64,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
}

impl BranchLimits {
    /// Limits that never bind.
    pub fn unbounded() -> Self {
        Self {
            lmax: f64::INFINITY,
            pmin: f64::NEG_INFINITY,
            pmax: f64::INFINITY,
            qmin: f64::NEG_INFINITY,
            qmax: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub limits: BranchLimits,
}

impl Branch {
    /// |z|² of the branch impedance.
    pub fn z2(&self) -> f64 {
        self.r * self.r + self.x * self.x
    }
}

/// A validated radial feeder.
///
/// Internally nodes are numbered `0..=n`. `labels[i]` is the user-facing id
/// of internal node `i`; it is the identity until [`order_radial`] renumbers
/// the model.
///
/// [`order_radial`]: FeederModel::order_radial
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    v0: f64,
    nodes: Vec<NodeLimits>,
    branches: Vec<Branch>,
    labels: Vec<usize>,
    ordered: bool,
}

impl FeederModel {
    /// Validates and builds a model. `nodes` holds `(id, limits)` for ids
    /// `1..=n` in any order; an entry for the substation (id 0) is accepted
    /// and ignored.
    pub fn new(
        v0: f64,
        nodes: Vec<(usize, NodeLimits)>,
        branches: Vec<Branch>,
    ) -> Result<Self, FeederError> {
        if !(v0.is_finite() && v0 > 0.0) {
            return Err(FeederError::InvalidLimits(format!(
                "substation voltage must be positive, got {v0}"
            )));
        }
        let nodes: Vec<_> = nodes.into_iter().filter(|(id, _)| *id != 0).collect();
        let n = nodes.len();
        if n == 0 {
            return Err(FeederError::InvalidNodes(
                "feeder needs at least one non-substation node".into(),
            ));
        }
        let mut limits = vec![None; n];
        for (id, lim) in nodes {
            if id > n {
                return Err(FeederError::InvalidNodes(format!(
                    "node id {id} outside 1..={n}; ids must be contiguous"
                )));
            }
            if limits[id - 1].replace(lim).is_some() {
                return Err(FeederError::InvalidNodes(format!("duplicate node id {id}")));
            }
            if !(lim.vmin.is_finite() && lim.vmin > 0.0 && lim.vmin < lim.vmax) {
                return Err(FeederError::InvalidLimits(format!(
                    "node {id}: need 0 < vmin < vmax, got [{}, {}]",
                    lim.vmin, lim.vmax
                )));
            }
        }
        let nodes: Vec<NodeLimits> = limits.into_iter().map(|l| l.unwrap()).collect();

        for b in &branches {
            if b.from > n || b.to > n || b.from == b.to {
                return Err(FeederError::InvalidNodes(format!(
                    "branch {}->{} references an unknown node or is a self loop",
                    b.from, b.to
                )));
            }
            if !(b.r.is_finite() && b.x.is_finite() && b.r >= 0.0 && b.x >= 0.0) {
                return Err(FeederError::NegativeImpedance {
                    from: b.from,
                    to: b.to,
                    r: b.r,
                    x: b.x,
                });
            }
            let l = &b.limits;
            if !(l.lmax > 0.0) || l.pmin > l.pmax || l.qmin > l.qmax || l.lmax.is_nan() {
                return Err(FeederError::InvalidLimits(format!(
                    "branch {}->{}: need lmax > 0, pmin <= pmax, qmin <= qmax",
                    b.from, b.to
                )));
            }
        }
        if branches.len() != n {
            return Err(FeederError::NonRadial(format!(
                "{} nodes plus the substation need exactly {n} branches, found {}",
                n,
                branches.len()
            )));
        }
        if !branches.iter().any(|b| b.from == 0 || b.to == 0) {
            return Err(FeederError::MissingSubstation);
        }
        let model = Self {
            v0,
            nodes,
            branches,
            labels: (0..=n).collect(),
            ordered: false,
        };
        if model.bfs_order().len() != n + 1 {
            return Err(FeederError::NonRadial(
                "graph is disconnected or contains a cycle".into(),
            ));
        }
        Ok(model)
    }

    /// Number of non-substation nodes (and of branches).
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Substation squared voltage.
    pub fn v0(&self) -> f64 {
        self.v0
    }

    /// Limits of internal node `node` (1-based, the substation has none).
    pub fn node_limits(&self, node: usize) -> NodeLimits {
        self.nodes[node - 1]
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn is_ordered(&self) -> bool {
        self.ordered
    }

    /// User-facing ids, indexed by internal node number.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    /// Internal node number of a user id.
    pub fn internal_index(&self, label: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// Branch feeding internal node `node` in an ordered model.
    pub fn branch_into(&self, node: usize) -> &Branch {
        debug_assert!(self.ordered);
        &self.branches[node - 1]
    }

    /// Parent of internal node `node` in an ordered model.
    pub fn parent(&self, node: usize) -> usize {
        self.branch_into(node).from
    }

    /// Children lists of an ordered model, indexed by internal node.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.n() + 1];
        for (k, b) in self.branches.iter().enumerate() {
            debug_assert_eq!(b.to, k + 1);
            ch[b.from].push(b.to);
        }
        ch
    }

    pub fn vmin(&self) -> Vec<f64> {
        self.nodes.iter().map(|l| l.vmin).collect()
    }

    pub fn vmax(&self) -> Vec<f64> {
        self.nodes.iter().map(|l| l.vmax).collect()
    }

    /// Reorders a per-node vector (index `i` is internal node `i + 1`) so that
    /// index `k` corresponds to user id `k + 1`.
    pub fn to_user_order(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (i, v) in values.iter().enumerate() {
            out[self.labels[i + 1] - 1] = *v;
        }
        out
    }

    /// Inverse of [`to_user_order`](Self::to_user_order).
    pub fn from_user_order(&self, values: &[f64]) -> Vec<f64> {
        (0..values.len())
            .map(|i| values[self.labels[i + 1] - 1])
            .collect()
    }

    /// Breadth-first visit from the substation; children in ascending label
    /// order. Returns `(node, parent, branch index)` triples, root first.
    fn bfs_order(&self) -> Vec<(usize, usize, Option<usize>)> {
        let n = self.n();
        let mut adj = vec![Vec::new(); n + 1];
        for (k, b) in self.branches.iter().enumerate() {
            adj[b.from].push((b.to, k));
            adj[b.to].push((b.from, k));
        }
        for list in &mut adj {
            list.sort_by_key(|&(node, _)| self.labels[node]);
        }
        let mut seen = vec![false; n + 1];
        let mut used = vec![false; self.branches.len()];
        let mut out = vec![(0, 0, None)];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &(w, k) in &adj[u] {
                if used[k] {
                    continue;
                }
                used[k] = true;
                if seen[w] {
                    // cycle
                    return out;
                }
                seen[w] = true;
                out.push((w, u, Some(k)));
                queue.push_back(w);
            }
        }
        out
    }
}
