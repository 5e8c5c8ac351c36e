use log::warn;

use super::{Branch, FeederModel};

impl FeederModel {
    /// Renumbers nodes in breadth-first order from the substation.
    ///
    /// Afterwards branch `k` feeds internal node `k + 1` from a parent with a
    /// smaller index, so the reduced incidence matrix is upper triangular with
    /// a unit diagonal. Branches given child→parent are flipped with a
    /// warning. The mapping back to user ids is kept in [`labels`].
    ///
    /// [`labels`]: FeederModel::labels
    pub fn order_radial(&self) -> FeederModel {
        let visit = self.bfs_order();
        let n = self.n();
        debug_assert_eq!(visit.len(), n + 1);

        let mut new_index = vec![0usize; n + 1];
        for (pos, &(node, _, _)) in visit.iter().enumerate() {
            new_index[node] = pos;
        }

        let mut labels = Vec::with_capacity(n + 1);
        let mut nodes = Vec::with_capacity(n);
        let mut branches = Vec::with_capacity(n);
        for (pos, &(node, parent, branch)) in visit.iter().enumerate() {
            labels.push(self.labels[node]);
            let Some(k) = branch else { continue };
            nodes.push(self.nodes[node - 1]);
            let b = &self.branches[k];
            if b.from != parent {
                warn!(
                    "branch {}->{} points upstream; reversed to {}->{}",
                    self.labels[b.from],
                    self.labels[b.to],
                    self.labels[parent],
                    self.labels[node]
                );
            }
            branches.push(Branch {
                from: new_index[parent],
                to: pos,
                r: b.r,
                x: b.x,
                limits: b.limits,
            });
        }

        FeederModel {
            v0: self.v0,
            nodes,
            branches,
            labels,
            ordered: true,
        }
    }
}
