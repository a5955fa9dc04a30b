//! Intention-labeled trajectory tree grown along the time axis.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Intention, Waypoint};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub waypoint: Waypoint,
    pub parent: Option<NodeId>,
    /// Intention that produced the step into this node; `None` at the root.
    pub intention: Option<Intention>,
    /// Timestep index; the root sits at 0.
    pub depth: usize,
    pub cum_log_prob: f64,
    /// Pre-squash latent offset that produced this node.
    pub latent: Option<[f64; 3]>,
    /// Set along the all-Keep zero-latent path that reproduces the reference.
    pub is_reference: bool,
}

/// Nodes are kept sorted by id; ids are never reused, so pruning leaves
/// surviving ids untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTree {
    nodes: Vec<TreeNode>,
    next_id: NodeId,
}

impl TrajectoryTree {
    pub fn new(root: Waypoint) -> Self {
        TrajectoryTree {
            nodes: vec![TreeNode {
                id: 0,
                waypoint: root,
                parent: None,
                intention: None,
                depth: 0,
                cum_log_prob: 0.0,
                latent: None,
                is_reference: true,
            }],
            next_id: 1,
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn add_child(
        &mut self,
        parent: NodeId,
        waypoint: Waypoint,
        intention: Intention,
        cum_log_prob: f64,
        latent: Option<[f64; 3]>,
        is_reference: bool,
    ) -> Result<NodeId> {
        let depth = self
            .node(parent)
            .ok_or_else(|| Error::TreeInvariant(format!("unknown parent node {parent}")))?
            .depth
            + 1;
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.push(TreeNode {
            id,
            waypoint,
            parent: Some(parent),
            intention: Some(intention),
            depth,
            cum_log_prob,
            latent,
            is_reference,
        });
        Ok(id)
    }

    fn has_children(&self) -> Vec<bool> {
        let mut flags = vec![false; self.nodes.len()];
        for n in &self.nodes {
            if let Some(p) = n.parent {
                if let Ok(i) = self.nodes.binary_search_by_key(&p, |m| m.id) {
                    flags[i] = true;
                }
            }
        }
        flags
    }

    /// Childless nodes in id order.
    pub fn leaves(&self) -> Vec<&TreeNode> {
        let flags = self.has_children();
        self.nodes
            .iter()
            .zip(flags)
            .filter(|(_, c)| !c)
            .map(|(n, _)| n)
            .collect()
    }

    /// Common depth of all leaves, or an invariant error when they are ragged.
    pub fn leaf_depth(&self) -> Result<usize> {
        let leaves = self.leaves();
        let d = leaves[0].depth;
        if let Some(bad) = leaves.iter().find(|l| l.depth != d) {
            return Err(Error::TreeInvariant(format!(
                "ragged leaves: node {} at depth {} vs {}",
                bad.id, bad.depth, d
            )));
        }
        Ok(d)
    }

    /// Nodes from the root down to `id`, inclusive.
    pub fn path(&self, id: NodeId) -> Result<Vec<&TreeNode>> {
        let mut out = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let n = self
                .node(c)
                .ok_or_else(|| Error::TreeInvariant(format!("dangling node id {c}")))?;
            out.push(n);
            cur = n.parent;
        }
        out.reverse();
        Ok(out)
    }

    pub fn path_waypoints(&self, id: NodeId) -> Result<Vec<Waypoint>> {
        Ok(self.path(id)?.into_iter().map(|n| n.waypoint).collect())
    }

    /// Checks single root and the parent-depth relation.
    pub fn validate(&self) -> Result<()> {
        let roots = self.nodes.iter().filter(|n| n.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::TreeInvariant(format!("expected one root, found {roots}")));
        }
        for n in &self.nodes {
            if let Some(p) = n.parent {
                let parent = self
                    .node(p)
                    .ok_or_else(|| Error::TreeInvariant(format!("node {} has missing parent {p}", n.id)))?;
                if n.depth != parent.depth + 1 {
                    return Err(Error::TreeInvariant(format!(
                        "node {} depth {} under parent depth {}",
                        n.id, n.depth, parent.depth
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keeps the `keep_k` best leaves by `values` (aligned with [`leaves`]),
    /// ties going to the lower id, and drops every branch left without a
    /// surviving leaf.
    ///
    /// [`leaves`]: TrajectoryTree::leaves
    pub fn prune(&self, keep_k: usize, values: &[f64]) -> Result<TrajectoryTree> {
        if keep_k == 0 {
            return Err(Error::Config("prune keep_k must be at least 1".into()));
        }
        let leaves = self.leaves();
        if values.len() != leaves.len() {
            return Err(Error::LengthMismatch {
                expected: leaves.len(),
                found: values.len(),
            });
        }
        if keep_k >= leaves.len() {
            return Ok(self.clone());
        }
        let mut order: Vec<usize> = (0..leaves.len()).collect();
        let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
        order.sort_by(|&a, &b| {
            key(values[b])
                .partial_cmp(&key(values[a]))
                .unwrap_or(Ordering::Equal)
                .then(leaves[a].id.cmp(&leaves[b].id))
        });
        let mut keep = vec![false; self.nodes.len()];
        for &li in order.iter().take(keep_k) {
            let mut cur = Some(leaves[li].id);
            while let Some(c) = cur {
                let idx = self
                    .nodes
                    .binary_search_by_key(&c, |n| n.id)
                    .map_err(|_| Error::TreeInvariant(format!("dangling node id {c}")))?;
                if keep[idx] {
                    break;
                }
                keep[idx] = true;
                cur = self.nodes[idx].parent;
            }
        }
        let nodes = self
            .nodes
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(n, _)| n.clone())
            .collect();
        Ok(TrajectoryTree {
            nodes,
            next_id: self.next_id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fan_out(tree: &mut TrajectoryTree, n: usize) {
        let leaves: Vec<_> = tree.leaves().iter().map(|l| l.id).collect();
        for leaf in leaves {
            for i in 0..n {
                let mid = tree
                    .add_child(leaf, Waypoint::new(i as f64, 0.0, 0.0), Intention::DEFAULT_SET[i % 5], 0.0, None, false)
                    .unwrap();
                tree.add_child(mid, Waypoint::new(i as f64, 1.0, 0.0), Intention::DEFAULT_SET[i % 5], 0.0, None, false)
                    .unwrap();
            }
        }
    }

    #[test]
    fn leaves_grow_as_power_of_branching() {
        let mut t = TrajectoryTree::new(Waypoint::ORIGIN);
        for k in 1..=4 {
            fan_out(&mut t, 5);
            assert_eq!(t.leaves().len(), 5usize.pow(k));
            assert_eq!(t.leaf_depth().unwrap(), 2 * k as usize);
        }
        t.validate().unwrap();
    }

    #[test]
    fn prune_keeps_top_values() {
        let mut t = TrajectoryTree::new(Waypoint::ORIGIN);
        fan_out(&mut t, 3);
        let p = t.prune(2, &[3.0, 1.0, 2.0]).unwrap();
        let ids: Vec<_> = p.leaves().iter().map(|l| l.id).collect();
        let all: Vec<_> = t.leaves().iter().map(|l| l.id).collect();
        assert_eq!(ids, vec![all[0], all[2]]);
        // the pruned branch's intermediate node is gone too
        assert_eq!(p.len(), 1 + 2 * 2);
        p.validate().unwrap();
    }

    #[test]
    fn prune_noop_when_k_covers_leaves() {
        let mut t = TrajectoryTree::new(Waypoint::ORIGIN);
        fan_out(&mut t, 3);
        assert_eq!(t.prune(3, &[0.0; 3]).unwrap(), t);
        assert_eq!(t.prune(10, &[0.0; 3]).unwrap(), t);
    }

    #[test]
    fn prune_ties_favor_lower_ids() {
        let mut t = TrajectoryTree::new(Waypoint::ORIGIN);
        fan_out(&mut t, 5);
        fan_out(&mut t, 5);
        let values = vec![0.5; 25];
        let a = t.prune(7, &values).unwrap();
        let b = t.prune(7, &values).unwrap();
        assert_eq!(a, b);
        let kept: Vec<_> = a.leaves().iter().map(|l| l.id).collect();
        let lowest: Vec<_> = t.leaves().iter().take(7).map(|l| l.id).collect();
        assert_eq!(kept, lowest);
    }

    #[test]
    fn ragged_tree_is_detected() {
        let mut t = TrajectoryTree::new(Waypoint::ORIGIN);
        let a = t.add_child(0, Waypoint::ORIGIN, Intention::Keep, 0.0, None, false).unwrap();
        t.add_child(0, Waypoint::ORIGIN, Intention::Left, 0.0, None, false).unwrap();
        t.add_child(a, Waypoint::ORIGIN, Intention::Keep, 0.0, None, false).unwrap();
        assert!(matches!(t.leaf_depth(), Err(Error::TreeInvariant(_))));
    }
}
