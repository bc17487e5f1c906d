use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::design::Design;
use crate::error::{Error, Result};

pub type NodeId = usize;
pub const ROOT: NodeId = 0;

/// Axis-aligned split: `x <= cut` goes left, a missing `x` follows `missing_left`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub var: usize,
    pub cut: f64,
    pub missing_left: bool,
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, x: f64) -> bool {
        if x.is_nan() {
            self.missing_left
        } else {
            x <= self.cut
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf {
        mu: DVector<f64>,
    },
    Internal {
        rule: SplitRule,
        left: NodeId,
        right: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub parent: Option<NodeId>,
    pub depth: usize,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// Binary regression tree with `p`-dimensional leaf parameters, stored in an arena.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Option<Node>>,
    free: Vec<NodeId>,
    p: usize,
}

impl PartialEq for DecisionTree {
    fn eq(&self, other: &Self) -> bool {
        self.to_record() == other.to_record()
    }
}

impl DecisionTree {
    pub fn stump(p: usize) -> Self {
        Self::with_root_mu(DVector::zeros(p))
    }

    pub fn with_root_mu(mu: DVector<f64>) -> Self {
        let p = mu.len();
        DecisionTree {
            nodes: vec![Some(Node {
                kind: NodeKind::Leaf { mu },
                parent: None,
                depth: 0,
            })],
            free: Vec::new(),
            p,
        }
    }

    pub fn response_dim(&self) -> usize {
        self.p
    }

    /// Upper bound on node ids (for id-indexed scratch buffers).
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        self.nodes[id].as_ref().expect("dangling node id")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id].as_mut().expect("dangling node id")
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|_| i))
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.node_ids().filter(|&i| self.node(i).is_leaf()).collect()
    }

    pub fn internal_nodes(&self) -> Vec<NodeId> {
        self.node_ids().filter(|&i| !self.node(i).is_leaf()).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.node_ids().filter(|&i| self.node(i).is_leaf()).count()
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        match self.node(id).kind {
            NodeKind::Internal { left, right, .. } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn rule(&self, id: NodeId) -> Option<&SplitRule> {
        match &self.node(id).kind {
            NodeKind::Internal { rule, .. } => Some(rule),
            NodeKind::Leaf { .. } => None,
        }
    }

    /// Internal nodes whose two children are both leaves.
    pub fn singly_internal(&self) -> Vec<NodeId> {
        self.node_ids()
            .filter(|&i| match self.children(i) {
                Some((l, r)) => self.node(l).is_leaf() && self.node(r).is_leaf(),
                None => false,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.node_ids().map(|i| self.node(i).depth).max().unwrap_or(0)
    }

    pub fn leaf_mu(&self, id: NodeId) -> &DVector<f64> {
        match &self.node(id).kind {
            NodeKind::Leaf { mu } => mu,
            NodeKind::Internal { .. } => panic!("node {id} is not a leaf"),
        }
    }

    pub fn set_leaf_mu(&mut self, id: NodeId, value: DVector<f64>) {
        match &mut self.node_mut(id).kind {
            NodeKind::Leaf { mu } => *mu = value,
            NodeKind::Internal { .. } => panic!("node {id} is not a leaf"),
        }
    }

    pub fn set_rule(&mut self, id: NodeId, new_rule: SplitRule) {
        match &mut self.node_mut(id).kind {
            NodeKind::Internal { rule, .. } => *rule = new_rule,
            NodeKind::Leaf { .. } => panic!("node {id} is a leaf"),
        }
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        if let Some(id) = self.free.pop() {
            self.nodes[id] = Some(node);
            id
        } else {
            self.nodes.push(Some(node));
            self.nodes.len() - 1
        }
    }

    /// Splits leaf `id`; the two new leaves start at zero.
    pub fn grow(&mut self, id: NodeId, rule: SplitRule) -> (NodeId, NodeId) {
        assert!(self.node(id).is_leaf(), "grow on internal node");
        let depth = self.node(id).depth + 1;
        let zero = DVector::zeros(self.p);
        let left = self.alloc(Node {
            kind: NodeKind::Leaf { mu: zero.clone() },
            parent: Some(id),
            depth,
        });
        let right = self.alloc(Node {
            kind: NodeKind::Leaf { mu: zero },
            parent: Some(id),
            depth,
        });
        self.node_mut(id).kind = NodeKind::Internal { rule, left, right };
        (left, right)
    }

    /// Collapses a singly-internal node into a zero leaf.
    pub fn prune(&mut self, id: NodeId) {
        let (l, r) = self.children(id).expect("prune on leaf");
        assert!(self.node(l).is_leaf() && self.node(r).is_leaf());
        self.nodes[l] = None;
        self.nodes[r] = None;
        self.free.push(l);
        self.free.push(r);
        self.node_mut(id).kind = NodeKind::Leaf {
            mu: DVector::zeros(self.p),
        };
    }

    /// Node ids of the subtree rooted at `id`, in pre-order.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            out.push(v);
            if let Some((l, r)) = self.children(v) {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    pub fn is_ancestor_or_self(&self, anc: NodeId, mut id: NodeId) -> bool {
        loop {
            if id == anc {
                return true;
            }
            match self.node(id).parent {
                Some(p) => id = p,
                None => return false,
            }
        }
    }

    /// Follows split rules from `start` using `value(var)` for predictor lookups.
    #[inline]
    pub fn route_from(&self, start: NodeId, value: impl Fn(usize) -> f64) -> NodeId {
        let mut id = start;
        loop {
            match &self.node(id).kind {
                NodeKind::Leaf { .. } => return id,
                NodeKind::Internal { rule, left, right } => {
                    id = if rule.goes_left(value(rule.var)) {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn route(&self, design: &Design, row: usize) -> NodeId {
        self.route_from(ROOT, |v| design.value(row, v))
    }

    pub fn route_values(&self, x: &[f64]) -> NodeId {
        self.route_from(ROOT, |v| x[v])
    }

    pub fn predict_values(&self, x: &[f64]) -> &DVector<f64> {
        self.leaf_mu(self.route_values(x))
    }

    pub fn max_var(&self) -> Option<usize> {
        self.internal_nodes()
            .iter()
            .filter_map(|&i| self.rule(i).map(|r| r.var))
            .max()
    }

    pub fn to_record(&self) -> TreeRecord {
        let mut nodes = Vec::new();
        for id in self.subtree(ROOT) {
            nodes.push(match &self.node(id).kind {
                NodeKind::Leaf { mu } => RecordNode::Leaf {
                    mu: mu.as_slice().to_vec(),
                },
                NodeKind::Internal { rule, .. } => RecordNode::Split {
                    var: rule.var,
                    cut: rule.cut,
                    missing_left: rule.missing_left,
                },
            });
        }
        TreeRecord { p: self.p, nodes }
    }

    pub fn from_record(rec: &TreeRecord) -> Result<Self> {
        let mut tree = DecisionTree::stump(rec.p);
        let mut pos = 0;
        build(&mut tree, ROOT, rec, &mut pos)?;
        if pos != rec.nodes.len() {
            return Err(Error::Serde("trailing nodes in tree record".into()));
        }
        Ok(tree)
    }
}

fn build(tree: &mut DecisionTree, id: NodeId, rec: &TreeRecord, pos: &mut usize) -> Result<()> {
    let node = rec
        .nodes
        .get(*pos)
        .ok_or_else(|| Error::Serde("truncated tree record".into()))?;
    *pos += 1;
    match node {
        RecordNode::Leaf { mu } => {
            if mu.len() != rec.p {
                return Err(Error::Serde("leaf dimension mismatch".into()));
            }
            tree.set_leaf_mu(id, DVector::from_column_slice(mu));
        }
        RecordNode::Split {
            var,
            cut,
            missing_left,
        } => {
            let (l, r) = tree.grow(
                id,
                SplitRule {
                    var: *var,
                    cut: *cut,
                    missing_left: *missing_left,
                },
            );
            build(tree, l, rec, pos)?;
            build(tree, r, rec, pos)?;
        }
    }
    Ok(())
}

/// Depth-first (pre-order) serialized form of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub p: usize,
    pub nodes: Vec<RecordNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordNode {
    Split {
        var: usize,
        cut: f64,
        missing_left: bool,
    },
    Leaf {
        mu: Vec<f64>,
    },
}
