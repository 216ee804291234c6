//! Binary regression trees and their structural prior.

use serde::{Deserialize, Serialize};

use super::data::{SplitScan, TrainData};

pub(crate) const NONE: u32 = u32::MAX;

/// `x[var] <= cut` sends a row to the left child.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRule {
    pub var: usize,
    pub cut: f64,
    pub(crate) cut_rank: u32,
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) parent: u32,
    pub(crate) depth: u32,
    pub(crate) left: u32,
    pub(crate) right: u32,
    pub(crate) rule: Option<SplitRule>,
    /// Terminal mean on the sampler's internal scale.
    pub(crate) mu: f64,
    /// Leaves: whether any valid rule exists for the node's rows.
    pub(crate) splittable: bool,
    /// Internal nodes: log probability of the rule under the uniform rule prior.
    pub(crate) rule_mass: f64,
}

impl Node {
    pub(crate) fn leaf(parent: u32, depth: u32, mu: f64, splittable: bool) -> Self {
        Self {
            parent,
            depth,
            left: NONE,
            right: NONE,
            rule: None,
            mu,
            splittable,
            rule_mass: 0.0,
        }
    }

    pub(crate) fn is_leaf(&self) -> bool {
        self.rule.is_none()
    }
}

/// One tree of the ensemble, stored as an arena with the root at index 0.
#[derive(Clone, Debug, Default)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
}

/// Tree-shape prior: a node at depth `d` splits with probability
/// `alpha (1 + d)^-beta` when it has a valid rule, and never otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreePrior {
    pub alpha: f64,
    pub beta: f64,
    pub min_node: usize,
}

impl TreePrior {
    pub fn split_prob(&self, depth: u32) -> f64 {
        self.alpha * (1.0 + f64::from(depth)).powf(-self.beta)
    }

    pub(crate) fn leaf_term(&self, depth: u32, splittable: bool) -> f64 {
        if splittable {
            (1.0 - self.split_prob(depth)).ln()
        } else {
            0.0
        }
    }

    pub(crate) fn internal_term(&self, depth: u32, rule_mass: f64) -> f64 {
        self.split_prob(depth).ln() + rule_mass
    }
}

impl Tree {
    pub(crate) fn root(mu: f64, splittable: bool) -> Self {
        Self {
            nodes: vec![Node::leaf(NONE, 0, mu, splittable)],
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub(crate) fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_leaf()).map(|(i, _)| i)
    }

    pub(crate) fn internals(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| !n.is_leaf()).map(|(i, _)| i)
    }

    /// Internal nodes whose two children are both leaves.
    pub(crate) fn nog_nodes(&self) -> Vec<usize> {
        self.internals()
            .filter(|&i| {
                let n = &self.nodes[i];
                self.nodes[n.left as usize].is_leaf() && self.nodes[n.right as usize].is_leaf()
            })
            .collect()
    }

    /// Leaf reached by training row `row`.
    pub(crate) fn route(&self, data: &TrainData, row: usize) -> u32 {
        self.route_from(data, row, 0)
    }

    pub(crate) fn route_from(&self, data: &TrainData, row: usize, start: u32) -> u32 {
        let mut k = start as usize;
        loop {
            let n = &self.nodes[k];
            match n.rule {
                None => return k as u32,
                Some(rule) => {
                    k = if data.rank[rule.var][row] <= rule.cut_rank { n.left } else { n.right } as usize;
                }
            }
        }
    }

    /// Splits leaf `at` with `rule`, appending two leaves.
    pub(crate) fn grow(&mut self, at: usize, rule: SplitRule, rule_mass: f64, left: (f64, bool), right: (f64, bool)) {
        let depth = self.nodes[at].depth + 1;
        let l = self.nodes.len() as u32;
        self.nodes.push(Node::leaf(at as u32, depth, left.0, left.1));
        self.nodes.push(Node::leaf(at as u32, depth, right.0, right.1));
        let n = &mut self.nodes[at];
        n.rule = Some(rule);
        n.left = l;
        n.right = l + 1;
        n.rule_mass = rule_mass;
        n.splittable = true;
    }

    /// Collapses the two leaf children of `at`; node indices are renumbered.
    pub(crate) fn prune(&mut self, at: usize, mu: f64) {
        let n = &mut self.nodes[at];
        let (l, r) = (n.left, n.right);
        n.rule = None;
        n.left = NONE;
        n.right = NONE;
        n.mu = mu;
        n.splittable = true;
        n.rule_mass = 0.0;
        self.compact(&[l as usize, r as usize]);
    }

    fn compact(&mut self, dead: &[usize]) {
        let mut map = vec![NONE; self.nodes.len()];
        let mut next = 0u32;
        for (i, slot) in map.iter_mut().enumerate() {
            if !dead.contains(&i) {
                *slot = next;
                next += 1;
            }
        }
        let old = std::mem::take(&mut self.nodes);
        for (i, mut node) in old.into_iter().enumerate() {
            if map[i] == NONE {
                continue;
            }
            let remap = |k: u32| if k == NONE { NONE } else { map[k as usize] };
            node.parent = remap(node.parent);
            node.left = remap(node.left);
            node.right = remap(node.right);
            self.nodes.push(node);
        }
    }

    /// Nodes of the subtree rooted at `at` (pre-order).
    pub(crate) fn subtree(&self, at: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![at];
        while let Some(k) = stack.pop() {
            out.push(k);
            let n = &self.nodes[k];
            if !n.is_leaf() {
                stack.push(n.right as usize);
                stack.push(n.left as usize);
            }
        }
        out
    }

    /// Structural identity: rules and shape, ignoring terminal means.
    pub fn same_structure(&self, other: &Tree) -> bool {
        fn walk(a: &Tree, ia: usize, b: &Tree, ib: usize) -> bool {
            let (na, nb) = (&a.nodes[ia], &b.nodes[ib]);
            match (na.rule, nb.rule) {
                (None, None) => true,
                (Some(ra), Some(rb)) => {
                    ra == rb
                        && walk(a, na.left as usize, b, nb.left as usize)
                        && walk(a, na.right as usize, b, nb.right as usize)
                }
                _ => false,
            }
        }
        walk(self, 0, other, 0)
    }

    /// Log prior from the cached per-node terms.
    #[cfg(test)]
    pub(crate) fn cached_log_prior(&self, prior: &TreePrior) -> f64 {
        self.nodes
            .iter()
            .map(|n| {
                if n.is_leaf() {
                    prior.leaf_term(n.depth, n.splittable)
                } else {
                    prior.internal_term(n.depth, n.rule_mass)
                }
            })
            .sum()
    }

    pub(crate) fn to_compact(&self) -> CompactTree {
        CompactTree {
            nodes: self
                .nodes
                .iter()
                .map(|n| match n.rule {
                    None => CompactNode {
                        var: LEAF,
                        value: n.mu,
                        left: 0,
                        right: 0,
                    },
                    Some(rule) => CompactNode {
                        var: rule.var as u32,
                        value: rule.cut,
                        left: n.left,
                        right: n.right,
                    },
                })
                .collect(),
        }
    }
}

/// Log prior probability of a tree's structure given the training data.
///
/// Each internal node at depth `d` contributes `ln alpha - beta ln(1+d)` plus
/// the log mass of its rule under a uniform choice of variable and then of
/// cut value among the valid ones; each terminal node contributes
/// `ln(1 - alpha (1+d)^-beta)` when it could have been split. Terminal means
/// and outcomes do not enter. Returns `-inf` for trees outside the prior's
/// support (a rule that is not valid for its node's rows).
pub fn log_tree_prior(tree: &Tree, data: &TrainData, prior: &TreePrior) -> f64 {
    let mut rows_of: Vec<Vec<u32>> = vec![Vec::new(); tree.nodes.len()];
    for row in 0..data.n {
        let mut k = 0usize;
        loop {
            rows_of[k].push(row as u32);
            let n = &tree.nodes[k];
            match n.rule {
                None => break,
                Some(rule) => {
                    k = if data.rank[rule.var][row] <= rule.cut_rank { n.left } else { n.right } as usize;
                }
            }
        }
    }
    let mut scan = SplitScan::new(data);
    let mut total = 0.0;
    for (k, n) in tree.nodes.iter().enumerate() {
        match n.rule {
            None => total += prior.leaf_term(n.depth, scan.any_valid(data, &rows_of[k], prior.min_node)),
            Some(rule) => match scan.rule_mass(data, &rows_of[k], prior.min_node, rule.var, rule.cut_rank) {
                Some(mass) => total += prior.internal_term(n.depth, mass),
                None => return f64::NEG_INFINITY,
            },
        }
    }
    total
}

const LEAF: u32 = u32::MAX;

/// Immutable tree used for prediction: internal nodes hold `(var, cut)`,
/// leaves hold the terminal mean.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactTree {
    pub(crate) nodes: Vec<CompactNode>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct CompactNode {
    pub(crate) var: u32,
    pub(crate) value: f64,
    pub(crate) left: u32,
    pub(crate) right: u32,
}

impl CompactTree {
    #[inline]
    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut k = 0usize;
        loop {
            let n = &self.nodes[k];
            if n.var == LEAF {
                return n.value;
            }
            k = if row[n.var as usize] <= n.value { n.left } else { n.right } as usize;
        }
    }

    pub fn depth(&self) -> u32 {
        fn walk(t: &CompactTree, k: usize) -> u32 {
            let n = &t.nodes[k];
            if n.var == LEAF {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.right as usize))
            }
        }
        walk(self, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.var == LEAF).count()
    }

    /// Canonical text of the split structure (pre-order, `L` for leaves).
    pub fn structure_key(&self) -> String {
        fn walk(t: &CompactTree, k: usize, out: &mut String) {
            let n = &t.nodes[k];
            if n.var == LEAF {
                out.push('L');
            } else {
                out.push_str(&format!("({}<={}", n.var, n.value));
                walk(t, n.left as usize, out);
                out.push(',');
                walk(t, n.right as usize, out);
                out.push(')');
            }
        }
        let mut s = String::new();
        walk(self, 0, &mut s);
        s
    }
}

pub(crate) fn is_leaf_var(var: u32) -> bool {
    var == LEAF
}
