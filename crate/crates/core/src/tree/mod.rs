//! Axis-aligned binary partitions of the input space.
//!
//! A [`Tree`] is generic over the leaf payload so the same structure holds
//! live leaf states during sampling and bare parameters in stored samples.
//! Nodes are addressed by paths from the root (`false` = left, `true` =
//! right); the depth of a node is the length of its path.

mod moves;
pub mod serialize;

use crate::error::{Result, TgpError};

pub use moves::{
    change_at, grow_at, propose_change, propose_grow, propose_prune, propose_rotate,
    propose_swap, prune_at, rotate_at, step, swap_at, FlatModel, LeafModel, MoveKind,
    MoveOutcome, MoveWeights, Proposal, RotateDir,
};

pub type Path = Vec<bool>;

/// Split on input `var`: rows with `x[var] <= value` go left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub var: usize,
    pub value: f64,
}

impl SplitRule {
    pub fn goes_left(&self, x: &[f64]) -> bool {
        x[self.var] <= self.value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node<L> {
    Leaf(L),
    Split {
        rule: SplitRule,
        left: Box<Node<L>>,
        right: Box<Node<L>>,
    },
}

impl<L> Node<L> {
    pub fn split(rule: SplitRule, left: Node<L>, right: Node<L>) -> Self {
        Node::Split {
            rule,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf(_))
    }

    pub fn as_leaf(&self) -> Option<&L> {
        match self {
            Node::Leaf(l) => Some(l),
            Node::Split { .. } => None,
        }
    }

    pub fn rule(&self) -> Option<&SplitRule> {
        match self {
            Node::Leaf(_) => None,
            Node::Split { rule, .. } => Some(rule),
        }
    }

    pub fn child(&self, right: bool) -> Option<&Node<L>> {
        match self {
            Node::Leaf(_) => None,
            Node::Split { left, right: r, .. } => Some(if right { r } else { left }),
        }
    }

    fn child_mut(&mut self, right: bool) -> Option<&mut Node<L>> {
        match self {
            Node::Leaf(_) => None,
            Node::Split { left, right: r, .. } => Some(if right { r } else { left }),
        }
    }

    /// Leaves from left to right.
    pub fn leaves(&self) -> Vec<&L> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a L>) {
        match self {
            Node::Leaf(l) => out.push(l),
            Node::Split { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    fn collect_leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut L>) {
        match self {
            Node::Leaf(l) => out.push(l),
            Node::Split { left, right, .. } => {
                left.collect_leaves_mut(out);
                right.collect_leaves_mut(out);
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Split { left, right, .. } => left.num_leaves() + right.num_leaves(),
        }
    }

    /// Pre-order walk with the path of each node.
    pub fn walk<'a>(&'a self, path: &mut Path, f: &mut impl FnMut(&Path, &'a Node<L>)) {
        f(path, self);
        if let Node::Split { left, right, .. } = self {
            path.push(false);
            left.walk(path, f);
            path.pop();
            path.push(true);
            right.walk(path, f);
            path.pop();
        }
    }

    pub fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> Node<M> {
        match self {
            Node::Leaf(l) => Node::Leaf(f(l)),
            Node::Split { rule, left, right } => Node::split(*rule, left.map(f), right.map(f)),
        }
    }

    pub fn try_map<M, E>(&self, f: &mut impl FnMut(&L) -> std::result::Result<M, E>) -> std::result::Result<Node<M>, E> {
        Ok(match self {
            Node::Leaf(l) => Node::Leaf(f(l)?),
            Node::Split { rule, left, right } => {
                Node::split(*rule, left.try_map(f)?, right.try_map(f)?)
            }
        })
    }

    /// Route `rows` through this subtree; one row set per leaf, left to right.
    pub fn route(&self, rows: &[usize], x: &[Vec<f64>]) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.num_leaves());
        self.route_into(rows.to_vec(), x, &mut out);
        out
    }

    fn route_into(&self, rows: Vec<usize>, x: &[Vec<f64>], out: &mut Vec<Vec<usize>>) {
        match self {
            Node::Leaf(_) => out.push(rows),
            Node::Split { rule, left, right } => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| rule.goes_left(&x[i]));
                left.route_into(l, x, out);
                right.route_into(r, x, out);
            }
        }
    }

    /// Log prior of the subtree's shape when its root sits at `depth`.
    pub fn log_prior(&self, depth: usize, a: f64, b: f64) -> f64 {
        let p = a * (1.0 + depth as f64).powf(-b);
        match self {
            Node::Leaf(_) => (1.0 - p).ln(),
            Node::Split { left, right, .. } => {
                p.ln() + left.log_prior(depth + 1, a, b) + right.log_prior(depth + 1, a, b)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree<L> {
    root: Node<L>,
}

impl<L> Tree<L> {
    pub fn new(leaf: L) -> Self {
        Tree {
            root: Node::Leaf(leaf),
        }
    }

    pub fn from_root(root: Node<L>) -> Self {
        Tree { root }
    }

    pub fn root(&self) -> &Node<L> {
        &self.root
    }

    pub fn node(&self, path: &[bool]) -> Option<&Node<L>> {
        path.iter().try_fold(&self.root, |n, &side| n.child(side))
    }

    pub fn node_mut(&mut self, path: &[bool]) -> Option<&mut Node<L>> {
        path.iter()
            .try_fold(&mut self.root, |n, &side| n.child_mut(side))
    }

    /// Swap in `node` at `path`, returning the subtree it replaced.
    pub fn replace(&mut self, path: &[bool], node: Node<L>) -> Result<Node<L>> {
        let slot = self
            .node_mut(path)
            .ok_or_else(|| TgpError::Structural(format!("no node at path {path:?}")))?;
        Ok(std::mem::replace(slot, node))
    }

    pub fn leaves(&self) -> Vec<&L> {
        self.root.leaves()
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut L> {
        let mut out = Vec::new();
        self.root.collect_leaves_mut(&mut out);
        out
    }

    pub fn num_leaves(&self) -> usize {
        self.root.num_leaves()
    }

    pub fn num_internal(&self) -> usize {
        self.num_leaves() - 1
    }

    /// Depth of the deepest leaf.
    pub fn height(&self) -> usize {
        let mut h = 0;
        self.root.walk(&mut Vec::new(), &mut |p, _| h = h.max(p.len()));
        h
    }

    fn paths_where(&self, keep: impl Fn(&Node<L>) -> bool) -> Vec<Path> {
        let mut out = Vec::new();
        self.root.walk(&mut Vec::new(), &mut |p, n| {
            if keep(n) {
                out.push(p.clone());
            }
        });
        out
    }

    pub fn leaf_paths(&self) -> Vec<Path> {
        self.paths_where(|n| n.is_leaf())
    }

    /// Internal nodes in pre-order.
    pub fn internal_paths(&self) -> Vec<Path> {
        self.paths_where(|n| !n.is_leaf())
    }

    /// Internal nodes whose children are both leaves.
    pub fn prunable_paths(&self) -> Vec<Path> {
        self.paths_where(|n| match n {
            Node::Split { left, right, .. } => left.is_leaf() && right.is_leaf(),
            Node::Leaf(_) => false,
        })
    }

    /// Split rules in pre-order with their depths.
    pub fn rules(&self) -> Vec<(usize, SplitRule)> {
        let mut out = Vec::new();
        self.root.walk(&mut Vec::new(), &mut |p, n| {
            if let Some(r) = n.rule() {
                out.push((p.len(), *r));
            }
        });
        out
    }

    /// Index (left to right) of the leaf whose region contains `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut node = &self.root;
        let mut index = 0;
        while let Node::Split { rule, left, right } = node {
            if rule.goes_left(x) {
                node = left;
            } else {
                index += left.num_leaves();
                node = right;
            }
        }
        index
    }

    pub fn find_leaf(&self, x: &[f64]) -> &L {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(l) => return l,
                Node::Split { rule, left, right } => {
                    node = if rule.goes_left(x) { left } else { right };
                }
            }
        }
    }

    pub fn map<M>(&self, mut f: impl FnMut(&L) -> M) -> Tree<M> {
        Tree {
            root: self.root.map(&mut f),
        }
    }

    pub fn try_map<M, E>(
        &self,
        mut f: impl FnMut(&L) -> std::result::Result<M, E>,
    ) -> std::result::Result<Tree<M>, E> {
        Ok(Tree {
            root: self.root.try_map(&mut f)?,
        })
    }
}

fn check_tree_params(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) || !(b >= 0.0) || !b.is_finite() {
        return Err(TgpError::ParamDomain(format!(
            "tree prior needs 0 < a < 1 and b >= 0, got a = {a}, b = {b}"
        )));
    }
    Ok(())
}

/// Probability that a node at `depth` splits: a (1 + depth)^-b.
pub fn split_prob(depth: usize, a: f64, b: f64) -> Result<f64> {
    check_tree_params(a, b)?;
    Ok(a * (1.0 + depth as f64).powf(-b))
}

/// Log prior of the tree shape. Split-rule probabilities are left out;
/// see [`SplitContext::log_prior`] for the full prior.
pub fn tree_log_prior<L>(tree: &Tree<L>, a: f64, b: f64) -> Result<f64> {
    check_tree_params(a, b)?;
    Ok(tree.root.log_prior(0, a, b))
}

/// Rows of `x` per leaf (left to right). Fails if a leaf gets fewer than
/// `n_min` rows.
pub fn partition<L>(tree: &Tree<L>, x: &[Vec<f64>], n_min: usize) -> Result<Vec<Vec<usize>>> {
    let all: Vec<usize> = (0..x.len()).collect();
    let parts = tree.root.route(&all, x);
    if let Some((i, p)) = parts.iter().enumerate().find(|(_, p)| p.len() < n_min) {
        return Err(TgpError::Structural(format!(
            "leaf {i} holds {} rows, fewer than the minimum {n_min}",
            p.len()
        )));
    }
    Ok(parts)
}

/// Data and prior settings shared by the tree moves.
///
/// The split-rule prior at a node picks the variable u uniformly from all
/// inputs and the value s uniformly from the admissible values of u in the
/// node: distinct observed values of the node's rows that leave at least
/// `n_min` rows on each side. Trees with a rule outside its admissible set
/// have zero prior mass.
#[derive(Debug, Clone)]
pub struct SplitContext<'a> {
    pub x: &'a [Vec<f64>],
    pub n_min: usize,
    pub a: f64,
    pub b: f64,
    dim: usize,
}

impl<'a> SplitContext<'a> {
    pub fn new(x: &'a [Vec<f64>], n_min: usize, a: f64, b: f64) -> Result<Self> {
        check_tree_params(a, b)?;
        let dim = x
            .first()
            .map(|r| r.len())
            .ok_or_else(|| TgpError::Structural("no data rows".into()))?;
        if dim == 0 {
            return Err(TgpError::Structural("inputs have no columns".into()));
        }
        if let Some(bad) = x.iter().find(|r| r.len() != dim) {
            return Err(TgpError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        if n_min == 0 {
            return Err(TgpError::ParamDomain("minimum leaf size must be positive".into()));
        }
        Ok(SplitContext {
            x,
            n_min,
            a,
            b,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Admissible split values of column `u` for a node holding `rows`,
    /// ascending.
    pub fn admissible(&self, rows: &[usize], u: usize) -> Vec<f64> {
        let n = rows.len();
        if n < 2 * self.n_min {
            return Vec::new();
        }
        let mut v: Vec<f64> = rows.iter().map(|&i| self.x[i][u]).collect();
        v.sort_by(f64::total_cmp);
        // v[i] is admissible if it is the last copy of its value and
        // i + 1 rows fall at or below it
        (self.n_min - 1..=n - self.n_min - 1)
            .filter(|&i| v[i] < v[i + 1])
            .map(|i| v[i])
            .collect()
    }

    pub fn growable(&self, rows: &[usize]) -> bool {
        (0..self.dim).any(|u| !self.admissible(rows, u).is_empty())
    }

    /// Every leaf of `node` receives at least `n_min` rows.
    pub fn valid(&self, parts: &[Vec<usize>]) -> bool {
        parts.iter().all(|p| p.len() >= self.n_min)
    }

    /// Rows of the region at `path`, found by routing all data.
    pub fn region_rows<L>(&self, tree: &Tree<L>, path: &[bool]) -> Result<Vec<usize>> {
        let mut rows: Vec<usize> = (0..self.x.len()).collect();
        let mut node = tree.root();
        for &side in path {
            let Node::Split { rule, left, right } = node else {
                return Err(TgpError::Structural(format!("no node at path {path:?}")));
            };
            rows.retain(|&i| rule.goes_left(&self.x[i]) != side);
            node = if side { right } else { left };
        }
        Ok(rows)
    }

    /// Log probability of the split rules of `node` given that it holds
    /// `rows`, or `None` if some rule is not admissible where it sits.
    pub fn rule_log_prior<L>(&self, node: &Node<L>, rows: &[usize]) -> Option<f64> {
        let Node::Split { rule, left, right } = node else {
            return Some(0.0);
        };
        let choices = self.admissible(rows, rule.var);
        if !choices.contains(&rule.value) {
            return None;
        }
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| rule.goes_left(&self.x[i]));
        let own = -(self.dim as f64).ln() - (choices.len() as f64).ln();
        Some(own + self.rule_log_prior(left, &l)? + self.rule_log_prior(right, &r)?)
    }

    /// Full log prior of `tree` on this data: shape plus split rules.
    pub fn log_prior<L>(&self, tree: &Tree<L>) -> Result<f64> {
        let all: Vec<usize> = (0..self.x.len()).collect();
        let rules = self.rule_log_prior(tree.root(), &all).ok_or_else(|| {
            TgpError::Structural("tree has a split rule outside its admissible set".into())
        })?;
        Ok(tree.root().log_prior(0, self.a, self.b) + rules)
    }
}
