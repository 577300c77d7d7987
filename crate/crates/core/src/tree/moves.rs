use rand::Rng;

use super::{Node, Path, SplitContext, SplitRule, Tree};
use crate::error::{Result, TgpError};

/// Leaf payload operations needed by the tree moves.
///
/// `log_likelihood` must integrate out everything a move does not carry
/// across (for the GP leaves: beta and sigma^2), and `fresh` must draw the
/// carried parameters from their prior, so that prior and proposal cancel
/// in the grow/prune ratios.
pub trait LeafModel {
    type Leaf: Clone;

    fn rows<'l>(&self, leaf: &'l Self::Leaf) -> &'l [usize];

    /// Leaf on `rows` with the parameters of `from`.
    fn inherit(&self, from: &Self::Leaf, rows: Vec<usize>) -> Result<Self::Leaf>;

    /// Leaf on `rows` with parameters drawn from the prior.
    fn fresh<R: Rng + ?Sized>(
        &self,
        like: &Self::Leaf,
        rows: Vec<usize>,
        rng: &mut R,
    ) -> Result<Self::Leaf>;

    fn log_likelihood(&self, leaf: &Self::Leaf) -> Result<f64>;

    /// Called on every rebuilt leaf of an accepted move.
    fn refresh<R: Rng + ?Sized>(&self, _leaf: &mut Self::Leaf, _rng: &mut R) -> Result<()> {
        Ok(())
    }
}

/// Leaves that only record their rows and contribute a constant
/// likelihood. Sampling with it draws from the tree prior.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatModel;

impl LeafModel for FlatModel {
    type Leaf = Vec<usize>;

    fn rows<'l>(&self, leaf: &'l Vec<usize>) -> &'l [usize] {
        leaf
    }

    fn inherit(&self, _from: &Vec<usize>, rows: Vec<usize>) -> Result<Vec<usize>> {
        Ok(rows)
    }

    fn fresh<R: Rng + ?Sized>(
        &self,
        _like: &Vec<usize>,
        rows: Vec<usize>,
        _rng: &mut R,
    ) -> Result<Vec<usize>> {
        Ok(rows)
    }

    fn log_likelihood(&self, _leaf: &Vec<usize>) -> Result<f64> {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
    Rotate,
}

impl MoveKind {
    pub const ALL: [MoveKind; 5] = [
        MoveKind::Grow,
        MoveKind::Prune,
        MoveKind::Change,
        MoveKind::Swap,
        MoveKind::Rotate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Grow => "grow",
            MoveKind::Prune => "prune",
            MoveKind::Change => "change",
            MoveKind::Swap => "swap",
            MoveKind::Rotate => "rotate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotateDir {
    Left,
    Right,
}

/// Selection probabilities of the move types (rotate is reached through
/// swap).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveWeights {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveWeights {
    fn default() -> Self {
        MoveWeights {
            grow: 0.2,
            prune: 0.2,
            change: 0.4,
            swap: 0.2,
        }
    }
}

impl MoveWeights {
    /// All zero disables tree moves. Otherwise the weights must sum to one
    /// and grow and prune must be both positive.
    pub fn validate(&self) -> Result<()> {
        let w = [self.grow, self.prune, self.change, self.swap];
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(TgpError::ParamDomain(format!(
                "move weights must be finite and nonnegative, got {w:?}"
            )));
        }
        if self.is_frozen() {
            return Ok(());
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TgpError::ParamDomain(format!(
                "move weights must sum to 1, got {total}"
            )));
        }
        if (self.grow > 0.0) != (self.prune > 0.0) {
            return Err(TgpError::ParamDomain(
                "grow and prune weights must be both zero or both positive".into(),
            ));
        }
        Ok(())
    }

    /// No tree moves at all.
    pub fn frozen() -> Self {
        MoveWeights {
            grow: 0.0,
            prune: 0.0,
            change: 0.0,
            swap: 0.0,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.grow + self.prune + self.change + self.swap == 0.0
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let total = self.grow + self.prune + self.change + self.swap;
        let u = rng.random::<f64>() * total;
        if u < self.grow {
            MoveKind::Grow
        } else if u < self.grow + self.prune {
            MoveKind::Prune
        } else if u < self.grow + self.prune + self.change {
            MoveKind::Change
        } else {
            MoveKind::Swap
        }
    }
}

/// A candidate replacement of the subtree at `path`. The tree itself is
/// untouched until [`Proposal::apply`].
#[derive(Debug, Clone)]
pub struct Proposal<L> {
    pub kind: MoveKind,
    pub path: Path,
    pub replacement: Node<L>,
    pub log_ratio: f64,
}

impl<L> Proposal<L> {
    /// Install the replacement and return the old subtree.
    pub fn apply(self, tree: &mut Tree<L>) -> Result<Node<L>> {
        tree.replace(&self.path, self.replacement)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoveOutcome {
    pub kind: MoveKind,
    pub proposed: bool,
    pub accepted: bool,
}

/// Turn a failed factorization of a proposed leaf into a rejection.
fn soft<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(TgpError::IllConditioned { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn leaf_at<'t, L>(tree: &'t Tree<L>, path: &[bool]) -> Result<&'t L> {
    tree.node(path)
        .and_then(Node::as_leaf)
        .ok_or_else(|| TgpError::Structural(format!("no leaf at path {path:?}")))
}

fn count_growable<M: LeafModel>(tree: &Tree<M::Leaf>, model: &M, ctx: &SplitContext) -> usize {
    tree.leaves()
        .into_iter()
        .filter(|l| ctx.growable(model.rows(l)))
        .count()
}

fn sibling_is_leaf<L>(tree: &Tree<L>, path: &[bool]) -> bool {
    match path.split_last() {
        Some((&side, parent)) => tree
            .node(parent)
            .and_then(|p| p.child(!side))
            .is_some_and(Node::is_leaf),
        None => false,
    }
}

/// Shape prior ratio for splitting a leaf at depth q.
fn grow_shape_log_ratio(ctx: &SplitContext, depth: usize) -> f64 {
    let p = |q: usize| ctx.a * (1.0 + q as f64).powf(-ctx.b);
    p(depth).ln() + 2.0 * (1.0 - p(depth + 1)).ln() - (1.0 - p(depth)).ln()
}

/// Split the leaf at `path` with `rule`. The child on the `inherit_left`
/// side keeps the leaf's parameters, the other draws from the prior.
/// Returns `None` if the split leaves a child below the minimum size.
#[allow(clippy::too_many_arguments)]
pub fn grow_at<M: LeafModel, R: Rng + ?Sized>(
    tree: &Tree<M::Leaf>,
    model: &M,
    ctx: &SplitContext,
    weights: &MoveWeights,
    path: &[bool],
    rule: SplitRule,
    inherit_left: bool,
    rng: &mut R,
) -> Result<Option<Proposal<M::Leaf>>> {
    let leaf = leaf_at(tree, path)?;
    let rows = model.rows(leaf);
    if !ctx.admissible(rows, rule.var).contains(&rule.value) {
        return Ok(None);
    }
    let (l_rows, r_rows): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&i| rule.goes_left(&ctx.x[i]));
    let (keep_rows, new_rows) = if inherit_left {
        (l_rows, r_rows)
    } else {
        (r_rows, l_rows)
    };
    let Some(kept) = soft(model.inherit(leaf, keep_rows))? else {
        return Ok(None);
    };
    let Some(drawn) = soft(model.fresh(leaf, new_rows, rng))? else {
        return Ok(None);
    };
    let growable = count_growable(tree, model, ctx);
    let prunable_after = tree.prunable_paths().len() + 1 - usize::from(sibling_is_leaf(tree, path));
    let log_lik = model.log_likelihood(&kept)? + model.log_likelihood(&drawn)?
        - model.log_likelihood(leaf)?;
    let log_ratio = (growable as f64).ln() - (prunable_after as f64).ln()
        + grow_shape_log_ratio(ctx, path.len())
        + (weights.prune / weights.grow).ln()
        + log_lik;
    let (left, right) = if inherit_left {
        (kept, drawn)
    } else {
        (drawn, kept)
    };
    Ok(Some(Proposal {
        kind: MoveKind::Grow,
        path: path.to_vec(),
        replacement: Node::split(rule, Node::Leaf(left), Node::Leaf(right)),
        log_ratio,
    }))
}

/// Uniform growable leaf, uniform variable, uniform admissible value.
pub fn propose_grow<M: LeafModel, R: Rng + ?Sized>(
    tree: &Tree<M::Leaf>,
    model: &M,
    ctx: &SplitContext,
    weights: &MoveWeights,
    rng: &mut R,
) -> Result<Option<Proposal<M::Leaf>>> {
    let candidates: Vec<Path> = tree
        .leaf_paths()
        .into_iter()
        .filter(|p| {
            tree.node(p)
                .and_then(Node::as_leaf)
                .is_some_and(|l| ctx.growable(model.rows(l)))
        })
        .collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    let path = &candidates[rng.random_range(0..candidates.len())];
    let rows = model.rows(leaf_at(tree, path)?);
    let var = rng.random_range(0..ctx.dim());
    let admissible = ctx.admissible(rows, var);
    if admissible.is_empty() {
        return Ok(None);
    }
    let value = admissible[rng.random_range(0..admissible.len())];
    let inherit_left = rng.random::<bool>();
    grow_at(
        tree,
        model,
        ctx,
        weights,
        path,
        SplitRule { var, value },
        inherit_left,
        rng,
    )
}

/// Merge the two leaf children of the node at `path`; the merged leaf takes
/// the parameters of the left child if `keep_left`. Exact reverse of
/// [`grow_at`].
pub fn prune_at<M: LeafModel>(
    tree: &Tree<M::Leaf>,
    model: &M,
    ctx: &SplitContext,
    weights: &MoveWeights,
    path: &[bool],
    keep_left: bool,
) -> Result<Option<Proposal<M::Leaf>>> {
    let Some(Node::Split { left, right, .. }) = tree.node(path) else {
        return Err(TgpError::Structural(format!("no internal node at {path:?}")));
    };
    let (Some(l), Some(r)) = (left.as_leaf(), right.as_leaf()) else {
        return Err(TgpError::Structural(format!("node at {path:?} is not prunable")));
    };
    let mut rows: Vec<usize> = model.rows(l).iter().chain(model.rows(r)).copied().collect();
    rows.sort_unstable();
    let kept = if keep_left { l } else { r };
    let Some(merged) = soft(model.inherit(kept, rows))? else {
        return Ok(None);
    };
    let merged_rows = model.rows(&merged);
    let growable_after = count_growable(tree, model, ctx)
        - usize::from(ctx.growable(model.rows(l)))
        - usize::from(ctx.growable(model.rows(r)))
        + usize::from(ctx.growable(merged_rows));
    let prunable = tree.prunable_paths().len();
    let log_lik =
        model.log_likelihood(&merged)? - model.log_likelihood(l)? - model.log_likelihood(r)?;
    let log_ratio = (prunable as f64).ln() - (growable_after as f64).ln()
        - grow_shape_log_ratio(ctx, path.len())
        + (weights.grow / weights.prune).ln()
        + log_lik;
    Ok(Some(Proposal {
        kind: MoveKind::Prune,
        path: path.to_vec(),
        replacement: Node::Leaf(merged),
        log_ratio,
    }))
}

pub fn propose_prune<M: LeafModel, R: Rng + ?Sized>(
    tree: &Tree<M::Leaf>,
    model: &M,
    ctx: &SplitContext,
    weights: &MoveWeights,
    rng: &mut R,
) -> Result<Option<Proposal<M::Leaf>>> {
    let candidates = tree.prunable_paths();
    if candidates.is_empty() {
        return Ok(None);
    }
    let path = &candidates[rng.random_range(0..candidates.len())];
    let keep_left = rng.random::<bool>();
    prune_at(tree, model, ctx, weights, path, keep_left)
}

/// Re-route the rows of `old` through `candidate` (same leaf order, new
/// rules), rebuilding leaves whose rows change. Returns the new subtree
/// and its log likelihood ratio, or `None` if a leaf falls below the
/// minimum size.
fn rebuild<M: LeafModel>(
    model: &M,
    ctx: &SplitContext,
    old: &Node<M::Leaf>,
    candidate: Node<M::Leaf>,
) -> Result<Option<(Node<M::Leaf>, f64)>> {
    let old_leaves = old.leaves();
    let mut rows: Vec<usize> = old_leaves
        .iter()
        .flat_map(|l| model.rows(l).iter().copied())
        .collect();
    rows.sort_unstable();
    let parts = candidate.route(&rows, ctx.x);
    if !ctx.valid(&parts) {
        return Ok(None);
    }
    let mut log_ratio = 0.0;
    let mut fresh = Vec::with_capacity(parts.len());
    for (leaf, mut part) in candidate.leaves().into_iter().zip(parts) {
        let mut current = model.rows(leaf).to_vec();
        current.sort_unstable();
        part.sort_unstable();
        if current == part {
            fresh.push(None);
            continue;
        }
        let Some(new) = soft(model.inherit(leaf, part))? else {
            return Ok(None);
        };
        log_ratio += model.log_likelihood(&new)? - model.log_likelihood(leaf)?;
        fresh.push(Some(new));
    }
    let mut fresh = fresh.into_iter();
    let replaced = candidate.map(&mut |l: &M::Leaf| {
        fresh
            .next()
            .flatten()
            .unwrap_or_else(|| l.clone())
    });
    Ok(Some((replaced, log_ratio)))
}

/// Log prior ratio of the split rules when the subtree at `path` becomes
/// `new`, or `None` if `new` has a rule outside its admissible set.
fn rule_log_ratio<L>(
    tree: &Tree<L>,
    ctx: &SplitContext,
    path: &[bool],
    old: &Node<L>,
    new: &Node<L>,
) -> Result<Option<f64>> {
    let rows = ctx.region_rows(tree, path)?;
    let before = ctx
        .rule_log_prior(old, &rows)
        .ok_or_else(|| TgpError::Structural(format!("invalid split rule below {path:?}")))?;
    Ok(ctx.rule_log_prior(new, &rows).map(|after| after - before))
}

/// Move the split at `path` to the next admissible value above (`up`) or
/// below its current value.
pub fn change_at<M: LeafModel>(
    tree: &Tree<M::Leaf>,
    model: &M,
    ctx: &SplitContext,
    path: &[bool],
    up: bool,
) -> Result<Option<Proposal<M::Leaf>>> {
    let Some(old @ Node::Split { rule, left, right }) = tree.node(path) else {
        return Err(TgpError::Structural(format!("no internal node at {path:?}")));
    };
    let choices = ctx.admissible(&ctx.region_rows(tree, path)?, rule.var);
    let Some(at) = choices.iter().position(|&v| v == rule.value) else {
        return Err(TgpError::Structural(format!("invalid split rule at {path:?}")));
    };
    let next = if up { at.checked_add(1) } else { at.checked_sub(1) };
    let Some(&value) = next.and_then(|i| choices.get(i)) else {
        return Ok(None);
    };
    let candidate = Node::Split {
        rule: SplitRule { value, ..*rule },
        left: left.clone(),
        right: right.clone(),
    };
    finish(tree, model, ctx, MoveKind::Change, path, old, candidate)
}

pub fn propose_change<M: LeafModel, R: Rng + ?Sized>(
    tree: &Tree<M::Leaf>,
    model: &M,
    ctx: &SplitContext,
    rng: &mut R,
) -> Result<Option<Proposal<M::Leaf>>> {
    let candidates = tree.internal_paths();
    if candidates.is_empty() {
        return Ok(None);
    }
    let path = &candidates[rng.random_range(0..candidates.len())];
    change_at(tree, model, ctx, path, rng.random::<bool>())
}

/// Proposal replacing `old` at `path` by `candidate`, with leaves rebuilt
/// for their new rows.
fn finish<M: LeafModel>(
    tree: &Tree<M::Leaf>,
    model: &M,
    ctx: &SplitContext,
    kind: MoveKind,
    path: &[bool],
    old: &Node<M::Leaf>,
    candidate: Node<M::Leaf>,
) -> Result<Option<Proposal<M::Leaf>>> {
    let Some(prior) = rule_log_ratio(tree, ctx, path, old, &candidate)? else {
        return Ok(None);
    };
    let Some((replacement, log_lik)) = rebuild(model, ctx, old, candidate)? else {
        return Ok(None);
    };
    Ok(Some(Proposal {
        kind,
        path: path.to_vec(),
        replacement,
        log_ratio: prior + log_lik,
    }))
}

/// Exchange the rules of the internal node at `child` and its parent. A
/// pair splitting the same variable is rotated instead: right if the
/// child is the left one, left otherwise.
pub fn swap_at<M: LeafModel>(
    tree: &Tree<M::Leaf>,
    model: &M,
    ctx: &SplitContext,
    child: &[bool],
) -> Result<Option<Proposal<M::Leaf>>> {
    let Some((&side, parent_path)) = child.split_last() else {
        return Err(TgpError::Structural("the root has no parent to swap with".into()));
    };
    let parent = tree.node(parent_path);
    let (Some(parent @ Node::Split { rule: p_rule, .. }), Some(Node::Split { rule: c_rule, .. })) =
        (parent, tree.node(child))
    else {
        return Err(TgpError::Structural(format!("no internal pair at {child:?}")));
    };
    if p_rule.var == c_rule.var {
        let dir = if side { RotateDir::Left } else { RotateDir::Right };
        return rotate_at(tree, ctx, parent_path, dir);
    }
    let mut candidate = parent.clone();
    if let Node::Split { rule, left, right } = &mut candidate {
        *rule = *c_rule;
        let c = if side { right } else { left };
        if let Node::Split { rule, .. } = c.as_mut() {
            *rule = *p_rule;
        }
    }
    finish(tree, model, ctx, MoveKind::Swap, parent_path, parent, candidate)
}

pub fn propose_swap<M: LeafModel, R: Rng + ?Sized>(
    tree: &Tree<M::Leaf>,
    model: &M,
    ctx: &SplitContext,
    rng: &mut R,
) -> Result<Option<Proposal<M::Leaf>>> {
    let candidates: Vec<Path> = tree
        .internal_paths()
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    swap_at(tree, model, ctx, &candidates[rng.random_range(0..candidates.len())])
}

fn rotated<L: Clone>(node: &Node<L>, dir: RotateDir) -> Option<Node<L>> {
    let Node::Split { rule, left, right } = node else {
        return None;
    };
    match dir {
        RotateDir::Right => match left.as_ref() {
            Node::Split {
                rule: c_rule,
                left: a,
                right: b,
            } if c_rule.var == rule.var => Some(Node::Split {
                rule: *c_rule,
                left: a.clone(),
                right: Box::new(Node::Split {
                    rule: *rule,
                    left: b.clone(),
                    right: right.clone(),
                }),
            }),
            _ => None,
        },
        RotateDir::Left => match right.as_ref() {
            Node::Split {
                rule: c_rule,
                left: b,
                right: c,
            } if c_rule.var == rule.var => Some(Node::Split {
                rule: *c_rule,
                left: Box::new(Node::Split {
                    rule: *rule,
                    left: left.clone(),
                    right: b.clone(),
                }),
                right: c.clone(),
            }),
            _ => None,
        },
    }
}

/// Rotate at `path` about its child on the opposite side of `dir`. Only
/// pairs splitting the same variable are rotated, so every leaf keeps its
/// region and the ratio is the prior ratio alone.
pub fn rotate_at<L: Clone>(
    tree: &Tree<L>,
    ctx: &SplitContext,
    path: &[bool],
    dir: RotateDir,
) -> Result<Option<Proposal<L>>> {
    let node = tree
        .node(path)
        .ok_or_else(|| TgpError::Structural(format!("no node at {path:?}")))?;
    let Some(replacement) = rotated(node, dir) else {
        return Ok(None);
    };
    let Some(rules) = rule_log_ratio(tree, ctx, path, node, &replacement)? else {
        return Ok(None);
    };
    let depth = path.len();
    let log_ratio = replacement.log_prior(depth, ctx.a, ctx.b) - node.log_prior(depth, ctx.a, ctx.b)
        + rules;
    Ok(Some(Proposal {
        kind: MoveKind::Rotate,
        path: path.to_vec(),
        replacement,
        log_ratio,
    }))
}

/// Rotate at a uniformly chosen node that admits a rotation in `dir`.
pub fn propose_rotate<L: Clone, R: Rng + ?Sized>(
    tree: &Tree<L>,
    ctx: &SplitContext,
    dir: RotateDir,
    rng: &mut R,
) -> Result<Option<Proposal<L>>> {
    let candidates: Vec<Path> = tree
        .internal_paths()
        .into_iter()
        .filter(|p| tree.node(p).and_then(|n| rotated(n, dir)).is_some())
        .collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    rotate_at(tree, ctx, &candidates[rng.random_range(0..candidates.len())], dir)
}

/// One Metropolis-Hastings tree move.
pub fn step<M: LeafModel, R: Rng + ?Sized>(
    tree: &mut Tree<M::Leaf>,
    model: &M,
    ctx: &SplitContext,
    weights: &MoveWeights,
    rng: &mut R,
) -> Result<MoveOutcome> {
    if weights.is_frozen() {
        return Ok(MoveOutcome {
            kind: MoveKind::Change,
            proposed: false,
            accepted: false,
        });
    }
    let kind = weights.pick(rng);
    let proposal = match kind {
        MoveKind::Grow => propose_grow(tree, model, ctx, weights, rng)?,
        MoveKind::Prune => propose_prune(tree, model, ctx, weights, rng)?,
        MoveKind::Change => propose_change(tree, model, ctx, rng)?,
        MoveKind::Swap | MoveKind::Rotate => propose_swap(tree, model, ctx, rng)?,
    };
    let Some(proposal) = proposal else {
        return Ok(MoveOutcome {
            kind,
            proposed: false,
            accepted: false,
        });
    };
    let kind = proposal.kind;
    let accept = proposal.log_ratio >= 0.0 || rng.random::<f64>().ln() < proposal.log_ratio;
    if accept {
        let path = proposal.path.clone();
        proposal.apply(tree)?;
        if kind != MoveKind::Rotate {
            let node = tree
                .node_mut(&path)
                .ok_or_else(|| TgpError::Structural("accepted move lost its node".into()))?;
            let mut leaves = Vec::new();
            node.collect_leaves_mut(&mut leaves);
            for leaf in leaves {
                model.refresh(leaf, rng)?;
            }
        }
    }
    Ok(MoveOutcome {
        kind,
        proposed: true,
        accepted: accept,
    })
}
