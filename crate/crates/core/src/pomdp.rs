//! Belief-state MDP when the eavesdropper's covariance is hidden.
//!
//! The remote estimator never sees `γₑ`, so it tracks a distribution over the
//! eavesdropper's ladder index. That distribution is a deterministic function
//! of the action history, so every belief reachable within the horizon sits
//! on a complete binary tree keyed by the history. Backward induction runs
//! over (time, tree node, remote index).
//!
//! Node ids are heap-ordered: the root is `0` and the child of `id` under
//! action `a` is `2·id + 1 + a`. Depth `d` holds ids `2^d − 1 ..= 2^{d+1} − 2`.

use rayon::prelude::*;

use crate::channel::{Action, ChannelParams};
use crate::error::{Error, Result};
use crate::linear_model::CovarianceLadder;
use crate::mdp::{prefix_threshold, ProblemParams};

/// Largest horizon accepted by [`enumerate_belief_tree`] (tree size `2^N − 1`).
pub const MAX_BELIEF_HORIZON: usize = 20;

const NEG_TOL: f64 = 1e-12;
const SUM_TOL: f64 = 1e-9;
const RENORM_TOL: f64 = 1e-12;

/// Distribution of the eavesdropper's ladder index.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    /// Entries may dip to `-1e-12` (clamped to zero); the total must be
    /// within `1e-9` of one.
    pub fn new(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::config("belief", "empty probability vector"));
        }
        for (i, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() || *p < -NEG_TOL {
                return Err(Error::config(format!("belief[{i}]"), format!("invalid probability {p}")));
            }
            *p = p.max(0.0);
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::config("belief", format!("probabilities sum to {total}, expected 1")));
        }
        Ok(Self { probs })
    }

    pub fn point_mass(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::config("belief", format!("index {index} outside 0..{len}")));
        }
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Largest index with positive mass.
    pub fn support_max(&self) -> usize {
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// Unnormalized `Φ(π, a)`: reset mass `r` at index 0, shift the rest right by
/// one, with overflow past the last rung accumulated there.
fn shift_reset(pi: &[f64], r: f64) -> Vec<f64> {
    let len = pi.len();
    let mut out = vec![0.0; len];
    out[0] = r;
    for i in 1..len {
        out[i] = (1.0 - r) * pi[i - 1];
    }
    out[len - 1] += (1.0 - r) * pi[len - 1];
    out
}

/// `Φ(π, a)` with `r = P(γₑ = 1 | a)`.
pub fn belief_update(pi: &Belief, a: Action, ch: &ChannelParams) -> Belief {
    let mut out = shift_reset(&pi.probs, ch.eavesdrop_prob(a));
    let total: f64 = out.iter().sum();
    if (total - 1.0).abs() > RENORM_TOL {
        out.iter_mut().for_each(|p| *p /= total);
    }
    Belief { probs: out }
}

/// `Σᵢ π[i] · tr(h^i(P*))`.
pub fn expected_eve_trace(pi: &Belief, ladder: &CovarianceLadder) -> Result<f64> {
    if pi.len() != ladder.depth() + 1 {
        return Err(Error::Internal(format!(
            "belief has {} entries but ladder has {} rungs",
            pi.len(),
            ladder.depth() + 1
        )));
    }
    Ok(pi.probs.iter().zip(ladder.traces()).map(|(p, t)| p * t).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefNode {
    pub belief: Belief,
    pub depth: usize,
    /// Actions taken from the root to reach this node.
    pub path: Vec<Action>,
}

/// Every belief reachable by action sequences shorter than the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTree {
    horizon: usize,
    nodes: Vec<BeliefNode>,
}

impl BeliefTree {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &BeliefNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[BeliefNode] {
        &self.nodes
    }

    pub fn belief_len(&self) -> usize {
        self.nodes[0].belief.len()
    }

    /// Global ids of the nodes at `depth`.
    pub fn depth_range(depth: usize) -> std::ops::Range<usize> {
        (1usize << depth) - 1..(1usize << (depth + 1)) - 1
    }

    /// Child id under `a`; `None` for nodes at the last decision depth.
    pub fn child(&self, id: usize, a: Action) -> Option<usize> {
        let c = 2 * id + 1 + a.bit() as usize;
        (c < self.nodes.len()).then_some(c)
    }

    /// Node reached by an action history, if it is shorter than the horizon.
    pub fn find(&self, path: &[Action]) -> Option<usize> {
        path.iter().try_fold(0usize, |id, &a| self.child(id, a))
    }
}

/// Tree rooted at the point mass on index 0, beliefs of length `depth + 1`.
pub fn enumerate_belief_tree(ch: &ChannelParams, horizon: usize, depth: usize) -> Result<BeliefTree> {
    enumerate_belief_tree_from(ch, horizon, Belief::point_mass(depth + 1, 0)?)
}

pub fn enumerate_belief_tree_from(ch: &ChannelParams, horizon: usize, root: Belief) -> Result<BeliefTree> {
    if horizon == 0 {
        return Err(Error::config("horizon", "must be at least 1"));
    }
    if horizon > MAX_BELIEF_HORIZON {
        return Err(Error::config(
            "horizon",
            format!("belief tree has 2^N - 1 nodes; horizon {horizon} exceeds the cap of {MAX_BELIEF_HORIZON}"),
        ));
    }
    let total = (1usize << horizon) - 1;
    let mut nodes = Vec::with_capacity(total);
    nodes.push(BeliefNode {
        belief: root,
        depth: 0,
        path: Vec::new(),
    });
    for id in 1..total {
        let parent = &nodes[(id - 1) / 2];
        let a = if id % 2 == 1 { Action::Plain } else { Action::Encrypt };
        let mut path = parent.path.clone();
        path.push(a);
        let node = BeliefNode {
            belief: belief_update(&parent.belief, a, ch),
            depth: parent.depth + 1,
            path,
        };
        nodes.push(node);
    }
    Ok(BeliefTree { horizon, nodes })
}

/// Tree for a problem: rooted at the point mass on the initial eavesdropper
/// index, beliefs as long as the ladder.
pub fn belief_tree_for(p: &ProblemParams, ladder: &CovarianceLadder) -> Result<BeliefTree> {
    let root = Belief::point_mass(ladder.depth() + 1, p.initial().eve)?;
    enumerate_belief_tree_from(&p.channel, p.horizon(), root)
}

/// Per-time tables indexed `[k − 1][node − first id at depth k − 1][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTable<T> {
    extents: Vec<usize>,
    cells: Vec<Vec<Vec<T>>>,
}

impl<T: Copy> BeliefTable<T> {
    pub fn horizon(&self) -> usize {
        self.cells.len()
    }

    /// Largest remote index solved at time `k`.
    pub fn extent(&self, k: usize) -> usize {
        self.extents[k - 1]
    }

    /// Value for time `k`, global node id `node` (at depth `k − 1`), index `n`.
    pub fn get(&self, k: usize, node: usize, n: usize) -> Option<T> {
        let row = self.cells.get(k.checked_sub(1)?)?;
        let local = node.checked_sub(BeliefTree::depth_range(k - 1).start)?;
        row.get(local)?.get(n).copied()
    }

    /// All remote indices for one (time, node).
    pub fn slice(&self, k: usize, node: usize) -> &[T] {
        let local = node - BeliefTree::depth_range(k - 1).start;
        &self.cells[k - 1][local]
    }
}

pub type BeliefValueTable = BeliefTable<f64>;
pub type BeliefPolicy = BeliefTable<Action>;

impl BeliefPolicy {
    pub fn action(&self, k: usize, node: usize, n: usize) -> Option<Action> {
        self.get(k, node, n)
    }

    /// Open-loop or arbitrary belief policy built from `f(k, node, n)`.
    pub fn from_fn(
        horizon: usize,
        extent: impl Fn(usize) -> usize,
        mut f: impl FnMut(usize, usize, usize) -> Action,
    ) -> Self {
        let extents: Vec<usize> = (1..=horizon).map(&extent).collect();
        let cells = (1..=horizon)
            .map(|k| {
                BeliefTree::depth_range(k - 1)
                    .map(|node| (0..=extents[k - 1]).map(|n| f(k, node, n)).collect())
                    .collect()
            })
            .collect();
        Self { extents, cells }
    }
}

impl BeliefValueTable {
    /// Cells where the value decreases in the remote index by more than
    /// `rel_tol · max(1, |V|)`, as `(k, node, n)`.
    pub fn monotonicity_violations(&self, rel_tol: f64) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for k in 1..=self.horizon() {
            for (local, row) in self.cells[k - 1].iter().enumerate() {
                let node = BeliefTree::depth_range(k - 1).start + local;
                for n in 0..row.len().saturating_sub(1) {
                    if row[n + 1] < row[n] - rel_tol * row[n].abs().max(1.0) {
                        out.push((k, node, n));
                    }
                }
            }
        }
        out
    }
}

fn action_value(
    p: &ProblemParams,
    ladder: &CovarianceLadder,
    belief: &Belief,
    n: usize,
    a: Action,
    next: Option<&[f64]>,
) -> Result<f64> {
    let child = belief_update(belief, a, &p.channel);
    let q = p.channel.arrival_prob(a);
    let enc = if a.is_encrypt() { p.enc_cost() } else { 0.0 };
    let stage = enc + p.remote_term(n, a, ladder) - (1.0 - p.beta()) * expected_eve_trace(&child, ladder)?;
    let cont = match next {
        Some(v) => q * v[0] + (1.0 - q) * v[n + 1],
        None => 0.0,
    };
    Ok(stage + cont)
}

/// Backward induction over the belief tree. Ties go to `Plain`.
pub fn pomdp_backward_induction(
    p: &ProblemParams,
    ladder: &CovarianceLadder,
    tree: &BeliefTree,
) -> Result<(BeliefValueTable, BeliefPolicy)> {
    p.check_ladder(ladder)?;
    let horizon = p.horizon();
    if tree.horizon() != horizon {
        return Err(Error::config(
            "belief_tree",
            format!("tree horizon {} does not match problem horizon {horizon}", tree.horizon()),
        ));
    }
    if tree.belief_len() != ladder.depth() + 1 {
        return Err(Error::Internal("belief length does not match ladder depth".into()));
    }
    let depth = ladder.depth();
    let extents: Vec<usize> = (1..=horizon).map(|k| p.grid_extent(depth, k)).collect();
    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::new(); horizon];
    let mut actions: Vec<Vec<Vec<Action>>> = vec![Vec::new(); horizon];
    for k in (1..=horizon).rev() {
        let extent = extents[k - 1];
        let next_values = if k < horizon { Some(&values[k]) } else { None };
        let next_start = BeliefTree::depth_range(k).start;
        let solved: Vec<(Vec<f64>, Vec<Action>)> = BeliefTree::depth_range(k - 1)
            .into_par_iter()
            .map(|node| {
                let belief = &tree.node(node).belief;
                let child_row = |a: Action| -> Option<&[f64]> {
                    next_values.map(|nv| nv[2 * node + 1 + a.bit() as usize - next_start].as_slice())
                };
                let mut vrow = Vec::with_capacity(extent + 1);
                let mut arow = Vec::with_capacity(extent + 1);
                for n in 0..=extent {
                    let q0 = action_value(p, ladder, belief, n, Action::Plain, child_row(Action::Plain))?;
                    let q1 = action_value(p, ladder, belief, n, Action::Encrypt, child_row(Action::Encrypt))?;
                    if q1 < q0 {
                        vrow.push(q1);
                        arow.push(Action::Encrypt);
                    } else {
                        vrow.push(q0);
                        arow.push(Action::Plain);
                    }
                }
                Ok((vrow, arow))
            })
            .collect::<Result<_>>()?;
        let (v, a): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
        values[k - 1] = v;
        actions[k - 1] = a;
    }
    Ok((
        BeliefTable {
            extents: extents.clone(),
            cells: values,
        },
        BeliefTable { extents, cells: actions },
    ))
}

/// `Q(Encrypt) − Q(Plain)` at (time, node, remote index) against solved values.
pub fn belief_phi(
    k: usize,
    node: usize,
    n: usize,
    values: &BeliefValueTable,
    p: &ProblemParams,
    ladder: &CovarianceLadder,
    tree: &BeliefTree,
) -> Result<f64> {
    if k == 0 || k > values.horizon() || !BeliefTree::depth_range(k - 1).contains(&node) || n > values.extent(k) {
        return Err(Error::config("state", format!("(k={k}, node={node}, n={n}) outside the solved table")));
    }
    let belief = &tree.node(node).belief;
    let row = |a: Action| (k < values.horizon()).then(|| values.slice(k + 1, 2 * node + 1 + a.bit() as usize));
    Ok(action_value(p, ladder, belief, n, Action::Encrypt, row(Action::Encrypt))?
        - action_value(p, ladder, belief, n, Action::Plain, row(Action::Plain))?)
}

/// Remote-index threshold `m(k, node)` for every (time, node), indexed
/// `[k − 1][node − first id at depth k − 1]`. A non-prefix slice is an error.
pub fn certify_belief_thresholds(pol: &BeliefPolicy) -> Result<Vec<Vec<Option<usize>>>> {
    (1..=pol.horizon())
        .map(|k| {
            BeliefTree::depth_range(k - 1)
                .map(|node| {
                    let slice: Vec<u8> = pol.slice(k, node).iter().map(|a| a.bit()).collect();
                    prefix_threshold(&slice).map_err(|_| Error::StructureViolation {
                        context: format!("k={k}, belief node {node} (expected encrypt set to be a prefix in n)"),
                        slice,
                    })
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_model::{build_ladder, SystemModel};
    use crate::mdp::default_ladder_depth;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn baseline_channel() -> ChannelParams {
        ChannelParams::new(0.7, 0.7, 0.9, 0.18).unwrap()
    }

    fn baseline(horizon: usize) -> (ProblemParams, CovarianceLadder) {
        let model = SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.9]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            DMatrix::from_element(1, 1, 0.6),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let p = ProblemParams::new(model, baseline_channel(), 0.5, 6.0, horizon).unwrap();
        let ladder = build_ladder(&p.model, default_ladder_depth(horizon)).unwrap();
        (p, ladder)
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15)
    }

    #[test]
    fn belief_update_examples() {
        let ch = baseline_channel();
        let root = Belief::point_mass(4, 0).unwrap();
        assert!(close(belief_update(&root, Action::Plain, &ch).probs(), &[0.7, 0.3, 0.0, 0.0]));
        assert!(close(belief_update(&root, Action::Encrypt, &ch).probs(), &[0.126, 0.874, 0.0, 0.0]));
    }

    #[test]
    fn zero_reset_probability_is_pure_shift() {
        let ch = ChannelParams::new(0.7, 0.7, 0.9, 0.0).unwrap();
        let pi = Belief::new(vec![0.2, 0.5, 0.3, 0.0]).unwrap();
        let out = belief_update(&pi, Action::Encrypt, &ch);
        assert_eq!(out.probs(), &[0.0, 0.2, 0.5, 0.3]);
    }

    #[test]
    fn overflow_accumulates_at_last_rung() {
        let ch = ChannelParams::new(0.7, 0.5, 0.9, 0.18).unwrap();
        let pi = Belief::new(vec![0.0, 0.4, 0.6]).unwrap();
        let out = belief_update(&pi, Action::Plain, &ch);
        assert!(close(out.probs(), &[0.5, 0.0, 0.5]));
    }

    #[test]
    fn invalid_beliefs_rejected() {
        assert!(Belief::new(vec![0.5, 0.4]).is_err());
        assert!(Belief::new(vec![1.1, -0.1]).is_err());
        assert!(Belief::new(vec![]).is_err());
        let b = Belief::new(vec![1.0 + 5e-13, -5e-13]).unwrap();
        assert_eq!(b.probs()[1], 0.0);
    }

    #[test]
    fn expected_trace_examples() {
        let ladder = CovarianceLadder::from_traces(vec![1.0, 2.5, 4.0]).unwrap();
        let pm = Belief::point_mass(3, 2).unwrap();
        assert_eq!(expected_eve_trace(&pm, &ladder).unwrap(), 4.0);
        let uni = Belief::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert_eq!(expected_eve_trace(&uni, &ladder).unwrap(), 1.75);
        let short = Belief::point_mass(2, 0).unwrap();
        assert!(matches!(expected_eve_trace(&short, &ladder), Err(Error::Internal(_))));
    }

    #[test]
    fn expected_trace_after_one_plain_step() {
        let (_, ladder) = baseline(3);
        let root = Belief::point_mass(ladder.depth() + 1, 0).unwrap();
        let b = belief_update(&root, Action::Plain, &baseline_channel());
        let e = expected_eve_trace(&b, &ladder).unwrap();
        assert!((e - (0.7 * ladder.trace(0) + 0.3 * ladder.trace(1))).abs() < 1e-12);
    }

    #[test]
    fn tree_sizes_and_cap() {
        let ch = baseline_channel();
        assert_eq!(enumerate_belief_tree(&ch, 1, 3).unwrap().len(), 1);
        let t = enumerate_belief_tree(&ch, 3, 4).unwrap();
        assert_eq!(t.len(), 7);
        assert_eq!(t.find(&[Action::Encrypt, Action::Plain]), Some(5));
        assert_eq!(t.node(5).path, vec![Action::Encrypt, Action::Plain]);
        assert_eq!(t.find(&[Action::Plain; 3]), None);
        for d in 0..3 {
            assert_eq!(BeliefTree::depth_range(d).len(), 1 << d);
            for id in BeliefTree::depth_range(d) {
                assert_eq!(t.node(id).depth, d);
                assert!(t.node(id).belief.support_max() <= d);
            }
        }
        let err = enumerate_belief_tree(&ch, MAX_BELIEF_HORIZON + 1, 3).unwrap_err();
        assert!(err.to_string().contains("cap"));
    }

    #[test]
    fn transparent_encryption_gives_identical_children() {
        let ch = ChannelParams::new(0.7, 0.6, 0.9, 1.0).unwrap();
        let t = enumerate_belief_tree(&ch, 5, 6).unwrap();
        for id in BeliefTree::depth_range(3) {
            let a = t.child(id, Action::Plain).unwrap();
            let b = t.child(id, Action::Encrypt).unwrap();
            assert_eq!(t.node(a).belief, t.node(b).belief);
        }
    }

    #[test]
    fn noop_encryption_never_chosen() {
        let (p0, ladder) = baseline(5);
        let ch = ChannelParams::new(0.7, 0.7, 1.0, 1.0).unwrap();
        let p = ProblemParams::new(p0.model.clone(), ch, 0.5, 0.0, 5).unwrap();
        let tree = belief_tree_for(&p, &ladder).unwrap();
        let (vals, pol) = pomdp_backward_induction(&p, &ladder, &tree).unwrap();
        for k in 1..=5 {
            for node in BeliefTree::depth_range(k - 1) {
                assert!(pol.slice(k, node).iter().all(|a| *a == Action::Plain));
                for n in 0..=vals.extent(k) {
                    assert_eq!(belief_phi(k, node, n, &vals, &p, &ladder, &tree).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_stage_root_value() {
        let (p, ladder) = baseline(1);
        let tree = belief_tree_for(&p, &ladder).unwrap();
        let (vals, _) = pomdp_backward_induction(&p, &ladder, &tree).unwrap();
        let root = &tree.node(0).belief;
        let c = |a| {
            let child = belief_update(root, a, &p.channel);
            let enc = if a == Action::Encrypt { 6.0 } else { 0.0 };
            let q = p.channel.arrival_prob(a);
            enc + 0.5 * (q * ladder.trace(0) + (1.0 - q) * ladder.trace(1))
                - 0.5 * expected_eve_trace(&child, &ladder).unwrap()
        };
        let expected = c(Action::Plain).min(c(Action::Encrypt));
        assert!((vals.get(1, 0, 0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn baseline_structure_and_monotonicity() {
        let (p, ladder) = baseline(8);
        let tree = belief_tree_for(&p, &ladder).unwrap();
        let (vals, pol) = pomdp_backward_induction(&p, &ladder, &tree).unwrap();
        certify_belief_thresholds(&pol).unwrap();
        assert!(vals.monotonicity_violations(1e-9).is_empty());
        for k in 1..=8 {
            for node in BeliefTree::depth_range(k - 1) {
                for n in 0..=vals.extent(k) {
                    let f = belief_phi(k, node, n, &vals, &p, &ladder, &tree).unwrap();
                    assert_eq!(f < 0.0, pol.action(k, node, n).unwrap().is_encrypt());
                }
            }
        }
    }

    #[test]
    fn threshold_certification() {
        let pol = BeliefPolicy::from_fn(2, |_| 2, |k, node, n| {
            if k == 2 && node == 2 && n == 0 { Action::Encrypt } else { Action::Plain }
        });
        let m = certify_belief_thresholds(&pol).unwrap();
        assert_eq!(m, vec![vec![None], vec![None, Some(0)]]);
        let bad = BeliefPolicy::from_fn(1, |_| 2, |_, _, n| if n == 1 { Action::Encrypt } else { Action::Plain });
        assert_eq!(certify_belief_thresholds(&bad).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn horizon_mismatch_rejected() {
        let (p, ladder) = baseline(4);
        let tree = enumerate_belief_tree(&p.channel, 3, ladder.depth()).unwrap();
        assert!(pomdp_backward_induction(&p, &ladder, &tree).is_err());
    }

    proptest! {
        #[test]
        fn update_preserves_mass(
            raw in proptest::collection::vec(0.0..1.0f64, 2..12),
            le in 0.0..=1.0f64, e2 in 0.0..=1.0f64, enc in any::<bool>()
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let pi = Belief::new(raw.iter().map(|x| x / total).collect()).unwrap();
            let ch = ChannelParams::new(0.5, le, 0.5, e2).unwrap();
            let a = if enc { Action::Encrypt } else { Action::Plain };
            let unnorm = shift_reset(pi.probs(), ch.eavesdrop_prob(a));
            prop_assert!((unnorm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let out = belief_update(&pi, a, &ch);
            prop_assert!(out.probs().iter().all(|&p| p >= 0.0));
        }
    }
}
