//! Finite-horizon MDP when the eavesdropper's covariance is known.
//!
//! The state at time `k` is the ladder-index pair `(n, n_e)` with
//! `P_{k−1} = h^n(P*)` and `P_{e,k−1} = h^{n_e}(P*)`. Backward induction runs
//! from `V_{N+1} ≡ 0`.
//!
//! Grid extents shrink going backwards: `V_k` at index `n` needs `V_{k+1}` at
//! `n + 1`, so with a ladder of depth `L` the table at time `k` covers indices
//! `0..=L − 1 − (N − k)`. Every cell is then solved exactly; nothing is
//! truncated or saturated at the boundary.

use crate::channel::{Action, ChannelParams};
use crate::error::{Error, Result};
use crate::linear_model::{CovarianceLadder, SystemModel};

/// Ladder depth used when none is configured: grids at every time cover at
/// least `0..=N + 1`.
pub fn default_ladder_depth(horizon: usize) -> usize {
    2 * horizon + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct LadderState {
    /// Remote estimator index `n`.
    pub remote: usize,
    /// Eavesdropper index `n_e`.
    pub eve: usize,
}

impl LadderState {
    pub const ORIGIN: LadderState = LadderState { remote: 0, eve: 0 };

    pub fn new(remote: usize, eve: usize) -> Self {
        Self { remote, eve }
    }

    /// Successor after the outcome pair `(γ, γₑ)`.
    pub fn successor(self, remote_ok: bool, eve_ok: bool) -> Self {
        Self {
            remote: if remote_ok { 0 } else { self.remote + 1 },
            eve: if eve_ok { 0 } else { self.eve + 1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemParams {
    pub model: SystemModel,
    pub channel: ChannelParams,
    beta: f64,
    enc_cost: f64,
    horizon: usize,
    initial: LadderState,
}

impl ProblemParams {
    pub fn new(
        model: SystemModel,
        channel: ChannelParams,
        beta: f64,
        enc_cost: f64,
        horizon: usize,
    ) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::config("beta", format!("must lie in the open interval (0, 1), got {beta}")));
        }
        if !enc_cost.is_finite() || enc_cost < 0.0 {
            return Err(Error::config("enc_cost", format!("must be finite and >= 0, got {enc_cost}")));
        }
        if horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        Ok(Self {
            model,
            channel,
            beta,
            enc_cost,
            horizon,
            initial: LadderState::ORIGIN,
        })
    }

    /// Starting indices `(P₀, P_{e,0}) = (h^n(P*), h^{n_e}(P*))`; default `(0, 0)`.
    pub fn with_initial(mut self, initial: LadderState) -> Self {
        self.initial = initial;
        self
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn enc_cost(&self) -> f64 {
        self.enc_cost
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> LadderState {
        self.initial
    }

    /// Smallest ladder depth that covers every reachable state.
    pub fn min_ladder_depth(&self) -> usize {
        self.horizon + 1 + self.initial.remote.max(self.initial.eve)
    }

    pub fn check_ladder(&self, ladder: &CovarianceLadder) -> Result<()> {
        let need = self.min_ladder_depth();
        if ladder.depth() < need {
            return Err(Error::config(
                "ladder_depth",
                format!("ladder depth {} is too shallow, need at least {need}", ladder.depth()),
            ));
        }
        Ok(())
    }

    /// Largest index solvable at time `k` for a ladder of depth `depth`.
    pub fn grid_extent(&self, depth: usize, k: usize) -> usize {
        depth - 1 - (self.horizon - k)
    }

    /// Expected `β tr(P_k)` term given remote index `n` and action `a`.
    pub(crate) fn remote_term(&self, n: usize, a: Action, ladder: &CovarianceLadder) -> f64 {
        let q = self.channel.arrival_prob(a);
        self.beta * (q * ladder.trace(0) + (1.0 - q) * ladder.trace(n + 1))
    }
}

/// Square grid over index pairs `0..=extent`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    extent: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    fn filled(extent: usize, value: T) -> Self {
        let side = extent + 1;
        Self {
            extent,
            data: vec![value; side * side],
        }
    }

    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        if row > self.extent || col > self.extent {
            return None;
        }
        Some(self.data[row * (self.extent + 1) + col])
    }

    fn set(&mut self, row: usize, col: usize, value: T) {
        let side = self.extent + 1;
        self.data[row * side + col] = value;
    }
}

/// Optimal cost-to-go `V_k(n, n_e)` for `k = 1..=N+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    grids: Vec<Grid<f64>>,
}

impl ValueTable {
    pub fn horizon(&self) -> usize {
        self.grids.len() - 1
    }

    pub fn extent(&self, k: usize) -> usize {
        self.grids[k - 1].extent
    }

    pub fn get(&self, k: usize, s: LadderState) -> Option<f64> {
        self.grids.get(k.checked_sub(1)?)?.get(s.remote, s.eve)
    }

    pub fn grid(&self, k: usize) -> &Grid<f64> {
        &self.grids[k - 1]
    }

    /// Cells where `V_k` decreases in `n` or increases in `n_e` by more than
    /// `rel_tol · max(1, |V|)`.
    pub fn monotonicity_violations(&self, rel_tol: f64) -> Vec<(usize, LadderState, &'static str)> {
        let mut out = Vec::new();
        for k in 1..=self.horizon() {
            let g = self.grid(k);
            let e = g.extent;
            for n in 0..=e {
                for ne in 0..=e {
                    let v = g.get(n, ne).unwrap();
                    let tol = rel_tol * v.abs().max(1.0);
                    if n < e && g.get(n + 1, ne).unwrap() < v - tol {
                        out.push((k, LadderState::new(n, ne), "decreasing in n"));
                    }
                    if ne < e && g.get(n, ne + 1).unwrap() > v + tol {
                        out.push((k, LadderState::new(n, ne), "increasing in n_e"));
                    }
                }
            }
        }
        out
    }
}

/// Actions `a_k(n, n_e)` for `k = 1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    grids: Vec<Grid<Action>>,
}

impl PolicyTable {
    /// Table with per-time extents `extent(k)` filled by `f(k, state)`.
    pub fn from_fn(
        horizon: usize,
        extent: impl Fn(usize) -> usize,
        mut f: impl FnMut(usize, LadderState) -> Action,
    ) -> Self {
        let grids = (1..=horizon)
            .map(|k| {
                let e = extent(k);
                let mut g = Grid::filled(e, Action::Plain);
                for n in 0..=e {
                    for ne in 0..=e {
                        g.set(n, ne, f(k, LadderState::new(n, ne)));
                    }
                }
                g
            })
            .collect();
        Self { grids }
    }

    pub fn horizon(&self) -> usize {
        self.grids.len()
    }

    pub fn extent(&self, k: usize) -> usize {
        self.grids[k - 1].extent
    }

    pub fn action(&self, k: usize, s: LadderState) -> Option<Action> {
        self.grids.get(k.checked_sub(1)?)?.get(s.remote, s.eve)
    }

    /// `a_k(·, n_e)` as bits over `n = 0..=extent`.
    pub fn slice_in_remote(&self, k: usize, eve: usize) -> Vec<u8> {
        let g = &self.grids[k - 1];
        (0..=g.extent).map(|n| g.get(n, eve).map_or(0, Action::bit)).collect()
    }

    /// `a_k(n, ·)` as bits over `n_e = 0..=extent`.
    pub fn slice_in_eve(&self, k: usize, remote: usize) -> Vec<u8> {
        let g = &self.grids[k - 1];
        (0..=g.extent).map(|ne| g.get(remote, ne).map_or(0, Action::bit)).collect()
    }

    pub fn count_encrypt(&self, k: usize) -> usize {
        self.grids[k - 1].data.iter().filter(|a| a.is_encrypt()).count()
    }
}

/// One-stage cost `c_k(n, n_e, a)`: encryption cost plus the β-weighted
/// expected remote trace minus the (1−β)-weighted expected eavesdropper trace.
pub fn stage_cost(state: LadderState, a: Action, p: &ProblemParams, ladder: &CovarianceLadder) -> Result<f64> {
    let top = state.remote.max(state.eve) + 1;
    if top > ladder.depth() {
        return Err(Error::Internal(format!(
            "state ({}, {}) needs rung {top} but ladder depth is {}",
            state.remote,
            state.eve,
            ladder.depth()
        )));
    }
    Ok(stage_cost_unchecked(state, a, p, ladder))
}

fn stage_cost_unchecked(state: LadderState, a: Action, p: &ProblemParams, ladder: &CovarianceLadder) -> f64 {
    let qe = p.channel.eavesdrop_prob(a);
    let eve = qe * ladder.trace(0) + (1.0 - qe) * ladder.trace(state.eve + 1);
    let enc = if a.is_encrypt() { p.enc_cost } else { 0.0 };
    enc + p.remote_term(state.remote, a, ladder) - (1.0 - p.beta) * eve
}

fn action_value(
    state: LadderState,
    a: Action,
    next: &Grid<f64>,
    p: &ProblemParams,
    ladder: &CovarianceLadder,
) -> f64 {
    let t = p.channel.joint_transition(a);
    let mut cont = 0.0;
    for (prob, remote_ok, eve_ok) in t.outcomes() {
        let s = state.successor(remote_ok, eve_ok);
        // In range by construction of the shrinking extents.
        cont += prob * next.get(s.remote, s.eve).expect("successor within next extent");
    }
    stage_cost_unchecked(state, a, p, ladder) + cont
}

/// Solves the Bellman recursion; ties between actions go to `Plain`.
pub fn backward_induction(p: &ProblemParams, ladder: &CovarianceLadder) -> Result<(ValueTable, PolicyTable)> {
    p.check_ladder(ladder)?;
    let n_steps = p.horizon;
    let depth = ladder.depth();
    let mut values = vec![Grid::filled(depth, 0.0); n_steps + 1];
    let mut policies: Vec<Grid<Action>> = Vec::with_capacity(n_steps);
    for k in (1..=n_steps).rev() {
        let extent = p.grid_extent(depth, k);
        let mut vg = Grid::filled(extent, 0.0);
        let mut pg = Grid::filled(extent, Action::Plain);
        let next = &values[k];
        for n in 0..=extent {
            for ne in 0..=extent {
                let s = LadderState::new(n, ne);
                let q0 = action_value(s, Action::Plain, next, p, ladder);
                let q1 = action_value(s, Action::Encrypt, next, p, ladder);
                let (v, a) = if q1 < q0 { (q1, Action::Encrypt) } else { (q0, Action::Plain) };
                vg.set(n, ne, v);
                pg.set(n, ne, a);
            }
        }
        values[k - 1] = vg;
        policies.push(pg);
    }
    policies.reverse();
    Ok((ValueTable { grids: values }, PolicyTable { grids: policies }))
}

/// `Q_k(s, Encrypt) − Q_k(s, Plain)` against the solved `V_{k+1}`.
/// Non-negative means sending in the clear is optimal.
pub fn phi(k: usize, state: LadderState, vt: &ValueTable, p: &ProblemParams, ladder: &CovarianceLadder) -> Result<f64> {
    if k == 0 || k > vt.horizon() {
        return Err(Error::config("k", format!("must lie in 1..={}, got {k}", vt.horizon())));
    }
    let extent = vt.extent(k);
    if state.remote > extent || state.eve > extent {
        return Err(Error::config("state", format!("outside the solved grid 0..={extent} at k={k}")));
    }
    let next = vt.grid(k + 1);
    Ok(action_value(state, Action::Encrypt, next, p, ladder) - action_value(state, Action::Plain, next, p, ladder))
}

/// A 0/1 slice whose encrypt set is not of the required threshold shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotThreshold;

/// Threshold `m` of a slice whose encrypt set must be `{0, …, m}`.
pub fn prefix_threshold(slice: &[u8]) -> std::result::Result<Option<usize>, NotThreshold> {
    let ones = slice.iter().take_while(|&&b| b == 1).count();
    if slice[ones..].contains(&1) {
        return Err(NotThreshold);
    }
    Ok(ones.checked_sub(1))
}

/// Threshold `m_e` of a slice whose encrypt set must be `{m_e, …, end}`.
pub fn suffix_threshold(slice: &[u8]) -> std::result::Result<Option<usize>, NotThreshold> {
    let zeros = slice.iter().take_while(|&&b| b == 0).count();
    if slice[zeros..].contains(&0) {
        return Err(NotThreshold);
    }
    Ok((zeros < slice.len()).then_some(zeros))
}

fn check_k(pol: &PolicyTable, k: usize) -> Result<()> {
    if k == 0 || k > pol.horizon() {
        return Err(Error::config("k", format!("must lie in 1..={}, got {k}", pol.horizon())));
    }
    Ok(())
}

/// Largest `m` with `a_k(n, n_e) = Encrypt` for all `n ≤ m`, or `None` if
/// nothing is encrypted. Errors if the encrypt set is not a prefix in `n`.
pub fn extract_threshold_m(k: usize, eve: usize, pol: &PolicyTable) -> Result<Option<usize>> {
    check_k(pol, k)?;
    if eve > pol.extent(k) {
        return Err(Error::config("n_e", format!("outside the solved grid at k={k}")));
    }
    let slice = pol.slice_in_remote(k, eve);
    prefix_threshold(&slice).map_err(|_| Error::StructureViolation {
        context: format!("k={k}, n_e={eve} (expected encrypt set to be a prefix in n)"),
        slice,
    })
}

/// Smallest `m_e` with `a_k(n, n_e) = Encrypt` for all `n_e ≥ m_e`, or `None`.
/// Errors if the encrypt set is not a suffix in `n_e`.
pub fn extract_threshold_me(k: usize, remote: usize, pol: &PolicyTable) -> Result<Option<usize>> {
    check_k(pol, k)?;
    if remote > pol.extent(k) {
        return Err(Error::config("n", format!("outside the solved grid at k={k}")));
    }
    let slice = pol.slice_in_eve(k, remote);
    suffix_threshold(&slice).map_err(|_| Error::StructureViolation {
        context: format!("k={k}, n={remote} (expected encrypt set to be a suffix in n_e)"),
        slice,
    })
}

/// All thresholds of a solved table, indexed `[k − 1][index]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdMap {
    /// `m(k, n_e)`: remote-index threshold for each eavesdropper index.
    pub remote: Vec<Vec<Option<usize>>>,
    /// `m_e(k, n)`: eavesdropper-index threshold for each remote index.
    pub eve: Vec<Vec<Option<usize>>>,
}

/// Extracts every threshold; the first non-threshold slice is an error.
pub fn certify_thresholds(pol: &PolicyTable) -> Result<ThresholdMap> {
    let mut remote = Vec::with_capacity(pol.horizon());
    let mut eve = Vec::with_capacity(pol.horizon());
    for k in 1..=pol.horizon() {
        let e = pol.extent(k);
        remote.push((0..=e).map(|ne| extract_threshold_m(k, ne, pol)).collect::<Result<Vec<_>>>()?);
        eve.push((0..=e).map(|n| extract_threshold_me(k, n, pol)).collect::<Result<Vec<_>>>()?);
    }
    Ok(ThresholdMap { remote, eve })
}
