//! Exact and Monte Carlo evaluation of encryption schedules.
//!
//! Exact evaluation propagates the finite distribution over information
//! states forward through the horizon. Monte Carlo samples the outcome
//! process `(γ_k, γ_{e,k})` directly: the covariance traces are functions of
//! the outcomes, so no state-space draws are needed. [`simulate_trajectory`]
//! runs the full plant, local filter and both estimators for end-to-end
//! checks.
//!
//! # Random streams
//!
//! All sampling uses ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`, one stream per trial via `set_stream(trial)`. Each
//! step of a Monte Carlo trial draws two `f64` uniforms in `[0, 1)`, remote
//! first; `γ = 1` iff the draw is below the success probability. Trajectory
//! steps draw the process noise, then the measurement noise (standard
//! normals, component order), then the same two uniforms. Per-trial results
//! are reduced in trial order, so the output does not depend on the number
//! of worker threads.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channel::Action;
use crate::error::{Error, Result};
use crate::linear_model::{sqrt_psd, steady_state_gain, CovarianceLadder};
use crate::mdp::{backward_induction, LadderState, PolicyTable, ProblemParams};
use crate::pomdp::{belief_tree_for, belief_update, expected_eve_trace, pomdp_backward_induction, Belief, BeliefPolicy};

/// An encryption schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Never encrypt.
    Never,
    /// Always encrypt.
    Always,
    /// Optimal full-information table from [`backward_induction`].
    OptimalKnown(PolicyTable),
    /// Optimal belief policy from [`pomdp_backward_induction`].
    OptimalUnknown(BeliefPolicy),
    /// Any table over `(k, n, n_e)`.
    Explicit(PolicyTable),
    /// Fixed action sequence `a_1, …, a_N`.
    OpenLoop(Vec<Action>),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Never => "never",
            Strategy::Always => "always",
            Strategy::OptimalKnown(_) => "optimal-known",
            Strategy::OptimalUnknown(_) => "optimal-unknown",
            Strategy::Explicit(_) => "explicit",
            Strategy::OpenLoop(_) => "open-loop",
        }
    }

    fn check_horizon(&self, horizon: usize) -> Result<()> {
        let got = match self {
            Strategy::Never | Strategy::Always => return Ok(()),
            Strategy::OptimalKnown(t) | Strategy::Explicit(t) => t.horizon(),
            Strategy::OptimalUnknown(b) => b.horizon(),
            Strategy::OpenLoop(seq) => seq.len(),
        };
        if got != horizon {
            return Err(Error::config(
                "strategy",
                format!("{} covers {got} steps but the horizon is {horizon}", self.name()),
            ));
        }
        Ok(())
    }

    /// Action at time `k` given the remote index, the eavesdropper index and
    /// the belief-tree node of the action history.
    fn decide(&self, k: usize, state: LadderState, node: usize) -> Result<Action> {
        let missing = || {
            Error::config(
                "strategy",
                format!(
                    "{} has no action for k={k}, n={}, n_e={}, node={node}",
                    self.name(),
                    state.remote,
                    state.eve
                ),
            )
        };
        match self {
            Strategy::Never => Ok(Action::Plain),
            Strategy::Always => Ok(Action::Encrypt),
            Strategy::OptimalKnown(t) | Strategy::Explicit(t) => t.action(k, state).ok_or_else(missing),
            Strategy::OptimalUnknown(b) => b.action(k, node, state.remote).ok_or_else(missing),
            Strategy::OpenLoop(seq) => seq.get(k - 1).copied().ok_or_else(missing),
        }
    }

    fn needs_belief(&self) -> bool {
        matches!(self, Strategy::OptimalUnknown(_))
    }
}

fn child_node(node: usize, a: Action) -> usize {
    2 * node + 1 + a.bit() as usize
}

/// Expected horizon sums for one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    /// `E[Σ tr P_k]`.
    pub sum_remote_trace: f64,
    /// `E[Σ tr P_{e,k}]`.
    pub sum_eve_trace: f64,
    /// `E[Σ a_k]`.
    pub sum_actions: f64,
    /// Integrated cost `J`, accumulated per step.
    pub total_cost: f64,
    pub se_remote: f64,
    pub se_eve: f64,
    pub se_actions: f64,
    pub se_cost: f64,
    /// Number of Monte Carlo trials; zero for exact evaluation.
    pub trials: usize,
    pub seed: Option<u64>,
}

impl SimReport {
    pub fn is_exact(&self) -> bool {
        self.trials == 0
    }

    /// `|J − (β·R − (1−β)·E + C·A)|` between the accumulated cost and the one
    /// rebuilt from the three sums.
    pub fn consistency_gap(&self, beta: f64, enc_cost: f64) -> f64 {
        let rebuilt = beta * self.sum_remote_trace - (1.0 - beta) * self.sum_eve_trace + enc_cost * self.sum_actions;
        (self.total_cost - rebuilt).abs()
    }
}

/// Exact report plus the per-step expectations behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactProfile {
    pub report: SimReport,
    /// `E[tr P_k]` for `k = 1..=N`.
    pub remote_by_step: Vec<f64>,
    /// `E[tr P_{e,k}]` for `k = 1..=N`.
    pub eve_by_step: Vec<f64>,
    /// `P(a_k = 1)` for `k = 1..=N`.
    pub actions_by_step: Vec<f64>,
}

/// Exact expectations by forward propagation of the information-state
/// distribution.
pub fn evaluate_policy_exact(strategy: &Strategy, p: &ProblemParams, ladder: &CovarianceLadder) -> Result<SimReport> {
    Ok(evaluate_policy_exact_profile(strategy, p, ladder)?.report)
}

pub fn evaluate_policy_exact_profile(
    strategy: &Strategy,
    p: &ProblemParams,
    ladder: &CovarianceLadder,
) -> Result<ExactProfile> {
    p.check_ladder(ladder)?;
    strategy.check_horizon(p.horizon())?;
    if strategy.needs_belief() {
        exact_belief(strategy, p, ladder)
    } else {
        exact_full_info(strategy, p, ladder)
    }
}

fn exact_full_info(strategy: &Strategy, p: &ProblemParams, ladder: &CovarianceLadder) -> Result<ExactProfile> {
    let mut dist: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    dist.insert((p.initial().remote, p.initial().eve), 1.0);
    let mut prof = Profile::new(p.horizon());
    for k in 1..=p.horizon() {
        let mut next: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut acts = 0.0;
        let mut stage = 0.0;
        for (&(n, ne), &mass) in &dist {
            let s = LadderState::new(n, ne);
            let a = strategy.decide(k, s, 0)?;
            acts += mass * a.bit() as f64;
            stage += mass * crate::mdp::stage_cost(s, a, p, ladder)?;
            for (prob, remote_ok, eve_ok) in p.channel.joint_transition(a).outcomes() {
                let t = s.successor(remote_ok, eve_ok);
                *next.entry((t.remote, t.eve)).or_insert(0.0) += mass * prob;
            }
        }
        dist = next;
        let remote: f64 = dist.iter().map(|(&(n, _), m)| m * ladder.trace(n)).sum();
        let eve: f64 = dist.iter().map(|(&(_, ne), m)| m * ladder.trace(ne)).sum();
        prof.push(remote, eve, acts, stage);
    }
    Ok(prof.finish())
}

fn exact_belief(strategy: &Strategy, p: &ProblemParams, ladder: &CovarianceLadder) -> Result<ExactProfile> {
    let (beta, cost) = (p.beta(), p.enc_cost());
    let mut beliefs: HashMap<usize, Belief> = HashMap::new();
    beliefs.insert(0, Belief::point_mass(ladder.depth() + 1, p.initial().eve)?);
    let mut dist: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    dist.insert((p.initial().remote, 0), 1.0);
    let mut prof = Profile::new(p.horizon());
    for k in 1..=p.horizon() {
        let mut next: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let (mut acts, mut eve, mut stage) = (0.0, 0.0, 0.0);
        for (&(n, node), &mass) in &dist {
            let a = strategy.decide(k, LadderState::new(n, 0), node)?;
            let child = child_node(node, a);
            if !beliefs.contains_key(&child) {
                let b = belief_update(&beliefs[&node], a, &p.channel);
                beliefs.insert(child, b);
            }
            let eve_trace = expected_eve_trace(&beliefs[&child], ladder)?;
            let q = p.channel.arrival_prob(a);
            acts += mass * a.bit() as f64;
            eve += mass * eve_trace;
            let enc = if a.is_encrypt() { cost } else { 0.0 };
            stage += mass * (enc + p.remote_term(n, a, ladder) - (1.0 - beta) * eve_trace);
            *next.entry((0, child)).or_insert(0.0) += mass * q;
            *next.entry((n + 1, child)).or_insert(0.0) += mass * (1.0 - q);
        }
        dist = next;
        let remote: f64 = dist.iter().map(|(&(n, _), m)| m * ladder.trace(n)).sum();
        prof.push(remote, eve, acts, stage);
    }
    Ok(prof.finish())
}

struct Profile {
    remote: Vec<f64>,
    eve: Vec<f64>,
    acts: Vec<f64>,
    cost: f64,
}

impl Profile {
    fn new(horizon: usize) -> Self {
        Self {
            remote: Vec::with_capacity(horizon),
            eve: Vec::with_capacity(horizon),
            acts: Vec::with_capacity(horizon),
            cost: 0.0,
        }
    }

    fn push(&mut self, remote: f64, eve: f64, acts: f64, stage: f64) {
        self.remote.push(remote);
        self.eve.push(eve);
        self.acts.push(acts);
        self.cost += stage;
    }

    fn finish(self) -> ExactProfile {
        let report = SimReport {
            sum_remote_trace: self.remote.iter().sum(),
            sum_eve_trace: self.eve.iter().sum(),
            sum_actions: self.acts.iter().sum(),
            total_cost: self.cost,
            se_remote: 0.0,
            se_eve: 0.0,
            se_actions: 0.0,
            se_cost: 0.0,
            trials: 0,
            seed: None,
        };
        ExactProfile {
            report,
            remote_by_step: self.remote,
            eve_by_step: self.eve,
            actions_by_step: self.acts,
        }
    }
}

/// RNG for one trial: ChaCha8 seeded from `seed`, stream `trial`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Running mean and variance (Welford); identical samples give an exact
/// mean and zero variance.
#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
    }
}

fn run_trial(strategy: &Strategy, p: &ProblemParams, ladder: &CovarianceLadder, rng: &mut ChaCha8Rng) -> Result<[f64; 4]> {
    let (beta, cost) = (p.beta(), p.enc_cost());
    let mut s = p.initial();
    let mut node = 0usize;
    let mut out = [0.0; 4];
    for k in 1..=p.horizon() {
        let a = strategy.decide(k, s, node)?;
        let remote_ok = rng.random::<f64>() < p.channel.arrival_prob(a);
        let eve_ok = rng.random::<f64>() < p.channel.eavesdrop_prob(a);
        s = s.successor(remote_ok, eve_ok);
        node = child_node(node, a);
        let (tr, tre) = (ladder.trace(s.remote), ladder.trace(s.eve));
        let act = a.bit() as f64;
        out[0] += tr;
        out[1] += tre;
        out[2] += act;
        out[3] += beta * tr - (1.0 - beta) * tre + cost * act;
    }
    Ok(out)
}

/// Monte Carlo estimate with standard errors; a pure function of its inputs.
pub fn simulate(
    strategy: &Strategy,
    p: &ProblemParams,
    ladder: &CovarianceLadder,
    trials: usize,
    seed: u64,
) -> Result<SimReport> {
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    p.check_ladder(ladder)?;
    strategy.check_horizon(p.horizon())?;
    let per_trial: Vec<[f64; 4]> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(strategy, p, ladder, &mut trial_rng(seed, t as u64)))
        .collect::<Result<_>>()?;
    let mut m = [Moments::default(); 4];
    for row in &per_trial {
        for (acc, &x) in m.iter_mut().zip(row) {
            acc.push(x);
        }
    }
    Ok(SimReport {
        sum_remote_trace: m[0].mean,
        sum_eve_trace: m[1].mean,
        sum_actions: m[2].mean,
        total_cost: m[3].mean,
        se_remote: m[0].std_error(),
        se_eve: m[1].std_error(),
        se_actions: m[2].std_error(),
        se_cost: m[3].std_error(),
        trials,
        seed: Some(seed),
    })
}

/// One step of a simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub k: usize,
    pub action: Action,
    pub remote_received: bool,
    pub eve_received: bool,
    pub state: DVector<f64>,
    pub local_estimate: DVector<f64>,
    pub remote_estimate: DVector<f64>,
    pub eve_estimate: DVector<f64>,
    /// Ladder indices after the update.
    pub indices: LadderState,
}

impl TrajectoryStep {
    pub fn remote_sq_error(&self) -> f64 {
        (&self.state - &self.remote_estimate).norm_squared()
    }

    pub fn eve_sq_error(&self) -> f64 {
        (&self.state - &self.eve_estimate).norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial_state: DVector<f64>,
    pub steps: Vec<TrajectoryStep>,
}

fn normal_vector(rng: &mut ChaCha8Rng, root: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_iterator(root.ncols(), (0..root.ncols()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    root * z
}

struct TrajectoryKit {
    gain: DMatrix<f64>,
    p_root: DMatrix<f64>,
    q_root: DMatrix<f64>,
    r_root: DMatrix<f64>,
}

impl TrajectoryKit {
    fn new(p: &ProblemParams, ladder: &CovarianceLadder) -> Result<Self> {
        if p.initial() != LadderState::ORIGIN {
            return Err(Error::config(
                "initial",
                "trajectory simulation starts all filters at the steady state (indices 0, 0)",
            ));
        }
        let model = &p.model;
        Ok(Self {
            gain: steady_state_gain(model, ladder.steady_state())?,
            p_root: sqrt_psd(ladder.steady_state()),
            q_root: sqrt_psd(model.q()),
            r_root: sqrt_psd(model.r()),
        })
    }

    fn run(&self, p: &ProblemParams, strategy: &Strategy, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
        let model = &p.model;
        let (a_mat, c_mat) = (model.a(), model.c());
        let n = model.state_dim();
        // Local filter starts at zero with error covariance exactly P*.
        let x0 = normal_vector(rng, &self.p_root);
        let mut x = x0.clone();
        let mut local = DVector::zeros(n);
        let mut remote = DVector::zeros(n);
        let mut eve = DVector::zeros(n);
        let mut s = LadderState::ORIGIN;
        let mut node = 0usize;
        let mut steps = Vec::with_capacity(p.horizon());
        for k in 1..=p.horizon() {
            let a = strategy.decide(k, s, node)?;
            x = a_mat * &x + normal_vector(rng, &self.q_root);
            let y = c_mat * &x + normal_vector(rng, &self.r_root);
            let predicted = a_mat * &local;
            local = &predicted + &self.gain * (y - c_mat * &predicted);
            let remote_ok = rng.random::<f64>() < p.channel.arrival_prob(a);
            let eve_ok = rng.random::<f64>() < p.channel.eavesdrop_prob(a);
            remote = if remote_ok { local.clone() } else { a_mat * &remote };
            eve = if eve_ok { local.clone() } else { a_mat * &eve };
            s = s.successor(remote_ok, eve_ok);
            node = child_node(node, a);
            steps.push(TrajectoryStep {
                k,
                action: a,
                remote_received: remote_ok,
                eve_received: eve_ok,
                state: x.clone(),
                local_estimate: local.clone(),
                remote_estimate: remote.clone(),
                eve_estimate: eve.clone(),
                indices: s,
            });
        }
        Ok(Trajectory { initial_state: x0, steps })
    }
}

/// Full plant/filter/estimator simulation on stream 0 of `seed`.
///
/// The local filter runs at the steady-state gain from a zero estimate with
/// `x₀ ~ N(0, P*)`, so its error covariance is `P*` at every step.
pub fn simulate_trajectory(
    p: &ProblemParams,
    ladder: &CovarianceLadder,
    strategy: &Strategy,
    seed: u64,
) -> Result<Trajectory> {
    strategy.check_horizon(p.horizon())?;
    TrajectoryKit::new(p, ladder)?.run(p, strategy, &mut trial_rng(seed, 0))
}

/// Per-step mean and standard error of a squared estimation error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStat {
    pub mean: f64,
    pub std_error: f64,
}

/// Squared-error statistics over `count` trajectories (trajectory `i` uses
/// stream `i`), as `(remote, eavesdropper)` per step.
pub fn trajectory_error_profile(
    p: &ProblemParams,
    ladder: &CovarianceLadder,
    strategy: &Strategy,
    count: usize,
    seed: u64,
) -> Result<Vec<(StepStat, StepStat)>> {
    if count == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    strategy.check_horizon(p.horizon())?;
    let kit = TrajectoryKit::new(p, ladder)?;
    let errors: Vec<Vec<(f64, f64)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let traj = kit.run(p, strategy, &mut trial_rng(seed, i as u64))?;
            Ok(traj.steps.iter().map(|s| (s.remote_sq_error(), s.eve_sq_error())).collect())
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![(Moments::default(), Moments::default()); p.horizon()];
    for traj in &errors {
        for (slot, &(r, e)) in acc.iter_mut().zip(traj) {
            slot.0.push(r);
            slot.1.push(e);
        }
    }
    let stat = |m: &Moments| StepStat {
        mean: m.mean,
        std_error: m.std_error(),
    };
    Ok(acc.iter().map(|(r, e)| (stat(r), stat(e))).collect())
}

/// One row of the strategy comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    /// `theta1`, `theta2`, `theta*1` or `theta*2`.
    pub label: &'static str,
    pub strategy: Strategy,
    pub monte_carlo: SimReport,
    pub exact: SimReport,
}

/// Both optimal strategies.
pub fn solve_optimal_strategies(p: &ProblemParams, ladder: &CovarianceLadder) -> Result<(Strategy, Strategy)> {
    let (_, known) = backward_induction(p, ladder)?;
    let tree = belief_tree_for(p, ladder)?;
    let (_, unknown) = pomdp_backward_induction(p, ladder, &tree)?;
    Ok((Strategy::OptimalKnown(known), Strategy::OptimalUnknown(unknown)))
}

/// Never, always, optimal with known and with unknown eavesdropper
/// covariance, in that order; every row carries a Monte Carlo and an exact
/// report.
pub fn compare_strategies(
    p: &ProblemParams,
    ladder: &CovarianceLadder,
    trials: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    let (known, unknown) = solve_optimal_strategies(p, ladder)?;
    [
        ("theta1", Strategy::Never),
        ("theta2", Strategy::Always),
        ("theta*1", known),
        ("theta*2", unknown),
    ]
    .into_iter()
    .map(|(label, strategy)| {
        Ok(ComparisonRow {
            label,
            monte_carlo: simulate(&strategy, p, ladder, trials, seed)?,
            exact: evaluate_policy_exact(&strategy, p, ladder)?,
            strategy,
        })
    })
    .collect()
}
