//! Random instances shared by the integration suites.
#![allow(dead_code)]

use encsched::linear_model::{build_ladder, is_controllable, is_observable, sqrt_psd, CovarianceLadder, SystemModel};
use encsched::mdp::default_ladder_depth;
use encsched::{ChannelParams, ProblemParams};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn baseline_model() -> SystemModel {
    SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.9]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
        DMatrix::from_element(1, 1, 0.6),
        DMatrix::identity(2, 2),
    )
    .unwrap()
}

pub fn baseline_channel() -> ChannelParams {
    ChannelParams::new(0.7, 0.7, 0.9, 0.18).unwrap()
}

pub fn baseline(horizon: usize) -> (ProblemParams, CovarianceLadder) {
    let p = ProblemParams::new(baseline_model(), baseline_channel(), 0.5, 6.0, horizon).unwrap();
    let ladder = build_ladder(&p.model, default_ladder_depth(horizon)).unwrap();
    (p, ladder)
}

/// Diagonal two-state model observed through the first state; the second
/// mode is stable so the pair stays detectable.
pub fn random_diag_model(r: &mut ChaCha8Rng) -> SystemModel {
    let a1 = r.random_range(0.2..1.6);
    let a2 = r.random_range(0.1..0.95);
    let q1 = r.random_range(0.1..1.0);
    let q2 = r.random_range(0.1..1.0);
    SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[a1, 0.0, 0.0, a2]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[q1, 0.0, 0.0, q2]),
        DMatrix::from_element(1, 1, r.random_range(0.1..2.0)),
        DMatrix::identity(2, 2),
    )
    .unwrap()
}

pub fn random_channel(r: &mut ChaCha8Rng) -> ChannelParams {
    ChannelParams::new(r.random(), r.random(), r.random(), r.random()).unwrap()
}

pub fn random_problem(r: &mut ChaCha8Rng, horizon: usize) -> (ProblemParams, CovarianceLadder) {
    let model = random_diag_model(r);
    let channel = random_channel(r);
    let beta = r.random_range(0.05..0.95);
    let cost = r.random_range(0.0..10.0);
    let p = ProblemParams::new(model, channel, beta, cost, horizon).unwrap();
    let ladder = build_ladder(&p.model, default_ladder_depth(horizon)).unwrap();
    (p, ladder)
}

/// Full 2x2 model with spectral radius at most about 1.4, controllable
/// through `Q^{1/2}` and observable through a random `C`.
pub fn random_full_model(r: &mut ChaCha8Rng) -> SystemModel {
    loop {
        let s: DMatrix<f64> = DMatrix::from_fn(2, 2, |_, _| r.random_range(-1.0..1.0));
        let Some(s_inv) = s.clone().try_inverse() else { continue };
        if s.determinant().abs() < 0.2 {
            continue;
        }
        let mu = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(2, |_, _| r.random_range(-1.4..1.4)));
        let a = &s * mu * s_inv;
        let c = DMatrix::from_fn(1, 2, |_, _| r.random_range(-1.0..1.0));
        let g = DMatrix::from_fn(2, 2, |_, _| r.random_range(-1.0..1.0));
        let q = &g * g.transpose() + DMatrix::identity(2, 2) * 0.05;
        let q = (&q + q.transpose()) * 0.5;
        if !is_controllable(&a, &sqrt_psd(&q)) || !is_observable(&a, &c) {
            continue;
        }
        let r_cov = DMatrix::from_element(1, 1, r.random_range(0.1..2.0));
        if let Ok(m) = SystemModel::new(a, c, q, r_cov, DMatrix::identity(2, 2)) {
            return m;
        }
    }
}

/// Relative slack used for value comparisons that reach large magnitudes.
pub fn slack(x: f64) -> f64 {
    1e-9 * x.abs().max(1.0)
}
