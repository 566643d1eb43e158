//! Monte Carlo estimates against exact evaluation, and reproducibility.

mod common;

use encsched::evaluation::{
    evaluate_policy_exact, evaluate_policy_exact_profile, simulate, solve_optimal_strategies, trajectory_error_profile,
    SimReport, Strategy,
};

fn within(mc: f64, se: f64, exact: f64, k: f64) -> bool {
    if se == 0.0 {
        (mc - exact).abs() <= common::slack(exact)
    } else {
        (mc - exact).abs() <= k * se
    }
}

fn agree(mc: &SimReport, exact: &SimReport, k: f64) -> Result<(), String> {
    let cols = [
        ("sum_tr_P", mc.sum_remote_trace, mc.se_remote, exact.sum_remote_trace),
        ("sum_tr_Pe", mc.sum_eve_trace, mc.se_eve, exact.sum_eve_trace),
        ("sum_a", mc.sum_actions, mc.se_actions, exact.sum_actions),
        ("J", mc.total_cost, mc.se_cost, exact.total_cost),
    ];
    for (name, m, se, e) in cols {
        if !within(m, se, e, k) {
            return Err(format!("{name}: mc {m} (se {se}) vs exact {e}"));
        }
    }
    Ok(())
}

#[test]
fn monte_carlo_agrees_with_exact() {
    let (p, ladder) = common::baseline(6);
    let (known, unknown) = solve_optimal_strategies(&p, &ladder).unwrap();
    for s in [Strategy::Never, Strategy::Always, known, unknown] {
        let mc = simulate(&s, &p, &ladder, 20_000, 5).unwrap();
        let exact = evaluate_policy_exact(&s, &p, &ladder).unwrap();
        agree(&mc, &exact, 4.0).unwrap_or_else(|e| panic!("{}: {e}", s.name()));
        assert!(mc.consistency_gap(p.beta(), p.enc_cost()) <= 1e-9 * mc.total_cost.abs().max(1.0) * 100.0);
    }
}

#[test]
fn monte_carlo_agrees_on_random_draws() {
    let mut r = common::rng(41);
    for draw in 0..5 {
        let (p, ladder) = common::random_problem(&mut r, 5);
        let (known, _) = solve_optimal_strategies(&p, &ladder).unwrap();
        let mc = simulate(&known, &p, &ladder, 20_000, draw).unwrap();
        let exact = evaluate_policy_exact(&known, &p, &ladder).unwrap();
        agree(&mc, &exact, 4.5).unwrap_or_else(|e| panic!("draw {draw}: {e}"));
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (p, ladder) = common::baseline(6);
    let (known, _) = solve_optimal_strategies(&p, &ladder).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&known, &p, &ladder, 3000, 99).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
    assert_ne!(one, simulate(&known, &p, &ladder, 3000, 100).unwrap());
}

#[test]
fn trajectory_errors_track_exact_covariances() {
    let (p, ladder) = common::baseline(6);
    let exact = evaluate_policy_exact_profile(&Strategy::Never, &p, &ladder).unwrap();
    let stats = trajectory_error_profile(&p, &ladder, &Strategy::Never, 4000, 17).unwrap();
    for (k, ((remote, eve), (&tr, &tre))) in stats.iter().zip(exact.remote_by_step.iter().zip(&exact.eve_by_step)).enumerate() {
        assert!((remote.mean - tr).abs() <= 4.0 * remote.std_error, "k={}: remote {} vs {tr}", k + 1, remote.mean);
        assert!((eve.mean - tre).abs() <= 4.0 * eve.std_error, "k={}: eve {} vs {tre}", k + 1, eve.mean);
    }
}
