//! Linear plant, steady-state filter covariance and the covariance ladder.
//!
//! Every error covariance the remote estimator or the eavesdropper can hold is
//! of the form `h^i(P*)`, where `P*` is the steady-state a-posteriori Kalman
//! covariance and `h(X) = A X Aᵀ + Q` is the open-loop prediction. The ladder
//! caches these rungs and their traces so the dynamic programs only ever
//! touch integer indices.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

/// Symmetry and eigenvalue-sign tolerance for input covariances.
pub const INPUT_TOL: f64 = 1e-9;
/// Eigenvalue tolerance for PSD checks on computed matrices.
pub const PSD_TOL: f64 = 1e-8;
/// Relative singular-value cutoff for rank decisions.
pub const RANK_TOL: f64 = 1e-8;
/// Largest accepted magnitude of an input matrix entry.
pub const MAX_ENTRY: f64 = 1e12;
pub const DEFAULT_RICCATI_TOL: f64 = 1e-12;
pub const DEFAULT_RICCATI_MAX_ITER: usize = 1_000_000;

/// LTI plant `x' = A x + w`, `y = C x + v` with `w ~ N(0, Q)`, `v ~ N(0, R)`
/// and `x₀ ~ N(0, Π₀)`.
///
/// [`SystemModel::new`] checks shapes and covariance validity. The
/// stabilizability/detectability requirement is checked separately by
/// [`SystemModel::validate_structure`], which the steady-state solver calls.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    pi0: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        pi0: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::config("A", format!("must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        let m = c.nrows();
        if m == 0 || c.ncols() != n {
            return Err(Error::config("C", format!("must be m x {n} with m >= 1, got {}x{}", c.nrows(), c.ncols())));
        }
        check_shape("Q", &q, n)?;
        check_shape("R", &r, m)?;
        check_shape("Pi0", &pi0, n)?;
        for (name, mat) in [("A", &a), ("C", &c), ("Q", &q), ("R", &r), ("Pi0", &pi0)] {
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(name, "contains non-finite entries"));
            }
            if mat.amax() > MAX_ENTRY {
                return Err(Error::config(name, format!("entries must not exceed {MAX_ENTRY:e} in magnitude")));
            }
        }
        check_symmetric("Q", &q)?;
        check_symmetric("R", &r)?;
        check_symmetric("Pi0", &pi0)?;
        let q_min = min_eigenvalue(&q);
        if q_min < -INPUT_TOL {
            return Err(Error::config("Q", format!("not positive semidefinite (min eigenvalue {q_min:e})")));
        }
        let pi_min = min_eigenvalue(&pi0);
        if pi_min < -INPUT_TOL {
            return Err(Error::config("Pi0", format!("not positive semidefinite (min eigenvalue {pi_min:e})")));
        }
        let r_min = min_eigenvalue(&r);
        if r_min <= INPUT_TOL {
            return Err(Error::config("R", format!("not positive definite (min eigenvalue {r_min:e})")));
        }
        Ok(Self { a, c, q, r, pi0 })
    }

    /// Scalar plant, convenient for tests and closed-form checks.
    pub fn scalar(a: f64, c: f64, q: f64, r: f64, pi0: f64) -> Result<Self> {
        let s = |x| DMatrix::from_element(1, 1, x);
        Self::new(s(a), s(c), s(q), s(r), s(pi0))
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn pi0(&self) -> &DMatrix<f64> {
        &self.pi0
    }

    /// Requires a non-zero `C`, `(A, √Q)` stabilizable and `(A, C)` detectable.
    ///
    /// These are the conditions under which the filter covariance converges to
    /// a unique stabilizing fixed point. Controllability and observability
    /// imply them, and the weaker form admits plants with a stable decoupled
    /// unobserved mode.
    pub fn validate_structure(&self) -> Result<()> {
        if self.c.iter().all(|&x| x == 0.0) {
            return Err(Error::config("C", "observation matrix is identically zero"));
        }
        if !is_stabilizable(&self.a, &sqrt_psd(&self.q)) {
            return Err(Error::config("Q", "(A, sqrt(Q)) is not stabilizable"));
        }
        if !is_detectable(&self.a, &self.c) {
            return Err(Error::config("C", "(A, C) is not detectable"));
        }
        Ok(())
    }
}

fn check_shape(name: &str, mat: &DMatrix<f64>, dim: usize) -> Result<()> {
    if mat.nrows() != dim || mat.ncols() != dim {
        return Err(Error::config(
            name,
            format!("expected {dim}x{dim}, got {}x{}", mat.nrows(), mat.ncols()),
        ));
    }
    Ok(())
}

fn check_symmetric(name: &str, mat: &DMatrix<f64>) -> Result<()> {
    let asym = (mat - mat.transpose()).amax();
    if asym > INPUT_TOL {
        return Err(Error::config(name, format!("not symmetric (max asymmetry {asym:e})")));
    }
    Ok(())
}

pub fn symmetrize(mat: &DMatrix<f64>) -> DMatrix<f64> {
    (mat + mat.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `mat`.
pub fn min_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    symmetrize(mat)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Principal square root of a PSD matrix; negative rounding eigenvalues are
/// clipped to zero.
pub fn sqrt_psd(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(mat).symmetric_eigen();
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Rank by relative singular-value cutoff. A matrix with non-finite entries
/// has no trustworthy rank and reports zero.
fn numeric_rank<T: nalgebra::ComplexField<RealField = f64>>(mat: DMatrix<T>) -> usize {
    if mat.iter().any(|x| !x.clone().is_finite()) {
        return 0;
    }
    let scale = mat.iter().map(|x| x.clone().modulus()).fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return 0;
    }
    let sv = mat.unscale(scale).singular_values();
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = RANK_TOL * max.max(1.0);
    sv.iter().filter(|&&s| s > cutoff).count()
}

fn krylov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut blocks = Vec::with_capacity(n);
    let mut cur = b.clone();
    for _ in 0..n {
        blocks.push(cur.clone());
        cur = a * cur;
        // Rescaling a block keeps its column span and avoids overflow in A^k.
        let m = cur.amax();
        if m > 0.0 && m.is_finite() {
            cur /= m;
        }
    }
    let cols: Vec<_> = blocks.iter().flat_map(|m| m.column_iter().map(|c| c.into_owned())).collect();
    DMatrix::from_columns(&cols)
}

/// Rank of `[B, AB, …, A^{n−1}B]` equals `n`.
pub fn is_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    numeric_rank(krylov(a, b)) == a.nrows()
}

/// Rank of `[C; CA; …; CA^{n−1}]` equals `n`.
pub fn is_observable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    is_controllable(&a.transpose(), &c.transpose())
}

fn to_complex(mat: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    mat.map(|x| Complex::new(x, 0.0))
}

/// PBH test: `[A − μI, B]` has full row rank for every eigenvalue with `|μ| ≥ 1`.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let ac = to_complex(a);
    let bc = to_complex(b);
    a.complex_eigenvalues().iter().filter(|mu| mu.norm() >= 1.0).all(|&mu| {
        let shifted = &ac - DMatrix::<Complex<f64>>::identity(n, n) * mu;
        let mut stacked = DMatrix::<Complex<f64>>::zeros(n, n + bc.ncols());
        stacked.view_mut((0, 0), (n, n)).copy_from(&shifted);
        stacked.view_mut((0, n), (n, bc.ncols())).copy_from(&bc);
        numeric_rank(stacked) == n
    })
}

/// PBH test on the dual pair.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    is_stabilizable(&a.transpose(), &c.transpose())
}

/// Open-loop covariance prediction `h(X) = A X Aᵀ + Q`, symmetrized.
pub fn lyapunov_step(model: &SystemModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    if x.nrows() != n || x.ncols() != n {
        return Err(Error::config("X", format!("expected {n}x{n}, got {}x{}", x.nrows(), x.ncols())));
    }
    Ok(symmetrize(&(&model.a * x * model.a.transpose() + &model.q)))
}

/// Prior covariance `h(P)` and Kalman gain for a given posterior `P`.
fn gain_for(model: &SystemModel, p: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let prior = lyapunov_step(model, p)?;
    let innovation = symmetrize(&(&model.c * &prior * model.c.transpose() + &model.r));
    let chol = innovation
        .cholesky()
        .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
    // K = P̄ Cᵀ S⁻¹, solved as S Kᵀ = C P̄.
    let gain = chol.solve(&(&model.c * &prior)).transpose();
    Ok((prior, gain))
}

/// One measurement-update Riccati step `P ↦ (I − K C) h(P)`.
pub fn riccati_step(model: &SystemModel, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (prior, gain) = gain_for(model, p)?;
    let n = model.state_dim();
    let next = (DMatrix::identity(n, n) - &gain * &model.c) * prior;
    Ok(symmetrize(&next))
}

/// Fixed point of the a-posteriori Kalman covariance recursion, iterated from
/// `Π₀` until the max-abs elementwise change drops below `tol · max(1, |P|∞)`.
/// The scaling keeps the test meaningful for covariances far above one,
/// where an absolute `1e-12` is below floating-point resolution.
pub fn steady_state_covariance(model: &SystemModel, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::config("riccati_tol", "must be positive and finite"));
    }
    if max_iter == 0 {
        return Err(Error::config("riccati_max_iter", "must be at least 1"));
    }
    model.validate_structure()?;
    iterate_riccati(model, model.pi0.clone(), tol, max_iter)
}

/// Same iteration as [`steady_state_covariance`] from an arbitrary start.
pub fn iterate_riccati(
    model: &SystemModel,
    start: DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let mut p = start;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = riccati_step(model, &p)?;
        residual = (&next - &p).amax();
        if !residual.is_finite() {
            return Err(Error::Numerical("Riccati iteration diverged".into()));
        }
        p = next;
        let scaled_tol = tol * p.amax().max(1.0);
        if residual < scaled_tol {
            let check = (riccati_step(model, &p)? - &p).amax();
            if check >= 10.0 * scaled_tol {
                return Err(Error::Numerical(format!(
                    "fixed-point residual {check:e} exceeds 10*tol after convergence"
                )));
            }
            return Ok(p);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Steady-state gain `K* = P̄ Cᵀ (C P̄ Cᵀ + R)⁻¹` with `P̄ = h(P*)`.
pub fn steady_state_gain(model: &SystemModel, pstar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if model.c.iter().all(|&x| x == 0.0) {
        return Err(Error::config("C", "observation matrix is identically zero"));
    }
    Ok(gain_for(model, pstar)?.1)
}

/// The chain `P*, h(P*), …, h^D(P*)` with cached traces.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceLadder {
    rungs: Vec<DMatrix<f64>>,
    traces: Vec<f64>,
}

impl CovarianceLadder {
    /// Builds `depth + 1` rungs starting from a known steady state.
    pub fn from_steady_state(model: &SystemModel, pstar: DMatrix<f64>, depth: usize) -> Result<Self> {
        let mut rungs = Vec::with_capacity(depth + 1);
        rungs.push(symmetrize(&pstar));
        for i in 0..depth {
            let next = lyapunov_step(model, &rungs[i])?;
            if next.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("covariance ladder overflows at rung {}", i + 1)));
            }
            rungs.push(next);
        }
        let traces = rungs.iter().map(|r| r.trace()).collect();
        Ok(Self { rungs, traces })
    }

    /// Ladder from precomputed traces only (1x1 rungs). Traces must be
    /// nondecreasing; used for synthetic instances.
    pub fn from_traces(traces: Vec<f64>) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::config("traces", "ladder needs at least one rung"));
        }
        if traces.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("traces", "non-finite trace"));
        }
        if traces.windows(2).any(|w| w[0] > w[1] + INPUT_TOL) {
            return Err(Error::config("traces", "traces must be nondecreasing"));
        }
        let rungs = traces.iter().map(|&t| DMatrix::from_element(1, 1, t)).collect();
        Ok(Self { rungs, traces })
    }

    /// Index of the deepest rung.
    pub fn depth(&self) -> usize {
        self.rungs.len() - 1
    }

    pub fn rung(&self, i: usize) -> &DMatrix<f64> {
        &self.rungs[i]
    }

    pub fn rungs(&self) -> &[DMatrix<f64>] {
        &self.rungs
    }

    pub fn trace(&self, i: usize) -> f64 {
        self.traces[i]
    }

    pub fn traces(&self) -> &[f64] {
        &self.traces
    }

    pub fn steady_state(&self) -> &DMatrix<f64> {
        &self.rungs[0]
    }
}

/// Solves for `P*` with default tolerances and builds `depth + 1` rungs.
pub fn build_ladder(model: &SystemModel, depth: usize) -> Result<CovarianceLadder> {
    let pstar = steady_state_covariance(model, DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER)?;
    CovarianceLadder::from_steady_state(model, pstar, depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> SystemModel {
        SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.9]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            DMatrix::from_element(1, 1, 0.6),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn lyapunov_identity_dynamics_without_noise() {
        let model = SystemModel::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(2, 2),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(lyapunov_step(&model, &x).unwrap(), x);
    }

    #[test]
    fn lyapunov_scalar() {
        let model = SystemModel::scalar(1.3, 1.0, 0.4, 1.0, 1.0).unwrap();
        let y = lyapunov_step(&model, &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!((y[(0, 0)] - (1.69 * 2.0 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_dimension_mismatch() {
        let err = lyapunov_step(&baseline(), &DMatrix::identity(3, 3)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn lyapunov_on_steady_state_grows_trace() {
        let model = baseline();
        let pstar = steady_state_covariance(&model, 1e-12, 1_000_000).unwrap();
        let h = lyapunov_step(&model, &pstar).unwrap();
        // A and Q are diagonal and P* is diagonal: entries map as a² p + q.
        assert!((h[(0, 0)] - (2.25 * pstar[(0, 0)] + 0.5)).abs() < 1e-12);
        assert!((h[(1, 1)] - (0.81 * pstar[(1, 1)] + 0.5)).abs() < 1e-12);
        assert!(h.trace() > pstar.trace());
    }

    #[test]
    fn memoryless_plant_closed_form() {
        let (q, r) = (0.7, 0.3);
        let model = SystemModel::scalar(0.0, 1.0, q, r, 1.0).unwrap();
        // A = 0 is stable, so structure checks pass without observability.
        let p = steady_state_covariance(&model, 1e-12, 1000).unwrap();
        assert!((p[(0, 0)] - q * r / (q + r)).abs() < 1e-14);
        let k = steady_state_gain(&model, &p).unwrap();
        assert!((k[(0, 0)] - q / (q + r)).abs() < 1e-14);
    }

    #[test]
    fn baseline_decoupled_mode() {
        let model = baseline();
        let p = steady_state_covariance(&model, 1e-12, 1_000_000).unwrap();
        assert!((p[(1, 1)] - 0.5 / 0.19).abs() < 1e-9);
        assert!(p[(0, 1)].abs() < 1e-12);
        let again = riccati_step(&model, &p).unwrap();
        assert!((again - &p).amax() < 10.0 * DEFAULT_RICCATI_TOL * p.amax().max(1.0));
        let k = steady_state_gain(&model, &p).unwrap();
        assert_eq!(k.nrows(), 2);
        assert!(k[(1, 0)].abs() < 1e-12);
        assert!(k[(0, 0)] > 0.0);
    }

    #[test]
    fn zero_observation_is_rejected() {
        let model = SystemModel::scalar(2.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        let err = steady_state_covariance(&model, 1e-12, 100).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = steady_state_gain(&model, &DMatrix::from_element(1, 1, 1.0)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn undetectable_unstable_mode_is_rejected() {
        let model = SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.2]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::identity(2, 2),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(matches!(model.validate_structure(), Err(Error::Config { .. })));
    }

    #[test]
    fn invalid_covariances_are_rejected() {
        let a = DMatrix::identity(2, 2);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let bad_q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1]);
        let r = DMatrix::from_element(1, 1, 1.0);
        let err = SystemModel::new(a.clone(), c.clone(), bad_q, r.clone(), a.clone()).unwrap_err();
        assert!(err.to_string().contains("`Q`"));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(SystemModel::new(a.clone(), c.clone(), a.clone(), r, asym).is_err());
        let zero_r = DMatrix::zeros(1, 1);
        assert!(SystemModel::new(a.clone(), c, a.clone(), zero_r, a).is_err());
    }

    #[test]
    fn non_convergence_reports_residual() {
        let model = baseline();
        match iterate_riccati(&model, DMatrix::identity(2, 2), 1e-12, 2) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn rank_tests() {
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.9]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(!is_observable(&a, &c));
        assert!(is_detectable(&a, &c));
        let c2 = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(is_observable(&a, &c2));
        // Rotation by 90 degrees scaled past the unit circle: complex eigenvalues.
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.1, 1.1, 0.0]);
        assert!(is_detectable(&rot, &c));
        assert!(!is_stabilizable(&rot, &DMatrix::zeros(2, 1)));
    }

    #[test]
    fn ladder_depth_zero_is_steady_state() {
        let ladder = build_ladder(&baseline(), 0).unwrap();
        assert_eq!(ladder.depth(), 0);
        assert_eq!(ladder.rungs().len(), 1);
    }

    #[test]
    fn scalar_random_walk_ladder_is_arithmetic() {
        let q = 0.25;
        let model = SystemModel::scalar(1.0, 1.0, q, 1.0, 1.0).unwrap();
        let ladder = build_ladder(&model, 6).unwrap();
        for i in 0..=6 {
            assert!((ladder.trace(i) - (ladder.trace(0) + i as f64 * q)).abs() < 1e-12);
        }
    }

    #[test]
    fn baseline_ladder_strictly_increasing() {
        let ladder = build_ladder(&baseline(), 10).unwrap();
        assert!(ladder.traces().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn from_traces_rejects_decreasing() {
        assert!(CovarianceLadder::from_traces(vec![1.0, 0.5]).is_err());
        assert!(CovarianceLadder::from_traces(vec![]).is_err());
        assert_eq!(CovarianceLadder::from_traces(vec![1.0, 2.0]).unwrap().depth(), 1);
    }
}
