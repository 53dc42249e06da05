//! Dense linear-algebra kernel for the estimator stack.
//!
//! Everything here is sized for the small matrices the filters and the
//! stability supervisor actually use (state dimension ≤ 16): a discrete
//! Lyapunov solver by Kronecker vectorization, spectral radius and matrix
//! two-norm by power iteration with a real-Schur fallback, the smallest
//! eigenvalue of a symmetric matrix by spectral shift, and a
//! central-difference Jacobian.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default relative step for [`numeric_jacobian`].
pub const DEFAULT_REL_STEP: f64 = 1e-6;

/// Iteration budget shared by the eigenvalue routines.
const ITERATION_CAP: usize = 10_000;

/// Iterations granted to the power-iteration fast path before falling back
/// to the Schur route.
const POWER_ITERS: usize = 600;

/// Relative residual at which a power-iteration eigenpair is accepted.
const POWER_RESIDUAL_TOL: f64 = 1e-11;

/// Relative symmetry tolerance used by the symmetric-only routines.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    /// The state matrix has spectral radius at (or numerically at) one or
    /// beyond, so the discrete Lyapunov equation has no positive solution.
    #[error("matrix is not Schur stable (spectral radius {rho:.6e} is not below 1)")]
    NotSchur { rho: f64 },
    /// The right-hand side of the Lyapunov equation must be symmetric
    /// positive definite.
    #[error("matrix is not symmetric positive definite")]
    NotSPD,
    /// A symmetric-only routine received a matrix that is not symmetric
    /// within the admitted tolerance.
    #[error("matrix is not symmetric within relative tolerance {tol:.1e}")]
    NotSymmetric { tol: f64 },
    /// An iterative eigenvalue routine hit its iteration budget.
    #[error("no convergence within {cap} iterations")]
    NoConvergence { cap: usize },
    /// A finite-difference probe produced NaN or infinity.
    #[error("function evaluation produced a non-finite value while differencing")]
    NonFiniteEvaluation,
}

/// `(M + Mᵀ) / 2` — the symmetric part of a square matrix.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// True when `‖M − Mᵀ‖_F ≤ tol · max(1, ‖M‖_F)`.
pub fn is_symmetric_within(m: &DMatrix<f64>, tol: f64) -> bool {
    (m - m.transpose()).norm() <= tol * m.norm().max(1.0)
}

/// One power-iteration run from a fixed start vector.
///
/// Returns the absolute value of the converged eigenvalue, `None` when the
/// iterate either collapses onto a numerical kernel or fails to settle
/// within `iters` sweeps (oscillation under a dominant complex pair).
fn power_iteration_from(a: &DMatrix<f64>, start: DVector<f64>, iters: usize) -> Option<f64> {
    let mut x = start.normalize();
    for _ in 0..iters {
        let y = a * &x;
        let lam = x.dot(&y);
        let residual = (&y - &x * lam).norm();
        if residual <= POWER_RESIDUAL_TOL * lam.abs().max(1e-300) {
            return Some(lam.abs());
        }
        let ny = y.norm();
        if ny < 1e-300 {
            return None;
        }
        x = y / ny;
    }
    None
}

/// Largest eigenvalue modulus via a real Schur reduction: the moduli are
/// read off the 1×1 / 2×2 diagonal blocks of the quasi-triangular factor.
fn schur_radius(a: &DMatrix<f64>) -> Result<f64, NumericsError> {
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, ITERATION_CAP)
        .ok_or(NumericsError::NoConvergence { cap: ITERATION_CAP })?;
    let eigs = schur.complex_eigenvalues();
    Ok(eigs.iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// Spectral radius `ρ(A)`: the largest absolute eigenvalue.
///
/// Power iteration from the deterministic all-ones start is the fast path;
/// a second, graded start must confirm the estimate (this catches starts
/// that are exactly orthogonal to the dominant eigenvector). Any
/// disagreement or non-convergence falls back to the Schur route, which
/// also covers dominant complex pairs and defective eigenvalues.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64, NumericsError> {
    let n = a.nrows();
    assert!(a.is_square() && n > 0, "spectral radius needs a non-empty square matrix");
    if a.norm() == 0.0 {
        return Ok(0.0);
    }
    let ones = DVector::from_element(n, 1.0);
    let graded = DVector::from_fn(n, |i, _| 1.0 + 0.5 * (i as f64 + 1.0));
    if let (Some(l1), Some(l2)) = (
        power_iteration_from(a, ones, POWER_ITERS),
        power_iteration_from(a, graded, POWER_ITERS),
    ) {
        let scale = l1.max(l2).max(1e-300);
        if (l1 - l2).abs() <= 1e-8 * scale {
            return Ok(l1.max(l2));
        }
    }
    schur_radius(a)
}

/// Matrix two-norm (largest singular value): the square root of the
/// spectral radius of `AᵀA`.
pub fn two_norm(a: &DMatrix<f64>) -> Result<f64, NumericsError> {
    if a.norm() == 0.0 {
        return Ok(0.0);
    }
    let b = a.transpose() * a;
    Ok(spectral_radius(&b)?.sqrt())
}

/// Smallest eigenvalue of a symmetric matrix via the spectral shift
/// `λ_min(Q) = s − ρ(sI − Q)` with `s = ‖Q‖₂`.
pub fn lambda_min_symmetric(q: &DMatrix<f64>) -> Result<f64, NumericsError> {
    assert!(q.is_square() && q.nrows() > 0, "lambda_min needs a non-empty square matrix");
    if !is_symmetric_within(q, SYMMETRY_TOL) {
        return Err(NumericsError::NotSymmetric { tol: SYMMETRY_TOL });
    }
    let s = two_norm(q)?;
    if s == 0.0 {
        return Ok(0.0);
    }
    let shifted = DMatrix::identity(q.nrows(), q.ncols()) * s - q;
    Ok(s - spectral_radius(&shifted)?)
}

/// Solves the discrete Lyapunov equation `AᵀPA − P = −Q` for Schur-stable
/// `A` and symmetric positive-definite `Q`.
///
/// The equation is vectorized as `(I − Aᵀ⊗Aᵀ) vec(P) = vec(Q)` and solved
/// by LU factorization; the solution is symmetrized and polished by
/// iterative refinement until the substitution residual
/// `‖AᵀPA − P + Q‖_F` is at most `1e−8 · ‖Q‖_F`.
pub fn solve_discrete_lyapunov(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>, NumericsError> {
    let n = a.nrows();
    assert!(a.is_square(), "state matrix must be square");
    assert!(q.nrows() == n && q.ncols() == n, "right-hand side must match the state dimension");
    assert!(n >= 1 && n <= 16, "kernel is sized for state dimensions 1..=16");

    let rho = spectral_radius(a)?;
    if rho >= 1.0 - 1e-9 {
        return Err(NumericsError::NotSchur { rho });
    }
    if !is_symmetric_within(q, SYMMETRY_TOL) {
        return Err(NumericsError::NotSPD);
    }
    if nalgebra::linalg::Cholesky::new(q.clone()).is_none() {
        return Err(NumericsError::NotSPD);
    }

    let at = a.transpose();
    let system = DMatrix::identity(n * n, n * n) - at.kronecker(&at);
    let lu = nalgebra::linalg::LU::new(system);
    let reshape = |v: &DVector<f64>| DMatrix::from_column_slice(n, n, v.as_slice());

    let qvec = DVector::from_column_slice(q.as_slice());
    let pvec = lu.solve(&qvec).ok_or(NumericsError::NotSchur { rho })?;
    let mut p = symmetrize(&reshape(&pvec));

    let bound = 1e-8 * q.norm();
    for _ in 0..3 {
        let residual = &at * &p * a - &p + q;
        if residual.norm() <= bound {
            return Ok(p);
        }
        let rvec = DVector::from_column_slice(residual.as_slice());
        let delta = lu.solve(&rvec).ok_or(NumericsError::NotSchur { rho })?;
        p = symmetrize(&(&p + reshape(&delta)));
    }
    let residual = &at * &p * a - &p + q;
    if residual.norm() <= bound {
        Ok(p)
    } else {
        Err(NumericsError::NoConvergence { cap: ITERATION_CAP })
    }
}

/// Central-difference Jacobian of `f` at `x0`.
///
/// Column `i` uses the probe step `h_i = rel_step · max(|x0_i|, 1)`. The
/// probe closure returns `None` (or a non-finite value) to signal an
/// invalid evaluation, which surfaces as [`NumericsError::NonFiniteEvaluation`].
pub fn numeric_jacobian<F>(
    f: F,
    x0: &DVector<f64>,
    rel_step: f64,
) -> Result<DMatrix<f64>, NumericsError>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    assert!(
        rel_step > 0.0 && rel_step <= 1e-2,
        "relative step must lie in (0, 1e-2]"
    );
    let n = x0.len();
    assert!(n > 0, "Jacobian needs a non-empty linearization point");

    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let h = rel_step * x0[i].abs().max(1.0);
        let mut xp = x0.clone();
        xp[i] += h;
        let mut xm = x0.clone();
        xm[i] -= h;
        let fp = f(&xp).ok_or(NumericsError::NonFiniteEvaluation)?;
        let fm = f(&xm).ok_or(NumericsError::NonFiniteEvaluation)?;
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteEvaluation);
        }
        assert_eq!(fp.len(), fm.len(), "probe output dimension must be stable");
        columns.push((fp - fm) / (2.0 * h));
    }
    let m = columns[0].len();
    assert!(
        columns.iter().all(|c| c.len() == m),
        "probe output dimension must be stable"
    );
    Ok(DMatrix::from_fn(m, n, |r, c| columns[c][r]))
}
