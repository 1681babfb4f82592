//! Shared oracles for the integration suites: random problem generation,
//! feasible-point sampling through the constraint null space, independent
//! objective evaluation, and a truncated-SVD reference implementation.
//! Everything here is written against the raw linear algebra so it never
//! shares code paths with the solvers under test.
//!
//! Each test target compiles this module separately and uses a different
//! subset of the helpers.
#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::rngs::StdRng;
use rand::Rng;
use trendbal::CovariateProblem;

/// Random instance with an intercept constraint row, `k` extra trending
/// rows, and `m` balancing rows. Requires `k + 1 < j` so the feasible set
/// has positive dimension.
pub fn random_problem(rng: &mut StdRng, j: usize, m: usize, k: usize) -> CovariateProblem {
    assert!(k + 1 < j, "need fewer constraint rows than weights");
    let mut z = DMatrix::zeros(k + 1, j);
    z.row_mut(0).fill(1.0);
    for r in 1..=k {
        for c in 0..j {
            z[(r, c)] = rng.gen_range(-2.0..2.0);
        }
    }
    let mut z1 = DVector::zeros(k + 1);
    z1[0] = 1.0;
    for r in 1..=k {
        z1[r] = rng.gen_range(-2.0..2.0);
    }
    let q = DMatrix::from_fn(m, j, |_, _| rng.gen_range(-2.0..2.0));
    let q1 = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
    let mut problem = CovariateProblem::new(z1, z, q1, q).expect("random instance is valid");
    problem.has_intercept_row = true;
    problem
}

/// Minimum-norm point of `{w : Zw = z1}` computed directly from the
/// normal equations of the wide system.
pub fn min_norm_feasible(problem: &CovariateProblem) -> DVector<f64> {
    let zzt = &problem.z * problem.z.transpose();
    let chol = Cholesky::new(zzt).expect("constraint rows are independent");
    problem.z.transpose() * chol.solve(&problem.z1)
}

/// Samples `n` exactly feasible points by projecting random directions
/// onto the null space of `Z` and adding them to the minimum-norm point.
pub fn feasible_points(
    problem: &CovariateProblem,
    n: usize,
    scale: f64,
    rng: &mut StdRng,
) -> Vec<DVector<f64>> {
    let w0 = min_norm_feasible(problem);
    let zzt = &problem.z * problem.z.transpose();
    let chol = Cholesky::new(zzt).expect("constraint rows are independent");
    let j = problem.j();
    (0..n)
        .map(|_| {
            let xi = DVector::from_fn(j, |_, _| rng.gen_range(-1.0..1.0)) * scale;
            let null_part = &xi - problem.z.transpose() * chol.solve(&(&problem.z * &xi));
            &w0 + null_part
        })
        .collect()
}

/// `||q1 - Qw||^2`.
pub fn fit_sse(problem: &CovariateProblem, w: &DVector<f64>) -> f64 {
    let r = &problem.q1 - &problem.q * w;
    r.dot(&r)
}

pub fn l1_norm(w: &DVector<f64>) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

/// `||q1 - Qw||^2 + lambda * w'w` (the ridge balancing objective).
pub fn ridge_objective(problem: &CovariateProblem, w: &DVector<f64>, lambda: f64) -> f64 {
    fit_sse(problem, w) + lambda * w.dot(w)
}

/// `1/2 ||q1 - Qw||^2 + lambda * ||w||_1`.
pub fn lasso_objective(problem: &CovariateProblem, w: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * fit_sse(problem, w) + lambda * l1_norm(w)
}

/// `1/2 ||q1 - Qw||^2 + lambda * (alpha*||w||_1 + (1-alpha)/2 * w'w)`.
pub fn enet_objective(
    problem: &CovariateProblem,
    w: &DVector<f64>,
    lambda: f64,
    alpha: f64,
) -> f64 {
    0.5 * fit_sse(problem, w) + lambda * (alpha * l1_norm(w) + 0.5 * (1.0 - alpha) * w.dot(w))
}

/// `1/2 ||q1 - Qw||^2 + lambda * sum(max(w,0) + kappa*max(-w,0))`.
pub fn soft_nonneg_objective(
    problem: &CovariateProblem,
    w: &DVector<f64>,
    lambda: f64,
    kappa: f64,
) -> f64 {
    let pen: f64 = w.iter().map(|&v| v.max(0.0) + kappa * (-v).max(0.0)).sum();
    0.5 * fit_sse(problem, w) + lambda * pen
}

/// Rank-`r` truncation of `a` built from scratch: full SVD with the
/// singular triplets sorted by singular value, keeping the top `r`.
pub fn truncated_svd(a: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap()
    });
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for &idx in order.iter().take(r) {
        let sigma = svd.singular_values[idx];
        let ui = u.column(idx);
        let vi = vt.row(idx);
        for row in 0..a.nrows() {
            for col in 0..a.ncols() {
                out[(row, col)] += sigma * ui[row] * vi[col];
            }
        }
    }
    out
}

/// Frobenius distance between two matrices.
pub fn fro_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}
