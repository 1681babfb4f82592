//! Weight-vector construction.
//!
//! Every solver here returns a weight vector `w` over the untreated units
//! that satisfies the exact-balance constraints `z1 = Zw` (the trending
//! covariates), while differing in how the remaining freedom is spent:
//!
//! * [`max_shrinkage`] — the minimum-norm feasible point `w_a = Z'(ZZ')^-1 z1`,
//!   the limit of every shrinkage method as its penalty grows.
//! * [`basis_pursuit`] — minimum `l1` norm subject to the constraints, via a
//!   split `w = w+ - w-` quadratic program with a small uniqueness ridge.
//! * [`constrained_ridge`] — closed-form ridge fit of the balancing
//!   covariates `(q1, Q)` subject to the constraints.
//! * [`ridge_decomposition`] — the same point computed as `w_a` plus a
//!   null-space correction from the constraint-projected system; an
//!   independent route used to cross-check the closed form.
//! * [`constrained_lasso`] / [`constrained_elastic_net`] — `l1` and blended
//!   `l1`/`l2` shrinkage of the balancing fit subject to the constraints.
//! * [`soft_nonneg_lasso`] — asymmetric `l1` shrinkage that charges negative
//!   weights `kappa` times the rate of positive ones.
//! * [`adh_inner`] — simplex-constrained covariate matching (nonnegative
//!   weights summing to one), the inner step of the traditional synthetic
//!   control recipe, included as a baseline.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::panel::CovariateProblem;
use crate::qp::{solve_qp, KktCertificate, QpProblem};

/// Identifies which solver produced a [`WeightSolution`], with its tuning
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    MaxShrinkage,
    BasisPursuit { alpha: f64, ridge: f64 },
    ConstrainedRidge { lambda: f64 },
    ConstrainedLasso { lambda: f64 },
    ConstrainedElasticNet { lambda: f64, alpha: f64 },
    SoftNonneg { lambda: f64, kappa: f64 },
    AdhInner,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::MaxShrinkage => write!(f, "max_shrinkage"),
            Method::BasisPursuit { alpha, .. } if *alpha == 1.0 => write!(f, "bp"),
            Method::BasisPursuit { alpha, .. } => write!(f, "bp(alpha={alpha})"),
            Method::ConstrainedRidge { lambda } => write!(f, "cridge(lambda={lambda})"),
            Method::ConstrainedLasso { lambda } => write!(f, "classo(lambda={lambda})"),
            Method::ConstrainedElasticNet { lambda, alpha } => {
                write!(f, "cenet(lambda={lambda},alpha={alpha})")
            }
            Method::SoftNonneg { lambda, kappa } => {
                write!(f, "softnn(lambda={lambda},kappa={kappa})")
            }
            Method::AdhInner => write!(f, "adh"),
        }
    }
}

/// Iteration count and optimality certificate carried over from the QP kernel.
#[derive(Debug, Clone)]
pub struct QpSummary {
    pub iterations: usize,
    pub polished: bool,
    pub certificate: KktCertificate,
}

/// A weight vector over the untreated units together with how it was made.
#[derive(Debug, Clone)]
pub struct WeightSolution {
    pub w: DVector<f64>,
    pub method: Method,
    /// The method's own objective evaluated at `w` (without any internal
    /// tie-break or uniqueness terms).
    pub objective: f64,
    /// Multipliers on the exact-balance rows, when the method produces them.
    /// Sign convention: the effective objective gradient satisfies
    /// `grad + Z'nu = 0` at the solution (subgradients for `l1` terms).
    pub nu: Option<DVector<f64>>,
    /// `||z1 - Zw||_inf`, recomputed from the inputs.
    pub balance: f64,
    /// True when the covariates behind this fit were built from
    /// pre-treatment outcomes, which makes downstream test statistics
    /// diagnostic rather than inferential.
    pub depends_on_pre_outcomes: bool,
    pub qp: Option<QpSummary>,
    pub notes: Vec<String>,
}

impl WeightSolution {
    pub fn sum(&self) -> f64 {
        self.w.sum()
    }

    pub fn l1(&self) -> f64 {
        self.w.iter().map(|v| v.abs()).sum()
    }

    pub fn min_weight(&self) -> f64 {
        self.w.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `||z1 - Zw||_inf` for any candidate weight vector.
pub fn balance_residual(problem: &CovariateProblem, w: &DVector<f64>) -> f64 {
    (&problem.z1 - &problem.z * w)
        .iter()
        .fold(0.0f64, |a, &v| a.max(v.abs()))
}

fn chol_of(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

fn fit_residual_sq(problem: &CovariateProblem, w: &DVector<f64>) -> f64 {
    let r = &problem.q1 - &problem.q * w;
    r.dot(&r)
}

/// The method's reported objective at `w` (tie-break terms excluded).
fn method_objective(problem: &CovariateProblem, w: &DVector<f64>, method: &Method) -> f64 {
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    let l2 = w.dot(w);
    match method {
        Method::MaxShrinkage => l2,
        Method::BasisPursuit { alpha, .. } => alpha * l1 + (1.0 - alpha) / 2.0 * l2,
        Method::ConstrainedRidge { lambda } => fit_residual_sq(problem, w) + lambda * l2,
        Method::ConstrainedLasso { lambda } => 0.5 * fit_residual_sq(problem, w) + lambda * l1,
        Method::ConstrainedElasticNet { lambda, alpha } => {
            0.5 * fit_residual_sq(problem, w) + lambda * (alpha * l1 + (1.0 - alpha) / 2.0 * l2)
        }
        Method::SoftNonneg { lambda, kappa } => {
            let asym: f64 = w
                .iter()
                .map(|&v| if v >= 0.0 { v } else { -kappa * v })
                .sum();
            0.5 * fit_residual_sq(problem, w) + lambda * asym
        }
        Method::AdhInner => 0.0, // computed in place with the V weights
    }
}

fn build_solution(
    problem: &CovariateProblem,
    w: DVector<f64>,
    method: Method,
    nu: Option<DVector<f64>>,
    qp: Option<QpSummary>,
    mut notes: Vec<String>,
) -> WeightSolution {
    let balance = balance_residual(problem, &w);
    let objective = method_objective(problem, &w, &method);
    notes.extend(problem.warnings.iter().cloned());
    WeightSolution {
        w,
        method,
        objective,
        nu,
        balance,
        depends_on_pre_outcomes: problem.trending_uses_outcomes || problem.balancing_uses_outcomes,
        qp,
        notes,
    }
}

/// Minimum-norm feasible point `w_a = Z'(ZZ')^-1 z1`: the unique solution of
/// `min w'w` subject to `z1 = Zw`, and the common limit of the shrinkage
/// solvers as their penalties grow. With an intercept-only constraint this
/// is exactly uniform weights.
pub fn max_shrinkage(problem: &CovariateProblem) -> Result<WeightSolution> {
    let z = &problem.z;
    let gram = chol_of(z * z.transpose(), "ZZ'")?;
    let s = gram.solve(&problem.z1);
    let w = z.transpose() * &s;
    Ok(build_solution(
        problem,
        w,
        Method::MaxShrinkage,
        Some(-s),
        None,
        Vec::new(),
    ))
}

/// Options for [`basis_pursuit`].
#[derive(Debug, Clone, Copy)]
pub struct BasisPursuitOptions {
    /// Blend between `l1` (`alpha = 1`) and `l2` (`alpha = 0`) norms:
    /// the objective is `alpha*||w||_1 + (1-alpha)/2*||w||^2`.
    pub alpha: f64,
    /// Small ridge on the split variables that makes the minimizer unique;
    /// it perturbs the objective by at most `ridge * ||w||^2`.
    pub ridge: f64,
}

impl Default for BasisPursuitOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            ridge: 1e-4,
        }
    }
}

fn split_qp(
    problem: &CovariateProblem,
    p_w: &DMatrix<f64>,
    f_pos: &DVector<f64>,
    f_neg: &DVector<f64>,
    v_ridge: f64,
) -> Result<(DVector<f64>, DVector<f64>, QpSummary)> {
    let j = problem.j();
    let k1 = problem.z.nrows();
    let mut p = DMatrix::zeros(2 * j, 2 * j);
    p.view_mut((0, 0), (j, j)).copy_from(p_w);
    p.view_mut((j, j), (j, j)).copy_from(p_w);
    p.view_mut((0, j), (j, j)).copy_from(&(-p_w));
    p.view_mut((j, 0), (j, j)).copy_from(&(-p_w));
    for i in 0..2 * j {
        p[(i, i)] += 2.0 * v_ridge;
    }
    let mut f = DVector::zeros(2 * j);
    f.rows_mut(0, j).copy_from(f_pos);
    f.rows_mut(j, j).copy_from(f_neg);
    let mut aeq = DMatrix::zeros(k1, 2 * j);
    aeq.view_mut((0, 0), (k1, j)).copy_from(&problem.z);
    aeq.view_mut((0, j), (k1, j)).copy_from(&(-&problem.z));
    let qp = QpProblem::new(p, f, aeq, problem.z1.clone(), vec![true; 2 * j])?;
    let sol = solve_qp(&qp)?;
    let w = sol.x.rows(0, j).into_owned() - sol.x.rows(j, j).into_owned();
    Ok((
        w,
        sol.nu.clone(),
        QpSummary {
            iterations: sol.iterations,
            polished: sol.polished,
            certificate: sol.certificate,
        },
    ))
}

/// Minimum-`l1` weights subject to exact balance, `min ||w||_1 s.t. z1 = Zw`
/// (optionally blended with an `l2` term through `alpha`). The split
/// formulation over `(w+, w-) >= 0` is solved by the QP kernel; `ridge`
/// makes the split strictly convex so the answer is reproducible.
pub fn basis_pursuit(problem: &CovariateProblem, opts: BasisPursuitOptions) -> Result<WeightSolution> {
    if !(0.0..=1.0).contains(&opts.alpha) {
        return Err(Error::InvalidParameter(format!(
            "basis pursuit alpha must lie in [0, 1], got {}",
            opts.alpha
        )));
    }
    if opts.ridge < 0.0 || !opts.ridge.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "basis pursuit ridge must be finite and nonnegative, got {}",
            opts.ridge
        )));
    }
    let j = problem.j();
    let p_w = DMatrix::identity(j, j) * (1.0 - opts.alpha);
    let f_lin = DVector::from_element(j, opts.alpha);
    let (w, nu, qp) = split_qp(problem, &p_w, &f_lin, &f_lin, opts.ridge)?;
    Ok(build_solution(
        problem,
        w,
        Method::BasisPursuit {
            alpha: opts.alpha,
            ridge: opts.ridge,
        },
        Some(nu),
        Some(qp),
        Vec::new(),
    ))
}

/// Ridge fit of the balancing covariates subject to exact balance:
/// `min ||q1 - Qw||^2 + lambda*||w||^2  s.t.  z1 = Zw`, solved in closed
/// form as `w = w_r + G^-1 Z'(Z G^-1 Z')^-1 (z1 - Z w_r)` with
/// `G = Q'Q + lambda*I` and `w_r = G^-1 Q'q1` the unconstrained ridge fit.
///
/// `lambda = 0` is accepted only when `Q'Q` is nonsingular; otherwise the
/// minimizer is not unique and the error says to use a positive penalty.
pub fn constrained_ridge(problem: &CovariateProblem, lambda: f64) -> Result<WeightSolution> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ridge penalty must be finite and nonnegative, got {lambda}"
        )));
    }
    let q = &problem.q;
    let z = &problem.z;
    let mut g = q.transpose() * q;
    for i in 0..g.nrows() {
        g[(i, i)] += lambda;
    }
    let g_chol = match Cholesky::new(g) {
        Some(c) => c,
        None if lambda == 0.0 => {
            return Err(Error::Singular(
                "Q'Q is singular at lambda = 0, so the fit does not determine the weights; \
                 use a positive ridge penalty"
                    .into(),
            ))
        }
        None => return Err(Error::Singular("Q'Q + lambda*I is not positive definite".into())),
    };
    let w_r = g_chol.solve(&(q.transpose() * &problem.q1));
    let ginv_zt = g_chol.solve(&z.transpose());
    let m = z * &ginv_zt;
    let m_chol = chol_of(m, "Z G^-1 Z'")?;
    let gap = &problem.z1 - z * &w_r;
    let w = &w_r + &ginv_zt * m_chol.solve(&gap);
    let nu = equality_dual(problem, &w, lambda);
    Ok(build_solution(
        problem,
        w,
        Method::ConstrainedRidge { lambda },
        nu,
        None,
        Vec::new(),
    ))
}

/// Least-squares recovery of the balance multipliers from the stationarity
/// condition; `None` when `ZZ'` cannot be factorized.
fn equality_dual(problem: &CovariateProblem, w: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let q = &problem.q;
    let z = &problem.z;
    let grad = q.transpose() * (q * w - &problem.q1) + w * lambda;
    let zz = Cholesky::new(z * z.transpose())?;
    Some(-zz.solve(&(z * &grad)))
}

/// The ridge solution split along the constraint geometry.
#[derive(Debug, Clone)]
pub struct RidgeDecomposition {
    /// Minimum-norm feasible point (same as [`max_shrinkage`]).
    pub w_a: DVector<f64>,
    /// Null-space correction `(Qt'Qt + lambda I)^+ Qt'qt1`.
    pub correction: DVector<f64>,
    /// `w_a + correction`, equal to the [`constrained_ridge`] solution.
    pub w: DVector<f64>,
    /// Constraint-projected balancing matrix `Qt = Q - B Z`.
    pub q_tilde: DMatrix<f64>,
    /// Constraint-projected target `qt1 = q1 - B z1`.
    pub q1_tilde: DVector<f64>,
}

/// Computes the ridge solution by projecting the balancing system onto the
/// null space of the constraints: with `B = Q Z'(ZZ')^-1`, `Qt = Q - BZ`,
/// and `qt1 = q1 - B z1`, the solution is `w_a` plus the ridge fit of `qt1`
/// on `Qt`. Algebraically identical to [`constrained_ridge`], reached by a
/// different sequence of factorizations — an independent verifier of the
/// closed form. See [`ridge_decomposition_parts`] for the pieces.
pub fn ridge_decomposition(problem: &CovariateProblem, lambda: f64) -> Result<WeightSolution> {
    let parts = ridge_decomposition_parts(problem, lambda)?;
    let nu = equality_dual(problem, &parts.w, lambda);
    Ok(build_solution(
        problem,
        parts.w,
        Method::ConstrainedRidge { lambda },
        nu,
        None,
        vec!["computed through the null-space decomposition".into()],
    ))
}

/// As [`ridge_decomposition`], returning the intermediate quantities.
///
/// `Qt'Qt` is always singular (its null space contains the row space of
/// `Z`), so the correction at `lambda = 0` uses a pseudo-inverse restricted
/// to the constraint null space; the same nonsingular-`Q'Q` requirement as
/// [`constrained_ridge`] applies there.
pub fn ridge_decomposition_parts(
    problem: &CovariateProblem,
    lambda: f64,
) -> Result<RidgeDecomposition> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ridge penalty must be finite and nonnegative, got {lambda}"
        )));
    }
    let q = &problem.q;
    let z = &problem.z;
    if lambda == 0.0 && Cholesky::new(q.transpose() * q).is_none() {
        return Err(Error::Singular(
            "Q'Q is singular at lambda = 0, so the fit does not determine the weights; \
             use a positive ridge penalty"
                .into(),
        ));
    }
    let zz = chol_of(z * z.transpose(), "ZZ'")?;
    let w_a = z.transpose() * zz.solve(&problem.z1);
    // B' = (ZZ')^-1 Z Q', so Qt = Q - B Z and qt1 = q1 - B z1.
    let bt = zz.solve(&(z * q.transpose()));
    let q_tilde = q - bt.transpose() * z;
    let q1_tilde = &problem.q1 - bt.transpose() * &problem.z1;

    let correction = if q_tilde.nrows() == 0 {
        DVector::zeros(problem.j())
    } else if lambda > 0.0 {
        let mut g = q_tilde.transpose() * &q_tilde;
        for i in 0..g.nrows() {
            g[(i, i)] += lambda;
        }
        chol_of(g, "Qt'Qt + lambda*I")?.solve(&(q_tilde.transpose() * &q1_tilde))
    } else {
        pinv_apply(&q_tilde, &q1_tilde)?
    };
    let w = &w_a + &correction;
    Ok(RidgeDecomposition {
        w_a,
        correction,
        w,
        q_tilde,
        q1_tilde,
    })
}

/// Minimum-norm least-squares solution `A^+ b` through a truncated SVD.
fn pinv_apply(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = SVD::new(a.clone(), true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Singular("SVD of projected system failed".into()))?;
    let vt = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Singular("SVD of projected system failed".into()))?;
    let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let mut coeffs = u.transpose() * b;
    for (i, s) in svd.singular_values.iter().enumerate() {
        coeffs[i] = if *s > tol { coeffs[i] / s } else { 0.0 };
    }
    Ok(vt.transpose() * coeffs)
}

fn check_penalty(lambda: f64) -> Result<()> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "l1 penalty must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

/// Shared split-QP body for the `l1`-penalized balancing fits:
/// `min 1/2||q1 - Qw||^2 + l2/2*||w||^2 + l1*(sum w+ + kappa*sum w-)`
/// subject to `z1 = Zw`. A relative `1e-10` tie-break ridge on the split
/// variables keeps the subproblem strictly convex (the raw split matrix
/// `[[H, -H], [-H, H]]` is always singular); it perturbs the stationarity
/// conditions by orders of magnitude less than any reported tolerance.
fn l1_balancing_fit(
    problem: &CovariateProblem,
    l1: f64,
    l2: f64,
    kappa: f64,
    method: Method,
) -> Result<WeightSolution> {
    let q = &problem.q;
    let j = problem.j();
    let mut h = q.transpose() * q;
    for i in 0..j {
        h[(i, i)] += l2;
    }
    let qtq1 = q.transpose() * &problem.q1;
    let f_pos = DVector::from_fn(j, |i, _| -qtq1[i] + l1);
    let f_neg = DVector::from_fn(j, |i, _| qtq1[i] + l1 * kappa);
    let tie = 1e-10 * h.amax().max(f_pos.amax()).max(f_neg.amax()).max(1.0);
    let (w, nu, qp) = split_qp(problem, &h, &f_pos, &f_neg, tie)?;
    Ok(build_solution(problem, w, method, Some(nu), Some(qp), Vec::new()))
}

/// `l1`-shrunk balancing fit subject to exact balance:
/// `min 1/2||q1 - Qw||^2 + lambda*||w||_1  s.t.  z1 = Zw`.
pub fn constrained_lasso(problem: &CovariateProblem, lambda: f64) -> Result<WeightSolution> {
    check_penalty(lambda)?;
    l1_balancing_fit(problem, lambda, 0.0, 1.0, Method::ConstrainedLasso { lambda })
}

/// Blended `l1`/`l2` shrinkage subject to exact balance:
/// `min 1/2||q1 - Qw||^2 + lambda*(alpha*||w||_1 + (1-alpha)/2*||w||^2)`
/// subject to `z1 = Zw`. Equivalent to a lasso on the system augmented with
/// the rows `sqrt(lambda*(1-alpha)) * I`.
pub fn constrained_elastic_net(
    problem: &CovariateProblem,
    lambda: f64,
    alpha: f64,
) -> Result<WeightSolution> {
    check_penalty(lambda)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "elastic net alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if alpha == 0.0 && lambda > 0.0 {
        // Pure l2: same point as the closed-form ridge path.
        let mut sol = constrained_ridge(problem, lambda)?;
        sol.method = Method::ConstrainedElasticNet { lambda, alpha };
        sol.objective = method_objective(problem, &sol.w, &sol.method);
        return Ok(sol);
    }
    l1_balancing_fit(
        problem,
        lambda * alpha,
        lambda * (1.0 - alpha),
        1.0,
        Method::ConstrainedElasticNet { lambda, alpha },
    )
}

/// Asymmetric `l1` shrinkage that discourages negative weights without
/// forbidding them: `min 1/2||q1 - Qw||^2 + lambda*(sum w+ + kappa*sum w-)`
/// subject to `z1 = Zw`, with `kappa >= 1`. Large `kappa` approaches a
/// nonnegativity constraint while keeping the problem feasible when no
/// nonnegative weights satisfy the balance equations.
pub fn soft_nonneg_lasso(
    problem: &CovariateProblem,
    lambda: f64,
    kappa: f64,
) -> Result<WeightSolution> {
    check_penalty(lambda)?;
    if kappa < 1.0 || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "negative-weight multiplier kappa must be >= 1, got {kappa}"
        )));
    }
    l1_balancing_fit(problem, lambda, 0.0, kappa, Method::SoftNonneg { lambda, kappa })
}

/// Simplex-weighted covariate matching: `min (z1 - Zw)'V(z1 - Zw)` over
/// `w >= 0`, `sum w = 1`, where `V = diag(v)` weights the covariate rows.
/// The intercept row (if present) is excluded from the objective because
/// the simplex constraint already enforces it exactly. A `1e-10` ridge
/// breaks ties when the kernel of the objective meets the simplex; it is
/// recorded in the solution notes.
pub fn adh_inner(problem: &CovariateProblem, v: Option<&DVector<f64>>) -> Result<WeightSolution> {
    let j = problem.j();
    let skip = usize::from(problem.has_intercept_row);
    let rows = problem.z.nrows() - skip;
    let zt = problem.z.rows(skip, rows).into_owned();
    let z1t = problem.z1.rows(skip, rows).into_owned();
    let v = match v {
        Some(v) => {
            if v.len() != rows {
                return Err(Error::Dimension(format!(
                    "{} objective weights for {} covariate rows",
                    v.len(),
                    rows
                )));
            }
            if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidParameter(
                    "objective weights must be finite and nonnegative".into(),
                ));
            }
            v.clone()
        }
        None => DVector::from_element(rows, 1.0),
    };

    const TIE_BREAK: f64 = 1e-10;
    let vz = DMatrix::from_fn(rows, j, |r, c| v[r] * zt[(r, c)]);
    let mut p = zt.transpose() * vz * 2.0;
    for i in 0..j {
        p[(i, i)] += 2.0 * TIE_BREAK;
    }
    let f = -2.0 * (zt.transpose() * DVector::from_fn(rows, |r, _| v[r] * z1t[r]));
    let qp = QpProblem::new(
        p,
        f,
        DMatrix::from_element(1, j, 1.0),
        DVector::from_element(1, 1.0),
        vec![true; j],
    )?;
    let sol = solve_qp(&qp)?;
    let resid = &z1t - &zt * &sol.x;
    let objective = resid.iter().zip(v.iter()).map(|(r, vi)| vi * r * r).sum();
    let mut out = build_solution(
        problem,
        sol.x.clone(),
        Method::AdhInner,
        None,
        Some(QpSummary {
            iterations: sol.iterations,
            polished: sol.polished,
            certificate: sol.certificate,
        }),
        vec![format!(
            "simplex matching used a {TIE_BREAK:.0e} tie-break ridge on the objective"
        )],
    );
    out.objective = objective;
    Ok(out)
}

/// Runs the solver a [`Method`] value names, with its stored parameters.
pub fn solve_weights(problem: &CovariateProblem, method: &Method) -> Result<WeightSolution> {
    match method {
        Method::MaxShrinkage => max_shrinkage(problem),
        Method::BasisPursuit { alpha, ridge } => basis_pursuit(
            problem,
            BasisPursuitOptions {
                alpha: *alpha,
                ridge: *ridge,
            },
        ),
        Method::ConstrainedRidge { lambda } => constrained_ridge(problem, *lambda),
        Method::ConstrainedLasso { lambda } => constrained_lasso(problem, *lambda),
        Method::ConstrainedElasticNet { lambda, alpha } => {
            constrained_elastic_net(problem, *lambda, *alpha)
        }
        Method::SoftNonneg { lambda, kappa } => soft_nonneg_lasso(problem, *lambda, *kappa),
        Method::AdhInner => adh_inner(problem, None),
    }
}

/// Subgradient optimality report for the `l1`-penalized balancing fits.
#[derive(Debug, Clone, Copy)]
pub struct LassoCertificate {
    /// `||z1 - Zw||_inf`.
    pub balance: f64,
    /// Worst excess of `|r_j|` over the penalty among zero coordinates
    /// (positive means a violation).
    pub zero_excess: f64,
    /// Worst gap `|r_j - lambda*sign(w_j)|` among nonzero coordinates.
    pub active_gap: f64,
    /// Magnitude below which a coordinate was classified as zero.
    pub active_threshold: f64,
}

/// Checks the stationarity conditions of
/// `min 1/2||q1-Qw||^2 + l2/2*||w||^2 + l1*||w||_1  s.t.  z1 = Zw`
/// at `(w, nu)`: with `r_j = Q_j'(q1 - Qw) - l2*w_j - Z_j'nu`, optimality
/// requires `|r_j| <= l1` where `w_j = 0` and `r_j = l1*sign(w_j)` elsewhere.
pub fn lasso_kkt(
    problem: &CovariateProblem,
    w: &DVector<f64>,
    nu: &DVector<f64>,
    l1: f64,
    l2: f64,
) -> LassoCertificate {
    let resid = &problem.q1 - &problem.q * w;
    let r = problem.q.transpose() * resid - w * l2 - problem.z.transpose() * nu;
    let wmax = w.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let active_threshold = 1e-9 * wmax.max(1.0);
    let mut zero_excess = 0.0f64;
    let mut active_gap = 0.0f64;
    for j in 0..w.len() {
        if w[j].abs() <= active_threshold {
            zero_excess = zero_excess.max(r[j].abs() - l1);
        } else {
            active_gap = active_gap.max((r[j] - l1 * w[j].signum()).abs());
        }
    }
    LassoCertificate {
        balance: balance_residual(problem, w),
        zero_excess,
        active_gap,
        active_threshold,
    }
}
