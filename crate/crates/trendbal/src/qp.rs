//! Dense convex quadratic programming kernel.
//!
//! Solves `min 1/2 x'Px + f'x` subject to `Aeq x = beq` and `x_i >= 0` on a
//! per-coordinate mask, for symmetric positive semidefinite `P`. The solver
//! is an operator-splitting (ADMM) iteration with over-relaxation and
//! adaptive step weights, followed by an active-set polish step that solves
//! the reduced KKT system directly so the returned multipliers certify
//! optimality to near machine precision. Infeasible constraint systems and
//! unbounded objectives are reported through Farkas-style certificates
//! extracted from the divergent iterates.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// A convex QP instance: `min 1/2 x'Px + f'x  s.t.  Aeq x = beq, x_i >= 0`
/// for every `i` with `nonneg[i]` set.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub f: DVector<f64>,
    pub aeq: DMatrix<f64>,
    pub beq: DVector<f64>,
    pub nonneg: Vec<bool>,
}

impl QpProblem {
    /// Validates shapes and symmetrizes `P` (rejecting materially asymmetric input).
    pub fn new(
        p: DMatrix<f64>,
        f: DVector<f64>,
        aeq: DMatrix<f64>,
        beq: DVector<f64>,
        nonneg: Vec<bool>,
    ) -> Result<Self> {
        let n = f.len();
        if n == 0 {
            return Err(Error::InvalidParameter("QP has no variables".into()));
        }
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::Dimension(format!(
                "P is {}x{} for {} variables",
                p.nrows(),
                p.ncols(),
                n
            )));
        }
        if aeq.nrows() != beq.len() {
            return Err(Error::Dimension(format!(
                "Aeq has {} rows, beq has {}",
                aeq.nrows(),
                beq.len()
            )));
        }
        if aeq.nrows() > 0 && aeq.ncols() != n {
            return Err(Error::Dimension(format!(
                "Aeq has {} columns for {} variables",
                aeq.ncols(),
                n
            )));
        }
        if nonneg.len() != n {
            return Err(Error::Dimension(format!(
                "nonneg mask has {} entries for {} variables",
                nonneg.len(),
                n
            )));
        }
        let pmax = inf_norm_mat(&p);
        let asym = inf_norm_mat(&(&p - p.transpose()));
        if asym > 1e-8 * pmax.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "P is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let p = (&p + p.transpose()) * 0.5;
        Ok(Self {
            p,
            f,
            aeq,
            beq,
            nonneg,
        })
    }

    fn masked(&self) -> Vec<usize> {
        self.nonneg
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    /// Objective value `1/2 x'Px + f'x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.p * x)[(0, 0)] + self.f.dot(x)
    }
}

/// Optimality measurements for a returned solution, in the units of the
/// original (unscaled) problem.
#[derive(Debug, Clone, Copy)]
pub struct KktCertificate {
    /// `||Px + f + Aeq'nu - mu||_inf`.
    pub stationarity: f64,
    /// Stationarity divided by the gradient magnitude, so machine precision
    /// reads as ~1e-16 regardless of data scale.
    pub stationarity_rel: f64,
    /// `||Aeq x - beq||_inf`.
    pub primal: f64,
    /// Largest violation of the sign constraints, `max(0, -min masked x_i)`.
    pub lower_violation: f64,
    /// Largest negative multiplier before clamping, `max(0, -min mu_i)`.
    pub dual_violation: f64,
    /// `max_i |mu_i x_i|`.
    pub complementarity: f64,
    /// Objective at the solution.
    pub objective: f64,
    /// Scale `max(1, ||P||_max, ||f||_inf)` used for relative measures.
    pub scale: f64,
    /// Diagonal regularization added to factor the polish KKT system;
    /// zero when the unregularized factorization succeeded.
    pub ridge: f64,
}

/// Solver output: primal point, equality multipliers `nu`, sign-constraint
/// multipliers `mu` (zero on unmasked coordinates), and the certificate.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub nu: DVector<f64>,
    pub mu: DVector<f64>,
    pub iterations: usize,
    pub polished: bool,
    pub certificate: KktCertificate,
}

/// Tuning knobs for [`solve_qp_with`]. The defaults suit problems scaled to
/// O(1) data, which the solver arranges internally.
#[derive(Debug, Clone)]
pub struct QpOptions {
    /// Splitting-iteration tolerance (absolute and relative, scaled data).
    pub eps: f64,
    /// Residual level at which early polish attempts start.
    pub coarse_eps: f64,
    pub max_iter: usize,
    /// Proximal weight on the x-update.
    pub sigma: f64,
    /// Over-relaxation in (0, 2).
    pub alpha: f64,
    /// Initial constraint step weight.
    pub rho: f64,
    /// Iterations between residual/infeasibility checks.
    pub check_interval: usize,
    /// Farkas certificate tolerance, relative to the certificate norm.
    pub eps_infeasible: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            eps: 1e-9,
            coarse_eps: 1e-6,
            max_iter: 200_000,
            sigma: 1e-6,
            alpha: 1.6,
            rho: 0.1,
            check_interval: 25,
            eps_infeasible: 1e-8,
        }
    }
}

fn inf_norm_mat(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
}

fn inf_norm_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// Solves a QP with default options.
pub fn solve_qp(prob: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(prob, &QpOptions::default())
}

fn build_certificate(
    prob: &QpProblem,
    x: &DVector<f64>,
    nu: &DVector<f64>,
    mu: &DVector<f64>,
    scale: f64,
    ridge: f64,
) -> KktCertificate {
    let px = &prob.p * x;
    let atn = if prob.aeq.nrows() > 0 {
        prob.aeq.transpose() * nu
    } else {
        DVector::zeros(x.len())
    };
    let grad = &px + &prob.f + &atn - mu;
    let stationarity = inf_norm_vec(&grad);
    let grad_scale = scale
        .max(inf_norm_vec(&px))
        .max(inf_norm_vec(&atn))
        .max(inf_norm_vec(mu))
        .max(inf_norm_vec(&prob.f));
    let primal = if prob.aeq.nrows() > 0 {
        inf_norm_vec(&(&prob.aeq * x - &prob.beq))
    } else {
        0.0
    };
    let mut lower_violation = 0.0f64;
    let mut complementarity = 0.0f64;
    for (i, &m) in prob.nonneg.iter().enumerate() {
        if m {
            lower_violation = lower_violation.max(-x[i]);
            complementarity = complementarity.max((mu[i] * x[i]).abs());
        }
    }
    let dual_violation = mu.iter().fold(0.0f64, |a, &v| a.max(-v));
    KktCertificate {
        stationarity,
        stationarity_rel: stationarity / grad_scale,
        primal,
        lower_violation: lower_violation.max(0.0),
        dual_violation,
        complementarity,
        objective: prob.objective(x),
        scale,
        ridge,
    }
}

/// Solves `K sol = rhs` by LU, retrying with quasi-definite diagonal
/// regularization (`+delta` on the first `n_primal` coordinates, `-delta`
/// on the rest) when the plain factorization cannot reach a small residual.
/// Iterative refinement always runs against the unregularized matrix.
fn solve_kkt_refined(
    k: &DMatrix<f64>,
    rhs: &DVector<f64>,
    n_primal: usize,
) -> Option<(DVector<f64>, f64)> {
    let dim = k.nrows();
    let kkt_scale = inf_norm_mat(k).max(inf_norm_vec(rhs)).max(1.0);

    let refine = |factor: &dyn Fn(&DVector<f64>) -> Option<DVector<f64>>| -> Option<(DVector<f64>, f64)> {
        let mut sol = factor(rhs)?;
        let mut best_res = f64::INFINITY;
        let mut best = sol.clone();
        for _ in 0..20 {
            let r = rhs - k * &sol;
            let res = inf_norm_vec(&r);
            if res < best_res {
                best_res = res;
                best = sol.clone();
            }
            if res <= 1e-16 * kkt_scale * inf_norm_vec(&sol).max(1.0) {
                break;
            }
            match factor(&r) {
                Some(d) => sol += d,
                None => break,
            }
        }
        Some((best, best_res))
    };

    // Plain factorization first.
    let lu = k.clone().lu();
    if let Some((sol, res)) = refine(&|b| lu.solve(b)) {
        if res <= 1e-12 * kkt_scale * inf_norm_vec(&sol).max(1.0) {
            return Some((sol, 0.0));
        }
    }

    // Escalating regularization; refinement still targets the original system.
    for &delta_rel in &[1e-12, 1e-9, 1e-6] {
        let delta = delta_rel * kkt_scale;
        let mut kreg = k.clone();
        for i in 0..dim {
            kreg[(i, i)] += if i < n_primal { delta } else { -delta };
        }
        let lu = kreg.lu();
        if let Some((sol, res)) = refine(&|b| lu.solve(b)) {
            if res <= 1e-11 * kkt_scale * inf_norm_vec(&sol).max(1.0) {
                return Some((sol, delta));
            }
        }
    }
    None
}

/// Direct solve of the QP restricted to a guessed active set: sign-constrained
/// coordinates in `active` are pinned at zero and the reduced KKT system is
/// solved exactly. The active set is corrected (multiplier signs, primal
/// violations) for a bounded number of rounds.
fn polish(prob: &QpProblem, initial_active: &[usize], scale: f64) -> Option<QpSolution> {
    let n = prob.f.len();
    let p_rows = prob.aeq.nrows();
    let masked = prob.masked();

    let mut active: Vec<usize> = initial_active.to_vec();
    active.sort_unstable();
    active.dedup();
    let mut visited: Vec<Vec<usize>> = Vec::new();
    let mut ridge_used = 0.0f64;

    for _round in 0..40 {
        if visited.iter().any(|v| v == &active) {
            return None;
        }
        visited.push(active.clone());

        let la = active.len();
        let dim = n + p_rows + la;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (n, n)).copy_from(&prob.p);
        if p_rows > 0 {
            k.view_mut((0, n), (n, p_rows)).copy_from(&prob.aeq.transpose());
            k.view_mut((n, 0), (p_rows, n)).copy_from(&prob.aeq);
        }
        for (r, &i) in active.iter().enumerate() {
            k[(i, n + p_rows + r)] = 1.0;
            k[(n + p_rows + r, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&prob.f));
        if p_rows > 0 {
            rhs.rows_mut(n, p_rows).copy_from(&prob.beq);
        }

        let (sol, ridge) = solve_kkt_refined(&k, &rhs, n)?;
        ridge_used = ridge_used.max(ridge);

        let mut x: DVector<f64> = sol.rows(0, n).into_owned();
        let nu: DVector<f64> = sol.rows(n, p_rows).into_owned();
        let mut mu = DVector::zeros(n);
        for (r, &i) in active.iter().enumerate() {
            mu[i] = -sol[n + p_rows + r];
            x[i] = 0.0;
        }

        let x_scale = inf_norm_vec(&x).max(1.0);
        let grad_scale = scale.max(inf_norm_vec(&mu));
        let tol_x = 1e-9 * x_scale;
        let tol_mu = 1e-9 * grad_scale;

        let drop: Vec<usize> = active.iter().copied().filter(|&i| mu[i] < -tol_mu).collect();
        let add: Vec<usize> = masked
            .iter()
            .copied()
            .filter(|i| !active.contains(i) && x[*i] < -tol_x)
            .collect();

        if drop.is_empty() && add.is_empty() {
            for i in 0..n {
                if mu[i] < 0.0 {
                    mu[i] = 0.0;
                }
            }
            let cert = build_certificate(prob, &x, &nu, &mu, scale, ridge_used);
            let ok = cert.stationarity_rel <= 1e-10
                && cert.primal <= 1e-9 * inf_norm_vec(&prob.beq).max(1.0)
                && cert.lower_violation <= 1e-9 * x_scale;
            if !ok {
                return None;
            }
            return Some(QpSolution {
                x,
                nu,
                mu,
                iterations: 0,
                polished: true,
                certificate: cert,
            });
        }
        active.retain(|i| !drop.contains(i));
        active.extend(add);
        active.sort_unstable();
    }
    None
}

/// Solves a QP with explicit options.
///
/// Returns `Error::Infeasible` when a Farkas certificate shows the
/// constraints are contradictory or the objective is unbounded below, and
/// `Error::NonConvergence` (carrying the best iterate) when the iteration
/// budget runs out on an apparently feasible problem.
pub fn solve_qp_with(prob: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    let n = prob.f.len();
    let p_rows = prob.aeq.nrows();
    if prob.p.nrows() != n || prob.nonneg.len() != n || prob.beq.len() != p_rows {
        // Re-run the full validation to produce the precise message.
        QpProblem::new(
            prob.p.clone(),
            prob.f.clone(),
            prob.aeq.clone(),
            prob.beq.clone(),
            prob.nonneg.clone(),
        )?;
    }
    let masked = prob.masked();
    let mb = masked.len();
    let m = p_rows + mb;

    // Objective scaling: divide (P, f) by s so the iteration sees O(1) data;
    // constraint rows are normalized to unit max-norm. Multipliers are mapped
    // back before certificates are computed.
    let scale = inf_norm_mat(&prob.p).max(inf_norm_vec(&prob.f)).max(1.0);
    let c = 1.0 / scale;
    let ps = &prob.p * c;
    let fs = &prob.f * c;
    let mut e = DVector::from_element(p_rows, 1.0);
    for r in 0..p_rows {
        let rn = prob.aeq.row(r).iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if rn > 0.0 {
            e[r] = 1.0 / rn;
        }
    }
    let mut aeqs = prob.aeq.clone();
    let mut beqs = prob.beq.clone();
    for r in 0..p_rows {
        aeqs.row_mut(r).scale_mut(e[r]);
        beqs[r] *= e[r];
    }

    // Pure equality problems go straight to the direct solve.
    if mb == 0 {
        if let Some(sol) = polish(prob, &[], scale) {
            return Ok(sol);
        }
    }

    // Stacked constraint matrix: normalized equality rows, then unit rows
    // selecting each sign-constrained coordinate.
    let mut a = DMatrix::zeros(m, n);
    if p_rows > 0 {
        a.rows_mut(0, p_rows).copy_from(&aeqs);
    }
    for (k, &i) in masked.iter().enumerate() {
        a[(p_rows + k, i)] = 1.0;
    }
    let at = a.transpose();

    let make_rho = |rho0: f64| -> DVector<f64> {
        let mut r = DVector::from_element(m, rho0);
        for i in 0..p_rows {
            r[i] = (rho0 * 1e3).min(1e6);
        }
        r
    };
    let factorize = |rho: &DVector<f64>, sigma: f64| -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
        let mut sig = sigma;
        for _ in 0..8 {
            let mut h = ps.clone();
            for i in 0..n {
                h[(i, i)] += sig;
            }
            if m > 0 {
                h += &at * DMatrix::from_diagonal(rho) * &a;
            }
            if let Some(ch) = Cholesky::new(h) {
                return Ok((ch, sig));
            }
            sig *= 10.0;
        }
        Err(Error::Singular(
            "splitting subproblem matrix could not be factorized".into(),
        ))
    };

    let mut rho0 = opts.rho;
    let mut rho = make_rho(rho0);
    let (mut chol, _) = factorize(&rho, opts.sigma)?;

    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(m);
    for i in 0..p_rows {
        z[i] = beqs[i];
    }
    let mut y = DVector::zeros(m);

    let mut tried_sigs: Vec<Vec<usize>> = Vec::new();
    let mut iterations = 0usize;

    // Active-set guesses for the direct solve: the sign pattern of the
    // box multipliers, plus primal thresholding at several levels (robust
    // when the multipliers are still noisy on degenerate problems).
    let polish_guesses = |x: &DVector<f64>, y: &DVector<f64>| -> Vec<Vec<usize>> {
        let mut guesses = Vec::with_capacity(4);
        guesses.push(
            masked
                .iter()
                .enumerate()
                .filter(|(k, _)| y[p_rows + k] < 0.0)
                .map(|(_, &i)| i)
                .collect::<Vec<usize>>(),
        );
        let xmax = inf_norm_vec(x).max(1e-30);
        for theta in [1e-7, 1e-4, 1e-2] {
            let mut sig: Vec<usize> = masked
                .iter()
                .copied()
                .filter(|&i| x[i] < theta * xmax)
                .collect();
            sig.sort_unstable();
            guesses.push(sig);
        }
        guesses
    };
    let unscale = |x: &DVector<f64>, y: &DVector<f64>| -> (DVector<f64>, DVector<f64>, f64) {
        let mut nu = DVector::zeros(p_rows);
        for r in 0..p_rows {
            nu[r] = e[r] * y[r] / c;
        }
        let mut mu = DVector::zeros(n);
        let mut dual_violation = 0.0f64;
        for (k, &i) in masked.iter().enumerate() {
            let v = -y[p_rows + k] / c;
            if v >= 0.0 {
                mu[i] = v;
            } else {
                dual_violation = dual_violation.max(-v);
            }
        }
        let _ = x;
        (nu, mu, dual_violation)
    };

    while iterations < opts.max_iter {
        iterations += 1;

        // x-update
        let mut rhs = &x * opts.sigma - &fs;
        if m > 0 {
            let mut w = DVector::zeros(m);
            for i in 0..m {
                w[i] = rho[i] * z[i] - y[i];
            }
            rhs += &at * w;
        }
        let xt = chol.solve(&rhs);
        let zt = if m > 0 { &a * &xt } else { DVector::zeros(0) };

        let x_new = &xt * opts.alpha + &x * (1.0 - opts.alpha);
        let mut z_new = DVector::zeros(m);
        let mut y_new = DVector::zeros(m);
        for i in 0..m {
            let zr: f64 = opts.alpha * zt[i] + (1.0 - opts.alpha) * z[i];
            let v: f64 = zr + y[i] / rho[i];
            z_new[i] = if i < p_rows { beqs[i] } else { v.max(0.0) };
            y_new[i] = y[i] + rho[i] * (zr - z_new[i]);
        }
        let dx = &x_new - &x;
        let dy = &y_new - &y;
        x = x_new;
        z = z_new;
        y = y_new;

        if !iterations.is_multiple_of(opts.check_interval) {
            continue;
        }

        let ax = if m > 0 { &a * &x } else { DVector::zeros(0) };
        let r_p = inf_norm_vec(&(&ax - &z));
        let px = &ps * &x;
        let aty = if m > 0 { &at * &y } else { DVector::zeros(n) };
        let r_d = inf_norm_vec(&(&px + &fs + &aty));
        let p_den = inf_norm_vec(&ax).max(inf_norm_vec(&z)).max(1e-30);
        let d_den = inf_norm_vec(&px)
            .max(inf_norm_vec(&aty))
            .max(inf_norm_vec(&fs))
            .max(1e-30);

        let fine = r_p <= opts.eps + opts.eps * p_den && r_d <= opts.eps + opts.eps * d_den;
        let coarse =
            r_p <= opts.coarse_eps + opts.coarse_eps * p_den && r_d <= opts.coarse_eps + opts.coarse_eps * d_den;

        // Polish near convergence, and periodically during long stalls: the
        // direct solve succeeds as soon as any guess identifies the active
        // set, even when the splitting residuals are still far from tight.
        if coarse || iterations.is_multiple_of(10_000) {
            for sig in polish_guesses(&x, &y) {
                if !fine && tried_sigs.iter().any(|t| t == &sig) {
                    continue;
                }
                tried_sigs.push(sig.clone());
                if let Some(mut sol) = polish(prob, &sig, scale) {
                    sol.iterations = iterations;
                    return Ok(sol);
                }
            }
        }
        if fine {
            // Splitting iteration converged but polish could not improve it:
            // return the iterate with its honestly measured certificate.
            let (nu, mu, dual_violation) = unscale(&x, &y);
            let mut cert = build_certificate(prob, &x, &nu, &mu, scale, 0.0);
            cert.dual_violation = cert.dual_violation.max(dual_violation);
            return Ok(QpSolution {
                x: x.clone(),
                nu,
                mu,
                iterations,
                polished: false,
                certificate: cert,
            });
        }

        // Farkas certificate for contradictory equality constraints: a dual
        // direction dy with A'dy ~ 0, nonpositive on the sign rows, and
        // negative support value.
        let dy_inf = inf_norm_vec(&dy);
        if dy_inf > 1e-12 * inf_norm_vec(&y).max(1.0) && m > 0 {
            let atdy = inf_norm_vec(&(&at * &dy));
            let sup: f64 = (0..p_rows).map(|i| beqs[i] * dy[i]).sum();
            let pos_box = (p_rows..m).fold(0.0f64, |acc, i| acc.max(dy[i]));
            if atdy <= opts.eps_infeasible * dy_inf
                && pos_box <= opts.eps_infeasible * dy_inf
                && sup < -opts.eps_infeasible * dy_inf
            {
                return Err(Error::Infeasible {
                    certificate: format!(
                        "Farkas direction with ||Aeq'y||_inf = {:.3e}, beq'y = {:.3e} < 0 \
                         proves the equality and sign constraints are contradictory",
                        atdy / dy_inf,
                        sup / dy_inf
                    ),
                });
            }
        }

        // Unbounded-objective certificate: a primal ray dx that keeps the
        // constraints satisfied while the linear term decreases.
        let dx_inf = inf_norm_vec(&dx);
        if dx_inf > 1e-12 * inf_norm_vec(&x).max(1.0) {
            let pdx = inf_norm_vec(&(&ps * &dx));
            let aeqdx = if p_rows > 0 {
                inf_norm_vec(&(aeqs.rows(0, p_rows) * &dx))
            } else {
                0.0
            };
            let neg_box = masked
                .iter()
                .fold(0.0f64, |acc, &i| acc.max(-dx[i]));
            let ftdx = fs.dot(&dx);
            if pdx <= opts.eps_infeasible * dx_inf
                && aeqdx <= opts.eps_infeasible * dx_inf
                && neg_box <= opts.eps_infeasible * dx_inf
                && ftdx < -opts.eps_infeasible * dx_inf
            {
                return Err(Error::Infeasible {
                    certificate: format!(
                        "objective is unbounded below along a feasible ray \
                         (||P d||_inf = {:.3e}, f'd = {:.3e})",
                        pdx / dx_inf,
                        ftdx / dx_inf
                    ),
                });
            }
        }

        // Step-weight adaptation, refactoring only on material change.
        if r_p > 0.0 || r_d > 0.0 {
            let ratio = ((r_p / p_den) / (r_d / d_den).max(1e-30)).sqrt();
            if ratio.is_finite() && ratio > 0.0 {
                let candidate = (rho0 * ratio).clamp(1e-6, 1e6);
                if candidate / rho0 > 5.0 || rho0 / candidate > 5.0 {
                    rho0 = candidate;
                    rho = make_rho(rho0);
                    let (ch, _) = factorize(&rho, opts.sigma)?;
                    chol = ch;
                }
            }
        }
    }

    // Iteration budget exhausted: one last round of polish attempts, then
    // report the best iterate.
    for sig in polish_guesses(&x, &y) {
        if let Some(mut sol) = polish(prob, &sig, scale) {
            sol.iterations = iterations;
            return Ok(sol);
        }
    }
    let ax = if m > 0 { &a * &x } else { DVector::zeros(0) };
    let px = &ps * &x;
    let aty = if m > 0 { &at * &y } else { DVector::zeros(n) };
    let r_p = inf_norm_vec(&(&ax - &z));
    let r_d = inf_norm_vec(&(&px + &fs + &aty));
    let (nu, mu, dual_violation) = unscale(&x, &y);
    let mut cert = build_certificate(prob, &x, &nu, &mu, scale, 0.0);
    cert.dual_violation = cert.dual_violation.max(dual_violation);
    Err(Error::NonConvergence {
        iterations,
        residual: r_p.max(r_d),
        best: Some(Box::new(QpSolution {
            x,
            nu,
            mu,
            iterations,
            polished: false,
            certificate: cert,
        })),
    })
}
