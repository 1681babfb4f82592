//! Latent factor-loading estimation and constraint augmentation.
//!
//! When outcomes load on unobserved common factors with unit-specific
//! loadings, exact covariate balance alone leaves a trending gap. The
//! loadings can be recovered (up to rotation) from the pre-treatment
//! outcomes after partialling out unit means, any observed factors, and the
//! trending covariates: [`build_projected_matrix`] forms that doubly
//! projected matrix `A`, [`estimate_factors`] takes its principal
//! components, and [`augment_constraints`] appends the estimated loading
//! rows to the exact-balance system so the weights also balance the
//! factor exposures. Because the feasible set `{w : h1 = Hw}` is invariant
//! to invertible rotations of the loadings, the arbitrary rotation in the
//! principal-component solution is harmless.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{CovariateProblem, PanelDataset};

/// Principal-component estimate of factors and loadings from a doubly
/// projected pre-treatment outcome matrix.
#[derive(Debug, Clone)]
pub struct FactorEstimate {
    /// Number of factors kept.
    pub r: usize,
    /// `T0 x r` factor series, scaled so `factors'factors = T0 * I`.
    pub factors: DMatrix<f64>,
    /// `r x (J+1)` loadings; column 0 is the treated unit.
    pub loadings: DMatrix<f64>,
    /// Top `r` eigenvalues of `AA'/T0`, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Frobenius norm of `A - factors * loadings`.
    pub residual_fro: f64,
    pub warnings: Vec<String>,
}

/// Projects the `T0 x (J+1)` pre-treatment outcome block on both sides:
/// in time against the span of `(1, g)` (unit means plus any observed
/// factors), and cross-sectionally against the trending covariates
/// `Z* = (z1, Z)`. What survives, `A = M_G Y* M_{Z*}`, carries only the
/// latent factor structure and noise.
pub fn build_projected_matrix(
    data: &PanelDataset,
    problem: &CovariateProblem,
    g: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let t0 = data.t0;
    let n = data.j() + 1;
    if problem.j() != data.j() {
        return Err(Error::Dimension(format!(
            "constraint system covers {} untreated units but the panel has {}",
            problem.j(),
            data.j()
        )));
    }
    let p = g.map_or(0, |m| m.ncols());
    if let Some(g) = g {
        if g.nrows() != t0 {
            return Err(Error::Dimension(format!(
                "observed factor matrix has {} rows for {} pre-treatment periods",
                g.nrows(),
                t0
            )));
        }
    }
    if t0 <= 1 + p {
        return Err(Error::InsufficientData(format!(
            "time projection needs more than {} pre-treatment periods, got {t0}",
            1 + p
        )));
    }

    // G = (1, g): unit means always come out, observed factors optionally.
    let mut gm = DMatrix::from_element(t0, 1 + p, 1.0);
    if let Some(g) = g {
        gm.columns_mut(1, p).copy_from(g);
    }
    let y = data.outcomes.view((0, 0), (t0, n)).into_owned();

    let gtg = Cholesky::new(gm.transpose() * &gm).ok_or_else(|| {
        Error::Singular("time-projection columns (1, g) are linearly dependent".into())
    })?;
    let y_time = &y - &gm * gtg.solve(&(gm.transpose() * &y));

    let zs = problem.z_star();
    let zz = Cholesky::new(&zs * zs.transpose()).ok_or_else(|| {
        Error::Singular("trending covariate matrix (z1, Z) is not full row rank".into())
    })?;
    let a = &y_time - (&y_time * zs.transpose()) * zz.solve(&zs);
    Ok(a)
}

/// Principal components of `A`: the factors are `sqrt(T0)` times the top-`r`
/// orthonormal eigenvectors of `AA'`, and the loadings are `factors'A/T0`,
/// so `factors * loadings` is the best rank-`r` approximation of `A`.
/// Computed through the SVD of `A` for numerical stability; eigenvalues are
/// reported on the `AA'/T0` scale so their sum matches the explained
/// squared norm per period.
pub fn estimate_factors(a: &DMatrix<f64>, r: usize) -> Result<FactorEstimate> {
    let t0 = a.nrows();
    let n = a.ncols();
    let max_r = t0.min(n);
    if r > max_r {
        return Err(Error::Dimension(format!(
            "requested {r} factors from a {t0} x {n} matrix (at most {max_r})"
        )));
    }
    let fro = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0 {
        return Ok(FactorEstimate {
            r: 0,
            factors: DMatrix::zeros(t0, 0),
            loadings: DMatrix::zeros(0, n),
            eigenvalues: Vec::new(),
            residual_fro: fro,
            warnings: Vec::new(),
        });
    }

    let svd = nalgebra::SVD::new(a.clone(), true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Singular("SVD of the projected matrix failed".into()))?;
    // Descending singular values; stable index order breaks exact ties.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap()
            .then(i.cmp(&j))
    });

    let mut warnings = Vec::new();
    if r < order.len() {
        let kept = svd.singular_values[order[r - 1]].powi(2) / t0 as f64;
        let dropped = svd.singular_values[order[r]].powi(2) / t0 as f64;
        if kept - dropped < 1e-10 {
            warnings.push(format!(
                "eigenvalues {r} and {} are nearly equal ({kept:.3e} vs {dropped:.3e}); \
                 the factor split at r = {r} is arbitrary",
                r + 1
            ));
        }
    }

    let sqrt_t0 = (t0 as f64).sqrt();
    let mut factors = DMatrix::zeros(t0, r);
    let mut eigenvalues = Vec::with_capacity(r);
    for (k, &idx) in order.iter().take(r).enumerate() {
        factors.column_mut(k).copy_from(&(u.column(idx) * sqrt_t0));
        eigenvalues.push(svd.singular_values[idx].powi(2) / t0 as f64);
    }
    let mut loadings = (factors.transpose() * a) / t0 as f64;

    // Deterministic sign: make each factor's leading nonzero loading positive.
    for k in 0..r {
        let row_max = loadings.row(k).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lead = loadings.row(k).iter().copied().find(|v| v.abs() > 1e-12 * row_max.max(1e-300));
        if let Some(v) = lead {
            if v < 0.0 {
                loadings.row_mut(k).neg_mut();
                factors.column_mut(k).neg_mut();
            }
        }
    }

    let residual = a - &factors * &loadings;
    let residual_fro = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(FactorEstimate {
        r,
        factors,
        loadings,
        eigenvalues,
        residual_fro,
        warnings,
    })
}

/// Appends the estimated loading rows to the exact-balance system: the
/// treated unit's loadings `h1` join `z1`, and the untreated columns join
/// `Z`, so feasible weights must also match the factor exposures. The
/// balancing side is untouched. With `r = 0` the problem is returned
/// unchanged.
pub fn augment_constraints(
    problem: &CovariateProblem,
    fe: &FactorEstimate,
) -> Result<CovariateProblem> {
    if fe.r == 0 {
        return Ok(problem.clone());
    }
    if fe.loadings.ncols() != problem.j() + 1 {
        return Err(Error::Dimension(format!(
            "loadings cover {} units but the constraint system has {}",
            fe.loadings.ncols(),
            problem.j() + 1
        )));
    }
    let k1 = problem.z.nrows();
    let j = problem.j();
    let mut z1 = DVector::zeros(k1 + fe.r);
    z1.rows_mut(0, k1).copy_from(&problem.z1);
    z1.rows_mut(k1, fe.r).copy_from(&fe.loadings.column(0));
    let mut z = DMatrix::zeros(k1 + fe.r, j);
    z.view_mut((0, 0), (k1, j)).copy_from(&problem.z);
    z.view_mut((k1, 0), (fe.r, j))
        .copy_from(&fe.loadings.columns(1, j));

    let mut augmented = CovariateProblem::new(z1, z, problem.q1.clone(), problem.q.clone())
        .map_err(|e| match e {
            Error::RankDeficient { row, desc } => Error::RankDeficient {
                row,
                desc: format!("{desc}; the loading rows overlap the covariate rows, try fewer factors"),
            },
            Error::Underdetermined {
                constraints,
                weights,
                ..
            } => Error::Underdetermined {
                constraints,
                weights,
                hint: "reduce the number of factors r".into(),
            },
            other => other,
        })?;
    augmented.has_intercept_row = problem.has_intercept_row;
    augmented.trending_uses_outcomes = true;
    augmented.balancing_uses_outcomes = problem.balancing_uses_outcomes;
    augmented.normalization = problem.normalization.clone();
    let mut warnings = problem.warnings.clone();
    warnings.extend(fe.warnings.iter().cloned());
    warnings.append(&mut augmented.warnings);
    augmented.warnings = warnings;
    Ok(augmented)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{constrained_ridge, max_shrinkage};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn labels(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    /// Dataset whose pre-treatment outcomes follow
    /// `y_it = mu_i + trend_t * z_i + sum_k f_tk * load_ki + noise`.
    fn synthetic_panel(
        t0: usize,
        t1: usize,
        z_row: &[f64],
        z1: f64,
        factor: Option<(&[f64], &[f64])>,
        noise: Option<&mut StdRng>,
    ) -> (PanelDataset, CovariateProblem) {
        let j = z_row.len();
        let t = t0 + t1;
        let mut rng_holder = noise;
        let mut y = DMatrix::zeros(t, j + 1);
        for i in 0..=j {
            let (mu, zi) = if i == 0 {
                (1.3, z1)
            } else {
                (0.2 * i as f64, z_row[i - 1])
            };
            for s in 0..t {
                let trend = 0.7 * (s as f64) - 0.1 * (s as f64).powi(2) / t as f64;
                let mut v = mu + trend * zi;
                if let Some((f, load)) = factor {
                    if s < f.len() {
                        v += f[s] * load[i];
                    }
                }
                if let Some(rng) = rng_holder.as_deref_mut() {
                    v += rng.gen_range(-0.01..0.01);
                }
                y[(s, i)] = v;
            }
        }
        let data = PanelDataset::new(y, labels("u", j + 1), labels("p", t), t0).unwrap();
        let mut z = DMatrix::zeros(2, j);
        z.row_mut(0).fill(1.0);
        for c in 0..j {
            z[(1, c)] = z_row[c];
        }
        let z1v = DVector::from_column_slice(&[1.0, z1]);
        let mut problem =
            CovariateProblem::new(z1v, z, DVector::zeros(0), DMatrix::zeros(0, j)).unwrap();
        problem.has_intercept_row = true;
        (data, problem)
    }

    #[test]
    fn projection_annihilates_fitted_structure() {
        // Outcomes exactly mu_i + trend_t * z*_i: both projections kill it.
        let (data, problem) =
            synthetic_panel(8, 3, &[0.5, 1.0, 1.5, 2.0, 2.5], 1.2, None, None);
        let a = build_projected_matrix(&data, &problem, None).unwrap();
        for v in a.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn projection_is_idempotent_on_both_sides() {
        let mut rng = StdRng::seed_from_u64(7);
        let t0 = 9;
        let n = 7;
        let mut y = DMatrix::zeros(t0 + 2, n);
        y.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let data = PanelDataset::new(y, labels("u", n), labels("p", t0 + 2), t0).unwrap();
        let z_row: Vec<f64> = (1..n).map(|i| i as f64 / 2.0).collect();
        let mut z = DMatrix::zeros(2, n - 1);
        z.row_mut(0).fill(1.0);
        for c in 0..n - 1 {
            z[(1, c)] = z_row[c];
        }
        let mut problem = CovariateProblem::new(
            DVector::from_column_slice(&[1.0, 0.8]),
            z,
            DVector::zeros(0),
            DMatrix::zeros(0, n - 1),
        )
        .unwrap();
        problem.has_intercept_row = true;

        let a = build_projected_matrix(&data, &problem, None).unwrap();
        // Column-wise zero time means.
        for c in 0..n {
            assert_abs_diff_eq!(a.column(c).sum(), 0.0, epsilon = 1e-10);
        }
        // Orthogonal to the trending covariates cross-sectionally.
        let cross = &a * problem.z_star().transpose();
        for v in cross.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10);
        }
        // Re-applying both projection maps to A changes nothing.
        let gm = DMatrix::from_element(t0, 1, 1.0);
        let y_time = &a - &gm * (gm.transpose() * &a) / t0 as f64;
        let zs = problem.z_star();
        let zz = Cholesky::new(&zs * zs.transpose()).unwrap();
        let a2 = &y_time - (&y_time * zs.transpose()) * zz.solve(&zs);
        for (x, y) in a.iter().zip(a2.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_matches_explicit_projector_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        let (data, problem) = synthetic_panel(
            10,
            2,
            &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            1.2,
            None,
            Some(&mut rng),
        );
        let g_obs = DMatrix::from_fn(10, 1, |s, _| (s as f64 * 0.9).cos());
        let a = build_projected_matrix(&data, &problem, Some(&g_obs)).unwrap();

        // Oracle: form the projector matrices explicitly and multiply.
        let t0 = 10;
        let n = data.j() + 1;
        let mut gm = DMatrix::from_element(t0, 2, 1.0);
        gm.column_mut(1).copy_from(&g_obs.column(0));
        let pg = &gm * (gm.transpose() * &gm).try_inverse().unwrap() * gm.transpose();
        let mg = DMatrix::identity(t0, t0) - pg;
        let zs = problem.z_star();
        let pz = zs.transpose() * (&zs * zs.transpose()).try_inverse().unwrap() * &zs;
        let mz = DMatrix::identity(n, n) - pz;
        let oracle = &mg * data.outcomes.view((0, 0), (t0, n)).into_owned() * mz;
        for (x, y) in a.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-10);
        }
    }

    #[test]
    fn observed_factor_column_is_projected_out() {
        // Add g * a' to the outcomes; supplying g recovers A = 0.
        let t0 = 8;
        let g: Vec<f64> = (0..t0).map(|s| (1.0 + s as f64).ln()).collect();
        let loads = [0.5, -1.0, 2.0, 0.3, -0.7, 1.1];
        let (mut data, problem) =
            synthetic_panel(t0, 2, &[0.5, 1.0, 1.5, 2.0, 2.5], 1.2, None, None);
        for (s, gs) in g.iter().enumerate() {
            for (i, load) in loads.iter().enumerate() {
                data.outcomes[(s, i)] += gs * load;
            }
        }
        let g_m = DMatrix::from_fn(t0, 1, |s, _| g[s]);
        let a = build_projected_matrix(&data, &problem, Some(&g_m)).unwrap();
        for v in a.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-9);
        }
        // Without g, the factor signal survives.
        let a_raw = build_projected_matrix(&data, &problem, None).unwrap();
        assert!(a_raw.iter().map(|v| v * v).sum::<f64>().sqrt() > 0.1);
    }

    #[test]
    fn too_few_periods_or_collinear_g_error() {
        let (data, problem) = synthetic_panel(2, 2, &[0.5, 1.0, 1.5], 1.2, None, None);
        let g = DMatrix::from_element(2, 1, 2.0); // collinear with the ones column
        assert!(matches!(
            build_projected_matrix(&data, &problem, Some(&g)),
            Err(Error::InsufficientData(_))
        ));
        let (data, problem) = synthetic_panel(5, 2, &[0.5, 1.0, 1.5], 1.2, None, None);
        let g = DMatrix::from_element(5, 1, 2.0);
        assert!(matches!(
            build_projected_matrix(&data, &problem, Some(&g)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn rank_one_matrix_is_recovered_exactly() {
        let t0 = 6;
        let n = 5;
        let mut u = DVector::from_fn(t0, |i, _| (i as f64 + 1.0).sin());
        u /= u.norm();
        let mut v = DVector::from_fn(n, |i, _| 1.0 - 0.4 * i as f64);
        v /= v.norm();
        let sigma = 3.7;
        let a = &u * v.transpose() * sigma;
        let fe = estimate_factors(&a, 1).unwrap();
        let recon = &fe.factors * &fe.loadings;
        for (x, y) in recon.iter().zip(a.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(fe.residual_fro, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fe.eigenvalues[0], sigma * sigma / t0 as f64, epsilon = 1e-10);
        // Scaling convention and sign convention.
        let gram = fe.factors.transpose() * &fe.factors;
        assert_abs_diff_eq!(gram[(0, 0)], t0 as f64, epsilon = 1e-8);
        assert!(fe.loadings[(0, 0)] > 0.0);
    }

    #[test]
    fn reconstruction_matches_eigen_oracle() {
        let mut rng = StdRng::seed_from_u64(23);
        let a = DMatrix::from_fn(7, 9, |_, _| rng.gen_range(-1.0..1.0));
        let r = 3;
        let fe = estimate_factors(&a, r).unwrap();

        // Oracle: eigendecomposition of the T0 x T0 Gram matrix.
        let eig = nalgebra::SymmetricEigen::new(&a * a.transpose());
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
        let t0 = 7.0f64;
        let mut recon_oracle = DMatrix::zeros(7, 9);
        for &idx in order.iter().take(r) {
            let u = eig.eigenvectors.column(idx).into_owned();
            let delta = &u * t0.sqrt();
            let load = (delta.transpose() * &a) / t0;
            recon_oracle += delta * load;
        }
        let recon = &fe.factors * &fe.loadings;
        for (x, y) in recon.iter().zip(recon_oracle.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-8);
        }
        for (k, &idx) in order.iter().take(r).enumerate() {
            assert_abs_diff_eq!(fe.eigenvalues[k], eig.eigenvalues[idx] / t0, epsilon = 1e-8);
        }
        // Eckart-Young: residual equals the dropped eigenvalue mass.
        let dropped: f64 = order
            .iter()
            .skip(r)
            .map(|&idx| eig.eigenvalues[idx].max(0.0))
            .sum();
        assert_abs_diff_eq!(fe.residual_fro, dropped.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn eigenvalue_sum_matches_explained_mass() {
        let mut rng = StdRng::seed_from_u64(29);
        let a = DMatrix::from_fn(6, 8, |_, _| rng.gen_range(-2.0..2.0));
        for r in [1, 2, 4, 6] {
            let fe = estimate_factors(&a, r).unwrap();
            let recon = &fe.factors * &fe.loadings;
            let mass = recon.iter().map(|v| v * v).sum::<f64>() / 6.0;
            let sum: f64 = fe.eigenvalues.iter().sum();
            assert_abs_diff_eq!(sum, mass, epsilon = 1e-8);
            // Nonincreasing, nonnegative.
            for w in fe.eigenvalues.windows(2) {
                assert!(w[0] >= w[1] - 1e-12);
            }
            assert!(fe.eigenvalues.iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn zero_factors_and_oversized_requests() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let fe = estimate_factors(&a, 0).unwrap();
        assert_eq!(fe.factors.shape(), (2, 0));
        assert_eq!(fe.loadings.shape(), (0, 3));
        assert!(fe.eigenvalues.is_empty());
        let fro = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_abs_diff_eq!(fe.residual_fro, fro, epsilon = 1e-12);
        assert!(matches!(estimate_factors(&a, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn near_equal_eigenvalues_warn() {
        // Two identical singular values straddling the cut.
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = 2.0;
        a[(2, 2)] = 0.5;
        let fe = estimate_factors(&a, 1).unwrap();
        assert!(fe.warnings.iter().any(|w| w.contains("nearly equal")), "{:?}", fe.warnings);
        let fe2 = estimate_factors(&a, 2).unwrap();
        assert!(fe2.warnings.is_empty());
    }

    #[test]
    fn augmenting_with_zero_factors_is_identity() {
        let (_, problem) = synthetic_panel(8, 3, &[0.5, 1.0, 1.5, 2.0, 2.5], 1.2, None, None);
        let fe = FactorEstimate {
            r: 0,
            factors: DMatrix::zeros(8, 0),
            loadings: DMatrix::zeros(0, 6),
            eigenvalues: Vec::new(),
            residual_fro: 0.0,
            warnings: Vec::new(),
        };
        let out = augment_constraints(&problem, &fe).unwrap();
        assert_eq!(out.z, problem.z);
        assert_eq!(out.z1, problem.z1);
    }

    #[test]
    fn augmented_weights_balance_a_latent_factor() {
        // One latent factor, no noise: the augmented constraints force the
        // weights to match the treated unit's loading. The estimated loading
        // space equals the true one, so h1 - Hw = 0 implies the true
        // exposure is matched too.
        let t0 = 10;
        let f: Vec<f64> = (0..t0).map(|s| (0.9 * s as f64).sin() + 0.2 * s as f64).collect();
        let loads = [1.4, -0.3, 0.8, 2.0, -1.1, 0.5, 1.7];
        let (data, problem) = synthetic_panel(
            t0,
            3,
            &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            1.2,
            Some((&f, &loads)),
            None,
        );
        let a = build_projected_matrix(&data, &problem, None).unwrap();
        let fe = estimate_factors(&a, 1).unwrap();
        let augmented = augment_constraints(&problem, &fe).unwrap();
        assert_eq!(augmented.z.nrows(), 3);
        assert!(augmented.trending_uses_outcomes);

        let sol = constrained_ridge(&augmented, 0.5).unwrap();
        assert!(sol.balance < 1e-6, "balance {}", sol.balance);
        assert!(sol.depends_on_pre_outcomes);

        // The projected true loadings and the estimated ones span the same
        // line, so balancing the estimate balances the projected truth.
        let h_rows = augmented.z.row(2).into_owned();
        let h1 = augmented.z1[2];
        let fit: f64 = (0..6).map(|c| h_rows[c] * sol.w[c]).sum();
        assert_abs_diff_eq!(fit, h1, epsilon = 1e-6);
    }

    #[test]
    fn rotating_loadings_leaves_the_solution_unchanged() {
        let t0 = 10;
        let f1: Vec<f64> = (0..t0).map(|s| (0.9 * s as f64).sin()).collect();
        let loads = [1.4, -0.3, 0.8, 2.0, -1.1, 0.5, 1.7];
        let (data, problem) = synthetic_panel(
            t0,
            3,
            &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            1.2,
            Some((&f1, &loads)),
            None,
        );
        let a = build_projected_matrix(&data, &problem, None).unwrap();
        let fe = estimate_factors(&a, 1).unwrap();
        let base = augment_constraints(&problem, &fe).unwrap();
        let w_base = constrained_ridge(&base, 1.0).unwrap();

        // Scale the loading row by an invertible factor: same feasible set.
        let mut rotated = fe.clone();
        rotated.loadings *= -4.2;
        let alt = augment_constraints(&problem, &rotated).unwrap();
        let w_alt = constrained_ridge(&alt, 1.0).unwrap();
        for i in 0..problem.j() {
            assert_abs_diff_eq!(w_base.w[i], w_alt.w[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn maximal_rank_gives_square_system_with_warning() {
        // J = 4, K+1 = 2 rows, so r = 2 fills the system to square.
        let t0 = 12;
        let f1: Vec<f64> = (0..t0).map(|s| (0.9 * s as f64).sin()).collect();
        let loads = [1.4, -0.3, 0.8, 2.0, -1.1];
        let (data, problem) =
            synthetic_panel(t0, 3, &[0.5, 1.0, 1.5, 2.0], 1.2, Some((&f1, &loads)), None);
        let mut noisy = data.clone();
        let mut rng = StdRng::seed_from_u64(5);
        noisy.outcomes.iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
        let a = build_projected_matrix(&noisy, &problem, None).unwrap();
        let fe = estimate_factors(&a, 2).unwrap();
        let augmented = augment_constraints(&problem, &fe).unwrap();
        assert!(augmented.warnings.iter().any(|w| w.contains("square")));
        let sol = max_shrinkage(&augmented).unwrap();
        assert!(sol.balance < 1e-8);
        // One more factor than fits must be rejected.
        let fe3 = estimate_factors(&a, 3).unwrap();
        assert!(matches!(
            augment_constraints(&problem, &fe3),
            Err(Error::Underdetermined { .. })
        ));
    }
}
