//! Effect estimation and baseline estimators.
//!
//! Given balancing weights `w`, the treated unit's gap `y_1t - Y_t'w` is a
//! level plus the treatment effect once the trending covariates are
//! balanced, so a difference-in-differences contrast against a
//! pre-treatment reference recovers the per-period effects
//! ([`did_effects`]) and weighted averages of them ([`ate`]).
//! [`counterfactual`] presents `Y_t'w` shifted by the pre-period mean gap
//! so it overlays the treated series.
//!
//! Two regression baselines are included for comparison: [`hcw_ols`]
//! regresses the treated unit's pre-treatment outcomes on a subset of
//! untreated units (optionally under equality constraints on the slopes),
//! and [`di_elastic_net`] shrinks that regression with an elastic-net
//! penalty, both yielding an [`InterceptFit`].

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{check_full_row_rank, PanelDataset};
use crate::solvers::WeightSolution;

/// Pre-treatment reference used by the difference-in-differences contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreReference {
    /// Subtract the pre-period mean of the gap (default).
    Mean,
    /// Subtract the gap at a single pre-treatment period index.
    Period(usize),
}

/// Per-period effects, their weighted average, and the presentation series.
#[derive(Debug, Clone)]
pub struct EffectEstimate {
    /// `tau_hat` for each post-treatment period, length `T1`.
    pub tau_by_period: DVector<f64>,
    /// `c_weights' * gap_series`.
    pub ate: f64,
    /// Contrast weights: pre entries sum to -1, post entries to +1.
    pub c_weights: DVector<f64>,
    /// `c0 + Y_t'w` with `c0` the pre-period mean gap, length `T`.
    pub counterfactual: DVector<f64>,
    /// `y_1t - Y_t'w`, length `T`.
    pub gap_series: DVector<f64>,
    /// The weights behind the estimate.
    pub w_used: WeightSolution,
}

/// Intercept-and-slope fit from the regression baselines.
#[derive(Debug, Clone)]
pub struct InterceptFit {
    pub c: f64,
    /// Slopes over all `J` untreated units; zero outside the fitted subset.
    pub w: DVector<f64>,
    /// Pre-period sum of squared residuals.
    pub residual_sse: f64,
    /// Indices of the untreated units the fit actually used.
    pub subset: Vec<usize>,
    /// Worst stationarity violation of the fit (0 for exact least squares).
    pub kkt_residual: f64,
}

impl InterceptFit {
    /// `c + Y_t'w` over all `T` periods.
    pub fn counterfactual(&self, data: &PanelDataset) -> DVector<f64> {
        data.controls() * &self.w + DVector::from_element(data.t(), self.c)
    }

    /// `y_1t - (c + Y_t'w)` over all `T` periods.
    pub fn gap(&self, data: &PanelDataset) -> DVector<f64> {
        data.treated() - self.counterfactual(data)
    }
}

fn raw_gap(data: &PanelDataset, w: &DVector<f64>) -> Result<DVector<f64>> {
    if w.len() != data.j() {
        return Err(Error::Dimension(format!(
            "{} weights for {} untreated units",
            w.len(),
            data.j()
        )));
    }
    Ok(data.treated() - data.controls() * w)
}

/// Difference-in-differences effects: the gap `y_1t - Y_t'w` in each
/// post-treatment period minus its pre-treatment reference (the pre-period
/// mean by default, or a chosen single period). With exact balance of the
/// trending covariates, everything except the unit-level difference and the
/// treatment effect cancels from the gap, and the pre-reference removes the
/// level.
pub fn did_effects(
    data: &PanelDataset,
    w: &WeightSolution,
    pre: PreReference,
) -> Result<EffectEstimate> {
    let gap = raw_gap(data, &w.w)?;
    let (t, t0, t1) = (data.t(), data.t0, data.t1());
    let reference = match pre {
        PreReference::Mean => gap.rows(0, t0).sum() / t0 as f64,
        PreReference::Period(s) => {
            if s >= t0 {
                return Err(Error::InvalidParameter(format!(
                    "pre-treatment reference period {s} is not before t0 = {t0}"
                )));
            }
            gap[s]
        }
    };
    let tau_by_period = DVector::from_fn(t1, |i, _| gap[t0 + i] - reference);
    let mut c_weights = DVector::zeros(t);
    match pre {
        PreReference::Mean => c_weights.rows_mut(0, t0).fill(-1.0 / t0 as f64),
        PreReference::Period(s) => c_weights[s] = -1.0,
    }
    c_weights.rows_mut(t0, t1).fill(1.0 / t1 as f64);

    let c0 = gap.rows(0, t0).sum() / t0 as f64;
    let counterfactual = data.controls() * &w.w + DVector::from_element(t, c0);
    let ate = c_weights.dot(&gap);
    Ok(EffectEstimate {
        tau_by_period,
        ate,
        c_weights,
        counterfactual,
        gap_series: gap,
        w_used: w.clone(),
    })
}

/// Weighted average effect `c' * gap_series` under a custom contrast. The
/// weights must put nonpositive mass summing to -1 on the pre periods and
/// nonnegative mass summing to +1 on the post periods; `None` keeps the
/// contrast stored in `effects` (uniform by default).
pub fn ate(effects: &EffectEstimate, c: Option<&DVector<f64>>) -> Result<f64> {
    let c = match c {
        None => return Ok(effects.ate),
        Some(c) => c,
    };
    let t = effects.gap_series.len();
    let t1 = effects.tau_by_period.len();
    let t0 = t - t1;
    if c.len() != t {
        return Err(Error::Dimension(format!(
            "{} contrast weights for {t} periods",
            c.len()
        )));
    }
    let tol = 1e-8;
    let pre = c.rows(0, t0);
    let post = c.rows(t0, t1);
    if pre.iter().any(|&v| v > tol) || post.iter().any(|&v| v < -tol) {
        return Err(Error::InvalidParameter(
            "contrast weights must be <= 0 before treatment and >= 0 after".into(),
        ));
    }
    if (pre.sum() + 1.0).abs() > tol || (post.sum() - 1.0).abs() > tol {
        return Err(Error::InvalidParameter(
            "contrast weights must sum to -1 pre-treatment and +1 post-treatment".into(),
        ));
    }
    Ok(c.dot(&effects.gap_series))
}

/// Weighted-control series `c0 + Y_t'w` over all periods, with `c0` the
/// pre-period mean of the gap so the series overlays the treated unit
/// before treatment. Pass `Some(0.0)` (or any fixed value) to override
/// `c0`, e.g. when the balancing covariates already match pre-treatment
/// outcome levels.
pub fn counterfactual(
    data: &PanelDataset,
    w: &WeightSolution,
    c0: Option<f64>,
) -> Result<DVector<f64>> {
    let gap = raw_gap(data, &w.w)?;
    let c0 = c0.unwrap_or_else(|| gap.rows(0, data.t0).sum() / data.t0 as f64);
    Ok(data.controls() * &w.w + DVector::from_element(data.t(), c0))
}

/// Picks up to `max` untreated units by descending absolute pre-period
/// correlation with the treated unit, as a mechanical stand-in for the
/// subset a researcher would select for [`hcw_ols`]. Returned indices are
/// sorted ascending. `max = None` uses `min(J, T0/2)`, keeping the OLS
/// well-posed with room to spare.
pub fn select_controls(data: &PanelDataset, max: Option<usize>) -> Vec<usize> {
    let t0 = data.t0;
    let j = data.j();
    let max = max.unwrap_or_else(|| j.min(t0 / 2)).min(j);
    let y1 = data.treated().rows(0, t0).into_owned();
    let y1_mean = y1.mean();
    let mut scored: Vec<(f64, usize)> = (0..j)
        .map(|idx| {
            let yj = data.outcomes.view((0, idx + 1), (t0, 1)).into_owned();
            let yj_mean = yj.mean();
            let mut cov = 0.0;
            let mut v1 = 0.0;
            let mut v2 = 0.0;
            for s in 0..t0 {
                let a = y1[s] - y1_mean;
                let b = yj[s] - yj_mean;
                cov += a * b;
                v1 += a * a;
                v2 += b * b;
            }
            let denom = (v1 * v2).sqrt();
            let corr = if denom > 0.0 { (cov / denom).abs() } else { 0.0 };
            (corr, idx)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut keep: Vec<usize> = scored.into_iter().take(max).map(|(_, idx)| idx).collect();
    keep.sort_unstable();
    keep
}

/// Pre-period regression of the treated unit on untreated units: minimizes
/// `sum_{t<=T0} (y_1t - c - Y_t'w)^2` over the chosen subset, optionally
/// subject to exact linear constraints `z1 = Zw` on the slopes (the
/// intercept is never constrained). The constraint matrix must have one
/// column per selected unit.
pub fn hcw_ols(
    data: &PanelDataset,
    subset: Option<&[usize]>,
    constraints: Option<(&DVector<f64>, &DMatrix<f64>)>,
) -> Result<InterceptFit> {
    let t0 = data.t0;
    let j = data.j();
    let subset: Vec<usize> = match subset {
        Some(s) => {
            let mut s = s.to_vec();
            s.sort_unstable();
            s.dedup();
            if let Some(&bad) = s.iter().find(|&&i| i >= j) {
                return Err(Error::Dimension(format!(
                    "control index {bad} out of range for {j} untreated units"
                )));
            }
            s
        }
        None => (0..j).collect(),
    };
    let m = subset.len();
    if m == 0 {
        return Err(Error::InvalidParameter("empty control subset".into()));
    }
    if t0 <= m + 1 {
        return Err(Error::InsufficientData(format!(
            "{t0} pre-treatment periods cannot support {m} slopes plus an intercept"
        )));
    }

    // Design: intercept column then the selected units' pre-period outcomes.
    let mut x = DMatrix::from_element(t0, m + 1, 1.0);
    for (col, &idx) in subset.iter().enumerate() {
        x.view_mut((0, col + 1), (t0, 1))
            .copy_from(&data.outcomes.view((0, idx + 1), (t0, 1)));
    }
    let y = data.treated().rows(0, t0).into_owned();

    let mut descs = vec!["intercept".to_string()];
    descs.extend(subset.iter().map(|&i| {
        format!(
            "unit '{}'; select a smaller control subset",
            data.unit_labels[i + 1]
        )
    }));
    check_full_row_rank(&x.transpose(), &descs)?;

    let beta = match constraints {
        None => {
            let xtx = Cholesky::new(x.transpose() * &x)
                .ok_or_else(|| Error::Singular("pre-period design is not full rank".into()))?;
            xtx.solve(&(x.transpose() * &y))
        }
        Some((z1, z)) => {
            if z.ncols() != m || z.nrows() != z1.len() {
                return Err(Error::Dimension(format!(
                    "constraint system is {} x {} for {} selected units",
                    z.nrows(),
                    z.ncols(),
                    m
                )));
            }
            let k = z.nrows();
            // KKT system: slopes constrained, intercept free.
            let n = m + 1 + k;
            let mut kkt = DMatrix::zeros(n, n);
            kkt.view_mut((0, 0), (m + 1, m + 1))
                .copy_from(&(x.transpose() * &x));
            kkt.view_mut((1, m + 1), (m, k)).copy_from(&z.transpose());
            kkt.view_mut((m + 1, 1), (k, m)).copy_from(z);
            let mut rhs = DVector::zeros(n);
            rhs.rows_mut(0, m + 1).copy_from(&(x.transpose() * &y));
            rhs.rows_mut(m + 1, k).copy_from(z1);
            let sol = kkt.lu().solve(&rhs).ok_or_else(|| {
                Error::Singular(
                    "constrained pre-period regression is singular; \
                     select a smaller control subset or drop constraints"
                        .into(),
                )
            })?;
            sol.rows(0, m + 1).into_owned()
        }
    };

    let resid = &y - &x * &beta;
    let mut w = DVector::zeros(j);
    for (col, &idx) in subset.iter().enumerate() {
        w[idx] = beta[col + 1];
    }
    Ok(InterceptFit {
        c: beta[0],
        w,
        residual_sse: resid.dot(&resid),
        subset,
        kkt_residual: 0.0,
    })
}

/// Options for [`di_elastic_net`], defaulting to the customary
/// lightly-penalized setting `lambda = 0.01`, `alpha = 0.9`.
#[derive(Debug, Clone, Copy)]
pub struct ElasticNetOptions {
    pub lambda: f64,
    pub alpha: f64,
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for ElasticNetOptions {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            alpha: 0.9,
            max_sweeps: 200_000,
            tol: 1e-11,
        }
    }
}

/// Elastic-net regression of the treated unit on all untreated units over
/// the pre-treatment periods: minimizes
/// `1/(2*T0) * sum_t (y_1t - c - Y_t'w)^2
///   + lambda * (alpha*||w||_1 + (1-alpha)/2*||w||^2)`
/// by cyclic coordinate descent. The intercept is unpenalized and the
/// regressors are not standardized. `lambda = 0` reduces to the
/// unconstrained [`hcw_ols`] fit (and requires it to be well-posed).
pub fn di_elastic_net(data: &PanelDataset, opts: ElasticNetOptions) -> Result<InterceptFit> {
    let ElasticNetOptions {
        lambda,
        alpha,
        max_sweeps,
        tol,
    } = opts;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "elastic net lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "elastic net alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if lambda == 0.0 {
        return hcw_ols(data, None, None);
    }
    let t0 = data.t0;
    let j = data.j();
    let x = data.controls().rows(0, t0).into_owned();
    let y = data.treated().rows(0, t0).into_owned();
    let t0f = t0 as f64;
    let col_ms: Vec<f64> = (0..j).map(|c| x.column(c).dot(&x.column(c)) / t0f).collect();
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);

    let mut w = DVector::zeros(j);
    let mut c = y.mean();
    let mut r = &y - DVector::from_element(t0, c); // residual y - c - Xw
    let soft = |v: f64, thr: f64| {
        if v > thr {
            v - thr
        } else if v < -thr {
            v + thr
        } else {
            0.0
        }
    };

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for k in 0..j {
            if col_ms[k] == 0.0 {
                continue;
            }
            let old = w[k];
            let rho = x.column(k).dot(&r) / t0f + col_ms[k] * old;
            let new = soft(rho, l1) / (col_ms[k] + l2);
            if new != old {
                r += x.column(k) * (old - new);
                w[k] = new;
                max_delta = max_delta.max((new - old).abs());
            }
        }
        let c_new = c + r.mean();
        if c_new != c {
            max_delta = max_delta.max((c_new - c).abs());
            r.add_scalar_mut(c - c_new);
            c = c_new;
        }
        if max_delta <= tol * w.amax().max(1.0) {
            converged = true;
            break;
        }
    }

    // Stationarity: |x_k'r/T0| <= l1 at zeros, = l1*sign - l2*w elsewhere,
    // and the mean residual vanishes (free intercept).
    let mut kkt = r.mean().abs();
    for k in 0..j {
        let g = x.column(k).dot(&r) / t0f;
        kkt = if w[k] == 0.0 {
            kkt.max((g.abs() - l1).max(0.0))
        } else {
            kkt.max((g - l2 * w[k] - l1 * w[k].signum()).abs())
        };
    }
    if !converged && kkt > 1e-7 {
        return Err(Error::NonConvergence {
            iterations: sweeps,
            residual: kkt,
            best: None,
        });
    }
    Ok(InterceptFit {
        c,
        w,
        residual_sse: r.dot(&r),
        subset: (0..j).collect(),
        kkt_residual: kkt,
    })
}
