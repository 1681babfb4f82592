//! Regression-based diagnostics for fitted weights.
//!
//! Two checks, both plain OLS with classical standard errors:
//!
//! * [`pretrend_test`] regresses the pre-treatment gap `y_1t - Y_t'w` on a
//!   linear time trend; a significant slope says the weights left a trend
//!   unbalanced.
//! * [`compatibility_test`] regresses the difference between two weighted
//!   control series on a trend, a post-treatment step, and their
//!   interaction over all periods; a significant joint F says the two
//!   weightings disagree in a trending or breaking way, so at most one of
//!   them can be right.
//!
//! When the weights were themselves fitted to pre-treatment outcomes, these
//! regressions re-use the same data and their nominal distributions no
//! longer apply; reports carry a `caveat` flag in that case and should be
//! read as descriptive summaries, not tests.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};
use crate::panel::{check_full_row_rank, PanelDataset};
use crate::solvers::WeightSolution;

/// Which diagnostic produced a [`DiagnosticsReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    PreTrend,
    Compatibility,
}

/// Named OLS output of a diagnostic regression.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub test_kind: TestKind,
    /// `(name, estimate)` in design order, intercept first.
    pub coefficients: Vec<(String, f64)>,
    pub t_stats: Vec<(String, f64)>,
    pub p_values: Vec<(String, f64)>,
    /// Joint F on the non-intercept terms (compatibility test only).
    pub f_stat: Option<f64>,
    pub f_p_value: Option<f64>,
    pub n_obs: usize,
    /// True when the weights were fitted to pre-treatment outcomes, which
    /// invalidates the nominal null distributions of these statistics.
    pub caveat: bool,
    pub warnings: Vec<String>,
}

/// Classical least-squares fit with t and joint-F statistics.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub std_errors: DVector<f64>,
    pub t_stats: DVector<f64>,
    /// Two-sided Student-t p-values with `n - k` degrees of freedom.
    pub p_values: DVector<f64>,
    pub residuals: DVector<f64>,
    pub sse: f64,
    /// Joint F for "all non-intercept coefficients are zero" (column 0 is
    /// taken to be the intercept); zero when there is nothing to test.
    pub f_stat: f64,
    pub f_p_value: f64,
    pub n: usize,
    pub k: usize,
}

/// Ordinary least squares of `y` on the columns of `x` (column 0 treated as
/// the intercept for the joint F), with classical standard errors and exact
/// small-sample t/F p-values. `names` label the columns for rank-failure
/// messages.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>, names: &[&str]) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "{} responses for {n} design rows",
            y.len()
        )));
    }
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "{n} observations cannot identify {k} coefficients"
        )));
    }
    if names.len() != k {
        return Err(Error::Dimension(format!(
            "{} column names for {k} design columns",
            names.len()
        )));
    }
    let descs: Vec<String> = names.iter().map(|s| format!("column '{s}'")).collect();
    check_full_row_rank(&x.transpose(), &descs)?;

    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * y;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular solve failed in least squares".into()))?;
    let residuals = y - x * &coefficients;
    let sse = residuals.dot(&residuals);
    let df = (n - k) as f64;
    let sigma2 = sse / df;

    // (X'X)^-1 through the triangular factor.
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Singular("triangular solve failed in least squares".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let t_dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut std_errors = DVector::zeros(k);
    let mut t_stats = DVector::zeros(k);
    let mut p_values = DVector::zeros(k);
    for i in 0..k {
        let se = (sigma2 * xtx_inv[(i, i)]).max(0.0).sqrt();
        std_errors[i] = se;
        if se > 0.0 {
            t_stats[i] = coefficients[i] / se;
            p_values[i] = 2.0 * (1.0 - t_dist.cdf(t_stats[i].abs()));
        } else {
            // Deterministic fit: zero variance means a coefficient is either
            // exactly zero (no evidence) or exactly nonzero (certain).
            t_stats[i] = if coefficients[i] == 0.0 { 0.0 } else { f64::INFINITY };
            p_values[i] = if coefficients[i] == 0.0 { 1.0 } else { 0.0 };
        }
    }

    let (f_stat, f_p_value) = if k > 1 {
        let y_mean = y.mean();
        let tss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
        let q = (k - 1) as f64;
        if sse > 0.0 {
            let f = ((tss - sse).max(0.0) / q) / sigma2;
            let f_dist = FisherSnedecor::new(q, df)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            (f, 1.0 - f_dist.cdf(f))
        } else if tss > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (0.0, 1.0)
        }
    } else {
        (0.0, 1.0)
    };

    Ok(OlsFit {
        coefficients,
        std_errors,
        t_stats,
        p_values,
        residuals,
        sse,
        f_stat,
        f_p_value,
        n,
        k,
    })
}

fn named(names: &[&str], v: &DVector<f64>) -> Vec<(String, f64)> {
    names
        .iter()
        .zip(v.iter())
        .map(|(n, &x)| (n.to_string(), x))
        .collect()
}

/// Regresses the pre-treatment gap `y_1t - Y_t'w` on `(1, t)` with
/// `t = 1..T0`; a nonzero slope means the weights failed to remove the
/// trend. Requires at least four pre-treatment periods so the slope has
/// two residual degrees of freedom.
pub fn pretrend_test(data: &PanelDataset, w: &WeightSolution) -> Result<DiagnosticsReport> {
    let t0 = data.t0;
    if t0 < 4 {
        return Err(Error::InsufficientData(format!(
            "pre-trend regression needs at least 4 pre-treatment periods, got {t0}"
        )));
    }
    if w.w.len() != data.j() {
        return Err(Error::Dimension(format!(
            "{} weights for {} untreated units",
            w.w.len(),
            data.j()
        )));
    }
    let gap = (data.treated() - data.controls() * &w.w).rows(0, t0).into_owned();
    let names = ["intercept", "trend"];
    let scale = gap.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mean = gap.mean();
    let spread = gap.iter().fold(0.0f64, |a, &v| a.max((v - mean).abs()));
    if spread <= 1e-14 * scale.max(1.0) {
        // A constant gap carries no trend; the t-statistic would be 0/0.
        let coeffs = DVector::from_column_slice(&[mean, 0.0]);
        let zeros = DVector::zeros(2);
        let ones = DVector::from_element(2, 1.0);
        return Ok(DiagnosticsReport {
            test_kind: TestKind::PreTrend,
            coefficients: named(&names, &coeffs),
            t_stats: named(&names, &zeros),
            p_values: named(&names, &ones),
            f_stat: None,
            f_p_value: None,
            n_obs: t0,
            caveat: w.depends_on_pre_outcomes,
            warnings: vec![
                "pre-treatment gap is constant; the trend regression is degenerate".into(),
            ],
        });
    }
    let x = DMatrix::from_fn(t0, 2, |i, c| if c == 0 { 1.0 } else { (i + 1) as f64 });
    let fit = ols_fit(&x, &gap, &names)?;
    Ok(DiagnosticsReport {
        test_kind: TestKind::PreTrend,
        coefficients: named(&names, &fit.coefficients),
        t_stats: named(&names, &fit.t_stats),
        p_values: named(&names, &fit.p_values),
        f_stat: None,
        f_p_value: None,
        n_obs: t0,
        caveat: w.depends_on_pre_outcomes,
        warnings: Vec::new(),
    })
}

const COMPAT_NAMES: [&str; 4] = ["intercept", "trend", "after", "after_x_trend"];

/// Regresses the difference of two weighted control series,
/// `Y_t'(w1 - w2)`, on `(1, t - T0, after_t, after_t*(t - T0))` over all
/// periods and reports the joint F on the three non-intercept terms. Two
/// weightings that both balance the trending covariates differ only by
/// noise, so a trending or breaking difference flags at least one of them
/// as incompatible with the data.
pub fn compatibility_test(
    data: &PanelDataset,
    w1: &WeightSolution,
    w2: &WeightSolution,
) -> Result<DiagnosticsReport> {
    let t = data.t();
    if t < 6 {
        return Err(Error::InsufficientData(format!(
            "compatibility regression needs at least 6 periods, got {t}"
        )));
    }
    let j = data.j();
    if w1.w.len() != j || w2.w.len() != j {
        return Err(Error::Dimension(format!(
            "weight lengths {} and {} for {j} untreated units",
            w1.w.len(),
            w2.w.len()
        )));
    }
    let caveat = w1.depends_on_pre_outcomes || w2.depends_on_pre_outcomes;
    let d = &w1.w - &w2.w;
    let y = data.controls() * &d;

    let scale = y.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let spread = {
        let m = y.mean();
        y.iter().fold(0.0f64, |a, &v| a.max((v - m).abs()))
    };
    if scale == 0.0 || spread <= 1e-14 * scale.max(1.0) {
        // Identical (or level-shift-identical) weightings: nothing to test.
        let zeros = DVector::zeros(4);
        let mut ones = DVector::zeros(4);
        ones.fill(1.0);
        return Ok(DiagnosticsReport {
            test_kind: TestKind::Compatibility,
            coefficients: named(&COMPAT_NAMES, &zeros),
            t_stats: named(&COMPAT_NAMES, &zeros),
            p_values: named(&COMPAT_NAMES, &ones),
            f_stat: Some(0.0),
            f_p_value: Some(1.0),
            n_obs: t,
            caveat,
            warnings: vec![
                "weighted control series are identical up to a constant; \
                 the compatibility regression is degenerate"
                    .into(),
            ],
        });
    }

    let t0 = data.t0 as f64;
    let x = DMatrix::from_fn(t, 4, |i, c| {
        let ti = (i + 1) as f64;
        let after = if ti > t0 { 1.0 } else { 0.0 };
        match c {
            0 => 1.0,
            1 => ti - t0,
            2 => after,
            _ => after * (ti - t0),
        }
    });
    let fit = ols_fit(&x, &y, &COMPAT_NAMES)?;
    Ok(DiagnosticsReport {
        test_kind: TestKind::Compatibility,
        coefficients: named(&COMPAT_NAMES, &fit.coefficients),
        t_stats: named(&COMPAT_NAMES, &fit.t_stats),
        p_values: named(&COMPAT_NAMES, &fit.p_values),
        f_stat: Some(fit.f_stat),
        f_p_value: Some(fit.f_p_value),
        n_obs: t,
        caveat,
        warnings: Vec::new(),
    })
}
