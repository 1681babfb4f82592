//! Synthetic panel generator and Monte Carlo benchmark harness.
//!
//! [`simulate_dgp`] draws panels whose untreated outcomes combine unit
//! effects, a common trend, trending-covariate loadings, and AR(1) noise:
//!
//! ```text
//! gamma_t0 = 0.5*sin(1 + 1.5*pi*t/T) + 2t/T0
//! gamma_tk = (-1)^(k-1) * 0.6*cos(-0.2*pi*ln k + 2*pi*t/T),  k = 1..K
//! z_ik     = z0_ik - i/J + k,             z0_ik ~ iid N(0,1)
//! mu_i     = zbar_i - i/J + mu0_i,        mu0_i ~ iid N(0,1)
//! u_it     = noise_scale * u0_it,  u0_it = ar_coef*u0_{i,t-1} + e_it,
//!            e_it ~ iid N(0,1), u0 started at zero `burn_in` periods early
//! y0_it    = mu_i + gamma_t0 + gamma_t'z_i + u_it
//! ```
//!
//! with `J+1` units indexed `i = 1..J+1` (unit 1 treated, `J` controls;
//! the unit-index drift keeps the divisor `J`) and periods `t = 1..T`.
//! No treatment effect is added, so the generated panel doubles as its own
//! ground truth. Variant `B` freezes the pre-treatment trend rows at
//! `gamma_{T0}`, producing flat pre-periods.
//!
//! Randomness comes from a ChaCha20 stream keyed by the seed, turned into
//! normals by a Box-Muller transform, so identical configurations produce
//! bit-identical panels on every platform.
//!
//! [`run_benchmark`] fans a method list out over seeds (in parallel,
//! merged in seed order), scoring each method's counterfactual for the
//! treated unit against the recorded truth. [`hcw_endogeneity_check`]
//! measures the systematic weight-sum deficit of unconstrained pre-period
//! regression under common time shocks against its analytic limit.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{di_elastic_net, hcw_ols, select_controls, ElasticNetOptions, InterceptFit};
use crate::panel::{CovariateProblem, PanelDataset};
use crate::solvers::{solve_weights, Method};

/// Trend layout of the generated panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Trends run through the whole sample.
    A,
    /// Pre-treatment trend rows are frozen at their value in period `T0`.
    B,
}

/// Parameters of the synthetic panel generator.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    /// Untreated units; `J+1` units are generated in total.
    pub j: usize,
    pub t0: usize,
    pub t1: usize,
    /// Number of trending covariates per unit.
    pub k: usize,
    pub variant: Variant,
    /// Multiplier on the AR(1) noise (0 gives deterministic outcomes).
    pub noise_scale: f64,
    pub ar_coef: f64,
    /// Periods the AR(1) recursion runs before the sample starts.
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            j: 38,
            t0: 20,
            t1: 10,
            k: 4,
            variant: Variant::A,
            noise_scale: 0.1,
            ar_coef: 0.2,
            burn_in: 10,
            seed: 1,
        }
    }
}

impl SimulationConfig {
    fn validate(&self) -> Result<()> {
        if self.j == 0 || self.t0 == 0 || self.t1 == 0 {
            return Err(Error::InvalidParameter(
                "simulation needs at least one control unit, one pre and one post period".into(),
            ));
        }
        if !self.ar_coef.is_finite() || self.ar_coef.abs() >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "AR coefficient must lie in (-1, 1), got {}",
                self.ar_coef
            )));
        }
        if self.noise_scale < 0.0 || !self.noise_scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise scale must be finite and nonnegative, got {}",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

/// All latent components behind a simulated panel.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    /// Unit effects, length `J+1` (treated first).
    pub mu: DVector<f64>,
    /// `T x (K+1)` trend matrix; column 0 is the common trend.
    pub gamma: DMatrix<f64>,
    /// `K x (J+1)` trending covariates (treated column first).
    pub z: DMatrix<f64>,
    /// `T x (J+1)` noise draws after scaling.
    pub u: DMatrix<f64>,
    /// `T x (J+1)` untreated outcomes (identical to the panel: no effect
    /// is added).
    pub y0: DMatrix<f64>,
}

/// Deterministic standard-normal stream: ChaCha20 words mapped to
/// uniforms on `(0, 1]` via `((x >> 11) + 1) * 2^-53`, then paired through
/// the Box-Muller transform. One struct per seed; draws are consumed in a
/// documented order by the generator.
pub struct GaussianRng {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianRng {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (2.0f64).powi(-53)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * self.uniform();
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Generates one panel and its latent components. Draw order: `z0` by unit
/// then covariate, `mu0` by unit, then each unit's noise recursion over
/// `burn_in + T` innovations.
pub fn simulate_dgp(config: &SimulationConfig) -> Result<(PanelDataset, TruthRecord)> {
    config.validate()?;
    let SimulationConfig {
        j,
        t0,
        t1,
        k,
        variant,
        noise_scale,
        ar_coef,
        burn_in,
        seed,
    } = *config;
    let t = t0 + t1;
    let n = j + 1;
    let mut rng = GaussianRng::new(seed);

    // Trending covariates: z_ik = z0 - i/J + k, unit index i starting at 1.
    let mut z = DMatrix::zeros(k, n);
    for i in 0..n {
        let drift = (i + 1) as f64 / j as f64;
        for kk in 0..k {
            z[(kk, i)] = rng.normal() - drift + (kk + 1) as f64;
        }
    }

    // Unit effects: mu_i = zbar_i - i/J + mu0_i.
    let mut mu = DVector::zeros(n);
    for i in 0..n {
        let zbar = if k > 0 { z.column(i).sum() / k as f64 } else { 0.0 };
        mu[i] = zbar - (i + 1) as f64 / j as f64 + rng.normal();
    }

    // Noise: AR(1) from zero, burn_in periods before the sample.
    let mut u = DMatrix::zeros(t, n);
    for i in 0..n {
        let mut state = 0.0;
        for step in 0..burn_in + t {
            state = ar_coef * state + rng.normal();
            if step >= burn_in {
                u[(step - burn_in, i)] = noise_scale * state;
            }
        }
    }

    // Trend rows, then the variant-B freeze of the pre-treatment rows.
    let tf = t as f64;
    let mut gamma = DMatrix::zeros(t, k + 1);
    for s in 0..t {
        let tt = (s + 1) as f64;
        gamma[(s, 0)] = 0.5 * (1.0 + 1.5 * std::f64::consts::PI * tt / tf).sin()
            + 2.0 * tt / t0 as f64;
        for kk in 1..=k {
            let sign = if kk % 2 == 1 { 1.0 } else { -1.0 };
            gamma[(s, kk)] = sign
                * 0.6
                * (-0.2 * std::f64::consts::PI * (kk as f64).ln()
                    + 2.0 * std::f64::consts::PI * tt / tf)
                    .cos();
        }
    }
    if variant == Variant::B {
        for s in 0..t0 {
            for c in 0..=k {
                gamma[(s, c)] = gamma[(t0 - 1, c)];
            }
        }
    }

    let mut y0 = DMatrix::zeros(t, n);
    for s in 0..t {
        for i in 0..n {
            let mut v = mu[i] + gamma[(s, 0)] + u[(s, i)];
            for kk in 1..=k {
                v += gamma[(s, kk)] * z[(kk - 1, i)];
            }
            y0[(s, i)] = v;
        }
    }

    let unit_labels: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let period_labels: Vec<String> = (1..=t).map(|s| s.to_string()).collect();
    let data = PanelDataset::new(y0.clone(), unit_labels, period_labels, t0)?;
    Ok((
        data,
        TruthRecord {
            mu,
            gamma,
            z,
            u,
            y0,
        },
    ))
}

/// Exact-balance problem built from the recorded truth: the constraint
/// rows are the intercept plus the true trending covariates, and the
/// balancing side is the pre-treatment outcomes (treated as target,
/// controls as predictors), the standard setting for the shrinkage fits.
pub fn benchmark_problem(data: &PanelDataset, truth: &TruthRecord) -> Result<CovariateProblem> {
    let j = data.j();
    let k = truth.z.nrows();
    let mut zc = DMatrix::zeros(k + 1, j);
    zc.row_mut(0).fill(1.0);
    zc.view_mut((1, 0), (k, j)).copy_from(&truth.z.columns(1, j));
    let mut z1 = DVector::zeros(k + 1);
    z1[0] = 1.0;
    z1.rows_mut(1, k).copy_from(&truth.z.column(0));
    let q = data.controls().rows(0, data.t0).into_owned();
    let q1 = data.treated().rows(0, data.t0).into_owned();
    let mut problem = CovariateProblem::new(z1, zc, q1, q)?;
    problem.has_intercept_row = true;
    problem.balancing_uses_outcomes = true;
    Ok(problem)
}

/// One estimator entry in a benchmark run.
#[derive(Debug, Clone)]
pub enum MethodConfig {
    /// Any of the exact-balance weight solvers.
    Weights(Method),
    /// Pre-period OLS on a correlation-selected control subset, optionally
    /// with the exact-balance constraints imposed on the slopes.
    Hcw {
        constrained: bool,
        max_controls: Option<usize>,
    },
    /// Elastic-net regression baseline.
    Di { lambda: f64, alpha: f64 },
}

impl std::fmt::Display for MethodConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodConfig::Weights(m) => write!(f, "{m}"),
            MethodConfig::Hcw {
                constrained: false, ..
            } => write!(f, "hcw"),
            MethodConfig::Hcw {
                constrained: true, ..
            } => write!(f, "hcw_constrained"),
            MethodConfig::Di { lambda, alpha } => write!(f, "di(lambda={lambda},alpha={alpha})"),
        }
    }
}

/// Per-method scores across seeds.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub label: String,
    /// Per-seed RMSE of the counterfactual over post periods (`NaN` on
    /// failure).
    pub post_rmse: Vec<f64>,
    /// Per-seed RMSE over pre periods.
    pub pre_rmse: Vec<f64>,
    /// Per-seed mean post-period error (effect bias, truth has no effect).
    pub bias: Vec<f64>,
    /// Mean error per post period across successful seeds.
    pub bias_series: Vec<f64>,
    /// `(seed index, message)` for seeds where the method failed.
    pub failures: Vec<(usize, String)>,
    pub median_post_rmse: f64,
    pub median_pre_rmse: f64,
    pub mean_bias: f64,
}

/// Benchmark results with the generating configuration embedded.
#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub config: SimulationConfig,
    pub n_seeds: usize,
    pub methods: Vec<MethodSummary>,
}

struct SeedScore {
    post_rmse: f64,
    pre_rmse: f64,
    bias: f64,
    errors: Vec<f64>,
}

fn score_series(data: &PanelDataset, truth: &TruthRecord, cf: &DVector<f64>) -> SeedScore {
    let t0 = data.t0;
    let t1 = data.t1();
    let truth_treated = truth.y0.column(0);
    let mut pre_sq = 0.0;
    for s in 0..t0 {
        pre_sq += (truth_treated[s] - cf[s]).powi(2);
    }
    let mut errors = Vec::with_capacity(t1);
    let mut post_sq = 0.0;
    for s in 0..t1 {
        let e = truth_treated[t0 + s] - cf[t0 + s];
        errors.push(e);
        post_sq += e * e;
    }
    SeedScore {
        post_rmse: (post_sq / t1 as f64).sqrt(),
        pre_rmse: (pre_sq / t0 as f64).sqrt(),
        bias: errors.iter().sum::<f64>() / t1 as f64,
        errors,
    }
}

fn fit_one(
    method: &MethodConfig,
    data: &PanelDataset,
    truth: &TruthRecord,
    problem: &CovariateProblem,
) -> Result<DVector<f64>> {
    match method {
        MethodConfig::Weights(m) => {
            let sol = solve_weights(problem, m)?;
            crate::estimators::counterfactual(data, &sol, None)
        }
        MethodConfig::Hcw {
            constrained,
            max_controls,
        } => {
            let subset = select_controls(data, *max_controls);
            let fit: InterceptFit = if *constrained {
                let k = truth.z.nrows();
                let mut zc = DMatrix::zeros(k + 1, subset.len());
                zc.row_mut(0).fill(1.0);
                for (col, &idx) in subset.iter().enumerate() {
                    for kk in 0..k {
                        zc[(kk + 1, col)] = truth.z[(kk, idx + 1)];
                    }
                }
                let mut z1 = DVector::zeros(k + 1);
                z1[0] = 1.0;
                z1.rows_mut(1, k).copy_from(&truth.z.column(0));
                hcw_ols(data, Some(&subset), Some((&z1, &zc)))?
            } else {
                hcw_ols(data, Some(&subset), None)?
            };
            Ok(fit.counterfactual(data))
        }
        MethodConfig::Di { lambda, alpha } => {
            let fit = di_elastic_net(
                data,
                ElasticNetOptions {
                    lambda: *lambda,
                    alpha: *alpha,
                    ..Default::default()
                },
            )?;
            Ok(fit.counterfactual(data))
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Runs every method over `n_seeds` independent panels (seed `i` uses
/// `config.seed + i`) and aggregates counterfactual accuracy for the
/// treated unit. Seeds run in parallel; results are merged in seed order.
/// A method failing on a seed is recorded and skipped in the aggregates
/// rather than aborting the run.
pub fn run_benchmark(
    config: &SimulationConfig,
    methods: &[MethodConfig],
    n_seeds: usize,
) -> Result<BenchmarkReport> {
    if n_seeds == 0 {
        return Err(Error::InvalidParameter("benchmark needs at least one seed".into()));
    }
    config.validate()?;

    type SeedResults = Vec<std::result::Result<SeedScore, String>>;
    let seed_results: Vec<SeedResults> = (0..n_seeds)
        .into_par_iter()
        .map(|s| {
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(s as u64);
            let built = simulate_dgp(&cfg)
                .and_then(|(data, truth)| {
                    let problem = benchmark_problem(&data, &truth)?;
                    Ok((data, truth, problem))
                });
            let (data, truth, problem) = match built {
                Ok(v) => v,
                Err(e) => {
                    let msg = e.to_string();
                    return methods.iter().map(|_| Err(msg.clone())).collect();
                }
            };
            methods
                .iter()
                .map(|m| {
                    fit_one(m, &data, &truth, &problem)
                        .map(|cf| score_series(&data, &truth, &cf))
                        .map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();

    let t1 = config.t1;
    let mut summaries = Vec::with_capacity(methods.len());
    for (mi, method) in methods.iter().enumerate() {
        let mut post_rmse = Vec::with_capacity(n_seeds);
        let mut pre_rmse = Vec::with_capacity(n_seeds);
        let mut bias = Vec::with_capacity(n_seeds);
        let mut bias_series = vec![0.0; t1];
        let mut failures = Vec::new();
        let mut ok = 0usize;
        for (seed_idx, row) in seed_results.iter().enumerate() {
            match &row[mi] {
                Ok(score) => {
                    post_rmse.push(score.post_rmse);
                    pre_rmse.push(score.pre_rmse);
                    bias.push(score.bias);
                    for (b, e) in bias_series.iter_mut().zip(score.errors.iter()) {
                        *b += e;
                    }
                    ok += 1;
                }
                Err(msg) => {
                    post_rmse.push(f64::NAN);
                    pre_rmse.push(f64::NAN);
                    bias.push(f64::NAN);
                    failures.push((seed_idx, msg.clone()));
                }
            }
        }
        if ok > 0 {
            for b in bias_series.iter_mut() {
                *b /= ok as f64;
            }
        }
        let mut post_ok: Vec<f64> = post_rmse.iter().copied().filter(|v| v.is_finite()).collect();
        let mut pre_ok: Vec<f64> = pre_rmse.iter().copied().filter(|v| v.is_finite()).collect();
        let bias_ok: Vec<f64> = bias.iter().copied().filter(|v| v.is_finite()).collect();
        let mean_bias = if bias_ok.is_empty() {
            f64::NAN
        } else {
            bias_ok.iter().sum::<f64>() / bias_ok.len() as f64
        };
        summaries.push(MethodSummary {
            label: method.to_string(),
            post_rmse,
            pre_rmse,
            bias,
            bias_series,
            failures,
            median_post_rmse: median(&mut post_ok),
            median_pre_rmse: median(&mut pre_ok),
            mean_bias,
        });
    }
    Ok(BenchmarkReport {
        config: config.clone(),
        n_seeds,
        methods: summaries,
    })
}

/// Result of [`hcw_endogeneity_check`].
#[derive(Debug, Clone)]
pub struct EndogeneityCheck {
    /// Mean of `1 - 1'w_hat` across seeds.
    pub mean_deficit: f64,
    /// Analytic limit `(1 + sigma_gamma^2 * J / sigma_u^2)^-1`.
    pub analytic: f64,
    pub n_seeds: usize,
    pub t0: usize,
    pub j: usize,
}

/// Demonstrates the weight-sum deficit of unconstrained pre-period OLS
/// under iid common time shocks: with `y_it = mu_i + gamma_t + u_it`,
/// `gamma_t ~ N(0, sigma_gamma^2)`, `u_it ~ N(0, sigma_u^2)`, the slope
/// sum converges to less than one, `1 - 1'w -> (1 + sigma_gamma^2 * J /
/// sigma_u^2)^-1`, so a common trend shift leaks into the estimated
/// effect. Draw order per seed: `mu` by unit, `gamma` by period, `u` by
/// unit then period.
pub fn hcw_endogeneity_check(
    j: usize,
    t0: usize,
    sigma_gamma: f64,
    sigma_u: f64,
    n_seeds: usize,
    seed: u64,
) -> Result<EndogeneityCheck> {
    if j == 0 || t0 < j + 2 || n_seeds == 0 {
        return Err(Error::InvalidParameter(
            "endogeneity check needs j >= 1, t0 > j + 1 and at least one seed".into(),
        ));
    }
    if sigma_u <= 0.0 || sigma_gamma < 0.0 {
        return Err(Error::InvalidParameter(
            "endogeneity check needs sigma_u > 0 and sigma_gamma >= 0".into(),
        ));
    }
    let deficits: Vec<f64> = (0..n_seeds)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let mut rng = GaussianRng::new(seed.wrapping_add(s as u64));
            let n = j + 1;
            let t = t0 + 1; // one nominal post period to form a valid panel
            let mu: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let gamma: Vec<f64> = (0..t).map(|_| sigma_gamma * rng.normal()).collect();
            let mut y = DMatrix::zeros(t, n);
            for i in 0..n {
                for s in 0..t {
                    y[(s, i)] = mu[i] + gamma[s] + sigma_u * rng.normal();
                }
            }
            let unit_labels: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
            let period_labels: Vec<String> = (1..=t).map(|s| s.to_string()).collect();
            let data = PanelDataset::new(y, unit_labels, period_labels, t0)?;
            let fit = hcw_ols(&data, None, None)?;
            Ok(1.0 - fit.w.sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_deficit = deficits.iter().sum::<f64>() / deficits.len() as f64;
    Ok(EndogeneityCheck {
        mean_deficit,
        analytic: 1.0 / (1.0 + sigma_gamma * sigma_gamma * j as f64 / (sigma_u * sigma_u)),
        n_seeds,
        t0,
        j,
    })
}
