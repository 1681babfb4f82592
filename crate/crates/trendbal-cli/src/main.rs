//! Command-line front end for trend-balanced counterfactual estimation.
//!
//! Subcommands: `fit` (weights + effects from a panel CSV), `factors`
//! (latent-factor sweep with per-rank counterfactuals), `simulate`
//! (synthetic panels with recorded truth), `compare` (Monte Carlo method
//! benchmark), and `diagnose` (pre-trend / compatibility regressions).
//!
//! Every output file is fully determined by the inputs, flags, and seed;
//! JSON metadata carries an RFC-3339 timestamp unless `--deterministic`
//! suppresses it. Numbers are printed with 12 significant digits.
//! `TRENDBAL_THREADS` caps the worker-thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use trendbal::diagnostics::{compatibility_test, pretrend_test, DiagnosticsReport};
use trendbal::estimators::{counterfactual, did_effects, PreReference};
use trendbal::factors::{augment_constraints, build_projected_matrix, estimate_factors};
use trendbal::panel::{build_problem, load_panel, CovariateDef, ExternalsTable, Layout};
use trendbal::simulation::{run_benchmark, simulate_dgp, MethodConfig, SimulationConfig, Variant};
use trendbal::solvers::solve_weights;
use trendbal::{CovariateProblem, CovariateSpec, Method, PanelDataset, WeightSolution};

#[derive(Parser)]
#[command(name = "trendbal", version, about = "Counterfactual estimation with exactly balanced trending covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve balancing weights and difference-in-differences effects.
    Fit(FitArgs),
    /// Eigen-decompose projected pre-treatment outcomes and sweep the
    /// number of latent factors used as extra constraints.
    Factors(FactorsArgs),
    /// Generate a synthetic panel with its ground-truth components.
    Simulate(SimulateArgs),
    /// Benchmark several methods on simulated panels across seeds.
    Compare(CompareArgs),
    /// Run specification tests on fitted weights.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Panel CSV path.
    #[arg(long)]
    data: PathBuf,
    /// `wide` (`period,<units...>`) or `long` (`unit,period,outcome`).
    #[arg(long, default_value = "wide")]
    layout: String,
    /// Label of the treated unit.
    #[arg(long)]
    treated: String,
    /// Label of the last pre-treatment period.
    #[arg(long)]
    t0: String,
    /// Optional per-unit covariate CSV (`unit,<columns...>`).
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Trending covariates to balance exactly. Comma list of
    /// `NAME`/`ext:NAME` (covariate column), `lag:PERIOD`,
    /// `avg:FROM:TO`, or `pre_outcomes`. An intercept row is implicit.
    #[arg(long, value_delimiter = ',')]
    trending: Vec<String>,
    /// Balancing covariates matched through the penalized fit
    /// (same syntax as --trending).
    #[arg(long, value_delimiter = ',')]
    balancing: Vec<String>,
    /// Drop the implicit intercept constraint row.
    #[arg(long)]
    no_intercept: bool,
    /// Scale each balancing row by its untreated-unit standard deviation.
    #[arg(long)]
    standardize_balancing: bool,
    /// Reserved for randomized methods; the shipped solvers are
    /// deterministic, so this does not change any output.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Omit the metadata timestamp so re-runs are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct MethodArgs {
    /// Weight methods, comma list of `max_shrinkage`, `bp`, `cridge`,
    /// `classo`, `cenet`, `softnn`, `adh`.
    #[arg(long, value_delimiter = ',', default_value = "cridge")]
    method: Vec<String>,
    /// Penalty grid for the penalized methods (reported sorted ascending).
    #[arg(long, value_delimiter = ',', default_value = "1", allow_negative_numbers = true)]
    lambda: Vec<f64>,
    /// l1 share for `cenet`.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Negative-weight multiplier for `softnn`.
    #[arg(long, default_value_t = 2.0)]
    kappa: f64,
    /// l1 share for `bp` (1 = pure minimum-l1).
    #[arg(long, default_value_t = 1.0)]
    bp_alpha: f64,
    /// Tie-break ridge for `bp`.
    #[arg(long, default_value_t = 1e-4)]
    bp_ridge: f64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    methods: MethodArgs,
    /// Pre-period reference for the effects: `mean` or a period label.
    #[arg(long, default_value = "mean")]
    pre_reference: String,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct FactorsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Factor counts to sweep (comma list; 0 = no augmentation).
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    r: Vec<usize>,
    /// Weight method used for the per-rank counterfactuals.
    #[arg(long, default_value = "cridge")]
    method: String,
    /// Penalty for that method.
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimArgs {
    /// Trend layout: `a` (trends everywhere) or `b` (flat pre-treatment).
    #[arg(long, default_value = "a")]
    variant: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Untreated units (one treated unit is added).
    #[arg(long, default_value_t = 38)]
    j: usize,
    #[arg(long, default_value_t = 20)]
    t0: usize,
    #[arg(long, default_value_t = 10)]
    t1: usize,
    /// Trending covariates per unit.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.2)]
    ar: f64,
    #[arg(long, default_value_t = 10)]
    burn_in: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Method specs, comma list: `max_shrinkage`, `bp[:alpha[:ridge]]`,
    /// `cridge:L`, `classo:L`, `cenet:L:A`, `softnn:L:K`, `adh`, `hcw`,
    /// `hcw_constrained[:MAX]`, `di:L:A`.
    #[arg(long, value_delimiter = ',', default_value = "cridge:2,di:0.01:0.9,hcw")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    methods: MethodArgs,
    /// Regress the pre-treatment gap of each fit on a linear trend.
    #[arg(long)]
    pretrend: bool,
    /// Test consecutive fits against each other for equal trends before
    /// and after treatment.
    #[arg(long)]
    compatibility: bool,
    #[command(flatten)]
    out: OutArgs,
}

// -------------------------------------------------------------------
// Output helpers
// -------------------------------------------------------------------

/// Rounds to 12 significant digits; every number the tool prints goes
/// through here so golden-file comparisons are meaningful.
fn sig12(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    format!("{v:.11e}").parse().unwrap()
}

fn fmt12(v: f64) -> String {
    format!("{v:.11e}")
}

fn round_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().map(|&x| sig12(x)).collect()
}

#[derive(Serialize)]
struct Metadata {
    tool: &'static str,
    version: &'static str,
    command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    created: Option<String>,
}

fn metadata(command: &str, deterministic: bool) -> Metadata {
    Metadata {
        tool: "trendbal",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        created: (!deterministic)
            .then(|| humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string()),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), String> {
    let body = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    std::fs::write(path, body + "\n").map_err(|e| format!("write {}: {e}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, String> {
    csv::Writer::from_path(path).map_err(|e| format!("open {}: {e}", path.display()))
}

fn ensure_out_dir(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("create {}: {e}", dir.display()))
}

// -------------------------------------------------------------------
// Parsing helpers
// -------------------------------------------------------------------

fn parse_layout(s: &str) -> Result<Layout, String> {
    match s.to_ascii_lowercase().as_str() {
        "wide" => Ok(Layout::Wide),
        "long" => Ok(Layout::Long),
        other => Err(format!("unknown layout '{other}' (expected wide or long)")),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    match s.to_ascii_lowercase().as_str() {
        "a" => Ok(Variant::A),
        "b" => Ok(Variant::B),
        other => Err(format!("unknown variant '{other}' (expected a or b)")),
    }
}

fn parse_defs(raw: &[String]) -> Result<Vec<CovariateDef>, String> {
    raw.iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| CovariateDef::parse(s).map_err(|e| e.to_string()))
        .collect()
}

fn load_inputs(args: &DataArgs) -> Result<(PanelDataset, CovariateProblem), String> {
    let layout = parse_layout(&args.layout)?;
    let data = load_panel(&args.data, layout, &args.treated, &args.t0).map_err(|e| e.to_string())?;
    let externals = match &args.covariates {
        Some(path) => Some(ExternalsTable::from_csv(path).map_err(|e| e.to_string())?),
        None => None,
    };
    let spec = CovariateSpec {
        trending: parse_defs(&args.trending)?,
        balancing: parse_defs(&args.balancing)?,
        include_intercept_in_z: !args.no_intercept,
        standardize_balancing: args.standardize_balancing,
    };
    let problem = build_problem(&data, &spec, externals.as_ref()).map_err(|e| e.to_string())?;
    Ok((data, problem))
}

/// Grid-sorted penalties: nonnegative, ascending, deduplicated.
fn lambda_grid(raw: &[f64]) -> Result<Vec<f64>, String> {
    let mut grid: Vec<f64> = raw.to_vec();
    if grid.is_empty() {
        return Err("empty lambda grid".into());
    }
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err("lambda grid entries must be finite and nonnegative".into());
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    Ok(grid)
}

/// Expands `--method`/`--lambda` into concrete methods: penalized methods
/// fan out over the ascending grid, the rest appear once.
fn expand_methods(args: &MethodArgs) -> Result<Vec<Method>, String> {
    let grid = lambda_grid(&args.lambda)?;
    let mut out = Vec::new();
    for name in &args.method {
        match name.trim().to_ascii_lowercase().as_str() {
            "max_shrinkage" => out.push(Method::MaxShrinkage),
            "bp" => out.push(Method::BasisPursuit {
                alpha: args.bp_alpha,
                ridge: args.bp_ridge,
            }),
            "adh" => out.push(Method::AdhInner),
            "cridge" => out.extend(grid.iter().map(|&lambda| Method::ConstrainedRidge { lambda })),
            "classo" => out.extend(grid.iter().map(|&lambda| Method::ConstrainedLasso { lambda })),
            "cenet" => out.extend(grid.iter().map(|&lambda| Method::ConstrainedElasticNet {
                lambda,
                alpha: args.alpha,
            })),
            "softnn" => out.extend(grid.iter().map(|&lambda| Method::SoftNonneg {
                lambda,
                kappa: args.kappa,
            })),
            other => {
                return Err(format!(
                    "unknown method '{other}' (expected max_shrinkage, bp, cridge, classo, cenet, softnn, adh)"
                ))
            }
        }
    }
    if out.is_empty() {
        return Err("no methods requested".into());
    }
    Ok(out)
}

/// `name[:param[:param]]` specs for the benchmark, including the
/// regression baselines.
fn parse_compare_method(spec: &str) -> Result<MethodConfig, String> {
    let parts: Vec<&str> = spec.trim().split(':').collect();
    let num_or = |i: usize, what: &str, default: f64| -> Result<f64, String> {
        match parts.get(i) {
            None => Ok(default),
            Some(raw) => raw
                .parse::<f64>()
                .map_err(|_| format!("method '{spec}': bad {what} '{raw}'")),
        }
    };
    let cfg = match parts[0].to_ascii_lowercase().as_str() {
        "max_shrinkage" => MethodConfig::Weights(Method::MaxShrinkage),
        "bp" => MethodConfig::Weights(Method::BasisPursuit {
            alpha: num_or(1, "alpha", 1.0)?,
            ridge: num_or(2, "ridge", 1e-4)?,
        }),
        "cridge" => MethodConfig::Weights(Method::ConstrainedRidge {
            lambda: num_or(1, "penalty", 1.0)?,
        }),
        "classo" => MethodConfig::Weights(Method::ConstrainedLasso {
            lambda: num_or(1, "penalty", 1.0)?,
        }),
        "cenet" => MethodConfig::Weights(Method::ConstrainedElasticNet {
            lambda: num_or(1, "penalty", 1.0)?,
            alpha: num_or(2, "alpha", 0.5)?,
        }),
        "softnn" => MethodConfig::Weights(Method::SoftNonneg {
            lambda: num_or(1, "penalty", 1.0)?,
            kappa: num_or(2, "kappa", 2.0)?,
        }),
        "adh" => MethodConfig::Weights(Method::AdhInner),
        "hcw" => MethodConfig::Hcw {
            constrained: false,
            max_controls: None,
        },
        "hcw_constrained" => MethodConfig::Hcw {
            constrained: true,
            max_controls: parts
                .get(1)
                .map(|raw| {
                    raw.parse::<usize>()
                        .map_err(|_| format!("method '{spec}': bad control cap '{raw}'"))
                })
                .transpose()?,
        },
        "di" => MethodConfig::Di {
            lambda: num_or(1, "penalty", 0.01)?,
            alpha: num_or(2, "alpha", 0.9)?,
        },
        other => return Err(format!("unknown method '{other}' in '{spec}'")),
    };
    Ok(cfg)
}

fn parse_pre_reference(s: &str, data: &PanelDataset) -> Result<PreReference, String> {
    if s.eq_ignore_ascii_case("mean") {
        return Ok(PreReference::Mean);
    }
    let idx = data.period_index(s).map_err(|e| e.to_string())?;
    Ok(PreReference::Period(idx))
}

fn sim_config(args: &SimArgs) -> Result<SimulationConfig, String> {
    Ok(SimulationConfig {
        j: args.j,
        t0: args.t0,
        t1: args.t1,
        k: args.k,
        variant: parse_variant(&args.variant)?,
        noise_scale: args.noise,
        ar_coef: args.ar,
        burn_in: args.burn_in,
        seed: args.seed,
    })
}

// -------------------------------------------------------------------
// fit
// -------------------------------------------------------------------

fn weight_entry(sol: &WeightSolution, units: &[String]) -> serde_json::Value {
    let lambda = match sol.method {
        Method::ConstrainedRidge { lambda }
        | Method::ConstrainedLasso { lambda }
        | Method::ConstrainedElasticNet { lambda, .. }
        | Method::SoftNonneg { lambda, .. } => Some(sig12(lambda)),
        _ => None,
    };
    json!({
        "method": sol.method.to_string(),
        "lambda": lambda,
        "units": units,
        "weights": round_vec(&sol.w),
        "sum": sig12(sol.sum()),
        "l1_norm": sig12(sol.l1()),
        "min_weight": sig12(sol.min_weight()),
        "balance": sig12(sol.balance),
        "objective": sig12(sol.objective),
        "depends_on_pre_outcomes": sol.depends_on_pre_outcomes,
        "qp": sol.qp.as_ref().map(|qp| json!({
            "iterations": qp.iterations,
            "polished": qp.polished,
            "stationarity_rel": sig12(qp.certificate.stationarity_rel),
        })),
        "notes": sol.notes,
    })
}

fn cmd_fit(args: &FitArgs) -> Result<(), String> {
    let (data, problem) = load_inputs(&args.data)?;
    let methods = expand_methods(&args.methods)?;
    let pre = parse_pre_reference(&args.pre_reference, &data)?;
    ensure_out_dir(&args.out.out)?;

    let controls: Vec<String> = data.unit_labels[1..].to_vec();
    let mut weight_entries = Vec::new();
    let mut effect_entries = Vec::new();
    let mut series = Vec::new(); // (label, counterfactual, gap)
    for method in &methods {
        let sol = solve_weights(&problem, method).map_err(|e| format!("{method}: {e}"))?;
        let effects = did_effects(&data, &sol, pre).map_err(|e| format!("{method}: {e}"))?;
        let cf = counterfactual(&data, &sol, None).map_err(|e| e.to_string())?;
        // counterfactual[s] = c0 + Y_s'w and gap[s] = y_1s - Y_s'w, so the
        // intercept is recoverable from any period.
        let treated = data.treated();
        let c0 = effects.counterfactual[0] - treated[0] + effects.gap_series[0];
        weight_entries.push(weight_entry(&sol, &controls));
        effect_entries.push(json!({
            "method": sol.method.to_string(),
            "pre_reference": args.pre_reference,
            "ate": sig12(effects.ate),
            "tau_by_period": data.period_labels[data.t0..]
                .iter()
                .zip(effects.tau_by_period.iter())
                .map(|(p, v)| json!({"period": p, "tau": sig12(*v)}))
                .collect::<Vec<_>>(),
            "counterfactual_intercept": sig12(c0),
        }));
        series.push((sol.method.to_string(), cf, effects.gap_series.clone()));
    }

    write_json(
        &args.out.out.join("weights.json"),
        &json!({
            "metadata": serde_json::to_value(metadata("fit", args.out.deterministic)).unwrap(),
            "entries": weight_entries,
        }),
    )?;
    write_json(
        &args.out.out.join("effects.json"),
        &json!({
            "metadata": serde_json::to_value(metadata("fit", args.out.deterministic)).unwrap(),
            "entries": effect_entries,
        }),
    )?;

    let mut cf_csv = csv_writer(&args.out.out.join("counterfactual.csv"))?;
    let mut header = vec!["period".to_string(), "actual".to_string()];
    header.extend(series.iter().map(|(l, _, _)| l.clone()));
    cf_csv.write_record(&header).map_err(|e| e.to_string())?;
    let treated = data.treated();
    for (s, period) in data.period_labels.iter().enumerate() {
        let mut rec = vec![period.clone(), fmt12(treated[s])];
        rec.extend(series.iter().map(|(_, cf, _)| fmt12(cf[s])));
        cf_csv.write_record(&rec).map_err(|e| e.to_string())?;
    }
    cf_csv.flush().map_err(|e| e.to_string())?;

    let mut gap_csv = csv_writer(&args.out.out.join("gap.csv"))?;
    let mut header = vec!["period".to_string()];
    header.extend(series.iter().map(|(l, _, _)| l.clone()));
    gap_csv.write_record(&header).map_err(|e| e.to_string())?;
    for (s, period) in data.period_labels.iter().enumerate() {
        let mut rec = vec![period.clone()];
        rec.extend(series.iter().map(|(_, _, gap)| fmt12(gap[s])));
        gap_csv.write_record(&rec).map_err(|e| e.to_string())?;
    }
    gap_csv.flush().map_err(|e| e.to_string())?;
    Ok(())
}

// -------------------------------------------------------------------
// factors
// -------------------------------------------------------------------

fn cmd_factors(args: &FactorsArgs) -> Result<(), String> {
    let (data, problem) = load_inputs(&args.data)?;
    let mut ranks = args.r.clone();
    if ranks.is_empty() {
        return Err("empty factor-count grid".into());
    }
    ranks.sort_unstable();
    ranks.dedup();
    let method = expand_methods(&MethodArgs {
        method: vec![args.method.clone()],
        lambda: vec![args.lambda],
        alpha: 0.5,
        kappa: 2.0,
        bp_alpha: 1.0,
        bp_ridge: 1e-4,
    })?
    .remove(0);
    ensure_out_dir(&args.out.out)?;

    let a = build_projected_matrix(&data, &problem, None).map_err(|e| e.to_string())?;
    let spectrum_rank = a.nrows().min(a.ncols());
    let spectrum = estimate_factors(&a, spectrum_rank).map_err(|e| e.to_string())?;

    let mut eig_csv = csv_writer(&args.out.out.join("eigenvalues.csv"))?;
    eig_csv
        .write_record(["rank", "eigenvalue"])
        .map_err(|e| e.to_string())?;
    for (i, v) in spectrum.eigenvalues.iter().enumerate() {
        eig_csv
            .write_record([(i + 1).to_string(), fmt12(*v)])
            .map_err(|e| e.to_string())?;
    }
    eig_csv.flush().map_err(|e| e.to_string())?;

    let r_max = *ranks.last().unwrap();
    if r_max > 0 {
        let fe = estimate_factors(&a, r_max).map_err(|e| e.to_string())?;
        let mut load_csv = csv_writer(&args.out.out.join("loadings.csv"))?;
        let mut header = vec!["factor".to_string()];
        header.extend(data.unit_labels.iter().cloned());
        load_csv.write_record(&header).map_err(|e| e.to_string())?;
        for k in 0..fe.r {
            let mut rec = vec![(k + 1).to_string()];
            rec.extend((0..fe.loadings.ncols()).map(|c| fmt12(fe.loadings[(k, c)])));
            load_csv.write_record(&rec).map_err(|e| e.to_string())?;
        }
        load_csv.flush().map_err(|e| e.to_string())?;
    }

    for &r in &ranks {
        let solved_problem = if r == 0 {
            problem.clone()
        } else {
            let fe = estimate_factors(&a, r).map_err(|e| e.to_string())?;
            augment_constraints(&problem, &fe).map_err(|e| format!("r = {r}: {e}"))?
        };
        let sol = solve_weights(&solved_problem, &method).map_err(|e| format!("r = {r}: {e}"))?;
        let cf = counterfactual(&data, &sol, None).map_err(|e| e.to_string())?;
        let treated = data.treated();
        let mut csv = csv_writer(&args.out.out.join(format!("counterfactual_r{r}.csv")))?;
        csv.write_record(["period", "actual", "counterfactual"])
            .map_err(|e| e.to_string())?;
        for (s, period) in data.period_labels.iter().enumerate() {
            csv.write_record([period.clone(), fmt12(treated[s]), fmt12(cf[s])])
                .map_err(|e| e.to_string())?;
        }
        csv.flush().map_err(|e| e.to_string())?;
    }
    Ok(())
}

// -------------------------------------------------------------------
// simulate
// -------------------------------------------------------------------

fn write_matrix_csv(
    path: &Path,
    row_name: &str,
    row_labels: &[String],
    col_labels: &[String],
    value: impl Fn(usize, usize) -> f64,
) -> Result<(), String> {
    let mut w = csv_writer(path)?;
    let mut header = vec![row_name.to_string()];
    header.extend(col_labels.iter().cloned());
    w.write_record(&header).map_err(|e| e.to_string())?;
    for (r, label) in row_labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend((0..col_labels.len()).map(|c| fmt12(value(r, c))));
        w.write_record(&rec).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), String> {
    let config = sim_config(&args.sim)?;
    let (data, truth) = simulate_dgp(&config).map_err(|e| e.to_string())?;
    ensure_out_dir(&args.out.out)?;

    write_matrix_csv(
        &args.out.out.join("panel.csv"),
        "period",
        &data.period_labels,
        &data.unit_labels,
        |r, c| data.outcomes[(r, c)],
    )?;
    write_matrix_csv(
        &args.out.out.join("truth_u.csv"),
        "period",
        &data.period_labels,
        &data.unit_labels,
        |r, c| truth.u[(r, c)],
    )?;
    let gamma_cols: Vec<String> = (0..truth.gamma.ncols())
        .map(|k| if k == 0 { "common".into() } else { format!("z{k}") })
        .collect();
    write_matrix_csv(
        &args.out.out.join("truth_gamma.csv"),
        "period",
        &data.period_labels,
        &gamma_cols,
        |r, c| truth.gamma[(r, c)],
    )?;
    let z_rows: Vec<String> = (1..=truth.z.nrows()).map(|k| format!("z{k}")).collect();
    write_matrix_csv(
        &args.out.out.join("truth_z.csv"),
        "covariate",
        &z_rows,
        &data.unit_labels,
        |r, c| truth.z[(r, c)],
    )?;
    let mut mu_csv = csv_writer(&args.out.out.join("truth_mu.csv"))?;
    mu_csv.write_record(["unit", "mu"]).map_err(|e| e.to_string())?;
    for (i, unit) in data.unit_labels.iter().enumerate() {
        mu_csv
            .write_record([unit.clone(), fmt12(truth.mu[i])])
            .map_err(|e| e.to_string())?;
    }
    mu_csv.flush().map_err(|e| e.to_string())?;

    write_json(
        &args.out.out.join("config.json"),
        &json!({
            "metadata": serde_json::to_value(metadata("simulate", args.out.deterministic)).unwrap(),
            "config": {
                "j": config.j,
                "t0": config.t0,
                "t1": config.t1,
                "k": config.k,
                "variant": format!("{:?}", config.variant),
                "noise_scale": sig12(config.noise_scale),
                "ar_coef": sig12(config.ar_coef),
                "burn_in": config.burn_in,
                "seed": config.seed,
            },
        }),
    )
}

// -------------------------------------------------------------------
// compare
// -------------------------------------------------------------------

fn cmd_compare(args: &CompareArgs) -> Result<(), String> {
    let config = sim_config(&args.sim)?;
    let methods: Vec<MethodConfig> = args
        .methods
        .iter()
        .map(|s| parse_compare_method(s))
        .collect::<Result<_, _>>()?;
    let report = run_benchmark(&config, &methods, args.seeds).map_err(|e| e.to_string())?;
    ensure_out_dir(&args.out.out)?;

    let method_blocks: Vec<serde_json::Value> = report
        .methods
        .iter()
        .map(|m| {
            json!({
                "label": m.label,
                "median_post_rmse": sig12(m.median_post_rmse),
                "median_pre_rmse": sig12(m.median_pre_rmse),
                "mean_bias": sig12(m.mean_bias),
                "bias_series": m.bias_series.iter().map(|&v| sig12(v)).collect::<Vec<_>>(),
                "post_rmse": m.post_rmse.iter().map(|&v| sig12(v)).collect::<Vec<_>>(),
                "pre_rmse": m.pre_rmse.iter().map(|&v| sig12(v)).collect::<Vec<_>>(),
                "bias": m.bias.iter().map(|&v| sig12(v)).collect::<Vec<_>>(),
                "failures": m.failures.iter()
                    .map(|(seed, msg)| json!({"seed": seed, "message": msg}))
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    write_json(
        &args.out.out.join("report.json"),
        &json!({
            "metadata": serde_json::to_value(metadata("compare", args.out.deterministic)).unwrap(),
            "config": {
                "j": config.j,
                "t0": config.t0,
                "t1": config.t1,
                "k": config.k,
                "variant": format!("{:?}", config.variant),
                "noise_scale": sig12(config.noise_scale),
                "ar_coef": sig12(config.ar_coef),
                "burn_in": config.burn_in,
                "base_seed": config.seed,
            },
            "n_seeds": report.n_seeds,
            "methods": method_blocks,
        }),
    )?;

    let mut csv = csv_writer(&args.out.out.join("per_seed.csv"))?;
    csv.write_record(["seed", "method", "post_rmse", "pre_rmse", "bias"])
        .map_err(|e| e.to_string())?;
    for seed in 0..report.n_seeds {
        for m in &report.methods {
            csv.write_record([
                seed.to_string(),
                m.label.clone(),
                fmt12(m.post_rmse[seed]),
                fmt12(m.pre_rmse[seed]),
                fmt12(m.bias[seed]),
            ])
            .map_err(|e| e.to_string())?;
        }
    }
    csv.flush().map_err(|e| e.to_string())
}

// -------------------------------------------------------------------
// diagnose
// -------------------------------------------------------------------

fn report_json(label: &str, rep: &DiagnosticsReport) -> serde_json::Value {
    json!({
        "fit": label,
        "test": match rep.test_kind {
            trendbal::TestKind::PreTrend => "pretrend",
            trendbal::TestKind::Compatibility => "compatibility",
        },
        "n_obs": rep.n_obs,
        "coefficients": rep.coefficients.iter().zip(rep.t_stats.iter()).zip(rep.p_values.iter())
            .map(|(((name, est), (_, t)), (_, p))| json!({
                "name": name,
                "estimate": sig12(*est),
                "t": sig12(*t),
                "p": sig12(*p),
            }))
            .collect::<Vec<_>>(),
        "f_stat": rep.f_stat.map(sig12),
        "f_p_value": rep.f_p_value.map(sig12),
        "caveat_pre_outcome_dependence": rep.caveat,
        "warnings": rep.warnings,
    })
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), String> {
    let (data, problem) = load_inputs(&args.data)?;
    let methods = expand_methods(&args.methods)?;
    let run_pretrend = args.pretrend || !args.compatibility;
    ensure_out_dir(&args.out.out)?;

    let mut fits = Vec::new();
    for method in &methods {
        let sol = solve_weights(&problem, method).map_err(|e| format!("{method}: {e}"))?;
        fits.push(sol);
    }

    let mut reports = Vec::new();
    if run_pretrend {
        for sol in &fits {
            let rep = pretrend_test(&data, sol).map_err(|e| format!("{}: {e}", sol.method))?;
            reports.push(report_json(&sol.method.to_string(), &rep));
        }
    }
    if args.compatibility {
        if fits.len() < 2 {
            return Err("--compatibility needs at least two fits (methods x lambda grid)".into());
        }
        for pair in fits.windows(2) {
            let rep = compatibility_test(&data, &pair[0], &pair[1])
                .map_err(|e| format!("{} vs {}: {e}", pair[0].method, pair[1].method))?;
            let label = format!("{} vs {}", pair[0].method, pair[1].method);
            reports.push(report_json(&label, &rep));
        }
    }

    write_json(
        &args.out.out.join("diagnostics.json"),
        &json!({
            "metadata": serde_json::to_value(metadata("diagnose", args.out.deterministic)).unwrap(),
            "reports": reports,
        }),
    )
}

// -------------------------------------------------------------------

fn configure_threads() {
    if let Ok(raw) = std::env::var("TRENDBAL_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Factors(args) => cmd_factors(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
