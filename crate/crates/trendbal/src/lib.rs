//! Counterfactual estimation for panel data with heterogenous trends.
//!
//! Given a balanced panel with one treated unit, the estimators in this
//! crate construct a weighted combination of untreated units that *exactly*
//! balances the covariates responsible for trend heterogeneity (hard
//! equality constraints `z1 = Z w`) while softly matching a second set of
//! balancing covariates through ridge-, lasso-, and elastic-net-penalized
//! least squares. Latent factor loadings can be estimated from
//! pre-treatment outcomes and appended to the constraint set. Treatment
//! effects are then read off by difference-in-differences against the
//! weighted control series.
//!
//! Modules:
//!
//! - [`panel`] — balanced-panel data model, CSV ingestion, and construction
//!   of the constraint/balancing systems from covariate specifications.
//! - [`qp`] — a small dense convex QP kernel (equality constraints plus
//!   nonnegativity bounds) with verified KKT certificates; the substrate
//!   for every l1-type solver.
//! - [`solvers`] — weight estimators: maximum shrinkage, basis pursuit,
//!   constrained ridge/lasso/elastic net, soft nonnegativity, and the
//!   ADH-style inner loop baseline.
//! - [`factors`] — latent factor loading estimation from doubly projected
//!   pre-treatment outcomes and constraint augmentation.
//! - [`estimators`] — DID effect estimation, ATE, counterfactual series,
//!   and the HCW / DI baseline regressions.
//! - [`diagnostics`] — pre-trend and weight-compatibility regressions.
//! - [`simulation`] — reproducible data generator and the Monte Carlo
//!   benchmark harness used to compare the methods.

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod factors;
pub mod panel;
pub mod qp;
pub mod simulation;
pub mod solvers;

pub use diagnostics::{DiagnosticsReport, TestKind};
pub use error::{Error, Result};
pub use estimators::{EffectEstimate, InterceptFit, PreReference};
pub use factors::FactorEstimate;
pub use panel::{CovariateDef, CovariateProblem, CovariateSpec, PanelDataset};
pub use qp::{QpProblem, QpSolution};
pub use simulation::{
    BenchmarkReport, MethodConfig, MethodSummary, SimulationConfig, TruthRecord, Variant,
};
pub use solvers::{Method, WeightSolution};
