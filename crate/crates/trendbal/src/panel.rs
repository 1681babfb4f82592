//! Balanced-panel data model and constraint-system construction.
//!
//! A [`PanelDataset`] stores a `T x (J+1)` outcome matrix with the treated
//! unit in column 0 and a pre-treatment period count `t0`. A
//! [`CovariateSpec`] names the trending covariates `z_i` (exactly balanced)
//! and the balancing covariates `q_i` (softly matched); [`build_problem`]
//! turns both into the `(z1, Z, q1, Q)` system consumed by the solvers.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Balanced panel: `T` periods by `J+1` units, treated unit in column 0.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    /// `T x (J+1)` outcomes; rows are periods in order, column 0 is treated.
    pub outcomes: DMatrix<f64>,
    /// Unit labels, treated first; length `J+1`.
    pub unit_labels: Vec<String>,
    /// Period labels in time order; length `T`.
    pub period_labels: Vec<String>,
    /// Number of pre-treatment periods (`1 <= t0 < T`).
    pub t0: usize,
}

/// Input layout for [`load_panel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Header `period,<unit1>,...,<unitN>`; one row per period.
    Wide,
    /// Header `unit,period,outcome`; one row per cell, any order.
    Long,
}

impl PanelDataset {
    /// Validates the balanced-panel invariants and wraps the matrix.
    pub fn new(
        outcomes: DMatrix<f64>,
        unit_labels: Vec<String>,
        period_labels: Vec<String>,
        t0: usize,
    ) -> Result<Self> {
        let (t, n_units) = outcomes.shape();
        if n_units != unit_labels.len() {
            return Err(Error::Dimension(format!(
                "{} unit labels for {} outcome columns",
                unit_labels.len(),
                n_units
            )));
        }
        if t != period_labels.len() {
            return Err(Error::Dimension(format!(
                "{} period labels for {} outcome rows",
                period_labels.len(),
                t
            )));
        }
        if n_units < 2 {
            return Err(Error::InvalidParameter(
                "panel needs at least one untreated unit".into(),
            ));
        }
        if t0 == 0 || t0 >= t {
            return Err(Error::InvalidParameter(format!(
                "t0 must satisfy 1 <= t0 < T, got t0={t0}, T={t}"
            )));
        }
        check_unique(&unit_labels, "unit")?;
        check_unique(&period_labels, "period")?;
        for (idx, v) in outcomes.iter().enumerate() {
            if !v.is_finite() {
                let row = idx % t;
                let col = idx / t;
                return Err(Error::Parse(format!(
                    "non-finite outcome for unit '{}', period '{}'",
                    unit_labels[col], period_labels[row]
                )));
            }
        }
        Ok(Self {
            outcomes,
            unit_labels,
            period_labels,
            t0,
        })
    }

    /// Total number of periods.
    pub fn t(&self) -> usize {
        self.outcomes.nrows()
    }

    /// Number of post-treatment periods.
    pub fn t1(&self) -> usize {
        self.t() - self.t0
    }

    /// Number of untreated units.
    pub fn j(&self) -> usize {
        self.outcomes.ncols() - 1
    }

    /// Treated unit's outcome series (length `T`).
    pub fn treated(&self) -> DVector<f64> {
        self.outcomes.column(0).into_owned()
    }

    /// `T x J` matrix of untreated outcomes.
    pub fn controls(&self) -> DMatrix<f64> {
        self.outcomes.columns(1, self.j()).into_owned()
    }

    /// Index of a period label.
    pub fn period_index(&self, label: &str) -> Result<usize> {
        self.period_labels
            .iter()
            .position(|p| p == label)
            .ok_or_else(|| Error::UnknownLabel {
                kind: "period".into(),
                label: label.into(),
            })
    }

    /// Writes the panel in wide layout (`period,<units...>`).
    pub fn write_wide_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["period".to_string()];
        header.extend(self.unit_labels.iter().cloned());
        w.write_record(&header)?;
        for (r, period) in self.period_labels.iter().enumerate() {
            let mut rec = vec![period.clone()];
            for c in 0..self.outcomes.ncols() {
                rec.push(format!("{}", self.outcomes[(r, c)]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the panel in long layout (`unit,period,outcome`).
    pub fn write_long_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["unit", "period", "outcome"])?;
        for (c, unit) in self.unit_labels.iter().enumerate() {
            for (r, period) in self.period_labels.iter().enumerate() {
                w.write_record([unit, period, &format!("{}", self.outcomes[(r, c)])])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_unique(labels: &[String], kind: &str) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::Parse(format!("duplicate {kind} label '{l}'")));
        }
    }
    Ok(())
}

/// Sorts labels numerically when every label parses as a number,
/// lexicographically otherwise.
fn canonical_sort(labels: &mut [String]) {
    let all_numeric = labels.iter().all(|l| l.trim().parse::<f64>().is_ok());
    if all_numeric {
        labels.sort_by(|a, b| {
            let x: f64 = a.trim().parse().unwrap();
            let y: f64 = b.trim().parse().unwrap();
            x.partial_cmp(&y).unwrap().then_with(|| a.cmp(b))
        });
    } else {
        labels.sort();
    }
}

fn parse_cell(raw: &str, unit: &str, period: &str) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::BalancedPanel {
            unit: unit.into(),
            period: period.into(),
            detail: "empty cell".into(),
        });
    }
    let v: f64 = trimmed.parse().map_err(|_| {
        Error::Parse(format!(
            "non-numeric cell '{trimmed}' for unit '{unit}', period '{period}'"
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::Parse(format!(
            "non-finite cell '{trimmed}' for unit '{unit}', period '{period}'"
        )));
    }
    Ok(v)
}

/// Loads a panel from CSV.
///
/// Wide files keep units in column order; long files are canonicalized
/// (units and periods sorted, numerically when possible), so shuffled rows
/// produce the same dataset. The treated unit is moved to column 0 either
/// way; `t0_label` names the last pre-treatment period.
pub fn load_panel(path: &Path, layout: Layout, treated: &str, t0_label: &str) -> Result<PanelDataset> {
    match layout {
        Layout::Wide => load_wide(path, treated, t0_label),
        Layout::Long => load_long(path, treated, t0_label),
    }
}

fn load_wide(path: &Path, treated: &str, t0_label: &str) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 3 || header.get(0).map(str::trim) != Some("period") {
        return Err(Error::Parse(
            "wide layout expects header 'period,<unit1>,...,<unitN>' with at least two units".into(),
        ));
    }
    let units: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let treated_col = units
        .iter()
        .position(|u| u == treated)
        .ok_or_else(|| Error::UnknownLabel {
            kind: "unit".into(),
            label: treated.into(),
        })?;

    let mut periods = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let period = rec
            .get(0)
            .ok_or_else(|| Error::Parse("empty row in wide file".into()))?
            .trim()
            .to_string();
        if rec.len() != units.len() + 1 {
            let missing = units
                .get(rec.len().saturating_sub(1))
                .cloned()
                .unwrap_or_else(|| "?".into());
            return Err(Error::BalancedPanel {
                unit: missing,
                period,
                detail: format!("row has {} cells, expected {}", rec.len(), units.len() + 1),
            });
        }
        let mut row = Vec::with_capacity(units.len());
        for (c, unit) in units.iter().enumerate() {
            row.push(parse_cell(rec.get(c + 1).unwrap_or(""), unit, &period)?);
        }
        periods.push(period);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("wide file contains no data rows".into()));
    }

    // Treated unit to column 0, untreated keep input order.
    let mut order: Vec<usize> = vec![treated_col];
    order.extend((0..units.len()).filter(|&c| c != treated_col));
    let unit_labels: Vec<String> = order.iter().map(|&c| units[c].clone()).collect();
    let t = rows.len();
    let outcomes = DMatrix::from_fn(t, units.len(), |r, c| rows[r][order[c]]);

    let t0_idx = periods
        .iter()
        .position(|p| p == t0_label)
        .ok_or_else(|| Error::UnknownLabel {
            kind: "period".into(),
            label: t0_label.into(),
        })?;
    PanelDataset::new(outcomes, unit_labels, periods, t0_idx + 1)
}

fn load_long(path: &Path, treated: &str, t0_label: &str) -> Result<PanelDataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let expected = ["unit", "period", "outcome"];
    let ok = header.len() == 3
        && header
            .iter()
            .zip(expected)
            .all(|(h, e)| h.trim().eq_ignore_ascii_case(e));
    if !ok {
        return Err(Error::Parse(
            "long layout expects header 'unit,period,outcome'".into(),
        ));
    }

    let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let unit = rec.get(0).unwrap_or("").trim().to_string();
        let period = rec.get(1).unwrap_or("").trim().to_string();
        let value = parse_cell(rec.get(2).unwrap_or(""), &unit, &period)?;
        if cells.insert((unit.clone(), period.clone()), value).is_some() {
            return Err(Error::BalancedPanel {
                unit,
                period,
                detail: "duplicate cell".into(),
            });
        }
    }

    let mut units: Vec<String> = cells
        .keys()
        .map(|(u, _)| u.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut periods: Vec<String> = cells
        .keys()
        .map(|(_, p)| p.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    canonical_sort(&mut units);
    canonical_sort(&mut periods);

    if !units.iter().any(|u| u == treated) {
        return Err(Error::UnknownLabel {
            kind: "unit".into(),
            label: treated.into(),
        });
    }
    let mut unit_labels = vec![treated.to_string()];
    unit_labels.extend(units.into_iter().filter(|u| u != treated));

    let t = periods.len();
    let n = unit_labels.len();
    let mut outcomes = DMatrix::zeros(t, n);
    for (c, unit) in unit_labels.iter().enumerate() {
        for (r, period) in periods.iter().enumerate() {
            match cells.get(&(unit.clone(), period.clone())) {
                Some(&v) => outcomes[(r, c)] = v,
                None => {
                    return Err(Error::BalancedPanel {
                        unit: unit.clone(),
                        period: period.clone(),
                        detail: "missing cell".into(),
                    })
                }
            }
        }
    }
    let t0_idx = periods
        .iter()
        .position(|p| p == t0_label)
        .ok_or_else(|| Error::UnknownLabel {
            kind: "period".into(),
            label: t0_label.into(),
        })?;
    PanelDataset::new(outcomes, unit_labels, periods, t0_idx + 1)
}

/// Table of unit-level external covariates (`unit,<var1>,...,<varP>`).
#[derive(Debug, Clone)]
pub struct ExternalsTable {
    pub columns: Vec<String>,
    values: BTreeMap<String, Vec<f64>>,
}

impl ExternalsTable {
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.clone();
        if header.is_empty() || header.get(0).map(str::trim) != Some("unit") {
            return Err(Error::Parse(
                "externals file expects header 'unit,<var1>,...'".into(),
            ));
        }
        let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut values = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let unit = rec.get(0).unwrap_or("").trim().to_string();
            let mut row = Vec::with_capacity(columns.len());
            for (c, col) in columns.iter().enumerate() {
                row.push(parse_cell(rec.get(c + 1).unwrap_or(""), &unit, col)?);
            }
            if values.insert(unit.clone(), row).is_some() {
                return Err(Error::Parse(format!("duplicate externals row for unit '{unit}'")));
            }
        }
        Ok(Self { columns, values })
    }

    /// Builds a table in memory; `rows` maps a unit to its column values.
    pub fn from_rows(columns: Vec<String>, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (unit, row) in rows {
            if row.len() != columns.len() {
                return Err(Error::Dimension(format!(
                    "externals row for '{unit}' has {} values for {} columns",
                    row.len(),
                    columns.len()
                )));
            }
            values.insert(unit, row);
        }
        Ok(Self { columns, values })
    }

    fn get(&self, unit: &str, column: &str) -> Result<f64> {
        let col = self
            .columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::UnknownLabel {
                kind: "covariate column".into(),
                label: column.into(),
            })?;
        let row = self.values.get(unit).ok_or_else(|| Error::UnknownLabel {
            kind: "unit in externals file".into(),
            label: unit.into(),
        })?;
        Ok(row[col])
    }
}

/// One covariate row of `z_i` or `q_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CovariateDef {
    /// Named column from the externals table.
    External(String),
    /// Outcome averaged over an inclusive window of pre-treatment periods.
    OutcomeWindow { from: String, to: String },
    /// Outcome at a single pre-treatment period.
    OutcomeAt(String),
    /// Shorthand for one row per pre-treatment period.
    PreOutcomes,
}

impl fmt::Display for CovariateDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateDef::External(name) => write!(f, "ext:{name}"),
            CovariateDef::OutcomeWindow { from, to } => write!(f, "avg:{from}:{to}"),
            CovariateDef::OutcomeAt(p) => write!(f, "lag:{p}"),
            CovariateDef::PreOutcomes => write!(f, "pre_outcomes"),
        }
    }
}

impl CovariateDef {
    /// Parses the CLI syntax: `ext:NAME` (or a bare name), `avg:FROM:TO`,
    /// `lag:PERIOD`, `pre_outcomes`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Parse("empty covariate definition".into()));
        }
        if s == "pre_outcomes" {
            return Ok(CovariateDef::PreOutcomes);
        }
        if let Some(rest) = s.strip_prefix("ext:") {
            return Ok(CovariateDef::External(rest.to_string()));
        }
        if let Some(rest) = s.strip_prefix("lag:") {
            return Ok(CovariateDef::OutcomeAt(rest.to_string()));
        }
        if let Some(rest) = s.strip_prefix("avg:") {
            let parts: Vec<&str> = rest.splitn(2, ':').collect();
            if parts.len() != 2 {
                return Err(Error::Parse(format!("bad window '{s}', expected avg:FROM:TO")));
            }
            return Ok(CovariateDef::OutcomeWindow {
                from: parts[0].to_string(),
                to: parts[1].to_string(),
            });
        }
        Ok(CovariateDef::External(s.to_string()))
    }

    fn references_outcomes(&self) -> bool {
        !matches!(self, CovariateDef::External(_))
    }
}

/// Which covariates to balance exactly (`trending`) and softly (`balancing`).
#[derive(Debug, Clone)]
pub struct CovariateSpec {
    pub trending: Vec<CovariateDef>,
    pub balancing: Vec<CovariateDef>,
    /// Prepend a row of ones to `(z1, Z)`. Default true.
    pub include_intercept_in_z: bool,
    /// Divide each balancing row by its untreated-unit standard deviation.
    /// Default false; the solvers work on unscaled rows.
    pub standardize_balancing: bool,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        Self {
            trending: Vec::new(),
            balancing: Vec::new(),
            include_intercept_in_z: true,
            standardize_balancing: false,
        }
    }
}

/// Constraint system `(z1, Z)` and balancing system `(q1, Q)`.
#[derive(Debug, Clone)]
pub struct CovariateProblem {
    /// Treated unit's trending covariates, length `K+1`.
    pub z1: DVector<f64>,
    /// `(K+1) x J` trending covariates of the untreated units.
    pub z: DMatrix<f64>,
    /// Treated unit's balancing covariates, length `m`.
    pub q1: DVector<f64>,
    /// `m x J` balancing covariates of the untreated units.
    pub q: DMatrix<f64>,
    /// Per-row scale factors applied to `(q1, Q)`; all ones by default.
    pub normalization: DVector<f64>,
    /// True when row 0 of `(z1, Z)` is an all-ones intercept row.
    pub has_intercept_row: bool,
    /// True when any trending covariate is built from pre-treatment outcomes.
    pub trending_uses_outcomes: bool,
    /// True when any balancing covariate is built from pre-treatment outcomes.
    pub balancing_uses_outcomes: bool,
    /// Non-fatal notes produced during construction.
    pub warnings: Vec<String>,
}

impl CovariateProblem {
    /// Wraps raw systems, checking finiteness and that `Z` has full row rank.
    pub fn new(z1: DVector<f64>, z: DMatrix<f64>, q1: DVector<f64>, q: DMatrix<f64>) -> Result<Self> {
        let j = z.ncols();
        if z1.len() != z.nrows() {
            return Err(Error::Dimension(format!(
                "z1 has {} rows, Z has {}",
                z1.len(),
                z.nrows()
            )));
        }
        if q1.len() != q.nrows() {
            return Err(Error::Dimension(format!(
                "q1 has {} rows, Q has {}",
                q1.len(),
                q.nrows()
            )));
        }
        if !q.is_empty() && q.ncols() != j {
            return Err(Error::Dimension(format!(
                "Q has {} columns, Z has {}",
                q.ncols(),
                j
            )));
        }
        if z.nrows() == 0 {
            return Err(Error::InvalidParameter("Z must have at least one row".into()));
        }
        if z.nrows() > j {
            return Err(Error::Underdetermined {
                constraints: z.nrows(),
                weights: j,
                hint: String::new(),
            });
        }
        for v in z1.iter().chain(z.iter()).chain(q1.iter()).chain(q.iter()) {
            if !v.is_finite() {
                return Err(Error::Parse("non-finite covariate value".into()));
            }
        }
        let row_descs: Vec<String> = (0..z.nrows()).map(|i| format!("row {i}")).collect();
        check_full_row_rank(&z, &row_descs)?;
        let mut warnings = Vec::new();
        if z.nrows() == j {
            warnings.push(format!(
                "constraint system is square ({j} constraints for {j} weights); the unique feasible point determines w"
            ));
        }
        let m = q.nrows();
        Ok(Self {
            z1,
            z,
            q1,
            q,
            normalization: DVector::from_element(m, 1.0),
            has_intercept_row: false,
            trending_uses_outcomes: false,
            balancing_uses_outcomes: false,
            warnings,
        })
    }

    /// Number of untreated units.
    pub fn j(&self) -> usize {
        self.z.ncols()
    }

    /// `(z1, Z)` stacked as the `(K+1) x (J+1)` matrix `Z*` with the
    /// treated column first.
    pub fn z_star(&self) -> DMatrix<f64> {
        let p = self.z.nrows();
        let mut m = DMatrix::zeros(p, self.j() + 1);
        m.column_mut(0).copy_from(&self.z1);
        m.columns_mut(1, self.j()).copy_from(&self.z);
        m
    }
}

/// Incremental Gram-Schmidt full-row-rank check; names the first dependent row.
pub(crate) fn check_full_row_rank(m: &DMatrix<f64>, row_descs: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
    for i in 0..m.nrows() {
        let mut row: DVector<f64> = m.row(i).transpose();
        for b in &basis {
            let coef = row.dot(b);
            row.axpy(-coef, b, 1.0);
        }
        // Re-orthogonalize once; classical GS alone loses accuracy.
        for b in &basis {
            let coef = row.dot(b);
            row.axpy(-coef, b, 1.0);
        }
        let norm = row.norm();
        if norm <= 1e-10 * scale * (m.ncols() as f64).sqrt() {
            return Err(Error::RankDeficient {
                row: i,
                desc: row_descs.get(i).cloned().unwrap_or_default(),
            });
        }
        basis.push(row / norm);
    }
    Ok(())
}

fn outcome_row_value(data: &PanelDataset, unit_col: usize, def: &CovariateDef) -> Result<f64> {
    match def {
        CovariateDef::OutcomeAt(p) => {
            let idx = data.period_index(p)?;
            if idx >= data.t0 {
                return Err(Error::InvalidParameter(format!(
                    "covariate '{def}' references post-treatment period '{p}'"
                )));
            }
            Ok(data.outcomes[(idx, unit_col)])
        }
        CovariateDef::OutcomeWindow { from, to } => {
            let a = data.period_index(from)?;
            let b = data.period_index(to)?;
            if a > b {
                return Err(Error::InvalidParameter(format!("window '{def}' is reversed")));
            }
            if b >= data.t0 {
                return Err(Error::InvalidParameter(format!(
                    "covariate '{def}' references post-treatment period '{to}'"
                )));
            }
            let n = (b - a + 1) as f64;
            Ok((a..=b).map(|r| data.outcomes[(r, unit_col)]).sum::<f64>() / n)
        }
        _ => unreachable!("expanded before row construction"),
    }
}

/// Expands `PreOutcomes` and returns per-row definitions plus descriptions.
fn expand_defs(data: &PanelDataset, defs: &[CovariateDef]) -> Vec<CovariateDef> {
    let mut out = Vec::new();
    for def in defs {
        match def {
            CovariateDef::PreOutcomes => {
                for r in 0..data.t0 {
                    out.push(CovariateDef::OutcomeAt(data.period_labels[r].clone()));
                }
            }
            other => out.push(other.clone()),
        }
    }
    out
}

fn build_rows(
    data: &PanelDataset,
    defs: &[CovariateDef],
    externals: Option<&ExternalsTable>,
) -> Result<(DVector<f64>, DMatrix<f64>, Vec<String>)> {
    let j = data.j();
    let rows = defs.len();
    let mut treated = DVector::zeros(rows);
    let mut mat = DMatrix::zeros(rows, j);
    let mut descs = Vec::with_capacity(rows);
    for (i, def) in defs.iter().enumerate() {
        descs.push(def.to_string());
        match def {
            CovariateDef::External(name) => {
                let ext = externals.ok_or_else(|| Error::UnknownLabel {
                    kind: "covariate column (no externals file given)".into(),
                    label: name.clone(),
                })?;
                treated[i] = ext.get(&data.unit_labels[0], name)?;
                for c in 0..j {
                    mat[(i, c)] = ext.get(&data.unit_labels[c + 1], name)?;
                }
            }
            _ => {
                treated[i] = outcome_row_value(data, 0, def)?;
                for c in 0..j {
                    mat[(i, c)] = outcome_row_value(data, c + 1, def)?;
                }
            }
        }
    }
    Ok((treated, mat, descs))
}

/// Builds the constraint and balancing systems from a covariate spec.
///
/// Rows are stacked in spec order, with a leading row of ones when
/// `include_intercept_in_z` is set. Duplicates between trending and
/// balancing are allowed.
pub fn build_problem(
    data: &PanelDataset,
    spec: &CovariateSpec,
    externals: Option<&ExternalsTable>,
) -> Result<CovariateProblem> {
    let j = data.j();
    let trending_defs = expand_defs(data, &spec.trending);
    let balancing_defs = expand_defs(data, &spec.balancing);

    let (zt, zm, mut z_descs) = build_rows(data, &trending_defs, externals)?;
    let (z1, z) = if spec.include_intercept_in_z {
        let rows = zt.len() + 1;
        let mut z1 = DVector::zeros(rows);
        let mut zfull = DMatrix::zeros(rows, j);
        z1[0] = 1.0;
        zfull.row_mut(0).fill(1.0);
        z1.rows_mut(1, zt.len()).copy_from(&zt);
        zfull.rows_mut(1, zt.len()).copy_from(&zm);
        z_descs.insert(0, "intercept".into());
        (z1, zfull)
    } else {
        (zt, zm)
    };
    if z1.is_empty() {
        return Err(Error::InvalidParameter(
            "trending spec is empty and the intercept is disabled".into(),
        ));
    }

    if z.nrows() >= j {
        return Err(Error::Underdetermined {
            constraints: z.nrows(),
            weights: j,
            hint: format!(" (trending covariates must number fewer than the {j} untreated units)"),
        });
    }
    check_full_row_rank(&z, &z_descs)?;

    let (mut q1, mut q, _) = build_rows(data, &balancing_defs, externals)?;
    let m = q1.len();
    let mut normalization = DVector::from_element(m, 1.0);
    let mut warnings = Vec::new();
    if spec.standardize_balancing {
        for i in 0..m {
            let row = q.row(i);
            let mean = row.sum() / j as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (j as f64 - 1.0).max(1.0);
            let sd = var.sqrt();
            if sd > 1e-12 {
                let s = 1.0 / sd;
                normalization[i] = s;
                q1[i] *= s;
                q.row_mut(i).scale_mut(s);
            } else {
                warnings.push(format!(
                    "balancing row {i} has zero variance across untreated units; left unscaled"
                ));
            }
        }
    }

    Ok(CovariateProblem {
        z1,
        z,
        q1,
        q,
        normalization,
        has_intercept_row: spec.include_intercept_in_z,
        trending_uses_outcomes: trending_defs.iter().any(|d| d.references_outcomes()),
        balancing_uses_outcomes: balancing_defs.iter().any(|d| d.references_outcomes()),
        warnings,
    })
}
