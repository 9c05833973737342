//! Leave-one-out residuals and the four variance estimators for the error of
//! a single-cell imputation.
//!
//! With residuals `e_js = Y_js - g(j, s)` on every control cell:
//!
//! * M  averages `e^2` over every cell but the one being evaluated,
//! * UP averages `e^2` over the other units in the same period,
//! * TP averages `e^2` over the other periods of the same unit,
//! * C  fits `ln e^2 = k + nu_j + xi_s` on the control cells and returns
//!   `exp(1.2704 + k + nu_i + xi_t)`, the constant undoing `E[ln z^2]` for a
//!   standard normal `z`.
//!
//! The treated cell has no residual. Wherever a sum would include it, it
//! contributes zero.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::imputers::{Imputer, PreparedPanel};
use crate::panel::{Cell, PanelMatrix, TreatedCell};
use crate::twoway::TwoWaySums;

/// `-E[ln z^2]` for `z ~ N(0, 1)`, rounded as in the literature.
pub const LOG_SQUARED_NORMAL_OFFSET: f64 = 1.2704;

/// Floor applied to squared residuals before taking logs.
pub const SQUARED_RESIDUAL_FLOOR: f64 = 1e-300;

/// Leave-one-out residuals on every control cell plus the treated imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGrid {
    residuals: DMatrix<f64>,
    treated: TreatedCell,
    treated_outcome: f64,
    treated_imputation: f64,
    zero_tol: f64,
}

impl ResidualGrid {
    /// Builds a grid from precomputed residuals. The entry at the treated
    /// cell is ignored.
    pub fn from_parts(
        mut residuals: DMatrix<f64>,
        treated: TreatedCell,
        treated_outcome: f64,
        treated_imputation: f64,
    ) -> Result<Self> {
        let (n, t) = residuals.shape();
        if n < 2 || t < 2 {
            return Err(Error::TooSmall {
                n_units: n,
                n_periods: t,
            });
        }
        if treated.unit() >= n || treated.period() >= t {
            return Err(Error::CellOutOfRange {
                unit: treated.unit(),
                period: treated.period(),
                n_units: n,
                n_periods: t,
            });
        }
        residuals[(treated.unit(), treated.period())] = f64::NAN;
        for s in 0..t {
            for j in 0..n {
                if !treated.is(Cell::new(j, s)) && !residuals[(j, s)].is_finite() {
                    return Err(Error::NonFinite { unit: j, period: s });
                }
            }
        }
        Ok(Self {
            residuals,
            treated,
            treated_outcome,
            treated_imputation,
            zero_tol: 0.0,
        })
    }

    /// Residuals at or below `tol` in absolute value count as zero when
    /// deciding whether the grid is degenerate.
    pub fn with_zero_tolerance(mut self, tol: f64) -> Self {
        self.zero_tol = tol.max(0.0);
        self
    }

    pub fn n_units(&self) -> usize {
        self.residuals.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.residuals.ncols()
    }

    pub fn treated(&self) -> TreatedCell {
        self.treated
    }

    /// Residual at a control cell; `None` at the treated cell.
    pub fn residual(&self, unit: usize, period: usize) -> Option<f64> {
        if self.treated.is(Cell::new(unit, period)) {
            None
        } else {
            Some(self.residuals[(unit, period)])
        }
    }

    /// Squared residual with the treated cell contributing zero.
    pub fn squared(&self, unit: usize, period: usize) -> f64 {
        self.residual(unit, period).map_or(0.0, |e| e * e)
    }

    /// Residual matrix with `NaN` at the treated cell.
    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residuals
    }

    pub fn treated_outcome(&self) -> f64 {
        self.treated_outcome
    }

    pub fn treated_imputation(&self) -> f64 {
        self.treated_imputation
    }

    pub fn tau_hat(&self) -> f64 {
        self.treated_outcome - self.treated_imputation
    }

    /// True when every control residual is zero (up to the zero tolerance).
    pub fn is_zero(&self) -> bool {
        self.control_cells()
            .all(|c| self.residuals[(c.unit, c.period)].abs() <= self.zero_tol)
    }

    /// Grid of the transposed panel, with the treated cell transposed too.
    pub fn transpose(&self) -> Self {
        Self {
            residuals: self.residuals.transpose(),
            treated: TreatedCell::unchecked(self.treated.period(), self.treated.unit()),
            treated_outcome: self.treated_outcome,
            treated_imputation: self.treated_imputation,
            zero_tol: self.zero_tol,
        }
    }

    fn control_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let (n, t) = self.residuals.shape();
        (0..t)
            .flat_map(move |s| (0..n).map(move |j| Cell::new(j, s)))
            .filter(move |&c| !self.treated.is(c))
    }

    fn check_cell(&self, cell: Cell) -> Result<()> {
        let (n, t) = self.residuals.shape();
        if cell.unit >= n || cell.period >= t {
            return Err(Error::CellOutOfRange {
                unit: cell.unit,
                period: cell.period,
                n_units: n,
                n_periods: t,
            });
        }
        Ok(())
    }
}

/// Relative size below which residuals computed from a panel are round-off.
pub const ROUNDOFF_TOLERANCE: f64 = 1e-10;

/// Leave-one-out residuals for every control cell, rows in parallel.
pub fn residual_grid(
    panel: &PanelMatrix,
    treated: TreatedCell,
    imputer: impl Into<Imputer>,
) -> Result<ResidualGrid> {
    residual_grid_with(panel, treated, imputer, Execution::default())
}

pub fn residual_grid_with(
    panel: &PanelMatrix,
    treated: TreatedCell,
    imputer: impl Into<Imputer>,
    exec: Execution,
) -> Result<ResidualGrid> {
    let prepared = PreparedPanel::new(panel, treated, imputer.into())?;
    let rows = exec.map(panel.n_units(), |i| prepared.impute_row(i));
    let (n, t) = (panel.n_units(), panel.n_periods());
    let mut residuals = DMatrix::zeros(n, t);
    let mut treated_imputation = f64::NAN;
    for (i, row) in rows.into_iter().enumerate() {
        for (s, fit) in row?.into_iter().enumerate() {
            if treated.is(Cell::new(i, s)) {
                treated_imputation = fit;
            } else {
                residuals[(i, s)] = panel.value(i, s) - fit;
            }
        }
    }
    let scale = panel.values().amax().max(f64::MIN_POSITIVE);
    Ok(ResidualGrid::from_parts(
        residuals,
        treated,
        panel.value(treated.unit(), treated.period()),
        treated_imputation,
    )?
    .with_zero_tolerance(ROUNDOFF_TOLERANCE * scale))
}

/// Divisor convention for the marginal estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MarginalDivisor {
    /// `NT - 1`, with the treated cell counted as a zero residual.
    #[default]
    #[serde(rename = "nt-1")]
    NtMinusOne,
    /// `NT - 2`, the number of residuals actually available.
    #[serde(rename = "nt-2")]
    NtMinusTwo,
}

impl fmt::Display for MarginalDivisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarginalDivisor::NtMinusOne => "nt-1",
            MarginalDivisor::NtMinusTwo => "nt-2",
        })
    }
}

impl FromStr for MarginalDivisor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nt-1" => Ok(Self::NtMinusOne),
            "nt-2" => Ok(Self::NtMinusTwo),
            other => Err(Error::InvalidParameter(format!(
                "unknown divisor '{other}' (expected nt-1 or nt-2)"
            ))),
        }
    }
}

/// Options for the estimator battery.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VarianceOptions {
    pub divisor: MarginalDivisor,
}

pub fn var_marginal(res: &ResidualGrid, cell: Cell) -> Result<f64> {
    var_marginal_with(res, cell, MarginalDivisor::NtMinusOne)
}

pub fn var_marginal_with(res: &ResidualGrid, cell: Cell, divisor: MarginalDivisor) -> Result<f64> {
    res.check_cell(cell)?;
    let (n, t) = (res.n_units(), res.n_periods());
    let mut sum = 0.0;
    for s in 0..t {
        for j in 0..n {
            if (j, s) != (cell.unit, cell.period) {
                sum += res.squared(j, s);
            }
        }
    }
    let d = match divisor {
        MarginalDivisor::NtMinusOne => n * t - 1,
        MarginalDivisor::NtMinusTwo => n * t - 2,
    };
    Ok(sum / d as f64)
}

pub fn var_unit_placebo(res: &ResidualGrid, cell: Cell) -> Result<f64> {
    res.check_cell(cell)?;
    let n = res.n_units();
    let sum: f64 = (0..n)
        .filter(|&j| j != cell.unit)
        .map(|j| res.squared(j, cell.period))
        .sum();
    Ok(sum / (n - 1) as f64)
}

pub fn var_time_placebo(res: &ResidualGrid, cell: Cell) -> Result<f64> {
    res.check_cell(cell)?;
    let t = res.n_periods();
    let sum: f64 = (0..t)
        .filter(|&s| s != cell.period)
        .map(|s| res.squared(cell.unit, s))
        .sum();
    Ok(sum / (t - 1) as f64)
}

/// Two-way fit of floored log squared residuals over the control cells.
struct LogVarianceFit {
    log_sq: DMatrix<f64>,
    treated: TreatedCell,
}

impl LogVarianceFit {
    fn new(res: &ResidualGrid, scale: f64) -> Self {
        let (n, t) = (res.n_units(), res.n_periods());
        let log_sq = DMatrix::from_fn(n, t, |j, s| match res.residual(j, s) {
            Some(e) => ((e / scale).powi(2)).max(SQUARED_RESIDUAL_FLOOR).ln(),
            None => 0.0,
        });
        Self {
            log_sq,
            treated: res.treated(),
        }
    }

    fn predict(&self, cell: Cell) -> Result<f64> {
        TwoWaySums::new(&self.log_sq).predict(&[self.treated.cell()], cell)
    }

    fn effects(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let fit = TwoWaySums::new(&self.log_sq).fit(&[self.treated.cell()])?;
        Ok((fit.row_effects, fit.col_effects))
    }
}

/// Conditional estimator. An all-zero residual grid returns 0.
pub fn var_conditional(res: &ResidualGrid, cell: Cell) -> Result<f64> {
    res.check_cell(cell)?;
    if res.is_zero() {
        return Ok(0.0);
    }
    let fitted = LogVarianceFit::new(res, 1.0).predict(cell)?;
    Ok((LOG_SQUARED_NORMAL_OFFSET + fitted).exp())
}

/// The four variance estimates at the treated cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub sigma2_m: f64,
    pub sigma2_up: f64,
    pub sigma2_tp: f64,
    pub sigma2_c: f64,
    pub se_m: f64,
    pub se_up: f64,
    pub se_tp: f64,
    pub se_c: f64,
    /// Set when every residual is zero and C fell back to 0.
    pub conditional_degenerate: bool,
}

impl VarianceReport {
    pub fn from_variances(m: f64, up: f64, tp: f64, c: f64, conditional_degenerate: bool) -> Self {
        Self {
            sigma2_m: m,
            sigma2_up: up,
            sigma2_tp: tp,
            sigma2_c: c,
            se_m: m.sqrt(),
            se_up: up.sqrt(),
            se_tp: tp.sqrt(),
            se_c: c.sqrt(),
            conditional_degenerate,
        }
    }

    /// Standard error for one method.
    pub fn se(&self, method: Method) -> f64 {
        match method {
            Method::Up => self.se_up,
            Method::Tp => self.se_tp,
            Method::M => self.se_m,
            Method::C => self.se_c,
        }
    }
}

/// The four variance estimators, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "UP")]
    Up,
    #[serde(rename = "TP")]
    Tp,
    M,
    C,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Up, Method::Tp, Method::M, Method::C];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Up => "UP",
            Method::Tp => "TP",
            Method::M => "M",
            Method::C => "C",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn variance_report(res: &ResidualGrid) -> Result<VarianceReport> {
    variance_report_with(res, &VarianceOptions::default())
}

pub fn variance_report_with(res: &ResidualGrid, opts: &VarianceOptions) -> Result<VarianceReport> {
    let cell = res.treated().cell();
    let degenerate = res.is_zero();
    Ok(VarianceReport::from_variances(
        var_marginal_with(res, cell, opts.divisor)?,
        var_unit_placebo(res, cell)?,
        var_time_placebo(res, cell)?,
        var_conditional(res, cell)?,
        degenerate,
    ))
}

/// Chi-squared degrees of freedom, with `Infinite` meaning a constant
/// multiplier of one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dof {
    Finite(f64),
    Infinite,
}

impl Dof {
    /// Variances at or below this are read as homoskedastic.
    pub const ZERO_VARIANCE: f64 = 1e-12;

    /// Dof whose rescaled chi-squared has variance `v`.
    pub fn from_variance(v: f64) -> Self {
        if v <= Self::ZERO_VARIANCE {
            Dof::Infinite
        } else {
            Dof::Finite(2.0 / v)
        }
    }

    /// Variance `2 / k` of a rescaled chi-squared draw.
    pub fn variance(self) -> f64 {
        match self {
            Dof::Finite(k) => 2.0 / k,
            Dof::Infinite => 0.0,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Dof::Infinite)
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Dof::Finite(k) if !(k.is_finite() && k > 0.0) => Err(Error::InvalidParameter(format!(
                "degrees of freedom must be positive, got {k}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Dof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dof::Finite(k) => write!(f, "{k}"),
            Dof::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Dof {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Dof::Infinite);
        }
        let k: f64 = s
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("invalid degrees of freedom '{s}'")))?;
        let dof = Dof::Finite(k);
        dof.validate()?;
        Ok(dof)
    }
}

/// Strength of unit and time heteroskedasticity in a residual grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeteroskParams {
    /// Population variance of the mean-one unit multipliers.
    pub v_exp_nu: f64,
    /// Population variance of the mean-one time multipliers.
    pub v_exp_xi: f64,
    pub k_nu: Dof,
    pub k_xi: Dof,
}

impl HeteroskParams {
    pub fn from_variances(v_exp_nu: f64, v_exp_xi: f64) -> Self {
        Self {
            v_exp_nu,
            v_exp_xi,
            k_nu: Dof::from_variance(v_exp_nu),
            k_xi: Dof::from_variance(v_exp_xi),
        }
    }

    pub fn homoskedastic() -> Self {
        Self::from_variances(0.0, 0.0)
    }

    pub fn is_homoskedastic(&self) -> bool {
        self.k_nu.is_infinite() && self.k_xi.is_infinite()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_exp_nu >= 0.0 && self.v_exp_xi >= 0.0)
            || !self.v_exp_nu.is_finite()
            || !self.v_exp_xi.is_finite()
        {
            return Err(Error::InvalidParameter(
                "multiplier variances must be finite and nonnegative".into(),
            ));
        }
        self.k_nu.validate()?;
        self.k_xi.validate()
    }
}

/// Mean-one unit and time multipliers `exp(nu_i)`, `exp(xi_t)` from the
/// log-variance fit of a residual matrix, or `None` if every residual is 0.
pub(crate) fn variance_multipliers(res: &ResidualGrid) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    if res.is_zero() {
        return Ok(None);
    }
    let (n, t) = (res.n_units(), res.n_periods());
    let cells = n * t - 1;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for s in 0..t {
        for j in 0..n {
            if let Some(e) = res.residual(j, s) {
                sum += e;
                sum_sq += e * e;
            }
        }
    }
    let mean = sum / cells as f64;
    let sd = (sum_sq / cells as f64 - mean * mean).max(0.0).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let (nu, xi) = LogVarianceFit::new(res, scale).effects()?;
    Ok(Some((mean_one_exp(&nu), mean_one_exp(&xi))))
}

fn mean_one_exp(effects: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = effects.iter().map(|v| v.exp()).collect();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    e.into_iter().map(|v| v / mean).collect()
}

pub(crate) fn population_variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
}

pub fn estimate_heterosk_params(res: &ResidualGrid) -> Result<HeteroskParams> {
    match variance_multipliers(res)? {
        None => Err(Error::Degenerate(
            "every residual is zero; heteroskedasticity is not identified".into(),
        )),
        Some((nu, xi)) => Ok(HeteroskParams::from_variances(
            population_variance(&nu),
            population_variance(&xi),
        )),
    }
}

/// One row of the standard-error comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub dataset: String,
    pub treated_unit: String,
    pub treated_period: String,
    pub point_estimate: f64,
    #[serde(flatten)]
    pub report: VarianceReport,
}

impl EstimateRow {
    pub const CSV_HEADER: [&'static str; 7] = [
        "dataset",
        "treated_period",
        "point_estimate",
        "se_m",
        "se_up",
        "se_tp",
        "se_c",
    ];

    pub fn new(
        panel: &PanelMatrix,
        dataset: &str,
        res: &ResidualGrid,
        report: VarianceReport,
    ) -> Self {
        let tr = res.treated();
        Self {
            dataset: dataset.to_string(),
            treated_unit: panel.unit_labels()[tr.unit()].clone(),
            treated_period: panel.period_labels()[tr.period()].clone(),
            point_estimate: res.tau_hat(),
            report,
        }
    }

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.treated_period.clone(),
            self.point_estimate.to_string(),
            self.report.se_m.to_string(),
            self.report.se_up.to_string(),
            self.report.se_tp.to_string(),
            self.report.se_c.to_string(),
        ]
    }

    /// Writes header and rows as CSV.
    pub fn write_csv<W: Write>(rows: &[EstimateRow], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for r in rows {
            w.write_record(r.csv_record())?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imputers::ImputerKind;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, t, |_, _| rng.sample(StandardNormal))
    }

    fn grid(values: DMatrix<f64>, tu: usize, tp: usize) -> ResidualGrid {
        ResidualGrid::from_parts(values, TreatedCell::unchecked(tu, tp), 0.0, 0.0).unwrap()
    }

    #[test]
    fn additive_panel_has_zero_twfe_residuals() {
        let p = PanelMatrix::from_matrix(DMatrix::from_fn(4, 5, |i, s| i as f64 * 0.5 + s as f64))
            .unwrap();
        let tr = TreatedCell::unchecked(3, 4);
        let res = residual_grid(&p, tr, ImputerKind::Twfe).unwrap();
        for j in 0..4 {
            for s in 0..5 {
                if let Some(e) = res.residual(j, s) {
                    assert_abs_diff_eq!(e, 0.0, epsilon = 1e-12);
                }
            }
        }
        assert_abs_diff_eq!(res.tau_hat(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_panel_zero_residuals_any_kind() {
        let p = PanelMatrix::from_matrix(DMatrix::from_element(4, 4, 2.0)).unwrap();
        let tr = TreatedCell::unchecked(1, 2);
        for kind in ImputerKind::ALL {
            let res = residual_grid(&p, tr, kind).unwrap();
            assert!(res
                .residuals()
                .iter()
                .all(|e| e.is_nan() || e.abs() < 1e-10));
            assert_abs_diff_eq!(res.tau_hat(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn twfe_grid_matches_per_cell_refit() {
        let y = gaussian(5, 5, 3);
        let p = PanelMatrix::from_matrix(y.clone()).unwrap();
        let tr = TreatedCell::unchecked(4, 4);
        let res = residual_grid(&p, tr, ImputerKind::Twfe).unwrap();
        for j in 0..5 {
            for s in 0..5 {
                // dense dummy regression on the 23 (or 24) kept cells
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for a in 0..5 {
                    for b in 0..5 {
                        if (a, b) == (j, s) || (a, b) == (4, 4) {
                            continue;
                        }
                        let mut x = vec![0.0; 10];
                        x[a] = 1.0;
                        x[5 + b] = 1.0;
                        xs.push(x);
                        ys.push(y[(a, b)]);
                    }
                }
                let x = DMatrix::from_fn(xs.len(), 10, |r, c| xs[r][c]);
                let beta = x
                    .svd(true, true)
                    .solve(&DVector::from_vec(ys), 1e-12)
                    .unwrap();
                let fit = beta[j] + beta[5 + s];
                match res.residual(j, s) {
                    Some(e) => assert_abs_diff_eq!(e, y[(j, s)] - fit, epsilon = 1e-8),
                    None => assert_abs_diff_eq!(res.treated_imputation(), fit, epsilon = 1e-8),
                }
            }
        }
        assert_eq!(res.tau_hat(), y[(4, 4)] - res.treated_imputation());
    }

    #[test]
    fn marginal_examples() {
        let r = grid(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 0.0]), 1, 1);
        assert_abs_diff_eq!(
            var_marginal(&r, Cell::new(1, 1)).unwrap(),
            14.0 / 3.0,
            epsilon = 1e-15
        );

        let signs = DMatrix::from_fn(10, 10, |i, s| if (i + s) % 2 == 0 { 1.0 } else { -1.0 });
        let r = grid(signs, 9, 9);
        assert_abs_diff_eq!(
            var_marginal(&r, Cell::new(9, 9)).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            var_marginal(&r, Cell::new(0, 0)).unwrap(),
            98.0 / 99.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            var_marginal_with(&r, Cell::new(9, 9), MarginalDivisor::NtMinusTwo).unwrap(),
            99.0 / 98.0,
            epsilon = 1e-15
        );

        let z = grid(DMatrix::zeros(3, 3), 0, 0);
        assert_eq!(var_marginal(&z, Cell::new(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn placebo_examples() {
        let r = grid(
            DMatrix::from_row_slice(3, 2, &[3.0, 0.5, 4.0, 0.5, 9.0, 0.0]),
            2,
            1,
        );
        // column 0 without row 2: (3, 4)
        assert_abs_diff_eq!(
            var_unit_placebo(&r, Cell::new(2, 0)).unwrap(),
            12.5,
            epsilon = 1e-15
        );

        let r = grid(
            DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 2.0, 7.0, 0.0, 0.0, 0.0, 0.0]),
            1,
            3,
        );
        assert_abs_diff_eq!(
            var_time_placebo(&r, Cell::new(0, 3)).unwrap(),
            2.0,
            epsilon = 1e-15
        );

        let z = grid(DMatrix::zeros(3, 3), 0, 0);
        assert_eq!(var_unit_placebo(&z, Cell::new(0, 0)).unwrap(), 0.0);
        assert_eq!(var_time_placebo(&z, Cell::new(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn unit_placebo_equals_marginal_on_flat_grid() {
        let signs = DMatrix::from_fn(6, 6, |i, s| if (i * 7 + s) % 3 == 0 { 1.5 } else { -1.5 });
        let r = grid(signs, 5, 5);
        let c = Cell::new(5, 5);
        assert_abs_diff_eq!(
            var_unit_placebo(&r, c).unwrap(),
            var_marginal(&r, c).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn transpose_swaps_up_and_tp() {
        let r = grid(gaussian(5, 7, 9), 2, 4);
        let rt = r.transpose();
        let c = Cell::new(2, 4);
        let ct = Cell::new(4, 2);
        assert_eq!(
            var_unit_placebo(&r, c).unwrap(),
            var_time_placebo(&rt, ct).unwrap()
        );
        assert_eq!(
            var_time_placebo(&r, c).unwrap(),
            var_unit_placebo(&rt, ct).unwrap()
        );
    }

    #[test]
    fn conditional_constant_residuals() {
        let e = 0.7;
        let r = grid(DMatrix::from_element(5, 6, e), 4, 5);
        let v = var_conditional(&r, Cell::new(4, 5)).unwrap();
        assert_abs_diff_eq!(v, LOG_SQUARED_NORMAL_OFFSET.exp() * e * e, epsilon = 1e-12);
    }

    #[test]
    fn conditional_zero_grid_is_degenerate() {
        let r = grid(DMatrix::zeros(4, 4), 0, 0);
        let rep = variance_report(&r).unwrap();
        assert!(rep.conditional_degenerate);
        assert_eq!(rep.sigma2_c, 0.0);
        assert_eq!(rep.sigma2_m + rep.sigma2_up + rep.sigma2_tp, 0.0);
    }

    #[test]
    fn conditional_consistency_large_gaussian() {
        // The cell-level value carries sampling noise from its own row and
        // column effects; averaged over cells it must sit near 1.
        let r = grid(gaussian(200, 200, 77), 10, 20);
        let mut total = 0.0;
        for j in (0..200).step_by(10) {
            for s in (0..200).step_by(10) {
                total += var_conditional(&r, Cell::new(j, s)).unwrap();
            }
        }
        let avg = total / 400.0;
        assert!((0.97..=1.08).contains(&avg), "{avg}");
    }

    #[test]
    fn report_is_composition_of_estimators() {
        let r = grid(gaussian(10, 10, 5), 3, 6);
        let c = Cell::new(3, 6);
        let rep = variance_report(&r).unwrap();
        assert_eq!(rep.sigma2_m, var_marginal(&r, c).unwrap());
        assert_eq!(rep.sigma2_up, var_unit_placebo(&r, c).unwrap());
        assert_eq!(rep.sigma2_tp, var_time_placebo(&r, c).unwrap());
        assert_eq!(rep.sigma2_c, var_conditional(&r, c).unwrap());
        assert_eq!(rep.se_c, rep.sigma2_c.sqrt());
    }

    #[test]
    fn heterosk_homoskedastic_grid() {
        let signs = DMatrix::from_fn(6, 8, |i, s| if (i + 2 * s) % 3 == 0 { 2.0 } else { -2.0 });
        let h = estimate_heterosk_params(&grid(signs, 5, 7)).unwrap();
        assert!(h.v_exp_nu.abs() < 1e-12 && h.v_exp_xi.abs() < 1e-12);
        assert!(h.is_homoskedastic());
        assert!(estimate_heterosk_params(&grid(DMatrix::zeros(3, 3), 0, 0)).is_err());
    }

    #[test]
    fn heterosk_recovers_rank_one_pattern() {
        // |e_js| = sqrt(u_j v_s) exactly, so the log fit is exact
        let u = [0.5f64, 1.0, 1.5, 3.0];
        let v = [0.2f64, 1.0, 1.8];
        let r = grid(DMatrix::from_fn(4, 3, |j, s| (u[j] * v[s]).sqrt()), 3, 2);
        let h = estimate_heterosk_params(&r).unwrap();
        let un: Vec<f64> = u.iter().map(|x| x / 1.5).collect();
        let vn: Vec<f64> = v.iter().map(|x| x / 1.0).collect();
        assert_abs_diff_eq!(h.v_exp_nu, population_variance(&un), epsilon = 1e-10);
        assert_abs_diff_eq!(h.v_exp_xi, population_variance(&vn), epsilon = 1e-10);
        match h.k_nu {
            Dof::Finite(k) => assert_abs_diff_eq!(k, 2.0 / h.v_exp_nu, epsilon = 1e-9),
            Dof::Infinite => panic!("expected finite dof"),
        }
    }

    #[test]
    fn estimate_row_csv_layout() {
        let p = PanelMatrix::from_matrix(gaussian(3, 3, 1)).unwrap();
        let r = grid(gaussian(3, 3, 2), 2, 2);
        let row = EstimateRow::new(&p, "demo", &r, variance_report(&r).unwrap());
        let mut buf = Vec::new();
        EstimateRow::write_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("dataset,treated_period,point_estimate,se_m,se_up,se_tp,se_c\n"));
    }
}
