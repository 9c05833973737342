//! Leave-out counterfactual predictors `g(i, t; Y, W)`.
//!
//! Each imputer predicts the untreated outcome of a hold-out cell `(i, t)`
//! using only cells other than `(i, t)` and the treated cell `(i*, t*)`. With
//! `(i, t) = (i*, t*)` the prediction is the counterfactual for the treated
//! cell; any other hold-out is a placebo.
//!
//! * TWFE fits `a_i + b_t` by least squares on all remaining cells.
//! * SC drops row `i*` and column `t*`, fits simplex weights of row `i` on
//!   the remaining donor rows over the remaining periods except `t`, and
//!   predicts the weighted donor combination at period `t`.
//! * SDID adds simplex time weights (column `t` on the other periods across
//!   donor rows) and double-differences:
//!   `sum_j w_j Y_jt + sum_s l_s Y_is - sum_j sum_s w_j l_s Y_js`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Cell, PanelMatrix, TreatedCell};
use crate::simplex::{SimplexLsProblem, SimplexSolver, SimplexWeights};
use crate::twoway::TwoWaySums;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputerKind {
    Twfe,
    Sc,
    Sdid,
}

impl ImputerKind {
    pub const ALL: [ImputerKind; 3] = [ImputerKind::Twfe, ImputerKind::Sc, ImputerKind::Sdid];

    pub fn as_str(self) -> &'static str {
        match self {
            ImputerKind::Twfe => "twfe",
            ImputerKind::Sc => "sc",
            ImputerKind::Sdid => "sdid",
        }
    }
}

impl fmt::Display for ImputerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImputerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "twfe" | "did" => Ok(Self::Twfe),
            "sc" => Ok(Self::Sc),
            "sdid" => Ok(Self::Sdid),
            other => Err(Error::InvalidParameter(format!(
                "unknown imputer '{other}' (expected twfe, sc or sdid)"
            ))),
        }
    }
}

/// Ridge strength for unit-weight fitting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// `sqrt(m) * Var(first differences of the donor rows)` over the `m`
    /// fitting periods.
    #[default]
    Auto,
    Fixed(f64),
}

/// Tuning shared by every imputer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputerConfig {
    /// Ridge on SC unit weights.
    pub sc_ridge: f64,
    /// Ridge on SDID unit weights. Time weights are never penalized.
    pub sdid_ridge: Ridge,
    pub solver: SimplexSolver,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self {
            sc_ridge: 0.0,
            sdid_ridge: Ridge::Auto,
            solver: SimplexSolver::ActiveSet,
        }
    }
}

/// An imputer kind together with its tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub kind: ImputerKind,
    pub config: ImputerConfig,
}

impl Imputer {
    pub fn new(kind: ImputerKind) -> Self {
        Self {
            kind,
            config: ImputerConfig::default(),
        }
    }

    pub fn with_config(kind: ImputerKind, config: ImputerConfig) -> Self {
        Self { kind, config }
    }

    /// Prediction for one hold-out cell.
    pub fn impute(&self, panel: &PanelMatrix, hold_out: Cell, treated: TreatedCell) -> Result<f64> {
        PreparedPanel::new(panel, treated, *self)?.impute(hold_out)
    }
}

impl From<ImputerKind> for Imputer {
    fn from(kind: ImputerKind) -> Self {
        Self::new(kind)
    }
}

pub fn impute_twfe(panel: &PanelMatrix, hold_out: Cell, treated: TreatedCell) -> Result<f64> {
    Imputer::new(ImputerKind::Twfe).impute(panel, hold_out, treated)
}

pub fn impute_sc(
    panel: &PanelMatrix,
    hold_out: Cell,
    treated: TreatedCell,
    ridge: f64,
) -> Result<f64> {
    let config = ImputerConfig {
        sc_ridge: ridge,
        ..ImputerConfig::default()
    };
    Imputer::with_config(ImputerKind::Sc, config).impute(panel, hold_out, treated)
}

pub fn impute_sdid(
    panel: &PanelMatrix,
    hold_out: Cell,
    treated: TreatedCell,
    ridge: Ridge,
) -> Result<f64> {
    let config = ImputerConfig {
        sdid_ridge: ridge,
        ..ImputerConfig::default()
    };
    Imputer::with_config(ImputerKind::Sdid, config).impute(panel, hold_out, treated)
}

/// Unit and time weights of one SDID fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SdidWeights {
    pub unit_weights: SimplexWeights,
    pub time_weights: SimplexWeights,
}

/// Weights of an SC or SDID fit with the donor rows and fitting periods they
/// refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub donors: Vec<usize>,
    pub periods: Vec<usize>,
    pub unit_weights: SimplexWeights,
    pub time_weights: Option<SimplexWeights>,
}

/// Donor rows and fitting periods for one hold-out cell.
#[derive(Debug, Clone)]
struct CellLayout {
    donors: Vec<usize>,
    periods: Vec<usize>,
    dropped_units: Vec<usize>,
    dropped_periods: Vec<usize>,
}

fn layout(n: usize, t: usize, hold_out: Cell, treated: TreatedCell) -> Result<CellLayout> {
    let mut dropped_units = vec![hold_out.unit];
    if treated.unit() != hold_out.unit {
        dropped_units.push(treated.unit());
    }
    let mut dropped_periods = vec![hold_out.period];
    if treated.period() != hold_out.period {
        dropped_periods.push(treated.period());
    }
    let donors: Vec<usize> = (0..n).filter(|j| !dropped_units.contains(j)).collect();
    let periods: Vec<usize> = (0..t).filter(|s| !dropped_periods.contains(s)).collect();
    if donors.is_empty() {
        return Err(Error::NoDonors(format!(
            "no donor units remain for hold-out {hold_out:?}"
        )));
    }
    if periods.is_empty() {
        return Err(Error::NoDonors(format!(
            "no fitting periods remain for hold-out {hold_out:?}"
        )));
    }
    Ok(CellLayout {
        donors,
        periods,
        dropped_units,
        dropped_periods,
    })
}

/// A panel prepared for many leave-out predictions with one treated cell.
///
/// The treated outcome is zeroed in the working copy, so no prediction can
/// depend on it.
#[derive(Debug, Clone)]
pub struct PreparedPanel<'a> {
    panel: &'a PanelMatrix,
    treated: TreatedCell,
    imputer: Imputer,
    work: DMatrix<f64>,
    unit_gram: Option<DMatrix<f64>>,
    time_gram: Option<DMatrix<f64>>,
}

impl<'a> PreparedPanel<'a> {
    pub fn new(panel: &'a PanelMatrix, treated: TreatedCell, imputer: Imputer) -> Result<Self> {
        panel.check_cell(treated.cell())?;
        let mut work = panel.values().clone();
        work[(treated.unit(), treated.period())] = 0.0;
        let (unit_gram, time_gram) = match imputer.kind {
            ImputerKind::Twfe => (None, None),
            ImputerKind::Sc => (Some(&work * work.transpose()), None),
            ImputerKind::Sdid => (
                Some(&work * work.transpose()),
                Some(work.transpose() * &work),
            ),
        };
        Ok(Self {
            panel,
            treated,
            imputer,
            work,
            unit_gram,
            time_gram,
        })
    }

    pub fn panel(&self) -> &PanelMatrix {
        self.panel
    }

    pub fn treated(&self) -> TreatedCell {
        self.treated
    }

    pub fn imputer(&self) -> Imputer {
        self.imputer
    }

    pub fn impute(&self, hold_out: Cell) -> Result<f64> {
        self.panel.check_cell(hold_out)?;
        match self.imputer.kind {
            ImputerKind::Twfe => self.twfe(&TwoWaySums::new(&self.work), hold_out),
            ImputerKind::Sc | ImputerKind::Sdid => {
                let fit = self.weights(hold_out, None)?;
                Ok(self.combine(hold_out, &fit))
            }
        }
    }

    /// Predictions for every period of one unit. SC and SDID unit weights
    /// are warm-started from the previous period of the same row.
    pub fn impute_row(&self, unit: usize) -> Result<Vec<f64>> {
        let t = self.panel.n_periods();
        match self.imputer.kind {
            ImputerKind::Twfe => {
                let sums = TwoWaySums::new(&self.work);
                (0..t)
                    .map(|s| self.twfe(&sums, Cell::new(unit, s)))
                    .collect()
            }
            ImputerKind::Sc | ImputerKind::Sdid => {
                let mut out = Vec::with_capacity(t);
                let mut previous: Option<SimplexWeights> = None;
                for s in 0..t {
                    let cell = Cell::new(unit, s);
                    let fit = self.weights(cell, previous.as_ref().map(|w| w.as_slice()))?;
                    out.push(self.combine(cell, &fit));
                    previous = Some(fit.unit_weights);
                }
                Ok(out)
            }
        }
    }

    fn twfe(&self, sums: &TwoWaySums<'_>, hold_out: Cell) -> Result<f64> {
        let holes: &[Cell] = if self.treated.is(hold_out) {
            &[hold_out]
        } else {
            &[hold_out, self.treated.cell()]
        };
        sums.predict(holes, hold_out)
    }

    /// Fitted weights for the hold-out cell.
    pub fn weights(&self, hold_out: Cell, warm_start: Option<&[f64]>) -> Result<WeightFit> {
        let (n, t) = self.work.shape();
        let lay = layout(n, t, hold_out, self.treated)?;
        let ridge = match self.imputer.kind {
            ImputerKind::Sc => self.imputer.config.sc_ridge,
            ImputerKind::Sdid => match self.imputer.config.sdid_ridge {
                Ridge::Fixed(r) => r,
                Ridge::Auto => auto_ridge(&self.work, &lay.donors, &lay.periods),
            },
            ImputerKind::Twfe => {
                return Err(Error::InvalidParameter(
                    "TWFE imputation has no weights".into(),
                ))
            }
        };
        let unit_problem = self.unit_problem(hold_out.unit, &lay, ridge)?;
        let unit_weights = match (self.imputer.config.solver, warm_start) {
            (SimplexSolver::ActiveSet, Some(start)) if start.len() == lay.donors.len() => {
                unit_problem.solve_active_set(Some(start))?
            }
            (solver, _) => unit_problem.solve(solver)?,
        };
        let time_weights = if self.imputer.kind == ImputerKind::Sdid {
            let time_problem = self.time_problem(hold_out.period, &lay)?;
            Some(time_problem.solve(self.imputer.config.solver)?)
        } else {
            None
        };
        Ok(WeightFit {
            donors: lay.donors,
            periods: lay.periods,
            unit_weights,
            time_weights,
        })
    }

    fn unit_problem(&self, unit: usize, lay: &CellLayout, ridge: f64) -> Result<SimplexLsProblem> {
        let g = self
            .unit_gram
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("unit Gram not prepared".into()))?;
        let y = &self.work;
        let d = &lay.donors;
        let k = d.len();
        let drop = &lay.dropped_periods;
        let mut gram = vec![0.0; k * k];
        let mut cross = vec![0.0; k];
        for a in 0..k {
            let ja = d[a];
            cross[a] = g[(ja, unit)] - drop.iter().map(|&c| y[(ja, c)] * y[(unit, c)]).sum::<f64>();
            for b in a..k {
                let jb = d[b];
                let v = g[(ja, jb)] - drop.iter().map(|&c| y[(ja, c)] * y[(jb, c)]).sum::<f64>();
                gram[a * k + b] = v;
                gram[b * k + a] = v;
            }
        }
        let target_sq = g[(unit, unit)] - drop.iter().map(|&c| y[(unit, c)].powi(2)).sum::<f64>();
        let penalty = ridge * lay.periods.len() as f64;
        SimplexLsProblem::from_gram(gram, cross, target_sq, penalty)
    }

    fn time_problem(&self, period: usize, lay: &CellLayout) -> Result<SimplexLsProblem> {
        let g = self
            .time_gram
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("time Gram not prepared".into()))?;
        let y = &self.work;
        let p = &lay.periods;
        let k = p.len();
        let drop = &lay.dropped_units;
        let mut gram = vec![0.0; k * k];
        let mut cross = vec![0.0; k];
        for a in 0..k {
            let sa = p[a];
            cross[a] = g[(sa, period)]
                - drop
                    .iter()
                    .map(|&r| y[(r, sa)] * y[(r, period)])
                    .sum::<f64>();
            for b in a..k {
                let sb = p[b];
                let v = g[(sa, sb)] - drop.iter().map(|&r| y[(r, sa)] * y[(r, sb)]).sum::<f64>();
                gram[a * k + b] = v;
                gram[b * k + a] = v;
            }
        }
        let target_sq =
            g[(period, period)] - drop.iter().map(|&r| y[(r, period)].powi(2)).sum::<f64>();
        SimplexLsProblem::from_gram(gram, cross, target_sq, 0.0)
    }

    fn combine(&self, hold_out: Cell, fit: &WeightFit) -> f64 {
        let y = &self.work;
        let (i, t) = (hold_out.unit, hold_out.period);
        let w = fit.unit_weights.as_slice();
        let synthetic: f64 = fit
            .donors
            .iter()
            .zip(w)
            .map(|(&j, wj)| wj * y[(j, t)])
            .sum();
        match &fit.time_weights {
            None => synthetic,
            Some(lambda) => {
                let l = lambda.as_slice();
                let own: f64 = fit
                    .periods
                    .iter()
                    .zip(l)
                    .map(|(&s, ls)| ls * y[(i, s)])
                    .sum();
                let cross: f64 = fit
                    .donors
                    .iter()
                    .zip(w)
                    .map(|(&j, wj)| {
                        wj * fit
                            .periods
                            .iter()
                            .zip(l)
                            .map(|(&s, ls)| ls * y[(j, s)])
                            .sum::<f64>()
                    })
                    .sum();
                synthetic + own - cross
            }
        }
    }
}

/// `sqrt(m)` times the sample variance of first differences of the donor
/// rows across the `m` fitting periods.
fn auto_ridge(y: &DMatrix<f64>, donors: &[usize], periods: &[usize]) -> f64 {
    let diffs: Vec<f64> = donors
        .iter()
        .flat_map(|&j| periods.windows(2).map(move |w| y[(j, w[1])] - y[(j, w[0])]))
        .collect();
    if diffs.len() < 2 {
        return 0.0;
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    (periods.len() as f64).sqrt() * var
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, t: usize, seed: u64) -> PanelMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PanelMatrix::from_matrix(DMatrix::from_fn(n, t, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    fn additive(a: &[f64], b: &[f64]) -> PanelMatrix {
        PanelMatrix::from_matrix(DMatrix::from_fn(a.len(), b.len(), |i, s| a[i] + b[s])).unwrap()
    }

    #[test]
    fn twfe_reproduces_additive_panel() {
        let p = additive(&[0.0, 1.0, 2.0], &[0.0, 10.0, 20.0]);
        // one-based (2,2) with treated (3,3)
        let v = impute_twfe(&p, Cell::new(1, 1), TreatedCell::unchecked(2, 2)).unwrap();
        assert_abs_diff_eq!(v, 11.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_panel_is_reproduced_by_all() {
        let p = PanelMatrix::from_matrix(DMatrix::from_element(4, 5, 3.25)).unwrap();
        let tr = TreatedCell::unchecked(3, 4);
        for kind in ImputerKind::ALL {
            let v = Imputer::new(kind).impute(&p, Cell::new(1, 2), tr).unwrap();
            assert_abs_diff_eq!(v, 3.25, epsilon = 1e-10);
            let v = Imputer::new(kind).impute(&p, tr.cell(), tr).unwrap();
            assert_abs_diff_eq!(v, 3.25, epsilon = 1e-10);
        }
    }

    #[test]
    fn twfe_matches_dummy_regression_oracle() {
        let p = gaussian(4, 4, 21);
        let hold = Cell::new(0, 0);
        let tr = TreatedCell::unchecked(3, 3);
        // dense least squares on the 14 kept cells
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for i in 0..4 {
            for s in 0..4 {
                if (i, s) == (0, 0) || (i, s) == (3, 3) {
                    continue;
                }
                let mut x = vec![0.0; 8];
                x[i] = 1.0;
                x[4 + s] = 1.0;
                rows.push(x);
                ys.push(p.value(i, s));
            }
        }
        let x = DMatrix::from_fn(rows.len(), 8, |r, c| rows[r][c]);
        let beta = x
            .svd(true, true)
            .solve(&DVector::from_vec(ys), 1e-12)
            .unwrap();
        let oracle = beta[0] + beta[4];
        let v = impute_twfe(&p, hold, tr).unwrap();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-8);
    }

    #[test]
    fn twfe_shifts_linearly_with_additive_terms() {
        let p = gaussian(5, 6, 2);
        let tr = TreatedCell::unchecked(4, 5);
        let hold = Cell::new(1, 3);
        let base = impute_twfe(&p, hold, tr).unwrap();
        let a = [0.5, -1.0, 2.0, 0.0, 3.0];
        let b = [1.0, 0.0, -2.0, 4.0, 0.25, 0.5];
        let shifted = p
            .with_values(DMatrix::from_fn(5, 6, |i, s| p.value(i, s) + a[i] + b[s]))
            .unwrap();
        let v = impute_twfe(&shifted, hold, tr).unwrap();
        assert_abs_diff_eq!(v, base + a[1] + b[3], epsilon = 1e-12);
    }

    #[test]
    fn sc_exact_duplicate_donor() {
        let mut p = gaussian(5, 6, 4).into_values();
        for s in 0..6 {
            p[(1, s)] = p[(3, s)];
        }
        let p = PanelMatrix::from_matrix(p).unwrap();
        let tr = TreatedCell::unchecked(4, 5);
        let v = impute_sc(&p, Cell::new(1, 2), tr, 0.0).unwrap();
        assert_abs_diff_eq!(v, p.value(3, 2), epsilon = 1e-9);
    }

    #[test]
    fn sc_two_units_uses_the_only_donor() {
        let p = gaussian(2, 5, 9);
        let tr = TreatedCell::unchecked(1, 4);
        // hold-out on the treated row: the single donor is unit 0
        let v = impute_sc(&p, Cell::new(1, 4), tr, 0.0).unwrap();
        assert_abs_diff_eq!(v, p.value(0, 4), epsilon = 1e-15);
        // hold-out elsewhere in the treated row
        let v = impute_sc(&p, Cell::new(1, 1), tr, 0.0).unwrap();
        assert_abs_diff_eq!(v, p.value(0, 1), epsilon = 1e-15);
    }

    #[test]
    fn sc_two_units_placebo_row_has_no_donor() {
        let p = gaussian(2, 5, 9);
        let tr = TreatedCell::unchecked(1, 4);
        assert!(matches!(
            impute_sc(&p, Cell::new(0, 1), tr, 0.0),
            Err(Error::NoDonors(_))
        ));
    }

    #[test]
    fn sc_recovers_convex_combination() {
        let mut y = gaussian(5, 6, 13).into_values();
        for s in 0..6 {
            y[(0, s)] = 0.3 * y[(2, s)] + 0.7 * y[(3, s)];
        }
        let p = PanelMatrix::from_matrix(y).unwrap();
        let tr = TreatedCell::unchecked(4, 5);
        let v = impute_sc(&p, Cell::new(0, 1), tr, 0.0).unwrap();
        assert_abs_diff_eq!(v, 0.3 * p.value(2, 1) + 0.7 * p.value(3, 1), epsilon = 1e-6);
    }

    #[test]
    fn sc_is_invariant_to_donor_order() {
        let p = gaussian(6, 7, 17);
        let tr = TreatedCell::unchecked(5, 6);
        let hold = Cell::new(0, 2);
        let base = impute_sc(&p, hold, tr, 0.0).unwrap();
        let perm = [0usize, 3, 1, 4, 2, 5];
        let q =
            PanelMatrix::from_matrix(DMatrix::from_fn(6, 7, |i, s| p.value(perm[i], s))).unwrap();
        let v = impute_sc(&q, hold, tr, 0.0).unwrap();
        assert_abs_diff_eq!(v, base, epsilon = 1e-9);
    }

    #[test]
    fn sdid_exact_on_additive_panel() {
        let p = additive(
            &[0.5, -1.0, 2.0, 3.5, 0.0],
            &[1.0, -2.0, 0.5, 4.0, 2.5, -0.5],
        );
        let tr = TreatedCell::unchecked(4, 5);
        for hold in [Cell::new(0, 0), Cell::new(2, 3), tr.cell(), Cell::new(4, 1)] {
            let v = impute_sdid(&p, hold, tr, Ridge::Auto).unwrap();
            assert_abs_diff_eq!(v, p.value(hold.unit, hold.period), epsilon = 1e-9);
        }
    }

    #[test]
    fn sdid_matches_three_sum_transcription() {
        let p = gaussian(6, 6, 31);
        let tr = TreatedCell::unchecked(5, 5);
        let imputer = Imputer::new(ImputerKind::Sdid);
        let prepared = PreparedPanel::new(&p, tr, imputer).unwrap();
        for hold in [Cell::new(0, 0), Cell::new(2, 4), tr.cell()] {
            let fit = prepared.weights(hold, None).unwrap();
            let w = fit.unit_weights.as_slice();
            let l = fit.time_weights.as_ref().unwrap().as_slice();
            let mut oracle = 0.0;
            for (a, &j) in fit.donors.iter().enumerate() {
                oracle += w[a] * p.value(j, hold.period);
            }
            for (b, &s) in fit.periods.iter().enumerate() {
                oracle += l[b] * p.value(hold.unit, s);
            }
            for (a, &j) in fit.donors.iter().enumerate() {
                for (b, &s) in fit.periods.iter().enumerate() {
                    oracle -= w[a] * l[b] * p.value(j, s);
                }
            }
            assert_abs_diff_eq!(prepared.impute(hold).unwrap(), oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn treated_outcome_is_never_read() {
        let p = gaussian(6, 7, 41);
        let tr = TreatedCell::unchecked(2, 3);
        let mut poisoned = p.values().clone();
        poisoned[(2, 3)] = 1.0e6;
        let poisoned = p.with_values(poisoned).unwrap();
        for kind in ImputerKind::ALL {
            let imp = Imputer::new(kind);
            for hold in [tr.cell(), Cell::new(2, 0), Cell::new(0, 3), Cell::new(4, 5)] {
                let a = imp.impute(&p, hold, tr).unwrap();
                let b = imp.impute(&poisoned, hold, tr).unwrap();
                assert_eq!(a, b, "{kind} at {hold:?}");
            }
        }
    }

    #[test]
    fn row_batch_matches_single_cells() {
        let p = gaussian(7, 8, 51);
        let tr = TreatedCell::unchecked(6, 7);
        for kind in ImputerKind::ALL {
            let prepared = PreparedPanel::new(&p, tr, Imputer::new(kind)).unwrap();
            for unit in [0, 6] {
                let row = prepared.impute_row(unit).unwrap();
                for (s, v) in row.iter().enumerate() {
                    let single = prepared.impute(Cell::new(unit, s)).unwrap();
                    assert_abs_diff_eq!(*v, single, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn kind_parses() {
        assert_eq!("SC".parse::<ImputerKind>().unwrap(), ImputerKind::Sc);
        assert!("lasso".parse::<ImputerKind>().is_err());
    }
}
