//! Least-squares fit of the additive model `y_it = k + a_i + b_t` on a
//! balanced grid with a handful of excluded cells.
//!
//! On a complete grid the fit is the row mean plus the column mean minus the
//! grand mean. With excluded ("hole") cells, least squares on the remaining
//! cells equals the complete-grid fit after each hole is filled with its own
//! fitted value. That fixed point is linear in the fill values, so it is
//! solved exactly as a |holes| x |holes| system instead of iterating.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::Cell;

/// Fitted additive model. Row and column effects each average to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoWayFit {
    pub intercept: f64,
    pub row_effects: Vec<f64>,
    pub col_effects: Vec<f64>,
}

impl TwoWayFit {
    pub fn fitted(&self, cell: Cell) -> f64 {
        self.intercept + self.row_effects[cell.unit] + self.col_effects[cell.period]
    }
}

/// Row, column and grand sums of a grid, precomputed so that leave-out fits
/// cost O(|holes|^2) each.
#[derive(Debug, Clone)]
pub struct TwoWaySums<'a> {
    values: &'a DMatrix<f64>,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
    total: f64,
}

impl<'a> TwoWaySums<'a> {
    pub fn new(values: &'a DMatrix<f64>) -> Self {
        let (n, t) = values.shape();
        let mut row_sums = vec![0.0; n];
        let mut col_sums = vec![0.0; t];
        for s in 0..t {
            for i in 0..n {
                let v = values[(i, s)];
                row_sums[i] += v;
                col_sums[s] += v;
            }
        }
        let total = row_sums.iter().sum();
        Self {
            values,
            row_sums,
            col_sums,
            total,
        }
    }

    fn dims(&self) -> (f64, f64) {
        (self.values.nrows() as f64, self.values.ncols() as f64)
    }

    /// Entry of the complete-grid projection between two cells.
    fn hat(&self, a: Cell, b: Cell) -> f64 {
        let (n, t) = self.dims();
        let mut h = -1.0 / (n * t);
        if a.unit == b.unit {
            h += 1.0 / t;
        }
        if a.period == b.period {
            h += 1.0 / n;
        }
        h
    }

    /// Complete-grid fit at `at` with every hole set to zero.
    fn smoothed(&self, at: Cell, holes: &[Cell]) -> f64 {
        let (n, t) = self.dims();
        let mut row = self.row_sums[at.unit];
        let mut col = self.col_sums[at.period];
        let mut total = self.total;
        for h in holes {
            let v = self.values[(h.unit, h.period)];
            if h.unit == at.unit {
                row -= v;
            }
            if h.period == at.period {
                col -= v;
            }
            total -= v;
        }
        row / t + col / n - total / (n * t)
    }

    /// Fitted values at the holes from the fit on all other cells.
    pub fn fill_holes(&self, holes: &[Cell]) -> Result<Vec<f64>> {
        let (n, t) = self.values.shape();
        if n < 2 || t < 2 {
            return Err(Error::TooSmall {
                n_units: n,
                n_periods: t,
            });
        }
        let k = holes.len();
        let mut a = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for (p, &hp) in holes.iter().enumerate() {
            rhs[p] = self.smoothed(hp, holes);
            for (q, &hq) in holes.iter().enumerate() {
                a[p * k + q] = f64::from(u8::from(p == q)) - self.hat(hp, hq);
            }
        }
        solve_small(&mut a, &mut rhs, k).ok_or_else(|| {
            Error::Unidentified(holes.iter().map(|c| (c.unit, c.period)).collect())
        })?;
        Ok(rhs)
    }

    /// Fitted value at `at` from the fit that excludes `holes`.
    pub fn predict(&self, holes: &[Cell], at: Cell) -> Result<f64> {
        let fills = self.fill_holes(holes)?;
        if let Some(p) = holes.iter().position(|&h| h == at) {
            return Ok(fills[p]);
        }
        let mut value = self.smoothed(at, holes);
        for (h, f) in holes.iter().zip(&fills) {
            value += self.hat(at, *h) * f;
        }
        Ok(value)
    }

    /// Full set of effects from the fit that excludes `holes`.
    pub fn fit(&self, holes: &[Cell]) -> Result<TwoWayFit> {
        let (n, t) = self.values.shape();
        let fills = self.fill_holes(holes)?;
        let mut row_sums = self.row_sums.clone();
        let mut col_sums = self.col_sums.clone();
        let mut total = self.total;
        for (h, f) in holes.iter().zip(&fills) {
            let delta = f - self.values[(h.unit, h.period)];
            row_sums[h.unit] += delta;
            col_sums[h.period] += delta;
            total += delta;
        }
        let grand = total / (n * t) as f64;
        Ok(TwoWayFit {
            intercept: grand,
            row_effects: row_sums.iter().map(|r| r / t as f64 - grand).collect(),
            col_effects: col_sums.iter().map(|c| c / n as f64 - grand).collect(),
        })
    }
}

/// Deduplicates hole cells, keeping first-appearance order.
pub fn distinct_cells(cells: &[Cell]) -> Vec<Cell> {
    let mut out: Vec<Cell> = Vec::with_capacity(cells.len());
    for &c in cells {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Two-way fit of `values` on every cell except `holes`.
pub fn fit_two_way(values: &DMatrix<f64>, holes: &[Cell]) -> Result<TwoWayFit> {
    TwoWaySums::new(values).fit(&distinct_cells(holes))
}

/// Gaussian elimination with partial pivoting; solution left in `rhs`.
/// Returns `None` when a pivot is negligible.
fn solve_small(a: &mut [f64], rhs: &mut [f64], k: usize) -> Option<()> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&x, &y| a[x * k + col].abs().total_cmp(&a[y * k + col].abs()))
            .unwrap_or(col);
        if a[pivot * k + col].abs() <= 1e-10 * scale {
            return None;
        }
        if pivot != col {
            for j in 0..k {
                a.swap(col * k + j, pivot * k + j);
            }
            rhs.swap(col, pivot);
        }
        for row in col + 1..k {
            let factor = a[row * k + col] / a[col * k + col];
            for j in col..k {
                a[row * k + j] -= factor * a[col * k + j];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    for col in (0..k).rev() {
        let mut acc = rhs[col];
        for j in col + 1..k {
            acc -= a[col * k + j] * rhs[j];
        }
        rhs[col] = acc / a[col * k + col];
    }
    Some(())
}
