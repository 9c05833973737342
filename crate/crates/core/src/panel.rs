//! Balanced panels, the treated cell, and CSV ingestion.
//!
//! Two on-disk layouts are supported. The wide layout has a `unit` column
//! followed by one column per period label, one row per unit. The long layout
//! has exactly the headers `unit,period,value`, one row per cell. Labels are
//! kept as opaque strings and all computation uses integer indices.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A (unit, period) index pair, zero based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub unit: usize,
    pub period: usize,
}

impl Cell {
    pub const fn new(unit: usize, period: usize) -> Self {
        Self { unit, period }
    }
}

impl From<(usize, usize)> for Cell {
    fn from((unit, period): (usize, usize)) -> Self {
        Self { unit, period }
    }
}

/// The single exposed (unit, period) pair. Every other cell is a control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreatedCell(Cell);

impl TreatedCell {
    /// Builds a treated cell after checking it lies inside `panel`.
    pub fn new(panel: &PanelMatrix, unit: usize, period: usize) -> Result<Self> {
        panel.check_cell(Cell::new(unit, period))?;
        Ok(Self(Cell::new(unit, period)))
    }

    /// Builds a treated cell without a bounds check.
    pub const fn unchecked(unit: usize, period: usize) -> Self {
        Self(Cell::new(unit, period))
    }

    pub fn cell(&self) -> Cell {
        self.0
    }

    pub fn unit(&self) -> usize {
        self.0.unit
    }

    pub fn period(&self) -> usize {
        self.0.period
    }

    pub fn is(&self, cell: Cell) -> bool {
        self.0 == cell
    }
}

/// On-disk CSV layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PanelFormat {
    #[default]
    Wide,
    Long,
}

impl FromStr for PanelFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wide" => Ok(Self::Wide),
            "long" => Ok(Self::Long),
            other => Err(Error::InvalidParameter(format!(
                "unknown panel format '{other}' (expected wide or long)"
            ))),
        }
    }
}

/// Dense N x T grid of outcomes with unit and period labels.
///
/// Immutable after construction: N >= 2, T >= 2 and every value finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelMatrix {
    values: DMatrix<f64>,
    unit_labels: Vec<String>,
    period_labels: Vec<String>,
}

impl PanelMatrix {
    pub fn new(
        values: DMatrix<f64>,
        unit_labels: Vec<String>,
        period_labels: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = values.shape();
        if n < 2 || t < 2 {
            return Err(Error::TooSmall {
                n_units: n,
                n_periods: t,
            });
        }
        if unit_labels.len() != n || period_labels.len() != t {
            return Err(Error::Shape(format!(
                "{}x{} values with {} unit labels and {} period labels",
                n,
                t,
                unit_labels.len(),
                period_labels.len()
            )));
        }
        for i in 0..n {
            for s in 0..t {
                if !values[(i, s)].is_finite() {
                    return Err(Error::NonFinite { unit: i, period: s });
                }
            }
        }
        Ok(Self {
            values,
            unit_labels,
            period_labels,
        })
    }

    /// Panel with default labels `u1..uN` and `1..T`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let (n, t) = values.shape();
        let units = (1..=n).map(|i| format!("u{i}")).collect();
        let periods = (1..=t).map(|s| s.to_string()).collect();
        Self::new(values, units, periods)
    }

    /// Panel from row-major nested vectors with default labels.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, t, |i, s| rows[i][s]))
    }

    pub fn n_units(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn value(&self, unit: usize, period: usize) -> f64 {
        self.values[(unit, period)]
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Same labels, new values of identical shape.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, self.unit_labels.clone(), self.period_labels.clone())
    }

    pub fn check_cell(&self, cell: Cell) -> Result<()> {
        if cell.unit >= self.n_units() || cell.period >= self.n_periods() {
            return Err(Error::CellOutOfRange {
                unit: cell.unit,
                period: cell.period,
                n_units: self.n_units(),
                n_periods: self.n_periods(),
            });
        }
        Ok(())
    }

    pub fn unit_index(&self, label: &str) -> Result<usize> {
        lookup(&self.unit_labels, label, "unit")
    }

    pub fn period_index(&self, label: &str) -> Result<usize> {
        lookup(&self.period_labels, label, "period")
    }

    /// Swaps the roles of units and periods.
    pub fn transpose(&self) -> Self {
        Self {
            values: self.values.transpose(),
            unit_labels: self.period_labels.clone(),
            period_labels: self.unit_labels.clone(),
        }
    }

    /// Keeps periods up to and including `last_period`, discarding the rest.
    pub fn truncate_at(&self, last_period: &str) -> Result<Self> {
        let keep = self.period_index(last_period)? + 1;
        Self::new(
            self.values.columns(0, keep).into_owned(),
            self.unit_labels.clone(),
            self.period_labels[..keep].to_vec(),
        )
    }

    pub fn load(path: impl AsRef<Path>, format: PanelFormat) -> Result<Self> {
        let file = File::open(path)?;
        Self::read(file, format)
    }

    pub fn read<R: Read>(reader: R, format: PanelFormat) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        match format {
            PanelFormat::Wide => read_wide(&mut rdr),
            PanelFormat::Long => read_long(&mut rdr),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: PanelFormat) -> Result<()> {
        let file = File::create(path)?;
        self.write(file, format)
    }

    pub fn write<W: Write>(&self, writer: W, format: PanelFormat) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        match format {
            PanelFormat::Wide => {
                let mut header = vec!["unit".to_string()];
                header.extend(self.period_labels.iter().cloned());
                wtr.write_record(&header)?;
                for (i, label) in self.unit_labels.iter().enumerate() {
                    let mut row = vec![label.clone()];
                    row.extend((0..self.n_periods()).map(|s| self.values[(i, s)].to_string()));
                    wtr.write_record(&row)?;
                }
            }
            PanelFormat::Long => {
                wtr.write_record(["unit", "period", "value"])?;
                for (i, unit) in self.unit_labels.iter().enumerate() {
                    for (s, period) in self.period_labels.iter().enumerate() {
                        wtr.write_record([
                            unit.as_str(),
                            period.as_str(),
                            &self.values[(i, s)].to_string(),
                        ])?;
                    }
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn lookup(labels: &[String], label: &str, kind: &'static str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::UnknownLabel {
            kind,
            label: label.to_string(),
            available: labels.join(","),
        })
}

fn parse_value(raw: &str, line: u64) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("non-numeric value '{raw}'"),
    })
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn read_wide<R: Read>(rdr: &mut csv::Reader<R>) -> Result<PanelMatrix> {
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "unit" {
        return Err(Error::Parse {
            line: 1,
            message: "wide format needs a header starting with 'unit' followed by period labels"
                .into(),
        });
    }
    let period_labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let t = period_labels.len();
    let mut unit_labels = Vec::new();
    let mut data = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != t + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", t + 1, record.len()),
            });
        }
        unit_labels.push(record[0].to_string());
        for raw in record.iter().skip(1) {
            data.push(parse_value(raw, line)?);
        }
    }
    let n = unit_labels.len();
    PanelMatrix::new(
        DMatrix::from_row_slice(n, t, &data),
        unit_labels,
        period_labels,
    )
}

fn read_long<R: Read>(rdr: &mut csv::Reader<R>) -> Result<PanelMatrix> {
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["unit", "period", "value"] {
        return Err(Error::Parse {
            line: 1,
            message: "long format needs exactly the headers unit,period,value".into(),
        });
    }
    let mut unit_labels: Vec<String> = Vec::new();
    let mut period_labels: Vec<String> = Vec::new();
    let mut unit_pos: HashMap<String, usize> = HashMap::new();
    let mut period_pos: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let value = parse_value(&record[2], line)?;
        let i = *unit_pos.entry(record[0].to_string()).or_insert_with(|| {
            unit_labels.push(record[0].to_string());
            unit_labels.len() - 1
        });
        let s = *period_pos.entry(record[1].to_string()).or_insert_with(|| {
            period_labels.push(record[1].to_string());
            period_labels.len() - 1
        });
        if cells.insert((i, s), value).is_some() {
            return Err(Error::DuplicateCell {
                unit: record[0].to_string(),
                period: record[1].to_string(),
                line,
            });
        }
    }
    let (n, t) = (unit_labels.len(), period_labels.len());
    let mut values = DMatrix::zeros(n, t);
    for i in 0..n {
        for s in 0..t {
            match cells.get(&(i, s)) {
                Some(&v) => values[(i, s)] = v,
                None => {
                    return Err(Error::MissingCell {
                        unit: unit_labels[i].clone(),
                        period: period_labels[s].clone(),
                    })
                }
            }
        }
    }
    PanelMatrix::new(values, unit_labels, period_labels)
}

/// Affine map taking raw outcomes to the grand-mean-zero, unit-sd scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub sd: f64,
}

impl Normalization {
    pub const IDENTITY: Self = Self { mean: 0.0, sd: 1.0 };

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.sd
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }

    pub fn denormalize(&self, panel: &PanelMatrix) -> Result<PanelMatrix> {
        panel.with_values(panel.values().map(|z| self.invert(z)))
    }
}

/// Grand mean and population (divide by NT) standard deviation of a grid.
pub fn grand_moments(values: &DMatrix<f64>) -> (f64, f64) {
    let count = values.len() as f64;
    let mean = values.sum() / count;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / count).sqrt())
}

/// Rescales a grid in place to grand mean 0 and population sd 1.
pub fn normalize_values(values: &mut DMatrix<f64>) -> Result<Normalization> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if min == max {
        return Err(Error::Degenerate(
            "cannot normalize a constant panel (sd = 0)".into(),
        ));
    }
    let (mean, sd) = grand_moments(values);
    if sd <= 0.0 || !sd.is_finite() {
        return Err(Error::Degenerate(format!("panel sd is {sd}")));
    }
    let norm = Normalization { mean, sd };
    values.apply(|v| *v = norm.apply(*v));
    Ok(norm)
}

/// Returns the normalized panel together with the transform that undoes it.
pub fn normalize(panel: &PanelMatrix) -> Result<(PanelMatrix, Normalization)> {
    let mut values = panel.values().clone();
    let norm = normalize_values(&mut values)?;
    Ok((panel.with_values(values)?, norm))
}
