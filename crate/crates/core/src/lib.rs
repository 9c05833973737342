//! Counterfactual imputation and variance estimation for panels with a single
//! treated (unit, period) cell.
//!
//! The crate covers three imputers (two-way fixed effects, synthetic control,
//! synthetic difference-in-differences), leave-one-out residuals, four
//! variance estimators (marginal, unit placebo, time placebo, conditional),
//! the data-generating processes used to study them, and Monte Carlo drivers
//! for placebo, coverage and power studies.

pub mod dgp;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod imputers;
pub mod panel;
pub mod simplex;
pub mod twoway;
pub mod variance;

pub use error::{Error, Result};
pub use exec::Execution;
pub use panel::{normalize, Cell, Normalization, PanelFormat, PanelMatrix, TreatedCell};
