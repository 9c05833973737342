//! Monte Carlo studies: placebo exercises with coverage, power curves and the
//! semi-synthetic pipeline.
//!
//! Each replication draws a panel from its own random stream, normalizes it,
//! picks a treated cell, computes the leave-one-out residual grid once and
//! evaluates the four variance estimators at the treated cell. Replications
//! that fail (for example a singular fit) are dropped and counted.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dgp::{
    gen_semisynthetic_with, gen_stylized_with, substream, DgpParams, Purpose, RealisticSampler,
    StylizedSpec,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::imputers::Imputer;
use crate::panel::{normalize, PanelMatrix, TreatedCell};
use crate::variance::{
    estimate_heterosk_params, residual_grid_with, variance_report_with, Dof, HeteroskParams,
    Method, VarianceOptions, VarianceReport,
};

/// Critical value used for coverage intervals.
pub const COVERAGE_Z: f64 = 1.96;

/// The four stylized heteroskedasticity designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseSpec {
    /// Homoskedastic.
    Case1,
    /// Unit heteroskedasticity only.
    Case2,
    /// Time heteroskedasticity only.
    Case3,
    /// Unit and time heteroskedasticity.
    Case4,
}

impl CaseSpec {
    pub const ALL: [CaseSpec; 4] = [
        CaseSpec::Case1,
        CaseSpec::Case2,
        CaseSpec::Case3,
        CaseSpec::Case4,
    ];

    /// `(k_nu, k_xi)`.
    pub fn dofs(self) -> (Dof, Dof) {
        match self {
            CaseSpec::Case1 => (Dof::Infinite, Dof::Infinite),
            CaseSpec::Case2 => (Dof::Finite(1.0), Dof::Infinite),
            CaseSpec::Case3 => (Dof::Infinite, Dof::Finite(1.0)),
            CaseSpec::Case4 => (Dof::Finite(1.0), Dof::Finite(1.0)),
        }
    }

    pub fn baseline(self, n_units: usize, n_periods: usize) -> Baseline {
        let (k_nu, k_xi) = self.dofs();
        Baseline::Stylized {
            n_units,
            n_periods,
            k_nu,
            k_xi,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            CaseSpec::Case1 => 1,
            CaseSpec::Case2 => 2,
            CaseSpec::Case3 => 3,
            CaseSpec::Case4 => 4,
        }
    }
}

impl FromStr for CaseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        match key.trim_start_matches("case") {
            "1" => Ok(Self::Case1),
            "2" => Ok(Self::Case2),
            "3" => Ok(Self::Case3),
            "4" => Ok(Self::Case4),
            _ => Err(Error::InvalidParameter(format!(
                "unknown case '{s}' (expected 1-4)"
            ))),
        }
    }
}

/// Where simulated panels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Stylized {
        n_units: usize,
        n_periods: usize,
        k_nu: Dof,
        k_xi: Dof,
    },
    Semisynthetic {
        params: HeteroskParams,
        n_units: usize,
        n_periods: usize,
    },
    Realistic(DgpParams),
}

impl Baseline {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Baseline::Stylized {
                n_units, n_periods, ..
            }
            | Baseline::Semisynthetic {
                n_units, n_periods, ..
            } => (*n_units, *n_periods),
            Baseline::Realistic(p) => (p.n_units(), p.n_periods()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Baseline::Stylized {
                n_units,
                n_periods,
                k_nu,
                k_xi,
            } => format!("stylized N={n_units} T={n_periods} k_nu={k_nu} k_xi={k_xi}"),
            Baseline::Semisynthetic {
                params,
                n_units,
                n_periods,
            } => format!(
                "semisynthetic N={n_units} T={n_periods} k_nu={} k_xi={}",
                params.k_nu, params.k_xi
            ),
            Baseline::Realistic(p) => format!(
                "realistic N={} T={} rank={} ar=({}, {})",
                p.n_units(),
                p.n_periods(),
                p.rank,
                p.ar_coef.0,
                p.ar_coef.1
            ),
        }
    }

    fn prepare(&self) -> Result<PreparedBaseline<'_>> {
        match self {
            Baseline::Stylized {
                n_units,
                n_periods,
                k_nu,
                k_xi,
            } => {
                let spec = StylizedSpec::new(*n_units, *n_periods, *k_nu, *k_xi, 0);
                spec.validate()?;
                Ok(PreparedBaseline::Stylized(spec))
            }
            Baseline::Semisynthetic {
                params,
                n_units,
                n_periods,
            } => {
                params.validate()?;
                Ok(PreparedBaseline::Semisynthetic(
                    *params, *n_units, *n_periods,
                ))
            }
            Baseline::Realistic(p) => {
                p.validate()?;
                Ok(PreparedBaseline::Realistic(p, RealisticSampler::new(p)?))
            }
        }
    }
}

enum PreparedBaseline<'a> {
    Stylized(StylizedSpec),
    Semisynthetic(HeteroskParams, usize, usize),
    Realistic(&'a DgpParams, RealisticSampler),
}

impl PreparedBaseline<'_> {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PanelMatrix> {
        match self {
            PreparedBaseline::Stylized(spec) => Ok(gen_stylized_with(spec, rng)?.panel),
            PreparedBaseline::Semisynthetic(h, n, t) => gen_semisynthetic_with(h, *n, *t, rng),
            PreparedBaseline::Realistic(p, sampler) => sampler.draw(p, rng),
        }
    }

    fn params(&self) -> Option<&DgpParams> {
        match self {
            PreparedBaseline::Realistic(p, _) => Some(p),
            _ => None,
        }
    }
}

/// How the treated cell is chosen in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatedSampling {
    /// Unit and period uniform at random.
    #[default]
    Uniform,
    /// Unit proportional to the calibrated propensity `pi` (realistic
    /// baselines only), period uniform.
    Propensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub imputer: Imputer,
    pub reps: usize,
    pub seed: u64,
    pub execution: Execution,
    pub sampling: TreatedSampling,
    pub variance: VarianceOptions,
    /// Normalize each simulated panel to grand mean 0, sd 1 before use.
    pub normalize: bool,
}

impl StudyConfig {
    pub fn new(imputer: impl Into<Imputer>, reps: usize, seed: u64) -> Self {
        Self {
            imputer: imputer.into(),
            reps,
            seed,
            execution: Execution::default(),
            sampling: TreatedSampling::default(),
            variance: VarianceOptions::default(),
            normalize: true,
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

/// One value per variance method.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerMethod<T> {
    #[serde(rename = "UP")]
    pub up: T,
    #[serde(rename = "TP")]
    pub tp: T,
    #[serde(rename = "M")]
    pub m: T,
    #[serde(rename = "C")]
    pub c: T,
}

impl<T> PerMethod<T> {
    pub fn from_fn(mut f: impl FnMut(Method) -> T) -> Self {
        Self {
            up: f(Method::Up),
            tp: f(Method::Tp),
            m: f(Method::M),
            c: f(Method::C),
        }
    }
}

impl<T: Copy> PerMethod<T> {
    pub fn get(&self, method: Method) -> T {
        match method {
            Method::Up => self.up,
            Method::Tp => self.tp,
            Method::M => self.m,
            Method::C => self.c,
        }
    }
}

/// One placebo replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaceboRecord {
    pub rep: usize,
    pub treated_unit: usize,
    pub treated_period: usize,
    /// Simulated untreated outcome at the treated cell.
    pub true_y0: f64,
    /// Imputation error `Y(0) - Y_hat(0)`; no effect is imposed.
    pub tau_hat: f64,
    pub se_up: f64,
    pub se_tp: f64,
    pub se_m: f64,
    pub se_c: f64,
}

impl PlaceboRecord {
    pub fn se(&self, method: Method) -> f64 {
        match method {
            Method::Up => self.se_up,
            Method::Tp => self.se_tp,
            Method::M => self.se_m,
            Method::C => self.se_c,
        }
    }

    pub fn covered(&self, method: Method) -> bool {
        self.tau_hat.abs() <= COVERAGE_Z * self.se(method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean_se: f64,
    pub sd_se: f64,
    pub mean_se2: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboSummary {
    pub reps: usize,
    pub failures: usize,
    pub sd_tau_hat: f64,
    pub methods: PerMethod<MethodSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboResult {
    pub baseline: String,
    pub imputer: Imputer,
    pub seed: u64,
    pub records: Vec<PlaceboRecord>,
    pub failures: usize,
    pub summary: PlaceboSummary,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Summary statistics recomputed from records.
pub fn summarize(records: &[PlaceboRecord], failures: usize) -> PlaceboSummary {
    let taus: Vec<f64> = records.iter().map(|r| r.tau_hat).collect();
    let methods = PerMethod::from_fn(|method| {
        let se: Vec<f64> = records.iter().map(|r| r.se(method)).collect();
        let se2: Vec<f64> = se.iter().map(|s| s * s).collect();
        MethodSummary {
            mean_se: mean(&se),
            sd_se: sample_sd(&se),
            mean_se2: mean(&se2),
            coverage: coverage_rate(records, method),
        }
    });
    PlaceboSummary {
        reps: records.len(),
        failures,
        sd_tau_hat: sample_sd(&taus),
        methods,
    }
}

fn coverage_rate(records: &[PlaceboRecord], method: Method) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    records.iter().filter(|r| r.covered(method)).count() as f64 / records.len() as f64
}

/// Coverage per method, recomputed from the per-replication records.
pub fn coverage_summary(result: &PlaceboResult) -> PerMethod<f64> {
    PerMethod::from_fn(|m| coverage_rate(&result.records, m))
}

/// Panel, treated cell and variance report for one replication.
struct Replication {
    rep: usize,
    panel: PanelMatrix,
    treated: TreatedCell,
    tau_hat: f64,
    report: VarianceReport,
}

fn run_replication(
    baseline: &PreparedBaseline<'_>,
    config: &StudyConfig,
    rep: usize,
) -> Result<Replication> {
    let mut rng = substream(config.seed, rep as u64, Purpose::Panel);
    let mut panel = baseline.draw(&mut rng)?;
    if config.normalize {
        panel = normalize(&panel)?.0;
    }
    let mut trng = substream(config.seed, rep as u64, Purpose::Treated);
    let treated = match (config.sampling, baseline.params()) {
        (TreatedSampling::Propensity, Some(p)) => p.sample_treated_by_pi(&mut trng)?,
        (TreatedSampling::Propensity, None) => {
            return Err(Error::InvalidParameter(
                "propensity sampling needs a realistic baseline".into(),
            ))
        }
        (TreatedSampling::Uniform, _) => TreatedCell::unchecked(
            trng.random_range(0..panel.n_units()),
            trng.random_range(0..panel.n_periods()),
        ),
    };
    // replications already run in parallel; each grid runs sequentially
    let inner = if config.execution.is_parallel() && config.reps > 1 {
        Execution::Sequential
    } else {
        config.execution
    };
    let res = residual_grid_with(&panel, treated, config.imputer, inner)?;
    let report = variance_report_with(&res, &config.variance)?;
    Ok(Replication {
        rep,
        tau_hat: res.tau_hat(),
        panel,
        treated,
        report,
    })
}

fn run_all(baseline: &Baseline, config: &StudyConfig) -> Result<(Vec<Replication>, usize)> {
    if config.reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let prepared = baseline.prepare()?;
    let outcomes = config
        .execution
        .map(config.reps, |rep| run_replication(&prepared, config, rep));
    let mut ok = Vec::with_capacity(config.reps);
    let mut failures = 0;
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::warn!("replication {rep} failed: {e}");
                failures += 1;
            }
        }
    }
    Ok((ok, failures))
}

/// Placebo exercise: no effect is imposed, so the point estimate is the
/// imputation error at the treated cell.
pub fn placebo_study(baseline: &Baseline, config: &StudyConfig) -> Result<PlaceboResult> {
    let (reps, failures) = run_all(baseline, config)?;
    let records: Vec<PlaceboRecord> = reps
        .iter()
        .map(|r| PlaceboRecord {
            rep: r.rep,
            treated_unit: r.treated.unit(),
            treated_period: r.treated.period(),
            true_y0: r.panel.value(r.treated.unit(), r.treated.period()),
            tau_hat: r.tau_hat,
            se_up: r.report.se_up,
            se_tp: r.report.se_tp,
            se_m: r.report.se_m,
            se_c: r.report.se_c,
        })
        .collect();
    let summary = summarize(&records, failures);
    Ok(PlaceboResult {
        baseline: baseline.describe(),
        imputer: config.imputer,
        seed: config.seed,
        records,
        failures,
        summary,
    })
}

impl PlaceboResult {
    pub const RECORD_HEADER: [&'static str; 9] = [
        "rep",
        "treated_unit",
        "treated_period",
        "true_y0",
        "tau_hat",
        "se_up",
        "se_tp",
        "se_m",
        "se_c",
    ];

    /// Columns of the one-row summary: SD of the estimate, then mean SE,
    /// SD of the SE and coverage for each method in table order.
    pub fn summary_header() -> Vec<String> {
        let mut h = vec!["reps".to_string(), "failures".into(), "sd_tau_hat".into()];
        for prefix in ["mean_se", "sd_se", "coverage"] {
            for m in Method::ALL {
                h.push(format!("{prefix}_{}", m.as_str().to_ascii_lowercase()));
            }
        }
        h
    }

    pub fn write_records_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::RECORD_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.rep.to_string(),
                r.treated_unit.to_string(),
                r.treated_period.to_string(),
                r.true_y0.to_string(),
                r.tau_hat.to_string(),
                r.se_up.to_string(),
                r.se_tp.to_string(),
                r.se_m.to_string(),
                r.se_c.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::summary_header())?;
        let s = &self.summary;
        let mut row = vec![
            s.reps.to_string(),
            s.failures.to_string(),
            s.sd_tau_hat.to_string(),
        ];
        for field in [
            |m: MethodSummary| m.mean_se,
            |m: MethodSummary| m.sd_se,
            |m: MethodSummary| m.coverage,
        ] {
            for m in Method::ALL {
                row.push(field(s.methods.get(m)).to_string());
            }
        }
        w.write_record(row)?;
        w.flush()?;
        Ok(())
    }
}

/// Evenly spaced grid of imposed effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauGrid(Vec<f64>);

impl TauGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("tau grid is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "tau grid must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        match n {
            0 => Self::new(Vec::new()),
            1 => Self::new(vec![lo]),
            _ => Self::new(
                (0..n)
                    .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
                    .collect(),
            ),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl Default for TauGrid {
    /// 25 points on `[-3, 3]`.
    fn default() -> Self {
        Self::linspace(-3.0, 3.0, 25).expect("valid default grid")
    }
}

impl FromStr for TauGrid {
    type Err = Error;

    /// Parses `lo:hi:n`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidParameter(format!("grid '{s}' is not lo:hi:n"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        Self::linspace(lo, hi, n)
    }
}

impl fmt::Display for TauGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = &self.0;
        write!(f, "{}:{}:{}", v[0], v[v.len() - 1], v.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub method: Method,
    pub tau: f64,
    pub power: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub baseline: String,
    pub imputer: Imputer,
    pub seed: u64,
    pub alpha: f64,
    pub critical_value: f64,
    pub tau_grid: Vec<f64>,
    pub reps: usize,
    pub failures: usize,
    /// Rejection rate per method at each grid point.
    pub power: PerMethod<Vec<f64>>,
}

impl PowerCurve {
    pub const CSV_HEADER: [&'static str; 4] = ["method", "tau", "power", "mc_se"];

    pub fn mc_se(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.reps as f64).sqrt()
    }

    /// Rejection rate of `method` at grid index `k`.
    pub fn rate(&self, method: Method, k: usize) -> f64 {
        self.series(method)[k]
    }

    pub fn series(&self, method: Method) -> &[f64] {
        match method {
            Method::Up => &self.power.up,
            Method::Tp => &self.power.tp,
            Method::M => &self.power.m,
            Method::C => &self.power.c,
        }
    }

    /// Grid index of the point closest to `tau`.
    pub fn index_of(&self, tau: f64) -> usize {
        let mut best = 0;
        for (k, t) in self.tau_grid.iter().enumerate() {
            if (t - tau).abs() < (self.tau_grid[best] - tau).abs() {
                best = k;
            }
        }
        best
    }

    /// Tidy rows, method-major in table order.
    pub fn points(&self) -> Vec<PowerPoint> {
        Method::ALL
            .iter()
            .flat_map(|&method| {
                self.tau_grid.iter().enumerate().map(move |(k, &tau)| {
                    let power = self.rate(method, k);
                    PowerPoint {
                        method,
                        tau,
                        power,
                        mc_se: self.mc_se(power),
                    }
                })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for p in self.points() {
            w.write_record([
                p.method.to_string(),
                p.tau.to_string(),
                p.power.to_string(),
                p.mc_se.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Two-sided normal critical value `z_{1 - alpha/2}`.
pub fn critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// Rejection rates of `H0: tau = 0` over a grid of imposed effects.
///
/// The residual grid does not depend on the treated outcome, so each
/// replication is estimated once and `tau_hat(tau) = tau_hat(0) + tau`. The
/// base draws depend only on `(seed, rep)`, so every grid point and every
/// grid share them.
pub fn power_curve(
    baseline: &Baseline,
    config: &StudyConfig,
    grid: &TauGrid,
    alpha: f64,
) -> Result<PowerCurve> {
    let z = critical_value(alpha)?;
    let (reps, failures) = run_all(baseline, config)?;
    let ok = reps.len();
    let taus = grid.values();
    let power = PerMethod::from_fn(|method| {
        taus.iter()
            .map(|&tau| {
                if ok == 0 {
                    return f64::NAN;
                }
                let rejections = reps
                    .iter()
                    .filter(|r| (r.tau_hat + tau).abs() > z * r.report.se(method))
                    .count();
                rejections as f64 / ok as f64
            })
            .collect::<Vec<f64>>()
    });
    Ok(PowerCurve {
        baseline: baseline.describe(),
        imputer: config.imputer,
        seed: config.seed,
        alpha,
        critical_value: z,
        tau_grid: taus.to_vec(),
        reps: ok,
        failures,
        power,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemisyntheticResult {
    pub heterosk: HeteroskParams,
    pub curve: PowerCurve,
}

/// Calibrates chi-squared dof on the residuals of `panel` at `treated`, then
/// runs a power curve on the calibrated stylized DGP at the panel's size.
pub fn semisynthetic_study(
    panel: &PanelMatrix,
    treated: TreatedCell,
    config: &StudyConfig,
    grid: &TauGrid,
    alpha: f64,
) -> Result<SemisyntheticResult> {
    let res = residual_grid_with(panel, treated, config.imputer, config.execution)?;
    let heterosk = estimate_heterosk_params(&res)?;
    let baseline = Baseline::Semisynthetic {
        params: heterosk,
        n_units: panel.n_units(),
        n_periods: panel.n_periods(),
    };
    let curve = power_curve(&baseline, config, grid, alpha)?;
    Ok(SemisyntheticResult { heterosk, curve })
}
