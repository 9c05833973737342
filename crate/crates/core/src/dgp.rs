//! Data-generating processes.
//!
//! * Stylized: `Y_it = eta_it * sqrt(exp(nu_i) * exp(xi_t))` with standard
//!   normal `eta` and mean-one rescaled chi-squared multipliers.
//! * Semi-synthetic: the stylized model with dof calibrated on a real panel,
//!   normalized to grand mean 0 and sd 1.
//! * Realistic: a rank-`r` signal split into additive (`F`) and interactive
//!   (`M`) parts plus AR(2) Gaussian noise with unit and time variance
//!   multipliers, all calibrated on a real panel.
//!
//! Every draw comes from a ChaCha stream derived from `(seed, replication,
//! purpose)`, so results do not depend on scheduling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{normalize, normalize_values, PanelMatrix};
use crate::variance::{
    population_variance, variance_multipliers, Dof, HeteroskParams, ResidualGrid,
};
use crate::TreatedCell;

/// What a random stream is used for within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Panel = 0,
    Treated = 1,
}

/// Independent stream for `(seed, replication, purpose)`.
pub fn substream(seed: u64, replication: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication.wrapping_mul(8).wrapping_add(purpose as u64));
    rng
}

/// `n` i.i.d. draws of `chi2(k) / k`, or ones for infinite dof.
pub fn draw_multipliers<R: Rng + ?Sized>(dof: Dof, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    dof.validate()?;
    match dof {
        Dof::Infinite => Ok(vec![1.0; n]),
        Dof::Finite(k) => {
            let chi = ChiSquared::new(k)
                .map_err(|e| Error::InvalidParameter(format!("chi-squared dof {k}: {e}")))?;
            Ok((0..n).map(|_| chi.sample(rng) / k).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StylizedSpec {
    pub n_units: usize,
    pub n_periods: usize,
    pub k_nu: Dof,
    pub k_xi: Dof,
    pub seed: u64,
}

impl StylizedSpec {
    pub fn new(n_units: usize, n_periods: usize, k_nu: Dof, k_xi: Dof, seed: u64) -> Self {
        Self {
            n_units,
            n_periods,
            k_nu,
            k_xi,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 || self.n_periods < 2 {
            return Err(Error::TooSmall {
                n_units: self.n_units,
                n_periods: self.n_periods,
            });
        }
        self.k_nu.validate()?;
        self.k_xi.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StylizedDraw {
    pub panel: PanelMatrix,
    pub exp_nu: Vec<f64>,
    pub exp_xi: Vec<f64>,
    /// `sigma2[(i, t)] = exp_nu[i] * exp_xi[t]`.
    pub sigma2: DMatrix<f64>,
}

pub fn gen_stylized(spec: &StylizedSpec) -> Result<StylizedDraw> {
    gen_stylized_with(spec, &mut substream(spec.seed, 0, Purpose::Panel))
}

/// Stylized draw from an explicit stream; `spec.seed` is ignored.
pub fn gen_stylized_with<R: Rng + ?Sized>(
    spec: &StylizedSpec,
    rng: &mut R,
) -> Result<StylizedDraw> {
    spec.validate()?;
    let (n, t) = (spec.n_units, spec.n_periods);
    let exp_nu = draw_multipliers(spec.k_nu, n, rng)?;
    let exp_xi = draw_multipliers(spec.k_xi, t, rng)?;
    let sigma2 = DMatrix::from_fn(n, t, |i, s| exp_nu[i] * exp_xi[s]);
    let mut values = DMatrix::zeros(n, t);
    for i in 0..n {
        for s in 0..t {
            let eta: f64 = rng.sample(StandardNormal);
            values[(i, s)] = eta * sigma2[(i, s)].sqrt();
        }
    }
    Ok(StylizedDraw {
        panel: PanelMatrix::from_matrix(values)?,
        exp_nu,
        exp_xi,
        sigma2,
    })
}

/// Stylized panel with dof taken from calibrated parameters, normalized to
/// grand mean 0 and sd 1.
pub fn gen_semisynthetic(
    params: &HeteroskParams,
    n: usize,
    t: usize,
    seed: u64,
) -> Result<PanelMatrix> {
    gen_semisynthetic_with(params, n, t, &mut substream(seed, 0, Purpose::Panel))
}

pub fn gen_semisynthetic_with<R: Rng + ?Sized>(
    params: &HeteroskParams,
    n: usize,
    t: usize,
    rng: &mut R,
) -> Result<PanelMatrix> {
    params.validate()?;
    let spec = StylizedSpec::new(n, t, params.k_nu, params.k_xi, 0);
    let draw = gen_stylized_with(&spec, rng)?;
    Ok(normalize(&draw.panel)?.0)
}

/// True when `(rho1, rho2)` lies strictly inside the AR(2) stationarity
/// triangle.
pub fn is_stationary(rho: (f64, f64)) -> bool {
    let (r1, r2) = rho;
    r2.abs() < 1.0 && r2 + r1 < 1.0 && r2 - r1 < 1.0
}

/// Stationary AR(2) autocorrelation matrix (symmetric Toeplitz, unit
/// diagonal).
pub fn ar2_correlation_matrix(rho: (f64, f64), t: usize) -> Result<DMatrix<f64>> {
    if !is_stationary(rho) || !rho.0.is_finite() || !rho.1.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "AR(2) coefficients ({}, {}) are not stationary",
            rho.0, rho.1
        )));
    }
    let (r1, r2) = rho;
    let mut acf = vec![1.0; t.max(1)];
    if t > 1 {
        acf[1] = r1 / (1.0 - r2);
    }
    for k in 2..t {
        acf[k] = r1 * acf[k - 1] + r2 * acf[k - 2];
    }
    Ok(DMatrix::from_fn(t, t, |a, b| acf[a.abs_diff(b)]))
}

/// Calibrated parameters of the realistic DGP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DgpParamsJson", try_from = "DgpParamsJson")]
pub struct DgpParams {
    pub rank: usize,
    /// Additive part of the low-rank signal.
    pub f: DMatrix<f64>,
    /// Interactive part of the low-rank signal.
    pub m: DMatrix<f64>,
    pub ar_coef: (f64, f64),
    pub sigma: DMatrix<f64>,
    pub unit_var: Vec<f64>,
    pub time_var: Vec<f64>,
    pub pi: Vec<f64>,
    /// Overall noise variance; 0 generates `F + M` exactly.
    pub noise_var: f64,
}

#[derive(Serialize, Deserialize)]
struct DgpParamsJson {
    n_units: usize,
    n_periods: usize,
    rank: usize,
    f: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    ar_coef: [f64; 2],
    sigma: Vec<Vec<f64>>,
    unit_var: Vec<f64>,
    time_var: Vec<f64>,
    pi: Vec<f64>,
    noise_var: f64,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], n: usize, t: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != t) {
        return Err(Error::Shape(format!("{name} must be {n}x{t}")));
    }
    Ok(DMatrix::from_fn(n, t, |i, s| rows[i][s]))
}

impl From<DgpParams> for DgpParamsJson {
    fn from(p: DgpParams) -> Self {
        Self {
            n_units: p.f.nrows(),
            n_periods: p.f.ncols(),
            rank: p.rank,
            f: rows_of(&p.f),
            m: rows_of(&p.m),
            ar_coef: [p.ar_coef.0, p.ar_coef.1],
            sigma: rows_of(&p.sigma),
            unit_var: p.unit_var,
            time_var: p.time_var,
            pi: p.pi,
            noise_var: p.noise_var,
        }
    }
}

impl TryFrom<DgpParamsJson> for DgpParams {
    type Error = Error;

    fn try_from(j: DgpParamsJson) -> Result<Self> {
        let (n, t) = (j.n_units, j.n_periods);
        let p = DgpParams {
            rank: j.rank,
            f: matrix_of(&j.f, n, t, "f")?,
            m: matrix_of(&j.m, n, t, "m")?,
            ar_coef: (j.ar_coef[0], j.ar_coef[1]),
            sigma: matrix_of(&j.sigma, t, t, "sigma")?,
            unit_var: j.unit_var,
            time_var: j.time_var,
            pi: j.pi,
            noise_var: j.noise_var,
        };
        p.validate()?;
        Ok(p)
    }
}

impl DgpParams {
    pub fn n_units(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.f.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, t) = (self.n_units(), self.n_periods());
        if n < 2 || t < 2 {
            return Err(Error::TooSmall {
                n_units: n,
                n_periods: t,
            });
        }
        if self.m.shape() != (n, t)
            || self.sigma.shape() != (t, t)
            || self.unit_var.len() != n
            || self.time_var.len() != t
            || self.pi.len() != n
        {
            return Err(Error::Shape("DGP parameter dimensions disagree".into()));
        }
        if self.f.iter().chain(self.m.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("F and M must be finite".into()));
        }
        for a in 0..t {
            if (self.sigma[(a, a)] - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(
                    "Sigma must have unit diagonal".into(),
                ));
            }
            for b in 0..a {
                if (self.sigma[(a, b)] - self.sigma[(b, a)]).abs() > 1e-12 {
                    return Err(Error::InvalidParameter("Sigma must be symmetric".into()));
                }
            }
        }
        for (name, v) in [("unit_var", &self.unit_var), ("time_var", &self.time_var)] {
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            if (mean - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must average 1, got {mean}"
                )));
            }
        }
        if self.pi.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::InvalidParameter(
                "pi entries must lie in (0, 1)".into(),
            ));
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::InvalidParameter(
                "noise_var must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Unit draw for the treated cell: proportional to `pi`.
    pub fn sample_treated_by_pi<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TreatedCell> {
        let dist = rand::distr::weighted::WeightedIndex::new(&self.pi)
            .map_err(|e| Error::InvalidParameter(format!("pi: {e}")))?;
        let unit = dist.sample(rng);
        let period = rng.random_range(0..self.n_periods());
        Ok(TreatedCell::unchecked(unit, period))
    }
}

/// Result of calibrating the realistic DGP on a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpFit {
    pub params: DgpParams,
    /// The logistic fit separated; `pi` was clamped.
    pub separation: bool,
    /// The noise `E` was numerically zero; multipliers were set to one.
    pub degenerate_noise: bool,
    /// Raw least-squares AR(2) coefficients before any shrinkage toward
    /// stationarity.
    pub raw_ar_coef: (f64, f64),
}

pub const PI_CLAMP: f64 = 1e-4;
pub const DEFAULT_RANK: usize = 4;

/// Calibrates the realistic DGP. `assignment[i]` marks treated units.
pub fn estimate_dgp(panel: &PanelMatrix, assignment: &[bool], rank: usize) -> Result<DgpFit> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    if rank == 0 || rank >= n.min(t) {
        return Err(Error::InvalidParameter(format!(
            "rank must satisfy 1 <= r < min(N, T) = {}, got {rank}",
            n.min(t)
        )));
    }
    if assignment.len() != n {
        return Err(Error::Shape(format!(
            "assignment has {} entries for {n} units",
            assignment.len()
        )));
    }
    let mut y = panel.values().clone();
    normalize_values(&mut y)?;

    let svd = y.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = &order[..rank];
    let mut l = DMatrix::zeros(n, t);
    for &k in top {
        l += svd.singular_values[k] * u.column(k) * vt.row(k);
    }
    let f = additive_projection(&l);
    let m = &l - &f;
    let e = &y - &l;

    let noise_var = e.iter().map(|v| v * v).sum::<f64>() / (n * t) as f64;
    let degenerate_noise = noise_var < 1e-20;
    let (unit_var, time_var, ar_coef, raw_ar_coef, noise_var) = if degenerate_noise {
        (vec![1.0; n], vec![1.0; t], (0.0, 0.0), (0.0, 0.0), 0.0)
    } else {
        let (uv, tv) = multipliers_full_grid(&e)?;
        let z = DMatrix::from_fn(n, t, |i, s| e[(i, s)] / (noise_var * uv[i] * tv[s]).sqrt());
        let raw = fit_ar2(&z);
        (uv, tv, shrink_to_stationary(raw), raw, noise_var)
    };
    let sigma = ar2_correlation_matrix(ar_coef, t)?;

    let mut factors = DMatrix::zeros(n, rank);
    for (c, &k) in top.iter().enumerate() {
        for i in 0..n {
            factors[(i, c)] = u[(i, k)] * (n as f64).sqrt();
        }
    }
    let (pi, separation) = logistic_probabilities(&factors, assignment);

    let params = DgpParams {
        rank,
        f,
        m,
        ar_coef,
        sigma,
        unit_var,
        time_var,
        pi,
        noise_var,
    };
    params.validate()?;
    Ok(DgpFit {
        params,
        separation,
        degenerate_noise,
        raw_ar_coef,
    })
}

/// Row mean + column mean - grand mean.
fn additive_projection(l: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = l.shape();
    let rows: Vec<f64> = (0..n).map(|i| l.row(i).sum() / t as f64).collect();
    let cols: Vec<f64> = (0..t).map(|s| l.column(s).sum() / n as f64).collect();
    let grand = l.sum() / (n * t) as f64;
    DMatrix::from_fn(n, t, |i, s| rows[i] + cols[s] - grand)
}

/// Mean-one unit and time multipliers from a log-variance fit on every cell.
fn multipliers_full_grid(e: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, t) = e.shape();
    let log_sq = DMatrix::from_fn(n, t, |i, s| {
        (e[(i, s)] * e[(i, s)])
            .max(crate::variance::SQUARED_RESIDUAL_FLOOR)
            .ln()
    });
    let fit = crate::twoway::fit_two_way(&log_sq, &[])?;
    let norm = |eff: &[f64]| {
        let v: Vec<f64> = eff.iter().map(|x| x.exp()).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|x| x / mean).collect::<Vec<f64>>()
    };
    Ok((norm(&fit.row_effects), norm(&fit.col_effects)))
}

/// Pooled least squares of `z_t` on `(z_{t-1}, z_{t-2})` across rows.
fn fit_ar2(z: &DMatrix<f64>) -> (f64, f64) {
    let (n, t) = z.shape();
    if t < 3 {
        return (0.0, 0.0);
    }
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for s in 2..t {
            let (y, x1, x2) = (z[(i, s)], z[(i, s - 1)], z[(i, s - 2)]);
            a11 += x1 * x1;
            a12 += x1 * x2;
            a22 += x2 * x2;
            b1 += x1 * y;
            b2 += x2 * y;
        }
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= 1e-12 * (a11 * a22).max(f64::MIN_POSITIVE) {
        return (0.0, 0.0);
    }
    ((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det)
}

/// Shrinks non-stationary coefficients toward zero until they sit a little
/// inside the stationarity triangle. Stationary input is returned as is.
fn shrink_to_stationary(rho: (f64, f64)) -> (f64, f64) {
    if !(rho.0.is_finite() && rho.1.is_finite()) {
        return (0.0, 0.0);
    }
    if is_stationary(rho) {
        return rho;
    }
    let mut r = rho;
    while !is_stationary((r.0 / 0.98, r.1 / 0.98)) {
        r = (r.0 * 0.98, r.1 * 0.98);
    }
    r
}

/// Logistic regression of `w` on an intercept and `x` by IRLS. Returns the
/// fitted probabilities clamped to `[PI_CLAMP, 1 - PI_CLAMP]` and whether
/// the fit separated.
fn logistic_probabilities(x: &DMatrix<f64>, w: &[bool]) -> (Vec<f64>, bool) {
    let n = x.nrows();
    let p = x.ncols() + 1;
    let design = DMatrix::from_fn(n, p, |i, c| if c == 0 { 1.0 } else { x[(i, c - 1)] });
    let y = DVector::from_fn(n, |i, _| f64::from(u8::from(w[i])));
    let mut beta = DVector::zeros(p);
    let mut converged = false;
    for _ in 0..100 {
        let eta = &design * &beta;
        let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let weights = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let mut xtwx = DMatrix::zeros(p, p);
        let mut score = DVector::zeros(p);
        for i in 0..n {
            let row = design.row(i);
            xtwx += weights[i] * row.transpose() * row;
            score += (y[i] - mu[i]) * row.transpose();
        }
        for d in 0..p {
            xtwx[(d, d)] += 1e-10;
        }
        let Some(chol) = xtwx.cholesky() else {
            break;
        };
        let step = chol.solve(&score);
        beta += &step;
        if step.amax() < 1e-10 {
            converged = true;
            break;
        }
        if beta.amax() > 50.0 {
            break;
        }
    }
    let eta = &design * &beta;
    let raw: Vec<f64> = eta.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect();
    let clamped = raw
        .iter()
        .any(|&q| !(PI_CLAMP..=1.0 - PI_CLAMP).contains(&q));
    let separation = !converged || clamped;
    if separation {
        log::warn!("logistic assignment model separated; probabilities clamped");
    }
    let pi = raw
        .into_iter()
        .map(|q| {
            if q.is_finite() {
                q.clamp(PI_CLAMP, 1.0 - PI_CLAMP)
            } else {
                0.5
            }
        })
        .collect();
    (pi, separation)
}

pub fn gen_realistic(params: &DgpParams, seed: u64) -> Result<PanelMatrix> {
    gen_realistic_with(params, &mut substream(seed, 0, Purpose::Panel))
}

/// Realistic draw `F + M + E`; row `i` of `E` is Gaussian with covariance
/// `noise_var * D_i Sigma D_i`, `D_i = diag(sqrt(unit_var_i * time_var_t))`.
pub fn gen_realistic_with<R: Rng + ?Sized>(params: &DgpParams, rng: &mut R) -> Result<PanelMatrix> {
    params.validate()?;
    let chol = RealisticSampler::new(params)?;
    chol.draw(params, rng)
}

/// Cholesky factor of `Sigma`, reusable across replications.
#[derive(Debug, Clone)]
pub struct RealisticSampler {
    lower: DMatrix<f64>,
}

impl RealisticSampler {
    pub fn new(params: &DgpParams) -> Result<Self> {
        let lower = params
            .sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("AR(2) correlation matrix".into()))?
            .unpack();
        Ok(Self { lower })
    }

    pub fn draw<R: Rng + ?Sized>(&self, params: &DgpParams, rng: &mut R) -> Result<PanelMatrix> {
        let (n, t) = (params.n_units(), params.n_periods());
        let mut y = &params.f + &params.m;
        if params.noise_var > 0.0 {
            let mut z = DVector::zeros(t);
            for i in 0..n {
                for s in 0..t {
                    z[s] = rng.sample(StandardNormal);
                }
                let e = &self.lower * &z;
                for s in 0..t {
                    y[(i, s)] +=
                        (params.noise_var * params.unit_var[i] * params.time_var[s]).sqrt() * e[s];
                }
            }
        }
        PanelMatrix::from_matrix(y)
    }
}

/// Multiplier variances implied by a residual grid, used for calibration
/// checks.
pub fn multiplier_variances(res: &ResidualGrid) -> Result<Option<(f64, f64)>> {
    Ok(variance_multipliers(res)?.map(|(u, v)| (population_variance(&u), population_variance(&v))))
}
