use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use panelvar::dgp::{estimate_dgp, DgpParams};
use panelvar::experiments::{
    placebo_study, power_curve, semisynthetic_study, Baseline, CaseSpec, StudyConfig, TauGrid,
    TreatedSampling,
};
use panelvar::imputers::{Imputer, ImputerConfig, Ridge};
use panelvar::variance::{
    estimate_heterosk_params, residual_grid_with, variance_report_with, Dof, EstimateRow,
    MarginalDivisor, VarianceOptions,
};
use panelvar::{Execution, PanelMatrix, TreatedCell};

use crate::args::{
    Cli, Command, DgpFitArgs, Divisor, EstimateArgs, OutputFormat, PanelInput, PlaceboArgs,
    PowerArgs, Sampling, Tuning, THREADS_ENV,
};

pub fn run(cli: Cli) -> Result<()> {
    let exec = execution(cli.threads)?;
    match cli.command {
        Command::Estimate(a) => estimate(a, exec),
        Command::Placebo(a) => placebo(a, exec),
        Command::Power(a) => power(a, exec),
        Command::DgpFit(a) => dgp_fit(a, exec),
    }
}

/// Resolves `--threads` / the environment into an execution mode, sizing the
/// global pool when a count is given.
fn execution(flag: Option<usize>) -> Result<Execution> {
    let threads = match flag {
        Some(k) => Some(k),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| anyhow!("{THREADS_ENV}='{v}' is not a thread count"))?,
            ),
            _ => None,
        },
    };
    match threads {
        Some(0) => bail!("thread count must be at least 1"),
        Some(1) => Ok(Execution::Sequential),
        Some(_k) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(_k)
                .build_global()
                .context("cannot start worker threads")?;
            Ok(Execution::Parallel)
        }
        None => Ok(Execution::Parallel),
    }
}

fn imputer(t: &Tuning) -> Result<Imputer> {
    let mut config = ImputerConfig::default();
    if !t.ridge.eq_ignore_ascii_case("auto") {
        let r: f64 = t
            .ridge
            .parse()
            .map_err(|_| anyhow!("--ridge must be a number or 'auto', got '{}'", t.ridge))?;
        if !(r.is_finite() && r >= 0.0) {
            bail!("--ridge must be finite and nonnegative, got {r}");
        }
        config.sc_ridge = r;
        config.sdid_ridge = Ridge::Fixed(r);
    }
    Ok(Imputer::with_config(t.imputer.into(), config))
}

fn variance_options(t: &Tuning) -> VarianceOptions {
    VarianceOptions {
        divisor: match t.divisor {
            Divisor::NtMinusOne => MarginalDivisor::NtMinusOne,
            Divisor::NtMinusTwo => MarginalDivisor::NtMinusTwo,
        },
    }
}

fn study_config(t: &Tuning, reps: usize, seed: u64, exec: Execution) -> Result<StudyConfig> {
    if reps == 0 {
        bail!("--reps must be at least 1");
    }
    let mut config = StudyConfig::new(imputer(t)?, reps, seed).with_execution(exec);
    config.variance = variance_options(t);
    Ok(config)
}

fn load_panel(input: &PanelInput, command: &str) -> Result<(PanelMatrix, PathBuf)> {
    let path = input
        .panel
        .clone()
        .ok_or_else(|| anyhow!("`{command}` needs --panel"))?;
    let panel = PanelMatrix::load(&path, input.input_format.into())
        .with_context(|| format!("cannot load panel {}", path.display()))?;
    let panel = match &input.truncate_at {
        Some(label) => panel.truncate_at(label)?,
        None => panel,
    };
    Ok((panel, path))
}

fn dataset_name(given: Option<&str>, path: &Path) -> String {
    given.map(str::to_string).unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "panel".into())
    })
}

/// Treated cell from labels, defaulting to the last unit and last period.
fn treated_cell(
    panel: &PanelMatrix,
    unit: Option<&str>,
    period: Option<&str>,
) -> Result<TreatedCell> {
    let i = match unit {
        Some(l) => panel.unit_index(l)?,
        None => panel.n_units() - 1,
    };
    let s = match period {
        Some(l) => panel.period_index(l)?,
        None => panel.n_periods() - 1,
    };
    Ok(TreatedCell::new(panel, i, s)?)
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut w = writer(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn estimate(a: EstimateArgs, exec: Execution) -> Result<()> {
    let (panel, path) = load_panel(&a.input, "estimate")?;
    let (Some(unit), Some(period)) = (a.treated_unit.as_deref(), a.treated_period.as_deref())
    else {
        bail!("`estimate` needs --treated-unit and --treated-period");
    };
    let treated = treated_cell(&panel, Some(unit), Some(period))?;
    let res = residual_grid_with(&panel, treated, imputer(&a.tuning)?, exec)?;
    let report = variance_report_with(&res, &variance_options(&a.tuning))?;
    let row = EstimateRow::new(
        &panel,
        &dataset_name(a.dataset.as_deref(), &path),
        &res,
        report,
    );
    match a.output.format {
        OutputFormat::Csv => {
            let mut w = writer(a.output.out.as_deref())?;
            EstimateRow::write_csv(std::slice::from_ref(&row), &mut w)?;
            w.flush()?;
        }
        OutputFormat::Json => write_json(&row, a.output.out.as_deref())?,
    }
    Ok(())
}

fn assignment(panel: &PanelMatrix, unit: Option<&str>) -> Result<Vec<bool>> {
    let mut treated = vec![false; panel.n_units()];
    if let Some(label) = unit {
        treated[panel.unit_index(label)?] = true;
    }
    Ok(treated)
}

fn case(n: u8) -> Result<CaseSpec> {
    Ok(n.to_string().parse::<CaseSpec>()?)
}

fn placebo(a: PlaceboArgs, exec: Execution) -> Result<()> {
    let baseline = if let Some(n) = a.case {
        case(n)?.baseline(a.n_units, a.n_periods)
    } else if let Some(path) = &a.params {
        Baseline::Realistic(
            DgpParams::load(path)
                .with_context(|| format!("cannot load DGP parameters {}", path.display()))?,
        )
    } else if a.input.panel.is_some() {
        let (panel, _) = load_panel(&a.input, "placebo")?;
        let treated = assignment(&panel, a.treated_unit.as_deref())?;
        Baseline::Realistic(estimate_dgp(&panel, &treated, a.rank)?.params)
    } else {
        bail!("`placebo` needs one of --case, --params or --panel");
    };
    let mut config = study_config(&a.tuning, a.reps, a.seed, exec)?;
    config.sampling = match a.sampling {
        Sampling::Uniform => TreatedSampling::Uniform,
        Sampling::Propensity => TreatedSampling::Propensity,
    };
    let result = placebo_study(&baseline, &config)?;
    if let Some(path) = &a.records {
        let file =
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        result.write_records_csv(BufWriter::new(file))?;
    }
    match a.output.format {
        OutputFormat::Csv => {
            let mut w = writer(a.output.out.as_deref())?;
            result.write_summary_csv(&mut w)?;
            w.flush()?;
        }
        OutputFormat::Json => write_json(&result, a.output.out.as_deref())?,
    }
    Ok(())
}

fn power(a: PowerArgs, exec: Execution) -> Result<()> {
    let grid: TauGrid = a.grid.parse()?;
    let config = study_config(&a.tuning, a.reps, a.seed, exec)?;
    let out = a.output.out.as_deref();
    if let Some(n) = a.case {
        let curve = power_curve(
            &case(n)?.baseline(a.n_units, a.n_periods),
            &config,
            &grid,
            a.alpha,
        )?;
        match a.output.format {
            OutputFormat::Csv => {
                let mut w = writer(out)?;
                curve.write_csv(&mut w)?;
                w.flush()?;
            }
            OutputFormat::Json => write_json(&curve, out)?,
        }
    } else if a.input.panel.is_some() {
        let (panel, _) = load_panel(&a.input, "power")?;
        let treated = treated_cell(
            &panel,
            a.treated_unit.as_deref(),
            a.treated_period.as_deref(),
        )?;
        let result = semisynthetic_study(&panel, treated, &config, &grid, a.alpha)?;
        match a.output.format {
            OutputFormat::Csv => {
                let mut w = writer(out)?;
                result.curve.write_csv(&mut w)?;
                w.flush()?;
            }
            OutputFormat::Json => write_json(&result, out)?,
        }
    } else {
        bail!("`power` needs --case or --panel");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct DgpFitRow {
    dataset: String,
    n_units: usize,
    n_periods: usize,
    v_exp_nu: f64,
    v_exp_xi: f64,
    k_nu: Dof,
    k_xi: Dof,
    rho1: f64,
    rho2: f64,
    separation: bool,
}

impl DgpFitRow {
    const HEADER: [&'static str; 10] = [
        "dataset",
        "n_units",
        "n_periods",
        "v_exp_nu",
        "v_exp_xi",
        "k_nu",
        "k_xi",
        "rho1",
        "rho2",
        "separation",
    ];

    fn record(&self) -> [String; 10] {
        [
            self.dataset.clone(),
            self.n_units.to_string(),
            self.n_periods.to_string(),
            self.v_exp_nu.to_string(),
            self.v_exp_xi.to_string(),
            self.k_nu.to_string(),
            self.k_xi.to_string(),
            self.rho1.to_string(),
            self.rho2.to_string(),
            self.separation.to_string(),
        ]
    }
}

fn dgp_fit(a: DgpFitArgs, exec: Execution) -> Result<()> {
    let (panel, path) = load_panel(&a.input, "dgp-fit")?;
    let treated = treated_cell(
        &panel,
        a.treated_unit.as_deref(),
        a.treated_period.as_deref(),
    )?;
    let mut assigned = vec![false; panel.n_units()];
    assigned[treated.unit()] = true;
    let fit = estimate_dgp(&panel, &assigned, a.rank)?;
    let res = residual_grid_with(&panel, treated, imputer(&a.tuning)?, exec)?;
    let heterosk = estimate_heterosk_params(&res)?;
    fit.params
        .save(&a.out)
        .with_context(|| format!("cannot write {}", a.out.display()))?;

    let row = DgpFitRow {
        dataset: dataset_name(a.dataset.as_deref(), &path),
        n_units: panel.n_units(),
        n_periods: panel.n_periods(),
        v_exp_nu: heterosk.v_exp_nu,
        v_exp_xi: heterosk.v_exp_xi,
        k_nu: heterosk.k_nu,
        k_xi: heterosk.k_xi,
        rho1: fit.params.ar_coef.0,
        rho2: fit.params.ar_coef.1,
        separation: fit.separation,
    };
    match a.format {
        OutputFormat::Csv => {
            let mut w = writer(None)?;
            writeln!(w, "{}", DgpFitRow::HEADER.join(","))?;
            writeln!(w, "{}", row.record().join(","))?;
            w.flush()?;
        }
        OutputFormat::Json => write_json(&row, None)?,
    }
    Ok(())
}
