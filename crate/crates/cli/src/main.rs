//! Command-line front end: simulation, calibration, analytic curves,
//! numerical self-validation, and bundle generation of plot-ready data.
//!
//! Every artifact embeds the parameter set, seed, and tool version in a
//! `#`-prefixed metadata header, and contains no timestamps, so two runs with
//! identical inputs produce byte-identical files.

use clap::{Args, Parser, Subcommand, ValueEnum};
use igvol::analytics::{self, CorrMode, CurveKind, InitialYMoments, VolState};
use igvol::data::{self, BinSpec, ReturnSeries};
use igvol::estimate::{self, CalibrateOptions};
use igvol::model::{self, ModelParams, TRADING_DAY};
use igvol::oracles;
use igvol::simulate::{simulate, InitCondition, Scheme, SimConfig};
use igvol::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "igvol",
    version,
    about = "Stochastic volatility model toolkit: simulate, calibrate, analyze"
)]
struct Cli {
    /// RNG seed for every stochastic stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

/// Model parameter source plus individual overrides.
#[derive(Args, Clone)]
struct ParamArgs {
    /// Preset name (`sp500`, `fat-tail-demo`) or path to a key=value file.
    #[arg(long, default_value = "sp500")]
    params: String,
    /// Override the mean-reversion rate a (1/yr, negative).
    #[arg(long)]
    a: Option<f64>,
    /// Override the drift level b (1/yr, positive).
    #[arg(long)]
    b: Option<f64>,
    /// Override the variance scale c (1/yr, positive).
    #[arg(long)]
    c: Option<f64>,
    /// Override the Wiener correlation rho in [-1, 1].
    #[arg(long)]
    rho: Option<f64>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<ModelParams> {
        let base = match self.params.as_str() {
            "sp500" => ModelParams::sp500(),
            "fat-tail-demo" => ModelParams::fat_tail_demo(),
            path => ModelParams::from_config_str(&std::fs::read_to_string(path)?)?,
        };
        ModelParams::new(
            self.a.unwrap_or(base.a),
            self.b.unwrap_or(base.b),
            self.c.unwrap_or(base.c),
            self.rho.unwrap_or(base.rho),
        )
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Euler,
    Milstein,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputKind {
    Prices,
    Returns,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble of return paths.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        /// Number of independent paths.
        #[arg(long, default_value_t = 1)]
        paths: usize,
        /// Path length, e.g. `250d` or `1y`.
        #[arg(long, default_value = "1y", value_parser = parse_duration)]
        horizon: f64,
        /// Integrator substeps per daily observation.
        #[arg(long, default_value_t = 32)]
        substeps: usize,
        #[arg(long, value_enum, default_value_t = SchemeArg::Milstein)]
        scheme: SchemeArg,
        /// `stationary`, `fixed:<y0>`, or `burnin:<duration>`.
        #[arg(long, default_value = "stationary", value_parser = parse_init)]
        init: InitCondition,
    },
    /// Calibrate model parameters from a price or return series.
    Calibrate {
        /// Input CSV: `date,close` prices or one return per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = InputKind::Prices)]
        kind: InputKind,
        /// Leverage fit window in trading days.
        #[arg(long, default_value_t = 1.0)]
        fit_min: f64,
        #[arg(long, default_value_t = 50.0)]
        fit_max: f64,
        /// Largest leverage lag, trading days.
        #[arg(long, default_value_t = 50)]
        max_lag: usize,
    },
    /// Tabulate return and volatility moments over a time grid.
    Moments {
        #[command(flatten)]
        params: ParamArgs,
        /// Largest elapsed time, e.g. `1d` or `0.1y`.
        #[arg(long, default_value = "1d", value_parser = parse_duration)]
        t: f64,
        /// Volatility start time (<= 0), e.g. `-10d`, or `stationary`.
        #[arg(long, default_value = "stationary", allow_hyphen_values = true)]
        t0: String,
        /// Number of grid points on (0, t].
        #[arg(long, default_value_t = 1)]
        grid: usize,
    },
    /// Analytic (and optionally empirical) leverage correlation curve.
    Leverage {
        #[command(flatten)]
        params: ParamArgs,
        /// Largest lag, e.g. `50d`.
        #[arg(long, default_value = "50d", value_parser = parse_duration)]
        tau_max: f64,
        /// Optional return series for an empirical overlay.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Analytic (and optionally empirical) squared-return autocorrelation.
    Autocorr {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value = "50d", value_parser = parse_duration)]
        tau_max: f64,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the numerical oracle suites and report pass/fail per check.
    Validate,
    /// Emit the full bundle of plot-ready data: estimator tables (if data is
    /// given), moment-convergence sweeps, correlation curves, and aggregated
    /// return histograms at 1, 3, 7, 14 days.
    Reproduce {
        #[command(flatten)]
        params: ParamArgs,
        /// Optional `date,close` price CSV for the estimator stage.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Paths for the histogram simulation.
        #[arg(long, default_value_t = 256)]
        paths: usize,
        /// Horizon per path for the histogram simulation.
        #[arg(long, default_value = "1y", value_parser = parse_duration)]
        horizon: f64,
    },
}

/// `<n>d` (trading days) or `<x>y` (years), negatives allowed.
fn parse_duration(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    let (num, unit) = t.split_at(t.len().saturating_sub(1));
    let v: f64 = num
        .parse()
        .map_err(|_| format!("'{s}' is not a duration like 10d or 0.5y"))?;
    match unit {
        "d" => Ok(v * TRADING_DAY),
        "y" => Ok(v),
        _ => Err(format!("duration '{s}' must end in 'd' (trading days) or 'y' (years)")),
    }
}

fn parse_init(s: &str) -> std::result::Result<InitCondition, String> {
    if s == "stationary" {
        return Ok(InitCondition::Stationary);
    }
    if let Some(v) = s.strip_prefix("fixed:") {
        return v
            .parse()
            .map(InitCondition::FixedY)
            .map_err(|_| format!("bad fixed start '{v}'"));
    }
    if let Some(v) = s.strip_prefix("burnin:") {
        return parse_duration(v).map(InitCondition::BurnIn);
    }
    Err(format!("init '{s}' must be stationary, fixed:<y0>, or burnin:<duration>"))
}

/// Metadata header embedded in every artifact.
fn header(seed: u64, params: Option<&ModelParams>) -> String {
    let mut h = format!("# tool=igvol {VERSION}\n# seed={seed}\n");
    if let Some(p) = params {
        let _ = writeln!(h, "# params a={} b={} c={} rho={}", p.a, p.b, p.c, p.rho);
    }
    h
}

fn write_artifact(out_dir: &Path, name: &str, header: &str, body: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    std::fs::write(&path, format!("{header}{body}"))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn load_return_series(path: &Path, kind: InputKind) -> Result<ReturnSeries> {
    match kind {
        InputKind::Prices => data::log_returns(&data::load_prices(path)?),
        InputKind::Returns => data::load_returns(path, TRADING_DAY),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: cannot configure {} threads: {e}", cli.threads);
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    let out = &cli.out_dir;
    match cli.command {
        Command::Simulate { params, paths, horizon, substeps, scheme, init } => {
            let p = params.resolve()?;
            let mut cfg = SimConfig::new(paths, horizon, seed);
            cfg.substeps = substeps;
            cfg.init = init;
            cfg.scheme = match scheme {
                SchemeArg::Euler => Scheme::EulerFt,
                SchemeArg::Milstein => Scheme::MilsteinFt,
            };
            let ensemble = simulate(&p, &cfg)?;
            let meta: String =
                ensemble.metadata().lines().map(|l| format!("# {l}\n")).collect();
            let h = format!("# tool=igvol {VERSION}\n{meta}");
            write_artifact(out, "simulated_returns.csv", &h, &ensemble.to_csv())?;
        }
        Command::Calibrate { input, kind, fit_min, fit_max, max_lag } => {
            let returns = load_return_series(&input, kind)?;
            let opts = CalibrateOptions {
                window_days: (fit_min, fit_max),
                max_lag_days: max_lag,
                ..CalibrateOptions::default()
            };
            let report = estimate::calibrate(&returns, &opts);
            let h = header(seed, report.params.as_ref());
            write_artifact(out, "calibration_report.txt", &h, &report.to_text())?;
            if let Some(curve) = &report.leverage_curve {
                write_artifact(out, "leverage_empirical.csv", &h, &curve.to_csv())?;
            }
            if let Some(err) = report.to_error() {
                return Err(err);
            }
            print!("{}", report.to_text());
        }
        Command::Moments { params, t, t0, grid } => {
            let p = params.resolve()?;
            if !(t > 0.0) || grid < 1 {
                return Err(Error::Domain("need t > 0 and grid >= 1".into()));
            }
            let vol = if t0 == "stationary" {
                VolState::Stationary
            } else {
                let t0v = parse_duration(&t0).map_err(Error::Domain)?;
                if t0v > 0.0 {
                    return Err(Error::Domain(format!("t0 must be <= 0, got {t0}")));
                }
                VolState::Finite { t0: t0v, init: InitialYMoments::stationary(&p, 4)? }
            };
            let y_init = match &vol {
                VolState::Stationary => InitialYMoments::stationary(&p, 4)?,
                VolState::Finite { init, .. } => init.clone(),
            };
            let t0v = match &vol {
                VolState::Stationary => f64::NEG_INFINITY,
                VolState::Finite { t0, .. } => *t0,
            };
            let mut body =
                String::from("t_yr,y1,y2,y3,y4,x2,x3,x4,skewness,excess_kurtosis\n");
            for i in 1..=grid {
                let ti = t * i as f64 / grid as f64;
                let mut row = format!("{ti:.12e}");
                for k in 1..=4 {
                    let yk = if t0v.is_finite() {
                        analytics::y_moment(&p, k, ti, t0v, &y_init)
                    } else {
                        model::stationary_moment(&p, k)?
                    };
                    let _ = write!(row, ",{yk:.12e}");
                }
                for n in 2..=4 {
                    let _ = write!(row, ",{:.12e}", analytics::x_moment(&p, n, ti, &vol)?);
                }
                let (skew, kurt) = analytics::skewness_kurtosis(&p, ti, &vol)?;
                let _ = write!(row, ",{skew:.12e},{kurt:.12e}");
                body.push_str(&row);
                body.push('\n');
            }
            write_artifact(out, "moments.csv", &header(seed, Some(&p)), &body)?;
            print!("{body}");
        }
        Command::Leverage { params, tau_max, data } => {
            let p = params.resolve()?;
            curve_command(out, seed, &p, tau_max, data.as_deref(), true)?;
        }
        Command::Autocorr { params, tau_max, data } => {
            let p = params.resolve()?;
            curve_command(out, seed, &p, tau_max, data.as_deref(), false)?;
        }
        Command::Validate => {
            let checks = oracles::run_validation(seed);
            let mut all_ok = true;
            for c in &checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                println!(
                    "{status} {} (max error {:.3e}, tolerance {:.3e})",
                    c.name, c.max_error, c.tolerance
                );
                all_ok &= c.passed;
            }
            if !all_ok {
                return Err(Error::Domain("one or more validation checks failed".into()));
            }
        }
        Command::Reproduce { params, data, paths, horizon } => {
            reproduce(out, seed, &params.resolve()?, data.as_deref(), paths, horizon)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Shared body of `leverage` and `autocorr`.
fn curve_command(
    out: &Path,
    seed: u64,
    p: &ModelParams,
    tau_max: f64,
    data: Option<&Path>,
    is_leverage: bool,
) -> Result<()> {
    let n = (tau_max / TRADING_DAY).round().max(1.0) as usize;
    let grid: Vec<f64> = (1..=n).map(|k| k as f64 * TRADING_DAY).collect();
    let values: Vec<f64> = grid
        .iter()
        .map(|&tau| {
            if is_leverage {
                analytics::leverage(p, tau, &CorrMode::Stationary)
            } else {
                analytics::autocorrelation(p, tau, &CorrMode::Stationary)
            }
        })
        .collect::<Result<_>>()?;
    let kind = if is_leverage { CurveKind::Leverage } else { CurveKind::Autocorrelation };
    let curve = analytics::Curve::new(kind, grid, values)?;
    let stem = if is_leverage { "leverage" } else { "autocorr" };
    let h = header(seed, Some(p));
    write_artifact(out, &format!("{stem}_analytic.csv"), &h, &curve.to_csv())?;
    if let Some(path) = data {
        let returns = data::load_returns(path, TRADING_DAY)?;
        let emp = if is_leverage {
            estimate::empirical_leverage(&returns, n)?
        } else {
            estimate::empirical_autocorrelation(&returns, n)?
        };
        write_artifact(out, &format!("{stem}_empirical.csv"), &h, &emp.to_csv())?;
    }
    Ok(())
}

fn reproduce(
    out: &Path,
    seed: u64,
    p: &ModelParams,
    data: Option<&Path>,
    paths: usize,
    horizon: f64,
) -> Result<()> {
    let h = header(seed, Some(p));

    // Estimator table, leverage fit, and recovery need input data.
    match data {
        Some(path) => {
            let returns = data::log_returns(&data::load_prices(path)?)?;
            let report = estimate::calibrate(&returns, &CalibrateOptions::default());
            write_artifact(out, "calibration_report.txt", &h, &report.to_text())?;
            if let Some(err) = report.to_error() {
                return Err(err);
            }
        }
        None => println!("no input data given; skipping the estimator/recovery stage"),
    }

    // Moment convergence in the start time: <X^2>, <X^3> at t = 1 day as the
    // volatility start recedes into the past.
    {
        let init = InitialYMoments::stationary(p, 3)?;
        let t = TRADING_DAY;
        let mut body = String::from("minus_t0_yr,x2,x3\n");
        for i in 0..=60 {
            let minus_t0 = 0.05 + 1.95 * i as f64 / 60.0;
            let vol = VolState::Finite { t0: -minus_t0, init: init.clone() };
            let x2 = analytics::x_moment(p, 2, t, &vol)?;
            let x3 = analytics::x_moment(p, 3, t, &vol)?;
            let _ = writeln!(body, "{minus_t0:.12e},{x2:.12e},{x3:.12e}");
        }
        write_artifact(out, "moment_convergence.csv", &h, &body)?;
    }

    // Analytic correlation curves.
    curve_command(out, seed, p, 50.0 * TRADING_DAY, None, true)?;
    curve_command(out, seed, p, 50.0 * TRADING_DAY, None, false)?;

    // Aggregated return histograms at 1, 3, 7, 14 days, plus the analytic
    // skewness/kurtosis flattening table.
    let cfg = SimConfig::new(paths, horizon, seed);
    let ensemble = simulate(p, &cfg)?;
    let mut sk = String::from("t_days,skewness,excess_kurtosis\n");
    for days in [1usize, 3, 7, 14] {
        let agg = ensemble.aggregate(days)?;
        let values: Vec<f64> = agg.returns.iter().flatten().copied().collect();
        let pdf = data::empirical_pdf(&values, BinSpec::Auto)?;
        write_artifact(out, &format!("pdf_{days}d.csv"), &h, &pdf.to_csv())?;
        let (skew, kurt) =
            analytics::skewness_kurtosis(p, days as f64 * TRADING_DAY, &VolState::Stationary)?;
        let _ = writeln!(sk, "{days},{skew:.12e},{kurt:.12e}");
    }
    write_artifact(out, "shape_vs_horizon.csv", &h, &sk)?;
    Ok(())
}
