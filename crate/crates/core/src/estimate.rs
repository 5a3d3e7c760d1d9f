//! Calibration pipeline: sample estimators from daily returns, empirical
//! leverage/autocorrelation curves, exponential leverage fit, and closed-form
//! parameter recovery.
//!
//! Recovery consumes only four numbers — D, the ratio C/B, the leverage decay
//! time, and the leverage intercept. The remaining estimator combinations are
//! overdetermined: forward A, B recomputed from recovered real-data parameters
//! need not match the empirical A, B, and that is expected behavior.

use crate::analytics::{Curve, CurveKind};
use crate::data::ReturnSeries;
use crate::error::{Error, Result};
use crate::model::{
    check_consistency, derive_lossy, ConsistencyReport, DerivedQuantities, ModelParams,
    TRADING_DAY,
};
use rayon::prelude::*;
use std::f64::consts::PI;

/// Scaled absolute-moment estimators of the stationary volatility moments.
///
/// For returns generated by the model with spacing `dt`, each observation is
/// conditionally Gaussian, so rescaled absolute moments estimate the
/// stationary volatility moments:
/// `A -> <sigma>`, `B -> <sigma^2>`, `C -> <sigma^3>`, and
/// `D = B / (2(A^2 - B))` equals `a/c` exactly.
#[derive(Clone, Copy, Debug)]
pub struct SampleEstimators {
    /// sqrt(pi/(2 dt)) * mean|dX|, units 1/yr^(1/2).
    pub a: f64,
    /// mean(dX^2) / dt, units 1/yr.
    pub b: f64,
    /// sqrt(pi/(2 dt)^3) * mean|dX|^3, units 1/yr^(3/2).
    pub c: f64,
    /// B / (2(A^2 - B)), dimensionless; estimates a/c.
    pub d: f64,
    /// Observation spacing, yr.
    pub dt: f64,
    pub n_obs: usize,
}

/// Result of the two-parameter exponential fit to a leverage curve.
#[derive(Clone, Copy, Debug)]
pub struct LeverageFit {
    /// Fitted decay time, yr.
    pub tau_l: f64,
    /// Fitted intercept (the curve value extrapolated to lag 0+).
    pub l0: f64,
    /// Residual sum of squares over the fit window.
    pub rss: f64,
    /// Fit window in trading days (inclusive).
    pub window_days: (f64, f64),
    /// True when tau_l landed on a search-bracket endpoint; the curve does
    /// not look like a decaying exponential. Flagged, not fatal.
    pub at_boundary: bool,
}

/// Estimators from model-implied exact moments. `n_obs` is 0 because no
/// sample is involved; `dt` only labels the would-be spacing.
pub fn theoretical_estimators(params: &ModelParams, dt: f64) -> SampleEstimators {
    let (a, b, c) = (params.a, params.b, params.c);
    let big_a = -c.sqrt() * b / a;
    let big_b = 2.0 * c * b * b / ((2.0 * a + c) * a);
    let big_c = -2.0 * b.powi(3) * c.powf(1.5) / ((a + c) * (2.0 * a + c) * a);
    SampleEstimators {
        a: big_a,
        b: big_b,
        c: big_c,
        d: big_b / (2.0 * (big_a * big_a - big_b)),
        dt,
        n_obs: 0,
    }
}

/// The `(tau_L, L0)` summary pair implied by the parameters, in the
/// convention consumed by `recover_params`: `tau_L = 2/(2|a| - c)`. The
/// realized decay time of the process leverage is `1/|a|` instead (see
/// `analytics::leverage`); `convention_tau_l` converts a decay time fitted
/// on an observed curve into this convention. The intercept `L0` is the same
/// in both descriptions.
pub fn theoretical_leverage_fit(params: &ModelParams) -> Result<LeverageFit> {
    let q = crate::model::derive(params)?;
    let (a, b, c, rho) = (params.a, params.b, params.c, params.rho);
    let l0 = -rho * a * (2.0 * a + c) / (b * (a + c));
    Ok(LeverageFit {
        tau_l: q.tau_l.expect("derive guarantees tau_l"),
        l0,
        rss: 0.0,
        window_days: (0.0, 0.0),
        at_boundary: false,
    })
}

pub fn sample_estimators(returns: &ReturnSeries) -> Result<SampleEstimators> {
    let n = returns.len();
    if n < 100 {
        return Err(Error::InsufficientData(format!(
            "need at least 100 returns for the moment estimators, have {n}"
        )));
    }
    let dt = returns.dt;
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("observation spacing must be positive, got {dt}")));
    }
    let nf = n as f64;
    let (mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64);
    for &v in &returns.values {
        let av = v.abs();
        s1 += av;
        s2 += av * av;
        s3 += av * av * av;
    }
    if s1 == 0.0 {
        return Err(Error::Degenerate("all returns are zero".into()));
    }
    let a = (PI / (2.0 * dt)).sqrt() * s1 / nf;
    let b = s2 / (nf * dt);
    let c = (PI / (2.0 * dt).powi(3)).sqrt() * s3 / nf;
    let gap = a * a - b;
    if gap.abs() <= 1e-12 * b {
        return Err(Error::Degenerate(format!(
            "A^2 = B within floating tolerance (A = {a}, B = {b}); D is undefined"
        )));
    }
    Ok(SampleEstimators { a, b, c, d: b / (2.0 * gap), dt, n_obs: n })
}

/// Raw leverage estimate at one signed lag (in observation steps):
/// `mean_t[dX_t dX_{t+k}^2] / mean[dX^2]^2`, with a single global
/// second-moment normalizer (stationarity assumed).
pub fn empirical_leverage_at(returns: &ReturnSeries, lag: i64) -> Result<f64> {
    let x = &returns.values;
    let n = x.len() as i64;
    if lag.unsigned_abs() as i64 >= n {
        return Err(Error::InsufficientData(format!("lag {lag} >= series length {n}")));
    }
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if m2 == 0.0 {
        return Err(Error::Degenerate("all returns are zero".into()));
    }
    let (lo, hi) = if lag >= 0 { (0, n - lag) } else { (-lag, n) };
    let mut acc = 0.0;
    for t in lo..hi {
        let w = x[(t + lag) as usize];
        acc += x[t as usize] * w * w;
    }
    Ok(acc / ((hi - lo) as f64 * m2 * m2))
}

/// Leverage curve at lags `1..=tau_max_days` observation steps.
pub fn empirical_leverage(returns: &ReturnSeries, tau_max_days: usize) -> Result<Curve> {
    if tau_max_days < 1 {
        return Err(Error::Domain("tau_max must be at least 1 day".into()));
    }
    if returns.len() < 10 * tau_max_days {
        return Err(Error::InsufficientData(format!(
            "need at least {} returns for lags up to {tau_max_days}, have {}",
            10 * tau_max_days,
            returns.len()
        )));
    }
    let values: Vec<f64> = (1..=tau_max_days)
        .into_par_iter()
        .map(|k| empirical_leverage_at(returns, k as i64))
        .collect::<Result<_>>()?;
    let grid: Vec<f64> = (1..=tau_max_days).map(|k| k as f64 * returns.dt).collect();
    Curve::new(CurveKind::Leverage, grid, values)
}

/// Sample Pearson correlation of the squared-return series at one lag.
/// Lag 0 is 1 by definition.
pub fn empirical_autocorr_at(returns: &ReturnSeries, lag: usize) -> Result<f64> {
    if lag == 0 {
        return Ok(1.0);
    }
    let x = &returns.values;
    let n = x.len();
    if lag >= n {
        return Err(Error::InsufficientData(format!("lag {lag} >= series length {n}")));
    }
    let s: Vec<f64> = x.iter().map(|v| v * v).collect();
    pearson(&s[..n - lag], &s[lag..])
}

fn pearson(u: &[f64], w: &[f64]) -> Result<f64> {
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mw = w.iter().sum::<f64>() / n;
    let (mut suu, mut sww, mut suw) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(w) {
        let (da, db) = (a - mu, b - mw);
        suu += da * da;
        sww += db * db;
        suw += da * db;
    }
    if suu == 0.0 || sww == 0.0 {
        return Err(Error::Degenerate("zero variance in squared returns".into()));
    }
    Ok(suw / (suu * sww).sqrt())
}

/// Squared-return autocorrelation curve at lags `1..=tau_max_days`.
///
/// The continuous-time curve has a finite limit below 1 as the lag goes to
/// 0+, while the sample correlation at lag 0 is identically 1, so model
/// comparisons start at lag 1.
pub fn empirical_autocorrelation(returns: &ReturnSeries, tau_max_days: usize) -> Result<Curve> {
    if tau_max_days < 1 {
        return Err(Error::Domain("tau_max must be at least 1 day".into()));
    }
    if returns.len() < 10 * tau_max_days {
        return Err(Error::InsufficientData(format!(
            "need at least {} returns for lags up to {tau_max_days}, have {}",
            10 * tau_max_days,
            returns.len()
        )));
    }
    let s: Vec<f64> = returns.values.iter().map(|v| v * v).collect();
    let n = s.len();
    let values: Vec<f64> = (1..=tau_max_days)
        .into_par_iter()
        .map(|k| pearson(&s[..n - k], &s[k..]))
        .collect::<Result<_>>()?;
    let grid: Vec<f64> = (1..=tau_max_days).map(|k| k as f64 * returns.dt).collect();
    Curve::new(CurveKind::Autocorrelation, grid, values)
}

/// Least-squares fit of `L0 exp(-tau/tau_l)` to the curve points whose lags
/// fall inside `window_days` (inclusive, trading days).
///
/// For fixed `tau_l` the optimal `L0` is the closed-form linear projection;
/// `tau_l` is located by golden-section search on the profiled objective over
/// `[dt/2, 2 yr]` and polished by bisection on its stationarity condition.
pub fn fit_leverage(curve: &Curve, window_days: (f64, f64)) -> Result<LeverageFit> {
    let lo = window_days.0 * TRADING_DAY * (1.0 - 1e-9);
    let hi = window_days.1 * TRADING_DAY * (1.0 + 1e-9);
    let mut taus = Vec::new();
    let mut vals = Vec::new();
    for (g, v) in curve.grid.iter().zip(&curve.values) {
        if *g >= lo && *g <= hi {
            taus.push(*g);
            vals.push(*v);
        }
    }
    if taus.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "need at least 5 curve points in the fit window, have {}",
            taus.len()
        )));
    }
    let dt_min = taus.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let bracket = (0.5 * dt_min, 2.0);

    // Profiled objective: project out L0, return (rss, L0).
    let profile = |tau_l: f64| -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for (t, v) in taus.iter().zip(&vals) {
            let e = (-t / tau_l).exp();
            num += v * e;
            den += e * e;
        }
        let l0 = num / den;
        let rss: f64 = taus
            .iter()
            .zip(&vals)
            .map(|(t, v)| {
                let r = v - l0 * (-t / tau_l).exp();
                r * r
            })
            .sum();
        (rss, l0)
    };
    // Stationarity condition of the profiled objective in tau_l (up to a
    // nonzero factor): sum of weighted residual projections.
    let grad = |tau_l: f64| -> f64 {
        let (_, l0) = profile(tau_l);
        taus.iter()
            .zip(&vals)
            .map(|(t, v)| {
                let e = (-t / tau_l).exp();
                (v - l0 * e) * e * t
            })
            .sum::<f64>()
            * l0
    };

    // Golden-section minimization of the profiled rss.
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a0, mut b0) = bracket;
    let mut x1 = b0 - inv_phi * (b0 - a0);
    let mut x2 = a0 + inv_phi * (b0 - a0);
    let mut f1 = profile(x1).0;
    let mut f2 = profile(x2).0;
    for _ in 0..200 {
        if f1 <= f2 {
            b0 = x2;
            x2 = x1;
            f2 = f1;
            x1 = b0 - inv_phi * (b0 - a0);
            f1 = profile(x1).0;
        } else {
            a0 = x1;
            x1 = x2;
            f1 = f2;
            x2 = a0 + inv_phi * (b0 - a0);
            f2 = profile(x2).0;
        }
        if b0 - a0 <= 1e-14 * b0 {
            break;
        }
    }
    let mut tau_l = 0.5 * (a0 + b0);

    // Polish by bisection on the gradient if it changes sign across the
    // golden bracket (it vanishes exactly at the optimum on noiseless data).
    let (mut ga, mut gb) = (bracket.0.max(a0 - 1e-6), bracket.1.min(b0 + 1e-6));
    let (va, vb) = (grad(ga), grad(gb));
    if va.signum() != vb.signum() && va != 0.0 && vb != 0.0 {
        for _ in 0..120 {
            let mid = 0.5 * (ga + gb);
            let gm = grad(mid);
            if gm == 0.0 {
                ga = mid;
                gb = mid;
                break;
            }
            if gm.signum() == va.signum() {
                ga = mid;
            } else {
                gb = mid;
            }
        }
        tau_l = 0.5 * (ga + gb);
    }

    let (rss, l0) = profile(tau_l);
    let rel = (tau_l - bracket.0).min(bracket.1 - tau_l) / (bracket.1 - bracket.0);
    Ok(LeverageFit { tau_l, l0, rss, window_days, at_boundary: rel < 1e-6 })
}

/// Converts a decay time fitted on an observed leverage curve into the
/// `tau_L` convention consumed by `recover_params`.
///
/// The process leverage decays with the volatility relaxation time `1/|a|`
/// (see `analytics::leverage`), while the recovery identity
/// `c = -1/(tau_L (D + 1/2))` is stated in the convention where
/// `tau_L = 2/(2|a| - c)`. With `D = a/c` known from the sample estimators,
/// `1/tau_fit = |a|` maps to `tau_L = 2 |D| tau_fit / (2 |D| - 1)`, after
/// which the recovery returns `|a| = 1/tau_fit` exactly.
pub fn convention_tau_l(tau_fit: f64, d: f64) -> Result<f64> {
    if !(d < -0.5) {
        return Err(Error::RecoveryConstraint {
            equation: "tau_L = 2 |D| tau_fit / (2 |D| - 1)",
            reason: format!("requires D < -1/2, got D = {d}"),
        });
    }
    if !(tau_fit > 0.0) {
        return Err(Error::RecoveryConstraint {
            equation: "tau_L = 2 |D| tau_fit / (2 |D| - 1)",
            reason: format!("requires tau_fit > 0, got {tau_fit}"),
        });
    }
    Ok(2.0 * d.abs() * tau_fit / (2.0 * d.abs() - 1.0))
}

/// Closed-form parameter recovery from the estimators and the leverage fit.
/// Consumes only D, the ratio C/B, tau_l, and L0, with `fit.tau_l` read in
/// the `tau_L = 2/(2|a| - c)` convention (see `convention_tau_l`).
pub fn recover_params(est: &SampleEstimators, fit: &LeverageFit) -> Result<ModelParams> {
    if !(est.d < -0.5) {
        return Err(Error::RecoveryConstraint {
            equation: "c = -1/(tau_L (D + 1/2))",
            reason: format!("requires D < -1/2, got D = {}", est.d),
        });
    }
    if !(fit.tau_l > 0.0) {
        return Err(Error::RecoveryConstraint {
            equation: "c = -1/(tau_L (D + 1/2))",
            reason: format!("requires tau_L > 0, got {}", fit.tau_l),
        });
    }
    let c = -1.0 / (fit.tau_l * (est.d + 0.5));
    let a = c * est.d;
    let b = -(a + c) * est.c / (c.sqrt() * est.b);
    if !(b > 0.0) {
        return Err(Error::RecoveryConstraint {
            equation: "b = -(a+c) C / (sqrt(c) B)",
            reason: format!("recovered b = {b} is not positive"),
        });
    }
    let rho = -b * (a + c) / (a * (2.0 * a + c)) * fit.l0;
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::RecoveryConstraint {
            equation: "rho = -b(a+c)/(a(2a+c)) L(0+)",
            reason: format!("recovered rho = {rho} outside [-1, 1]"),
        });
    }
    ModelParams::new(a, b, c, rho)
}

#[derive(Clone, Debug)]
pub struct CalibrateOptions {
    /// Leverage fit window in trading days (inclusive).
    pub window_days: (f64, f64),
    /// Largest lag (days) of the empirical leverage curve.
    pub max_lag_days: usize,
    /// Abort when |D| exceeds this: A^2 ~ B means near-constant volatility
    /// and a near-singular D (|a|/c above the bound has no fat-tail regime).
    pub d_singular_threshold: f64,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        // The fit window covers a few leverage lifetimes at typical
        // equity-index decay times (~16 days) before noise dominates.
        CalibrateOptions { window_days: (1.0, 50.0), max_lag_days: 50, d_singular_threshold: 25.0 }
    }
}

#[derive(Clone, Debug)]
pub struct StageFailure {
    pub stage: &'static str,
    pub cause: String,
}

/// End-to-end calibration output. A failed stage leaves later fields `None`
/// and records the cause; earlier fields keep whatever was computed.
#[derive(Clone, Debug)]
pub struct CalibrationReport {
    pub estimators: Option<SampleEstimators>,
    pub leverage_curve: Option<Curve>,
    pub fit: Option<LeverageFit>,
    pub params: Option<ModelParams>,
    pub derived: Option<DerivedQuantities>,
    pub diagnostics: Option<ConsistencyReport>,
    pub failure: Option<StageFailure>,
}

impl CalibrationReport {
    pub fn is_success(&self) -> bool {
        self.failure.is_none()
    }

    pub fn to_error(&self) -> Option<Error> {
        self.failure.as_ref().map(|f| Error::CalibrationStage {
            stage: f.stage,
            cause: f.cause.clone(),
        })
    }

    /// Flat key=value text block, sectioned.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(e) = &self.estimators {
            out.push_str("[estimators]\n");
            out.push_str(&format!("A={:.12e}\nB={:.12e}\nC={:.12e}\nD={:.12e}\n", e.a, e.b, e.c, e.d));
            out.push_str(&format!("dt_yr={:.12e}\nn_obs={}\n", e.dt, e.n_obs));
        }
        if let Some(f) = &self.fit {
            out.push_str("[leverage_fit]\n");
            out.push_str(&format!("tau_L_yr={:.12e}\nL0={:.12e}\nrss={:.12e}\n", f.tau_l, f.l0, f.rss));
            out.push_str(&format!(
                "window_days={},{}\nat_boundary={}\n",
                f.window_days.0, f.window_days.1, f.at_boundary
            ));
        }
        if let Some(p) = &self.params {
            out.push_str("[params]\n");
            out.push_str(&format!(
                "a={:.12e}\nb={:.12e}\nc={:.12e}\nrho={:.12e}\n",
                p.a, p.b, p.c, p.rho
            ));
        }
        if let Some(q) = &self.derived {
            out.push_str("[derived]\n");
            out.push_str(&format!("nu={:.12e}\nlambda={:.12e}\n", q.nu, q.lambda));
            if let Some(t) = q.tau_l {
                out.push_str(&format!("tau_L_yr={t:.12e}\n"));
            }
            out.push_str(&format!("tau_A1_yr={:.12e}\n", q.tau_a1));
            if let Some(t) = q.tau_a2 {
                out.push_str(&format!("tau_A2_yr={t:.12e}\n"));
            }
            out.push_str(&format!(
                "tau_sigma_yr={:.12e}\ntau_sigma_days={:.4}\n",
                q.tau_sigma,
                q.tau_sigma / TRADING_DAY
            ));
            out.push_str(&format!(
                "n_star={}\ntail_index_range=({},{}]\n",
                q.n_star, q.beta_range.0, q.beta_range.1
            ));
        }
        if let Some(d) = &self.diagnostics {
            out.push_str("[diagnostics]\n");
            out.push_str(&format!(
                "abs_a_over_c={:.12e}\nfourth_moment_converges={}\nthird_moment_converges={}\n",
                d.ratio, d.fourth_moment_converges, d.third_moment_converges
            ));
            if let Some(o) = d.ordering_holds {
                out.push_str(&format!("time_scale_ordering_holds={o}\n"));
            }
            if let Some(l) = d.lower_bound_holds {
                out.push_str(&format!("tau_A1_lower_bound_holds={l}\n"));
            }
        }
        if let Some(f) = &self.failure {
            out.push_str("[failure]\n");
            out.push_str(&format!("stage={}\ncause={}\n", f.stage, f.cause));
        }
        out
    }
}

/// Runs the full pipeline: estimators -> empirical leverage -> exponential
/// fit -> parameter recovery -> derived quantities and consistency checks.
pub fn calibrate(returns: &ReturnSeries, opts: &CalibrateOptions) -> CalibrationReport {
    let mut report = CalibrationReport {
        estimators: None,
        leverage_curve: None,
        fit: None,
        params: None,
        derived: None,
        diagnostics: None,
        failure: None,
    };
    macro_rules! stage {
        ($name:literal, $expr:expr) => {
            match $expr {
                Ok(v) => v,
                Err(e) => {
                    report.failure = Some(StageFailure { stage: $name, cause: e.to_string() });
                    return report;
                }
            }
        };
    }

    let est = stage!("sample_estimators", sample_estimators(returns));
    report.estimators = Some(est);
    if !est.d.is_finite() || est.d.abs() > opts.d_singular_threshold {
        report.failure = Some(StageFailure {
            stage: "sample_estimators",
            cause: format!(
                "near-singular D = {:.4}: A^2 ~ B indicates constant volatility; \
                 |D| exceeds the threshold {}",
                est.d, opts.d_singular_threshold
            ),
        });
        return report;
    }

    let curve = stage!("empirical_leverage", empirical_leverage(returns, opts.max_lag_days));
    report.leverage_curve = Some(curve.clone());

    let fit = stage!("fit_leverage", fit_leverage(&curve, opts.window_days));
    report.fit = Some(fit);

    // The fitted decay time measures the realized leverage decay (1/|a|);
    // recovery expects the tau_L = 2/(2|a| - c) convention.
    let tau_conv = stage!("recover_params", convention_tau_l(fit.tau_l, est.d));
    let fit_conv = LeverageFit { tau_l: tau_conv, ..fit };
    let params = stage!("recover_params", recover_params(&est, &fit_conv));
    report.params = Some(params);
    report.derived = Some(derive_lossy(&params));
    report.diagnostics = Some(check_consistency(&params));
    report
}
