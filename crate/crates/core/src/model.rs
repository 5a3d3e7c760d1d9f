//! Model parameters, validity constraints and derived scalar quantities.
//!
//! The return process is `dX = sqrt(c) Y dW1` with the volatility driver
//! `dY = (aY + b) dt + sqrt(c) Y dW2` and Wiener correlation `rho`. For
//! `a < 0, b > 0, c > 0` the instantaneous volatility `sigma = sqrt(c) Y`
//! has an Inverse Gamma stationary law with shape `nu = 1 - 2a/c` and scale
//! `lambda = 2b/sqrt(c)`. Time unit is years, 1 yr = 250 trading days.

use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Trading days per year used throughout.
pub const TRADING_DAYS_PER_YEAR: f64 = 250.0;
/// One trading day in years.
pub const TRADING_DAY: f64 = 1.0 / TRADING_DAYS_PER_YEAR;

/// The four constants of the SDE system, all rates in 1/yr.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    /// Drift slope, must be negative (mean reversion).
    pub a: f64,
    /// Drift offset, must be positive (keeps the support of Y on [0, inf)).
    pub b: f64,
    /// Squared noise scale, must be positive.
    pub c: f64,
    /// Correlation of the two Wiener processes, in [-1, 1].
    pub rho: f64,
}

impl ModelParams {
    pub fn new(a: f64, b: f64, c: f64, rho: f64) -> Result<Self> {
        let p = ModelParams { a, b, c, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, reason: format!("must be finite, got {v}") })
            }
        };
        finite("a", self.a)?;
        finite("b", self.b)?;
        finite("c", self.c)?;
        finite("rho", self.rho)?;
        if self.a >= 0.0 {
            return Err(Error::InvalidParameter {
                name: "a",
                reason: format!("must be negative (mean reversion), got {}", self.a),
            });
        }
        if self.b <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "b",
                reason: format!("must be positive, got {}", self.b),
            });
        }
        if self.c <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "c",
                reason: format!("must be positive, got {}", self.c),
            });
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("must lie in [-1, 1], got {}", self.rho),
            });
        }
        Ok(())
    }

    /// Tail shape of the stationary volatility law, `nu = 1 - 2a/c`.
    pub fn nu(&self) -> f64 {
        1.0 - 2.0 * self.a / self.c
    }

    /// Scale of the stationary volatility law, `lambda = 2b/sqrt(c)` (yr^-1/2).
    pub fn lambda(&self) -> f64 {
        2.0 * self.b / self.c.sqrt()
    }

    /// `F_k = k a + k(k-1) c / 2` (1/yr). `F_k < 0` exactly when `k < nu`.
    pub fn f_coef(&self, k: u32) -> f64 {
        let k = k as f64;
        k * self.a + k * (k - 1.0) * self.c / 2.0
    }

    /// `A_k = k b` (1/yr).
    pub fn a_coef(&self, k: u32) -> f64 {
        k as f64 * self.b
    }

    /// The S&P500 calibration of the reference analysis.
    pub fn sp500() -> Self {
        ModelParams { a: -16.0608, b: 0.8627, c: 8.9749, rho: -0.5089 }
    }

    /// A fat-tailed configuration with |a|/c < 1, where the third return
    /// moment diverges in the stationary limit.
    pub fn fat_tail_demo() -> Self {
        ModelParams { a: -16.06, b: 0.86, c: 17.84, rho: -0.51 }
    }

    /// Serializes to a flat `key=value` block (keys a, b, c, rho).
    pub fn to_config_string(&self) -> String {
        format!("a={:.17e}\nb={:.17e}\nc={:.17e}\nrho={:.17e}\n", self.a, self.b, self.c, self.rho)
    }

    /// Parses a flat `key=value` config. Blank lines and `#` comments allowed.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let (mut a, mut b, mut c, mut rho) = (None, None, None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                reason: format!("expected key=value, got '{line}'"),
            })?;
            let value: f64 = value.trim().parse().map_err(|e| Error::Parse {
                line: i + 1,
                reason: format!("bad number '{}': {e}", value.trim()),
            })?;
            match key.trim() {
                "a" => a = Some(value),
                "b" => b = Some(value),
                "c" => c = Some(value),
                "rho" => rho = Some(value),
                other => {
                    return Err(Error::Parse {
                        line: i + 1,
                        reason: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        let missing = |name: &'static str| Error::InvalidParameter {
            name,
            reason: "missing from config".into(),
        };
        ModelParams::new(
            a.ok_or_else(|| missing("a"))?,
            b.ok_or_else(|| missing("b"))?,
            c.ok_or_else(|| missing("c"))?,
            rho.ok_or_else(|| missing("rho"))?,
        )
    }
}

/// Scalar quantities derived from the parameters.
#[derive(Clone, Debug)]
pub struct DerivedQuantities {
    pub nu: f64,
    /// yr^-1/2
    pub lambda: f64,
    /// a / c, dimensionless.
    pub d_ratio: f64,
    /// F_1..F_6 (1/yr).
    pub f: Vec<f64>,
    /// A_1..A_6 (1/yr).
    pub a_coefs: Vec<f64>,
    /// Leverage decay-time parameter 2/(2|a| - c), yr, in the
    /// summary-statistic convention of `estimate::recover_params`; the
    /// realized decay time of `analytics::leverage` is `tau_a1 = 1/|a|`.
    /// None when 2|a| <= c.
    pub tau_l: Option<f64>,
    /// 1/|a|, yr.
    pub tau_a1: f64,
    /// 1/(2|a| - c), yr. None when 2|a| <= c.
    pub tau_a2: Option<f64>,
    /// Volatility relaxation time -1/a, yr.
    pub tau_sigma: f64,
    /// Largest integer strictly below nu.
    pub n_star: u32,
    /// Tail index range (n_star, n_star + 1].
    pub beta_range: (u32, u32),
}

/// Computes every derived quantity. Errors on 2|a| <= c, where the
/// leverage decay time is undefined (non-mean-reverting squared volatility).
pub fn derive(params: &ModelParams) -> Result<DerivedQuantities> {
    params.validate()?;
    let q = derive_lossy(params);
    if q.tau_l.is_none() {
        return Err(Error::NonMeanReverting);
    }
    Ok(q)
}

/// Like [`derive`] but reports undefined time scales as `None` instead of
/// failing; used for diagnostics on inconsistent configurations.
pub fn derive_lossy(params: &ModelParams) -> DerivedQuantities {
    let nu = params.nu();
    let two_abs_a_minus_c = 2.0 * params.a.abs() - params.c;
    let n_star = largest_integer_below(nu);
    DerivedQuantities {
        nu,
        lambda: params.lambda(),
        d_ratio: params.a / params.c,
        f: (1..=6).map(|k| params.f_coef(k)).collect(),
        a_coefs: (1..=6).map(|k| params.a_coef(k)).collect(),
        tau_l: (two_abs_a_minus_c > 0.0).then(|| 2.0 / two_abs_a_minus_c),
        tau_a1: 1.0 / params.a.abs(),
        tau_a2: (two_abs_a_minus_c > 0.0).then(|| 1.0 / two_abs_a_minus_c),
        tau_sigma: -1.0 / params.a,
        n_star,
        beta_range: (n_star, n_star + 1),
    }
}

fn largest_integer_below(nu: f64) -> u32 {
    // Largest integer strictly less than nu (nu > 1 always since a < 0).
    let floor = nu.floor();
    let n = if floor == nu { floor - 1.0 } else { floor };
    n.max(0.0) as u32
}

/// Consistency diagnostics: convergence of the third and fourth moments of Y
/// and the time-scale ordering tau_A2 < tau_A1 < tau_L.
#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    /// |a| / c.
    pub ratio: f64,
    /// |a|/c > 3/2: fourth Y-moment converges, autocorrelation formula valid.
    pub fourth_moment_converges: bool,
    /// |a|/c > 1: third Y-moment converges.
    pub third_moment_converges: bool,
    /// Whether tau_A2 < tau_A1 < tau_L holds (None when tau_L is undefined).
    pub ordering_holds: Option<bool>,
    /// tau_A1 > (2/3) tau_L (None when tau_L is undefined).
    pub lower_bound_holds: Option<bool>,
}

impl ConsistencyReport {
    pub fn consistent(&self) -> bool {
        self.fourth_moment_converges
    }
}

pub fn check_consistency(params: &ModelParams) -> ConsistencyReport {
    let ratio = params.a.abs() / params.c;
    let q = derive_lossy(params);
    ConsistencyReport {
        ratio,
        fourth_moment_converges: ratio > 1.5,
        third_moment_converges: ratio > 1.0,
        ordering_holds: q.tau_l.map(|tau_l| {
            let tau_a2 = q.tau_a2.expect("tau_a2 defined whenever tau_l is");
            tau_a2 < q.tau_a1 && q.tau_a1 < tau_l
        }),
        lower_bound_holds: q.tau_l.map(|tau_l| q.tau_a1 > 2.0 / 3.0 * tau_l),
    }
}

/// Stationary moment of Y of order `n`: product over k = 1..n of `-A_k / F_k`.
/// Diverges (structurally, via `F_n >= 0`) when `n >= nu`.
pub fn stationary_moment(params: &ModelParams, n: u32) -> Result<f64> {
    let mut product = 1.0;
    for k in 1..=n {
        let f_k = params.f_coef(k);
        if f_k >= 0.0 {
            return Err(Error::DivergentMoment { order: n, nu: params.nu() });
        }
        product *= -params.a_coef(k) / f_k;
    }
    Ok(product)
}

/// Stationary density of the instantaneous volatility `sigma = sqrt(c) Y`:
/// Inverse Gamma with shape `nu` and scale `lambda`.
pub fn stationary_sigma_pdf(params: &ModelParams, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let nu = params.nu();
    let lambda = params.lambda();
    Ok((nu * lambda.ln() - ln_gamma(nu) - lambda / sigma - (nu + 1.0) * sigma.ln()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sp500_derived_quantities() {
        let q = derive(&ModelParams::sp500()).unwrap();
        assert!((q.nu - 4.579).abs() < 1e-3);
        assert!((q.tau_l.unwrap() - 0.0864).abs() < 1e-4);
        // lambda = 2b/sqrt(c), direct arithmetic.
        assert!((q.lambda - 0.57594).abs() < 1e-4);
        assert_eq!(q.n_star, 4);
        assert_eq!(q.beta_range, (4, 5));
        assert!((q.tau_sigma - 15.0 * TRADING_DAY).abs() < 0.8 * TRADING_DAY);
    }

    #[test]
    fn derive_rejects_non_mean_reverting() {
        let p = ModelParams::new(-1.0, 1.0, 3.0, 0.0).unwrap();
        assert!(matches!(derive(&p), Err(Error::NonMeanReverting)));
    }

    #[test]
    fn consistency_sp500() {
        let r = check_consistency(&ModelParams::sp500());
        assert!((r.ratio - 1.7895).abs() < 1e-3);
        assert!(r.consistent());
        assert_eq!(r.ordering_holds, Some(true));
        assert_eq!(r.lower_bound_holds, Some(true));
    }

    #[test]
    fn consistency_fat_tail_demo() {
        // |a|/c ~ 0.90: third Y-moment diverges, F_3 = 3(a+c) > 0.
        let p = ModelParams::fat_tail_demo();
        let r = check_consistency(&p);
        assert!(!r.consistent());
        assert!(!r.third_moment_converges);
        assert!(p.f_coef(3) > 0.0);
        assert!((p.f_coef(3) - 5.34).abs() < 1e-6);
    }

    #[test]
    fn consistency_boundary_is_strict() {
        let p = ModelParams::new(-1.5, 1.0, 1.0, 0.0).unwrap();
        assert!(!check_consistency(&p).consistent());
    }

    #[test]
    fn stationary_moments_sp500() {
        let p = ModelParams::sp500();
        let m1 = stationary_moment(&p, 1).unwrap();
        assert!((m1 - (-p.b / p.a)).abs() < 1e-12);
        assert!((m1 - 0.053715).abs() < 1e-5);
        let m2 = stationary_moment(&p, 2).unwrap();
        let expected = 2.0 * p.b * p.b / (p.a * (2.0 * p.a + p.c));
        assert!((m2 - expected).abs() < 1e-12);
        assert!((m2 - 0.0040038).abs() < 1e-6);
        // nu = 4.579, so the fifth moment diverges.
        assert!(matches!(
            stationary_moment(&p, 5),
            Err(Error::DivergentMoment { order: 5, .. })
        ));
    }

    #[test]
    fn stationary_moment_matches_ode_fixed_point() {
        // mu_n solves F_n mu_n + A_n mu_{n-1} = 0 at stationarity.
        let p = ModelParams::sp500();
        let mut prev = 1.0;
        for n in 1..=4 {
            let m = stationary_moment(&p, n).unwrap();
            let fixed_point = -p.a_coef(n) * prev / p.f_coef(n);
            assert!((m - fixed_point).abs() <= 1e-9 * m.abs());
            prev = m;
        }
    }

    #[test]
    fn sigma_pdf_rejects_nonpositive() {
        assert!(stationary_sigma_pdf(&ModelParams::sp500(), 0.0).is_err());
        assert!(stationary_sigma_pdf(&ModelParams::sp500(), -0.3).is_err());
    }

    #[test]
    fn lambda_identity_with_first_moment() {
        // stationary_moment(1) = lambda / ((nu - 1) sqrt(c)) identically.
        let p = ModelParams::sp500();
        let lhs = stationary_moment(&p, 1).unwrap();
        let rhs = p.lambda() / ((p.nu() - 1.0) * p.c.sqrt());
        assert!((lhs - rhs).abs() <= 1e-14 * lhs.abs());
    }

    #[test]
    fn derive_is_scale_consistent() {
        let p = ModelParams::sp500();
        let s = 3.7;
        let scaled =
            ModelParams::new(p.a / s, p.b / s, p.c / s, p.rho).unwrap();
        let q = derive(&p).unwrap();
        let qs = derive(&scaled).unwrap();
        assert!((q.nu - qs.nu).abs() < 1e-12);
        assert!((qs.tau_sigma - s * q.tau_sigma).abs() < 1e-9);
        assert!((qs.tau_l.unwrap() - s * q.tau_l.unwrap()).abs() < 1e-9);
        assert!((qs.tau_a1 - s * q.tau_a1).abs() < 1e-9);
        assert!((q.d_ratio - qs.d_ratio).abs() < 1e-12);
    }

    #[test]
    fn config_roundtrip() {
        let p = ModelParams::sp500();
        let text = p.to_config_string();
        let q = ModelParams::from_config_str(&text).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(ModelParams::from_config_str("a=-1\nb=1\nc=1\nrho=2\n").is_err());
        assert!(ModelParams::from_config_str("a=-1\nb=1\n").is_err());
        assert!(matches!(
            ModelParams::from_config_str("a=-1\nnonsense\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
