//! Closed-form moments and correlation functions of the return process.
//!
//! Everything here is exact: the moments of the volatility driver Y solve a
//! triangular chain of linear ODEs, the mixed moments <X^p Y^q> solve a
//! lattice of linear ODEs, and both live in the exponential-polynomial space,
//! so each node is obtained from one [`solve_linear_ode`] call. The closed
//! K/H coefficient expressions provide an independent algebraic route for
//! n = 2, 3 that the lattice engine is tested against.

use crate::error::{Error, Result};
use crate::exppoly::{solve_linear_ode, ExpPoly};
use crate::model::{stationary_moment, ModelParams};
use std::collections::HashMap;

/// Moments of the volatility driver at its starting time:
/// `m[k-1] = <Y_{t0}^k>` for k = 1..=len.
#[derive(Clone, Debug)]
pub struct InitialYMoments {
    m: Vec<f64>,
}

impl InitialYMoments {
    pub fn new(m: Vec<f64>) -> Self {
        InitialYMoments { m }
    }

    /// Deterministic start `Y_{t0} = y0`: `m[k] = y0^k`.
    pub fn fixed(y0: f64, max_order: u32) -> Self {
        InitialYMoments { m: (1..=max_order).map(|k| y0.powi(k as i32)).collect() }
    }

    /// Stationary start; fails if any requested moment diverges.
    pub fn stationary(params: &ModelParams, max_order: u32) -> Result<Self> {
        Ok(InitialYMoments {
            m: (1..=max_order)
                .map(|k| stationary_moment(params, k))
                .collect::<Result<_>>()?,
        })
    }

    /// `<Y_{t0}^k>`, with `moment(0) = 1`.
    pub fn moment(&self, k: u32) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.m[(k - 1) as usize]
        }
    }

    pub fn max_order(&self) -> u32 {
        self.m.len() as u32
    }
}

/// State of the volatility driver at t = 0, as seen by the X-moment engine.
#[derive(Clone, Debug)]
pub enum VolState {
    /// Symbolic t0 -> -inf limit: Y is stationary at t = 0.
    Stationary,
    /// Y started at `t0 <= 0` with the given initial moments.
    Finite { t0: f64, init: InitialYMoments },
}

/// A sampled function on an increasing grid, CSV-exportable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    YMoment,
    XMoment,
    Leverage,
    Autocorrelation,
    Pdf,
}

impl CurveKind {
    pub fn header(&self) -> &'static str {
        match self {
            CurveKind::YMoment => "# y_moment: lag_yr,value",
            CurveKind::XMoment => "# x_moment: lag_yr,value",
            CurveKind::Leverage => "# leverage: lag_yr,value",
            CurveKind::Autocorrelation => "# autocorrelation: lag_yr,value",
            CurveKind::Pdf => "# pdf: bin_center,density",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Curve {
    pub kind: CurveKind,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(kind: CurveKind, grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Domain("curve grid/values length mismatch".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("curve grid must be strictly increasing".into()));
        }
        Ok(Curve { kind, grid, values })
    }

    /// Two-column CSV with a one-line header naming the meaning and units.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(self.kind.header());
        out.push('\n');
        for (g, v) in self.grid.iter().zip(&self.values) {
            out.push_str(&format!("{g:.12e},{v:.12e}\n"));
        }
        out
    }
}

/// Solves the chain `mu_k' = F_k mu_k + A_k mu_{k-1}` for k = 1..=n as
/// exponential polynomials in the elapsed time `s = t - t0`, starting from
/// the given initial moments.
pub fn y_moment_polys(params: &ModelParams, n: u32, init: &InitialYMoments) -> Vec<ExpPoly> {
    let mut polys = Vec::with_capacity(n as usize);
    let mut prev = ExpPoly::constant(1.0);
    for k in 1..=n {
        let forcing = prev.scale(params.a_coef(k));
        let mu_k = solve_linear_ode(params.f_coef(k), &forcing, init.moment(k));
        polys.push(mu_k.clone());
        prev = mu_k;
    }
    polys
}

/// `<Y_t^n>` for a process started at `t0` with the given initial moments.
pub fn y_moment(params: &ModelParams, n: u32, t: f64, t0: f64, init: &InitialYMoments) -> f64 {
    assert!(n >= 1, "moment order must be at least 1");
    assert!(t >= t0, "t must not precede t0");
    let polys = y_moment_polys(params, n, init);
    polys[(n - 1) as usize].eval(t - t0)
}

/// Closed-form coefficients `K_j^(n)` of the expansion
/// `mu_n(t; t0) = sum_j K_j exp[F_j (t - t0)]`, for n = 2, 3.
pub fn k_coefficients(params: &ModelParams, n: u32, init: &InitialYMoments) -> Vec<f64> {
    let (a1, a2, a3) = (params.a_coef(1), params.a_coef(2), params.a_coef(3));
    let (f1, f2, f3) = (params.f_coef(1), params.f_coef(2), params.f_coef(3));
    let (m1, m2, m3) = (init.moment(1), init.moment(2), init.moment(3));
    match n {
        2 => vec![
            a2 * a1 / (f2 * f1),
            -a2 / (f2 - f1) * (m1 + a1 / f1),
            m2 + a2 / (f2 - f1) * (m1 + a1 / f2),
        ],
        3 => vec![
            -a3 * a2 * a1 / (f3 * f2 * f1),
            a3 * a2 / ((f3 - f1) * (f2 - f1)) * (m1 + a1 / f1),
            -a3 / (f3 - f2) * (m2 + a2 / (f2 - f1) * (m1 + a1 / f2)),
            m3 + a3 / (f3 - f2) * (m2 + a2 / (f3 - f1) * (m1 + a1 / f3)),
        ],
        other => panic!("k_coefficients supports n in {{2, 3}}, got {other}"),
    }
}

/// Lattice of mixed moments `M_{p,q}(t) = <X_t^p Y_t^q>` as exponential
/// polynomials in `t`, built recursively from
/// `M' = F_q M_{p,q} + A_q M_{p,q-1} + c rho p q M_{p-1,q+1}
///       + c p (p-1)/2 M_{p-2,q+2}`
/// with `M_{p,q}(0) = delta_{p,0} <Y_0^q>`.
pub struct MomentLattice {
    params: ModelParams,
    mu_at_zero: Vec<f64>,
    nodes: HashMap<(u32, u32), ExpPoly>,
    stationary: bool,
}

impl MomentLattice {
    /// `max_order` bounds the highest X-moment that will be requested.
    pub fn new(params: &ModelParams, vol: &VolState, max_order: u32) -> Result<Self> {
        let mu_at_zero: Vec<f64> = match vol {
            VolState::Stationary => (1..=max_order)
                .map(|q| stationary_moment(params, q))
                .collect::<Result<_>>()?,
            VolState::Finite { t0, init } => {
                if *t0 > 0.0 {
                    return Err(Error::Domain(format!("t0 must be <= 0, got {t0}")));
                }
                let polys = y_moment_polys(params, max_order, init);
                polys.iter().map(|p| p.eval(-t0)).collect()
            }
        };
        Ok(MomentLattice {
            params: *params,
            mu_at_zero,
            nodes: HashMap::new(),
            stationary: matches!(vol, VolState::Stationary),
        })
    }

    fn mu0(&self, q: u32) -> f64 {
        if q == 0 {
            1.0
        } else {
            self.mu_at_zero[(q - 1) as usize]
        }
    }

    /// The exponential polynomial for `<X_t^p Y_t^q>`.
    pub fn node(&mut self, p: u32, q: u32) -> ExpPoly {
        if let Some(poly) = self.nodes.get(&(p, q)) {
            return poly.clone();
        }
        let poly = if p == 0 {
            if self.stationary {
                ExpPoly::constant(self.mu0(q))
            } else {
                // Re-solve the Y chain in t from the moments at t = 0.
                let mut prev = ExpPoly::constant(1.0);
                for k in 1..=q {
                    let forcing = prev.scale(self.params.a_coef(k));
                    prev = solve_linear_ode(self.params.f_coef(k), &forcing, self.mu0(k));
                }
                prev
            }
        } else {
            let c = self.params.c;
            let rho = self.params.rho;
            let mut forcing = ExpPoly::zero();
            if q >= 1 {
                let lower = self.node(p, q - 1);
                forcing = forcing.combine(&lower, 1.0, self.params.a_coef(q));
            }
            if rho != 0.0 && q >= 1 {
                let skew = self.node(p - 1, q + 1);
                forcing = forcing.combine(&skew, 1.0, c * rho * (p * q) as f64);
            }
            if p >= 2 {
                let diff = self.node(p - 2, q + 2);
                forcing = forcing.combine(&diff, 1.0, 0.5 * c * (p * (p - 1)) as f64);
            }
            solve_linear_ode(self.params.f_coef(q), &forcing, 0.0)
        };
        self.nodes.insert((p, q), poly.clone());
        poly
    }
}

/// `<X_t^n>` from the recursive lattice solution.
pub fn x_moment(params: &ModelParams, n: u32, t: f64, vol: &VolState) -> Result<f64> {
    let mut lattice = MomentLattice::new(params, vol, n)?;
    // X^n starts at exactly zero, so the increment form is exact and avoids
    // the constant-vs-exponential cancellation at short horizons.
    Ok(lattice.node(n, 0).eval_increment(t))
}

/// The exponential polynomial `t -> <X_t^n>`; useful for sweeps.
pub fn x_moment_poly(params: &ModelParams, n: u32, vol: &VolState) -> Result<ExpPoly> {
    let mut lattice = MomentLattice::new(params, vol, n)?;
    Ok(lattice.node(n, 0))
}

/// `(e^x - 1) / x`, continuous at zero.
fn e_fn(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        f64::exp_m1(x) / x
    }
}

/// Derivative of [`e_fn`]: `(e^x (x - 1) + 1) / x^2`, with the power series
/// `sum_{j>=0} (j+1) x^j / (j+2)!` for small `|x|` where the closed form
/// cancels catastrophically.
fn e_fn_d1(x: f64) -> f64 {
    if x.abs() > 1.0 {
        (x.exp() * (x - 1.0) + 1.0) / (x * x)
    } else {
        let mut term = 0.5;
        let mut sum = term;
        for j in 1..40 {
            term *= x * (j + 1) as f64 / ((j as f64) * (j + 2) as f64);
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    }
}

/// Divided difference `(e_fn(x2) - e_fn(x1)) / (x2 - x1)`, uniformly accurate
/// down to coincident arguments (where it equals `e_fn_d1`). The naive
/// subtraction loses all digits when the arguments are close, which happens
/// whenever two moment decay rates nearly coincide.
fn e_fn_dd(x1: f64, x2: f64) -> f64 {
    let m = x1.abs().max(x2.abs());
    if m <= 1.0 {
        // sum_{k>=1} h_{k-1}(x1, x2) / (k+1)! with h_j the complete
        // homogeneous symmetric polynomials, h_j = x1 h_{j-1} + x2^j.
        let mut h = 1.0;
        let mut x2pow = 1.0;
        let mut fact = 2.0;
        let mut sum = h / fact;
        for k in 2..40u32 {
            x2pow *= x2;
            h = x1 * h + x2pow;
            fact *= (k + 1) as f64;
            let term = h / fact;
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    } else {
        if x1 == x2 {
            return e_fn_d1(x1);
        }
        // Anchor at the larger argument u; exact regrouping
        // dd = (e^u expm1(v - u)/(v - u) - e_fn(u)) / v.
        let (u, v) = if x2.abs() >= x1.abs() { (x2, x1) } else { (x1, x2) };
        if v == 0.0 {
            return (e_fn(u) - 1.0) / u;
        }
        let d = v - u;
        (u.exp() * f64::exp_m1(d) / d - e_fn(u)) / v
    }
}

/// Closed-form coefficients `H_j^(n)(t)` of
/// `<X_t^n> = sum_j H_j^(n)(t) exp(-F_j t0)`, for n = 2, 3.
pub fn h_coefficients(params: &ModelParams, n: u32, t: f64, init: &InitialYMoments) -> Vec<f64> {
    let c = params.c;
    let rho = params.rho;
    let (f1, f2, f3) = (params.f_coef(1), params.f_coef(2), params.f_coef(3));
    let a2 = params.a_coef(2);
    // (e^{Ft} - 1) / F, via exp_m1 so the absolute error scales with the
    // value (~t) rather than with e^{Ft} (~1).
    let em = |f: f64| f64::exp_m1(f * t) / f;
    match n {
        2 => {
            let k = k_coefficients(params, 2, init);
            vec![c * k[0] * t, c * k[1] * em(f1), c * k[2] * em(f2)]
        }
        3 => {
            let k2 = k_coefficients(params, 2, init);
            let k3 = k_coefficients(params, 3, init);
            let pre = 3.0 * rho * c * c;
            let t2 = t * t;
            // With x_j = f_j t:
            //   (em(f_j) - em(f_i)) / (f_j - f_i) = t^2 dd(x_i, x_j)
            //   (em(f_j) - t e^{f_j t}) / f_j    = -t^2 e_fn'(x_j)
            // so every near-cancelling difference goes through the stable
            // divided-difference primitives.
            let (x1, x2, x3) = (f1 * t, f2 * t, f3 * t);
            let h0 = pre
                * (t / f2 * (a2 * k2[0] / f1 - 2.0 * k3[0])
                    + 2.0 * k3[0] * em(f2) / f2
                    + a2 * k2[0] / (f2 - f1) * (em(f2) / f2 - em(f1) / f1));
            let h1 = pre
                * t2
                * ((a2 * k2[1] / (f2 - f1) + 2.0 * k3[1]) * e_fn_dd(x1, x2)
                    - a2 * k2[1] / (f2 - f1) * e_fn_d1(x1));
            let h2 = pre
                * t2
                * (-a2 * k2[2] / (f2 - f1) * e_fn_dd(x1, x2)
                    + (a2 * k2[2] / (f2 - f1) + 2.0 * k3[2]) * e_fn_d1(x2));
            let h3 = 6.0 * rho * c * c * k3[3] * t2 * e_fn_dd(x2, x3);
            vec![h0, h1, h2, h3]
        }
        other => panic!("h_coefficients supports n in {{2, 3}}, got {other}"),
    }
}

/// `<X_t^n>` via the closed H-coefficient expansion (n = 2, 3); the algebraic
/// cross-check route for the lattice engine.
pub fn x_moment_from_h(
    params: &ModelParams,
    n: u32,
    t: f64,
    t0: f64,
    init: &InitialYMoments,
) -> f64 {
    h_coefficients(params, n, t, init)
        .iter()
        .enumerate()
        .map(|(j, h)| h * (-params.f_coef(j as u32) * t0).exp())
        .sum()
}

/// Standardized third moment and excess kurtosis of X_t.
pub fn skewness_kurtosis(params: &ModelParams, t: f64, vol: &VolState) -> Result<(f64, f64)> {
    let mut lattice = MomentLattice::new(params, vol, 4)?;
    let m2 = lattice.node(2, 0).eval_increment(t);
    let m3 = lattice.node(3, 0).eval_increment(t);
    let m4 = lattice.node(4, 0).eval_increment(t);
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

/// Evaluation mode for the correlation functions.
#[derive(Clone, Debug)]
pub enum CorrMode {
    /// Stationary volatility (t0 -> -inf).
    Stationary,
    /// Finite start: moments of Y evaluated at time `t` for a process
    /// started at `t0` with the given initial moments.
    Finite { t: f64, t0: f64, init: InitialYMoments },
}

fn mu_at(params: &ModelParams, mode: &CorrMode, up_to: u32) -> Result<Vec<f64>> {
    match mode {
        CorrMode::Stationary => {
            (1..=up_to).map(|n| stationary_moment(params, n)).collect()
        }
        CorrMode::Finite { t, t0, init } => {
            let polys = y_moment_polys(params, up_to, init);
            Ok(polys.iter().map(|p| p.eval(t - t0)).collect())
        }
    }
}

/// Leverage correlation `L(tau) = <dX_t dX_{t+tau}^2> / <dX_t^2>^2`.
/// Zero for `tau <= 0` (Heaviside convention). Stationary mode requires the
/// third Y-moment to converge (nu > 3).
///
/// Derivation (exact): conditioning at the left edge of the later window,
/// `E[Y_s^2 | Y_u] = e^{F2 (s-u)} Y_u^2 + alpha1(s-u) Y_u + const` with
/// `alpha1(v) = 2b (e^{a v} - e^{F2 v}) / (a - F2)`, and the only covariation
/// between the early return and the later state is
/// `<dX_t Y_t^k> = k rho c mu_{k+1}(t) dt`. Hence the correlator carries the
/// moment-relaxation rates `F2 = 2a + c` and `F1 = a` only; no other time
/// scale can appear. In the stationary state the identity
/// `mu3 = -b mu2 / (a + c)` cancels the `F2` amplitude exactly, leaving the
/// pure exponential `L(tau) = L0 e^{a tau}` with `L0 = 2 rho mu3 / mu2^2 =
/// -rho a (2a + c) / (b (a + c))`: the stationary leverage decays with the
/// volatility relaxation time `1/|a|`, the same time constant as the fast
/// autocorrelation mode. (The decay-time parameter `tau_L = 2/(2|a| - c)`
/// reported by `model::derive` belongs to the summary-statistic convention
/// of `estimate::recover_params`; see `oracles::volterra_closed_form`.)
pub fn leverage(params: &ModelParams, tau: f64, mode: &CorrMode) -> Result<f64> {
    if tau <= 0.0 {
        return Ok(0.0);
    }
    match mode {
        CorrMode::Stationary => {
            if params.f_coef(3) >= 0.0 {
                return Err(Error::DivergentMoment { order: 3, nu: params.nu() });
            }
            let (a, b, c) = (params.a, params.b, params.c);
            Ok(-params.rho * a * (2.0 * a + c) / (b * (a + c)) * (a * tau).exp())
        }
        CorrMode::Finite { .. } => {
            let mu = mu_at(params, mode, 3)?;
            let (mu2, mu3) = (mu[1], mu[2]);
            let (a, b, c) = (params.a, params.b, params.c);
            let coupling = b / (a + c);
            Ok(2.0 * params.rho / (mu2 * mu2)
                * ((mu3 + coupling * mu2) * ((2.0 * a + c) * tau).exp()
                    - coupling * mu2 * (a * tau).exp()))
        }
    }
}

/// Volatility autocorrelation of squared returns at lag `tau >= 0`.
/// Stationary mode requires the fourth Y-moment to converge (nu > 4).
pub fn autocorrelation(params: &ModelParams, tau: f64, mode: &CorrMode) -> Result<f64> {
    if tau < 0.0 {
        return Err(Error::Domain(format!("autocorrelation lag must be >= 0, got {tau}")));
    }
    let (a, c) = (params.a, params.c);
    match mode {
        CorrMode::Stationary => {
            if params.f_coef(4) >= 0.0 {
                return Err(Error::DivergentMoment { order: 4, nu: params.nu() });
            }
            let d = (4.0 * a * a - 2.0 * a * c - 3.0 * c * c) * (a + c) / (c * c);
            let n1 = -(2.0 * a + 3.0 * c) * (2.0 * a + c) / c;
            let n2 = a;
            let tau_a1 = 1.0 / a.abs();
            let tau_a2 = 1.0 / (2.0 * a.abs() - c);
            Ok((n1 * (-tau / tau_a1).exp() + n2 * (-tau / tau_a2).exp()) / d)
        }
        CorrMode::Finite { .. } => {
            let mu = mu_at(params, mode, 4)?;
            let (mu1, mu2, mu3, mu4) = (mu[0], mu[1], mu[2], mu[3]);
            let coupling = 2.0 * params.b / (a + c);
            let numerator = coupling * (mu1 * mu2 - mu3)
                + ((a + c) * tau).exp()
                    * (mu4 + coupling * mu3 - mu2 * (mu2 + coupling * mu1));
            Ok((a * tau).exp() * numerator / (3.0 * mu4 - mu2 * mu2))
        }
    }
}

/// Cross-correlation `<Y_t^2 Y_{t+tau}^n>` for n = 1, 2, closed form.
pub fn cross_corr_y(
    params: &ModelParams,
    n: u32,
    tau: f64,
    t: f64,
    t0: f64,
    init: &InitialYMoments,
) -> Result<f64> {
    if tau < 0.0 {
        return Err(Error::Domain(format!("lag must be >= 0, got {tau}")));
    }
    let polys = y_moment_polys(params, 4, init);
    let mu = |k: u32| polys[(k - 1) as usize].eval(t - t0);
    let (a, b) = (params.a, params.b);
    let ea = (a * tau).exp();
    match n {
        1 => Ok(ea * mu(3) - b / a * (1.0 - ea) * mu(2)),
        2 => {
            let f2 = params.f_coef(2);
            let a2 = params.a_coef(2);
            let e2 = (f2 * tau).exp();
            Ok(e2 * mu(4) + a2 / (a - f2) * (ea - e2) * mu(3)
                - b / a
                    * (a2 / f2 * (e2 - 1.0) - a2 / (a - f2) * (ea - e2))
                    * mu(2))
        }
        other => Err(Error::Domain(format!("cross_corr_y supports n in {{1, 2}}, got {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const DAY: f64 = model::TRADING_DAY;

    fn rel_err(x: f64, y: f64) -> f64 {
        (x - y).abs() / y.abs().max(1e-300)
    }

    /// Random parameters with |a|/c > 3/2 and rho in [-0.9, -0.1].
    pub(crate) fn random_consistent_params(rng: &mut impl Rng) -> ModelParams {
        let c = rng.gen_range(1.0..20.0);
        let ratio = rng.gen_range(1.6..4.0);
        let a = -ratio * c;
        let b = rng.gen_range(0.1..3.0);
        let rho = rng.gen_range(-0.9..-0.1);
        ModelParams::new(a, b, c, rho).unwrap()
    }

    #[test]
    fn y_moment_at_start_is_initial() {
        let p = ModelParams::sp500();
        let init = InitialYMoments::fixed(0.07, 4);
        for n in 1..=4 {
            let v = y_moment(&p, n, -0.3, -0.3, &init);
            assert!(rel_err(v, init.moment(n)) < 1e-14);
        }
    }

    #[test]
    fn first_y_moment_closed_form() {
        // mu_1 = y0 e^{a s} - (b/a)(1 - e^{a s})
        let p = ModelParams::sp500();
        let y0 = 0.1;
        let init = InitialYMoments::fixed(y0, 1);
        for &s in &[0.0, 0.01, 0.1, 1.0] {
            let expected = y0 * (p.a * s).exp() - p.b / p.a * (1.0 - (p.a * s).exp());
            assert!(rel_err(y_moment(&p, 1, 0.0, -s, &init), expected) < 1e-12);
        }
    }

    #[test]
    fn y_moments_relax_to_stationary() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10 {
            let p = random_consistent_params(&mut rng);
            // The slowest mode of every mu_n chain is F_1 = a, so relaxation
            // is governed by tau_sigma = 1/|a|; the mode amplitudes relative
            // to the stationary value can reach a few tens, hence 15 e-folds
            // for a 1e-3 comparison.
            let tau_sigma = -1.0 / p.a;
            let init = InitialYMoments::fixed(0.2, 3);
            for n in 1..=3 {
                let v = y_moment(&p, n, 0.0, -15.0 * tau_sigma, &init);
                let st = stationary_moment(&p, n).unwrap();
                assert!(rel_err(v, st) < 1e-3, "n={n} v={v} st={st}");
            }
        }
    }

    #[test]
    fn k_coefficients_match_chain() {
        let p = ModelParams::sp500();
        let init = InitialYMoments::fixed(0.08, 3);
        // K_0^(2) equals the stationary second moment by construction.
        let k2 = k_coefficients(&p, 2, &init);
        assert!(rel_err(k2[0], stationary_moment(&p, 2).unwrap()) < 1e-12);
        assert!((k2[0] - 0.0040038).abs() < 1e-6);
        // Sum of K reproduces the initial moment at t = t0.
        for n in 2..=3 {
            let k = k_coefficients(&p, n, &init);
            let total: f64 = k.iter().sum();
            assert!(rel_err(total, init.moment(n)) < 1e-10);
        }
        // Expansion equals the ODE-chain polynomials over a lag grid.
        for n in 2..=3u32 {
            let k = k_coefficients(&p, n, &init);
            for i in 1..=10 {
                let s = 0.1 * i as f64;
                let expansion: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(j, kj)| kj * (p.f_coef(j as u32) * s).exp())
                    .sum();
                let chain = y_moment(&p, n, 0.0, -s, &init);
                assert!(rel_err(expansion, chain) < 1e-10);
            }
        }
    }

    #[test]
    fn odd_x_moments_vanish_without_correlation() {
        let p = ModelParams::new(-16.0, 0.86, 8.9, 0.0).unwrap();
        let vol = VolState::Finite { t0: -0.5, init: InitialYMoments::fixed(0.06, 5) };
        for n in [1u32, 3, 5] {
            let v = x_moment(&p, n, 10.0 * DAY, &vol).unwrap();
            assert!(v.abs() < 1e-14, "n={n} v={v}");
        }
    }

    #[test]
    fn stationary_second_x_moment_is_linear_in_t() {
        // <X_t^2> = c mu_2,st t in the stationary limit.
        let p = ModelParams::sp500();
        let slope = p.c * stationary_moment(&p, 2).unwrap();
        assert!((slope - 0.035934).abs() < 1e-5);
        for &t in &[DAY, 10.0 * DAY, 1.0] {
            let v = x_moment(&p, 2, t, &VolState::Stationary).unwrap();
            assert!(rel_err(v, slope * t) < 1e-12);
        }
    }

    #[test]
    fn lattice_matches_h_expansion() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = random_consistent_params(&mut rng);
            let y0 = rng.gen_range(0.01..0.3);
            let init = InitialYMoments::fixed(y0, 3);
            for &t in &[0.004, 0.02, 0.1] {
                for &t0 in &[-0.02, -0.1, -1.0] {
                    let vol = VolState::Finite { t0, init: init.clone() };
                    for n in 2..=3u32 {
                        let lattice = x_moment(&p, n, t, &vol).unwrap();
                        let closed = x_moment_from_h(&p, n, t, t0, &init);
                        assert!(
                            rel_err(lattice, closed) < 1e-9,
                            "n={n} t={t} t0={t0} lattice={lattice} closed={closed}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn h_coefficients_vanish_at_zero_lag() {
        let p = ModelParams::sp500();
        let init = InitialYMoments::fixed(0.05, 3);
        for n in 2..=3u32 {
            for h in h_coefficients(&p, n, 0.0, &init) {
                assert!(h.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn h2_leading_coefficient_is_linear() {
        let p = ModelParams::sp500();
        let init = InitialYMoments::fixed(0.05, 3);
        let k0 = k_coefficients(&p, 2, &init)[0];
        for &t in &[0.1, 0.2, 0.7] {
            let h = h_coefficients(&p, 2, t, &init);
            assert!(rel_err(h[0], p.c * k0 * t) < 1e-12);
        }
    }

    #[test]
    fn third_moment_log_slope_matches_f3() {
        // For the fat-tailed demo parameters F_3 = 3(a+c) > 0 and
        // log|<X^3>| grows linearly in -t0 with slope F_3.
        let p = ModelParams::fat_tail_demo();
        let f3 = p.f_coef(3);
        let init = InitialYMoments::fixed(-p.b / p.a, 3);
        let t = DAY;
        let t0s: Vec<f64> = (0..16).map(|i| -0.5 - 0.1 * i as f64).collect();
        let logs: Vec<f64> = t0s
            .iter()
            .map(|&t0| {
                let vol = VolState::Finite { t0, init: init.clone() };
                x_moment(&p, 3, t, &vol).unwrap().abs().ln()
            })
            .collect();
        let n = t0s.len() as f64;
        let xs: Vec<f64> = t0s.iter().map(|&t0| -t0).collect();
        let xm = xs.iter().sum::<f64>() / n;
        let ym = logs.iter().sum::<f64>() / n;
        let slope = xs
            .iter()
            .zip(&logs)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assert!(rel_err(slope, f3) < 0.01, "slope={slope} F3={f3}");
    }

    #[test]
    fn skewness_zero_without_correlation() {
        let p = ModelParams::new(-16.0, 0.86, 8.9, 0.0).unwrap();
        let (skew, _) = skewness_kurtosis(&p, 3.0 * DAY, &VolState::Stationary).unwrap();
        assert!(skew.abs() < 1e-13);
    }

    #[test]
    fn excess_kurtosis_peaks_then_decays_to_gaussian() {
        // Excess kurtosis rises mildly while the horizon is below the
        // volatility correlation time (clustering still accumulates), peaks
        // near two weeks for the sp500 preset, then decays toward the
        // Gaussian limit under the central limit theorem. The 1-day value is
        // pinned against an RK4 integration of the full moment lattice.
        let p = ModelParams::sp500();
        let kurt = |t: f64| skewness_kurtosis(&p, t, &VolState::Stationary).unwrap().1;
        let k1 = kurt(DAY);
        assert!((k1 - 27.660587).abs() < 1e-3, "k(1d) = {k1}");
        let k14 = kurt(14.0 * DAY);
        assert!(k14 > k1, "kurtosis still rising below the correlation time");
        let mut prev = k14;
        for &t in &[0.25, 0.5, 1.0, 2.0] {
            let k = kurt(t);
            assert!(k > 0.0 && k < prev, "t={t} k={k} prev={prev}");
            prev = k;
        }
        // Skewness magnitude shrinks toward zero at long horizons.
        let mut prev_skew = f64::INFINITY;
        for &t in &[1.0, 2.0, 4.0, 8.0] {
            let (skew, _) = skewness_kurtosis(&p, t, &VolState::Stationary).unwrap();
            assert!(skew < 0.0 && skew.abs() < prev_skew, "skew magnitude should decrease");
            prev_skew = skew.abs();
        }
    }

    #[test]
    fn leverage_heaviside_and_decay() {
        let p = ModelParams::sp500();
        assert_eq!(leverage(&p, -0.1, &CorrMode::Stationary).unwrap(), 0.0);
        assert_eq!(leverage(&p, 0.0, &CorrMode::Stationary).unwrap(), 0.0);
        let l0 = leverage(&p, 1e-12, &CorrMode::Stationary).unwrap();
        assert!((l0 - (-30.9515)).abs() < 5e-3, "L(0+) = {l0}");
        // The stationary decay time is the volatility relaxation time 1/|a|.
        let tau_decay = 1.0 / p.a.abs();
        let at_tau = leverage(&p, tau_decay, &CorrMode::Stationary).unwrap();
        assert!(rel_err(at_tau, l0 / std::f64::consts::E) < 1e-9);
    }

    /// Independent verification of the leverage law: build the exact
    /// discrete-window expectation `E[dX1 dX2^2]` from the moment lattice
    /// (conditioning the later window on the end of the first one) and
    /// compare with `leverage` in the small-window limit. This construction
    /// never uses the closed form, only lattice nodes `<X Y^k>` and the
    /// conditional Y-moment propagators.
    #[test]
    fn leverage_matches_conditional_moment_construction() {
        let check = |p: &ModelParams, vol: &VolState, mode: &CorrMode| {
            let f2 = p.f_coef(2);
            let delta = 1e-4; // window length, yr
            let mut lat = MomentLattice::new(p, vol, 3).unwrap();
            let n1 = lat.node(1, 1).eval(delta);
            let n2 = lat.node(1, 2).eval(delta);
            let mu2 = mu_at(p, mode, 2).unwrap()[1];
            for lag in [1usize, 5, 20, 100, 500] {
                let u0 = (lag - 1) as f64 * delta;
                let u1 = lag as f64 * delta;
                let i2 = ((f2 * u1).exp() - (f2 * u0).exp()) / f2;
                let ia = ((p.a * u1).exp() - (p.a * u0).exp()) / p.a;
                let i1 = 2.0 * p.b / (p.a - f2) * (ia - i2);
                let discrete = p.c * (i2 * n2 + i1 * n1) / (p.c * mu2 * delta).powi(2);
                let tau = lag as f64 * delta;
                let closed = leverage(p, tau, mode).unwrap();
                // The window-smearing error is O(delta / time scale) ~ 1e-3.
                assert!(
                    rel_err(discrete, closed) < 5e-3,
                    "lag {lag}: discrete {discrete} vs closed {closed}"
                );
            }
        };
        let p = ModelParams::sp500();
        check(&p, &VolState::Stationary, &CorrMode::Stationary);
        // A displaced fixed start exercises the two-exponential finite form.
        let init = InitialYMoments::fixed(-1.5 * p.b / p.a, 3);
        let vol = VolState::Finite { t0: -0.02, init: init.clone() };
        let mode = CorrMode::Finite { t: 0.0, t0: -0.02, init };
        check(&p, &vol, &mode);
    }

    #[test]
    fn leverage_sign_follows_rho() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_consistent_params(&mut rng);
            let tau = rng.gen_range(0.001..0.5);
            assert!(leverage(&p, tau, &CorrMode::Stationary).unwrap() < 0.0);
            let p0 = ModelParams::new(p.a, p.b, p.c, 0.0).unwrap();
            assert_eq!(leverage(&p0, tau, &CorrMode::Stationary).unwrap(), 0.0);
        }
    }

    #[test]
    fn finite_leverage_converges_to_stationary() {
        let p = ModelParams::sp500();
        let tau_sigma = -1.0 / p.a;
        let init = InitialYMoments::stationary(&p, 3).unwrap();
        let mode = CorrMode::Finite { t: 10.0 * tau_sigma, t0: 0.0, init };
        for i in 1..=10 {
            let tau = 0.05 * i as f64;
            let finite = leverage(&p, tau, &mode).unwrap();
            let stationary = leverage(&p, tau, &CorrMode::Stationary).unwrap();
            assert!(rel_err(finite, stationary) < 1e-6);
        }
    }

    #[test]
    fn stationary_autocorrelation_values() {
        let p = ModelParams::sp500();
        let intercept = autocorrelation(&p, 0.0, &CorrMode::Stationary).unwrap();
        assert!((intercept - 0.3106).abs() < 1e-4, "intercept = {intercept}");
        let q = model::derive(&p).unwrap();
        assert!((q.tau_a1 - 0.06226).abs() < 1e-5);
        assert!((q.tau_a2.unwrap() - 0.04320).abs() < 1e-5);
        assert!(q.tau_a2.unwrap() < q.tau_a1 && q.tau_a1 < q.tau_l.unwrap());
    }

    #[test]
    fn stationary_autocorrelation_positive_decreasing() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = random_consistent_params(&mut rng);
            if p.nu() <= 4.0 {
                continue;
            }
            let mut prev = f64::INFINITY;
            for i in 0..=20 {
                let tau = 0.05 * i as f64;
                let v = autocorrelation(&p, tau, &CorrMode::Stationary).unwrap();
                assert!(v > 0.0 && v < prev, "tau={tau} v={v} prev={prev}");
                prev = v;
            }
        }
    }

    #[test]
    fn finite_autocorrelation_converges_to_stationary() {
        let p = ModelParams::sp500();
        let tau_sigma = -1.0 / p.a;
        let init = InitialYMoments::stationary(&p, 4).unwrap();
        let mode = CorrMode::Finite { t: 10.0 * tau_sigma, t0: 0.0, init };
        for i in 0..=10 {
            let tau = 0.05 * i as f64;
            let finite = autocorrelation(&p, tau, &mode).unwrap();
            let stationary = autocorrelation(&p, tau, &CorrMode::Stationary).unwrap();
            assert!(rel_err(finite, stationary) < 1e-3);
        }
    }

    #[test]
    fn cross_corr_at_zero_lag_reduces_to_moments() {
        let p = ModelParams::sp500();
        let init = InitialYMoments::fixed(0.06, 4);
        let (t, t0) = (0.3, -0.2);
        let polys = y_moment_polys(&p, 4, &init);
        let mu3 = polys[2].eval(t - t0);
        let mu4 = polys[3].eval(t - t0);
        assert!(rel_err(cross_corr_y(&p, 1, 0.0, t, t0, &init).unwrap(), mu3) < 1e-12);
        assert!(rel_err(cross_corr_y(&p, 2, 0.0, t, t0, &init).unwrap(), mu4) < 1e-12);
    }

    #[test]
    fn stationary_mode_rejects_divergent_moments() {
        // nu = 1 - 2a/c between 3 and 4: leverage fine, autocorrelation not.
        let p = ModelParams::new(-1.25, 1.0, 1.0, -0.5).unwrap();
        assert!((3.0..4.0).contains(&p.nu()));
        assert!(leverage(&p, 0.1, &CorrMode::Stationary).is_ok());
        assert!(matches!(
            autocorrelation(&p, 0.1, &CorrMode::Stationary),
            Err(Error::DivergentMoment { order: 4, .. })
        ));
    }

    #[test]
    fn curve_validation_and_csv() {
        assert!(Curve::new(CurveKind::Leverage, vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(Curve::new(CurveKind::Leverage, vec![0.0], vec![1.0, 2.0]).is_err());
        let c = Curve::new(CurveKind::Leverage, vec![0.1, 0.2], vec![-1.0, -0.5]).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("# leverage: lag_yr,value\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
