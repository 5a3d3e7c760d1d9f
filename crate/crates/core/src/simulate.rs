//! Monte Carlo engine for the coupled SDE system with correlated Wiener
//! increments, stationary initialization from the Inverse Gamma law, and
//! return-series synthesis.
//!
//! Determinism contract: per-path randomness comes from an independent
//! substream derived from (master seed, path index), so results are
//! bit-identical across runs and thread counts, and adding paths does not
//! perturb earlier ones.

use crate::data::ReturnSeries;
use crate::error::{Error, Result};
use crate::model::{ModelParams, TRADING_DAY};
#[cfg(test)]
use crate::model::stationary_moment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Initialization of the volatility driver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitCondition {
    /// Draw Y_0 from the exact stationary Inverse Gamma law.
    Stationary,
    /// Start every path at the given value.
    FixedY(f64),
    /// Start at the stationary mean and run the given warm-up (years)
    /// before recording.
    BurnIn(f64),
}

/// Time-stepping scheme, both with full truncation (drift and diffusion
/// evaluated at max(Y, 0)).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    EulerFt,
    /// Adds the Milstein correction (c/2) max(Y,0) (dW^2 - h); exact for the
    /// multiplicative part of the diffusion.
    MilsteinFt,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Years.
    pub horizon: f64,
    /// Observation spacing in years (default one trading day).
    pub dt_obs: f64,
    /// Integrator substeps per observation.
    pub substeps: usize,
    pub seed: u64,
    pub init: InitCondition,
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn new(n_paths: usize, horizon: f64, seed: u64) -> Self {
        SimConfig {
            n_paths,
            horizon,
            dt_obs: TRADING_DAY,
            substeps: 32,
            seed,
            init: InitCondition::Stationary,
            scheme: Scheme::MilsteinFt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::Domain("n_paths must be at least 1".into()));
        }
        if self.substeps < 1 {
            return Err(Error::Domain("substeps must be at least 1".into()));
        }
        if !(self.dt_obs > 0.0) || self.horizon < self.dt_obs {
            return Err(Error::Domain("horizon must cover at least one observation".into()));
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        (self.horizon / self.dt_obs).round() as usize
    }
}

/// Simulated returns: one row of `n_obs` observation-spaced X increments per
/// path, plus the terminal (truncated) Y values.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    pub returns: Vec<Vec<f64>>,
    pub y_terminal: Vec<f64>,
    pub params: ModelParams,
    pub cfg: SimConfig,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.returns.len()
    }

    pub fn n_obs(&self) -> usize {
        self.returns.first().map_or(0, Vec::len)
    }

    /// Concatenates all paths into one return series (path order).
    pub fn to_return_series(&self) -> ReturnSeries {
        let values: Vec<f64> = self.returns.iter().flatten().copied().collect();
        ReturnSeries::from_detrended(values, self.cfg.dt_obs)
    }

    /// Non-overlapping k-day aggregation of every path.
    pub fn aggregate(&self, k: usize) -> Result<PathEnsemble> {
        let returns = self
            .returns
            .iter()
            .map(|row| aggregate_values(row, k))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = self.cfg.clone();
        cfg.dt_obs *= k as f64;
        Ok(PathEnsemble { returns, y_terminal: self.y_terminal.clone(), params: self.params, cfg })
    }

    /// CSV export, one row per path, with a `key=value` metadata sidecar.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.returns {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                out.push_str(&format!("{v:.17e}"));
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub fn metadata(&self) -> String {
        let init = match self.cfg.init {
            InitCondition::Stationary => "stationary".to_string(),
            InitCondition::FixedY(y0) => format!("fixed:{y0}"),
            InitCondition::BurnIn(t) => format!("burnin:{t}"),
        };
        let scheme = match self.cfg.scheme {
            Scheme::EulerFt => "euler-ft",
            Scheme::MilsteinFt => "milstein-ft",
        };
        format!(
            "a={}\nb={}\nc={}\nrho={}\nseed={}\nn_paths={}\nhorizon_yr={}\ndt_obs_yr={}\nsubsteps={}\ninit={}\nscheme={}\n",
            self.params.a,
            self.params.b,
            self.params.c,
            self.params.rho,
            self.cfg.seed,
            self.cfg.n_paths,
            self.cfg.horizon,
            self.cfg.dt_obs,
            self.cfg.substeps,
            init,
            scheme,
        )
    }
}

/// Non-overlapping sums of k consecutive returns.
pub fn aggregate_values(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(Error::Domain("aggregation factor must be at least 1".into()));
    }
    if values.len() < k {
        return Err(Error::InsufficientData(format!(
            "need at least {k} returns to aggregate, have {}",
            values.len()
        )));
    }
    Ok(values.chunks_exact(k).map(|chunk| chunk.iter().sum()).collect())
}

/// Draws Y_0 from its stationary law: sigma = sqrt(c) Y_0 is Inverse Gamma
/// with shape nu and scale lambda, sampled as lambda / (G sqrt(c)) with
/// G ~ Gamma(nu, 1) via the Marsaglia-Tsang squeeze (nu > 1 always holds).
pub fn sample_stationary_y(params: &ModelParams, rng: &mut impl Rng) -> f64 {
    let g = gamma_marsaglia_tsang(params.nu(), rng);
    params.lambda() / (g * params.c.sqrt())
}

fn gamma_marsaglia_tsang(shape: f64, rng: &mut impl Rng) -> f64 {
    debug_assert!(shape >= 1.0);
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = rng.gen();
        // Squeeze, then the exact acceptance test.
        if u < 1.0 - 0.0331 * x.powi(4) {
            return d * v;
        }
        if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn simulate_path(params: &ModelParams, cfg: &SimConfig, path: usize) -> (Vec<f64>, f64) {
    let mut rng = path_rng(cfg.seed, path);
    let h = cfg.dt_obs / cfg.substeps as f64;
    let sqrt_h = h.sqrt();
    let sqrt_c = params.c.sqrt();
    let rho = params.rho;
    let mix = (1.0 - rho * rho).sqrt();
    let milstein = cfg.scheme == Scheme::MilsteinFt;

    let mut y = match cfg.init {
        InitCondition::Stationary => sample_stationary_y(params, &mut rng),
        InitCondition::FixedY(y0) => y0,
        InitCondition::BurnIn(_) => -params.b / params.a,
    };
    let step = |y: &mut f64, x: &mut f64, rng: &mut ChaCha12Rng| {
        let w1: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let dw1 = sqrt_h * w1;
        let dw2 = sqrt_h * (rho * w1 + mix * z);
        let yp = y.max(0.0);
        *x += sqrt_c * yp * dw1;
        let mut y_next = *y + (params.a * yp + params.b) * h + sqrt_c * yp * dw2;
        if milstein {
            y_next += 0.5 * params.c * yp * (dw2 * dw2 - h);
        }
        *y = y_next;
    };

    if let InitCondition::BurnIn(warmup) = cfg.init {
        let n_warm = (warmup / h).round() as usize;
        let mut x_scratch = 0.0;
        for _ in 0..n_warm {
            step(&mut y, &mut x_scratch, &mut rng);
        }
    }

    let n_obs = cfg.n_obs();
    let mut returns = Vec::with_capacity(n_obs);
    let mut x = 0.0;
    for _ in 0..n_obs {
        let x_start = x;
        for _ in 0..cfg.substeps {
            step(&mut y, &mut x, &mut rng);
        }
        returns.push(x - x_start);
    }
    (returns, y.max(0.0))
}

/// Simulates the ensemble. Paths may run in parallel; output is independent
/// of thread count.
pub fn simulate(params: &ModelParams, cfg: &SimConfig) -> Result<PathEnsemble> {
    params.validate()?;
    cfg.validate()?;
    let results: Vec<(Vec<f64>, f64)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| simulate_path(params, cfg, path))
        .collect();
    let mut returns = Vec::with_capacity(cfg.n_paths);
    let mut y_terminal = Vec::with_capacity(cfg.n_paths);
    for (row, y) in results {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite return generated; reduce step size".into()));
        }
        returns.push(row);
        y_terminal.push(y);
    }
    Ok(PathEnsemble { returns, y_terminal, params: *params, cfg: cfg.clone() })
}

/// Pathwise/timewise Monte Carlo statistics with batch-means standard errors.
#[derive(Clone, Copy, Debug)]
pub enum Statistic {
    /// mean(dX^n)
    MomentPow(u32),
    /// mean(|dX|^n)
    AbsMomentPow(u32),
    /// mean(dX_t dX_{t+lag})
    LagProduct(usize),
    /// mean(dX_t^2 dX_{t+lag}^2), the volatility-clustering numerator
    SquareLagProduct(usize),
    /// mean(dX_t dX_{t+lag}^2), the leverage numerator
    LeverageProduct(usize),
}

fn path_mean(row: &[f64], stat: Statistic) -> f64 {
    match stat {
        Statistic::MomentPow(n) => {
            row.iter().map(|v| v.powi(n as i32)).sum::<f64>() / row.len() as f64
        }
        Statistic::AbsMomentPow(n) => {
            row.iter().map(|v| v.abs().powi(n as i32)).sum::<f64>() / row.len() as f64
        }
        Statistic::LagProduct(lag) => {
            let n = row.len() - lag;
            (0..n).map(|i| row[i] * row[i + lag]).sum::<f64>() / n as f64
        }
        Statistic::SquareLagProduct(lag) => {
            let n = row.len() - lag;
            (0..n)
                .map(|i| row[i] * row[i] * row[i + lag] * row[i + lag])
                .sum::<f64>()
                / n as f64
        }
        Statistic::LeverageProduct(lag) => {
            let n = row.len() - lag;
            (0..n).map(|i| row[i] * row[i + lag] * row[i + lag]).sum::<f64>() / n as f64
        }
    }
}

/// Returns (estimate, standard error). Batches are paths when there are
/// enough of them, otherwise time chunks of the concatenated series.
pub fn mc_statistic(ensemble: &PathEnsemble, stat: Statistic) -> Result<(f64, f64)> {
    if ensemble.returns.is_empty() || ensemble.n_obs() == 0 {
        return Err(Error::Degenerate("empty ensemble".into()));
    }
    let batch_means: Vec<f64> = if ensemble.n_paths() >= 8 {
        ensemble.returns.iter().map(|row| path_mean(row, stat)).collect()
    } else {
        let all: Vec<f64> = ensemble.returns.iter().flatten().copied().collect();
        let n_batches = 32.min(all.len());
        all.chunks(all.len().div_ceil(n_batches)).map(|c| path_mean(c, stat)).collect()
    };
    let n = batch_means.len() as f64;
    let mean = batch_means.iter().sum::<f64>() / n;
    let var = batch_means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::oracles::stationary_sigma_cdf;

    #[test]
    fn stationary_sampler_matches_moments() {
        let p = ModelParams::sp500();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let n = 1_000_000usize;
        let draws: Vec<f64> = (0..n).map(|_| sample_stationary_y(&p, &mut rng)).collect();
        // sqrt(c) Y has mean lambda / (nu - 1).
        let sqrt_c = p.c.sqrt();
        let mean = draws.iter().map(|y| sqrt_c * y).sum::<f64>() / n as f64;
        let expected = p.lambda() / (p.nu() - 1.0);
        assert!((expected - 0.16092).abs() < 1e-5);
        let var = draws
            .iter()
            .map(|y| (sqrt_c * y - mean) * (sqrt_c * y - mean))
            .sum::<f64>()
            / n as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean} vs {expected} (se {se})");
        // Raw moments of Y up to order 4 match the stationary products.
        for order in 1..=4u32 {
            let m = draws.iter().map(|y| y.powi(order as i32)).sum::<f64>() / n as f64;
            let m2 = draws.iter().map(|y| y.powi(2 * order as i32)).sum::<f64>() / n as f64;
            let se = ((m2 - m * m) / n as f64).sqrt();
            let exact = stationary_moment(&p, order).unwrap();
            // Higher moments have heavy-tailed estimators; allow wide but
            // principled 3 s.e. bands where the variance itself is finite.
            if p.nu() > 2.0 * order as f64 {
                assert!(
                    (m - exact).abs() < 3.0 * se,
                    "order {order}: {m} vs {exact} (se {se})"
                );
            }
        }
    }

    #[test]
    fn stationary_sampler_passes_ks() {
        let p = ModelParams::sp500();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let n = 100_000usize;
        let sqrt_c = p.c.sqrt();
        let mut sigmas: Vec<f64> =
            (0..n).map(|_| sqrt_c * sample_stationary_y(&p, &mut rng)).collect();
        sigmas.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        for (i, &s) in sigmas.iter().enumerate() {
            let cdf = stationary_sigma_cdf(&p, s).unwrap();
            d = d.max((cdf - i as f64 / n as f64).abs());
            d = d.max(((i + 1) as f64 / n as f64 - cdf).abs());
        }
        // 1% critical value of the Kolmogorov distribution.
        assert!(d * (n as f64).sqrt() <= 1.63, "KS statistic {}", d * (n as f64).sqrt());
    }

    #[test]
    fn degenerate_noiseless_volatility_is_absorbing() {
        // b -> 0 is outside the validated domain; the b = tiny, y0 = 0 start
        // keeps X identically zero because Y is absorbed at the origin.
        let p = ModelParams::new(-16.0, 1e-300, 8.9, -0.5).unwrap();
        let mut cfg = SimConfig::new(4, 10.0 * TRADING_DAY, 9);
        cfg.init = InitCondition::FixedY(0.0);
        cfg.scheme = Scheme::EulerFt;
        let ens = simulate(&p, &cfg).unwrap();
        for row in &ens.returns {
            assert!(row.iter().all(|v| v.abs() < 1e-100));
        }
    }

    #[test]
    fn zero_b_is_rejected_by_validation() {
        assert!(ModelParams::new(-16.0, 0.0, 8.9, -0.5).is_err());
        assert!(ModelParams::new(-16.0, 1.0, 0.0, -0.5).is_err());
    }

    #[test]
    fn daily_moments_match_closed_forms() {
        let p = ModelParams::sp500();
        let cfg = SimConfig::new(4_000, 1.0, 2024);
        let ens = simulate(&p, &cfg).unwrap();
        let (mean, se_mean) = mc_statistic(&ens, Statistic::MomentPow(1)).unwrap();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean} se {se_mean}");
        let (m2, se2) = mc_statistic(&ens, Statistic::MomentPow(2)).unwrap();
        let expected_var = p.c * stationary_moment(&p, 2).unwrap() * cfg.dt_obs;
        assert!(
            (m2 - expected_var).abs() < 3.0 * se2,
            "var {m2} vs {expected_var} (se {se2})"
        );
        // A-estimator identity on |dX|.
        let (abs1, se_abs) = mc_statistic(&ens, Statistic::AbsMomentPow(1)).unwrap();
        let a_est = (std::f64::consts::PI / (2.0 * cfg.dt_obs)).sqrt() * abs1;
        let a_exact = -p.c.sqrt() * p.b / p.a;
        assert!((a_exact - 0.16092).abs() < 1e-5);
        let scale = (std::f64::consts::PI / (2.0 * cfg.dt_obs)).sqrt();
        assert!(
            (a_est - a_exact).abs() < 3.0 * scale * se_abs,
            "A {a_est} vs {a_exact}"
        );
        // Returns are uncorrelated.
        let (lag, se_lag) = mc_statistic(&ens, Statistic::LagProduct(1)).unwrap();
        assert!(lag.abs() < 3.0 * se_lag);
    }

    #[test]
    fn third_moment_sign_follows_rho() {
        let p = ModelParams::sp500();
        let cfg = SimConfig::new(4_000, 1.0, 7);
        let ens = simulate(&p, &cfg).unwrap();
        let (m3, _) = mc_statistic(&ens, Statistic::MomentPow(3)).unwrap();
        assert!(m3 < 0.0, "negative skew expected for rho < 0, got {m3}");
        let p0 = ModelParams::new(p.a, p.b, p.c, 0.0).unwrap();
        let ens0 = simulate(&p0, &cfg).unwrap();
        let (m3, se3) = mc_statistic(&ens0, Statistic::MomentPow(3)).unwrap();
        assert!(m3.abs() < 3.0 * se3, "m3 {m3} se {se3}");
    }

    #[test]
    fn aggregate_definition() {
        assert_eq!(
            aggregate_values(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).unwrap(),
            vec![6.0, 15.0]
        );
        let id = aggregate_values(&[1.0, 2.0], 1).unwrap();
        assert_eq!(id, vec![1.0, 2.0]);
        assert!(aggregate_values(&[1.0], 2).is_err());
    }

    #[test]
    fn aggregated_variance_scales_linearly() {
        let p = ModelParams::sp500();
        let cfg = SimConfig::new(2_000, 1.0, 99);
        let ens = simulate(&p, &cfg).unwrap();
        let (v1, _) = mc_statistic(&ens, Statistic::MomentPow(2)).unwrap();
        let agg = ens.aggregate(5).unwrap();
        let (v5, se5) = mc_statistic(&agg, Statistic::MomentPow(2)).unwrap();
        assert!((v5 - 5.0 * v1).abs() < 3.0 * se5, "v5 {v5} vs 5*v1 {}", 5.0 * v1);
    }

    #[test]
    fn simulation_is_deterministic_and_path_stable() {
        let p = ModelParams::sp500();
        let cfg = SimConfig::new(8, 20.0 * TRADING_DAY, 1234);
        let a = simulate(&p, &cfg).unwrap();
        let b = simulate(&p, &cfg).unwrap();
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.y_terminal, b.y_terminal);
        // Growing the ensemble leaves earlier paths untouched.
        let mut bigger = cfg.clone();
        bigger.n_paths = 12;
        let c = simulate(&p, &bigger).unwrap();
        assert_eq!(&c.returns[..8], &a.returns[..]);
    }

    #[test]
    fn recorded_y_is_nonnegative() {
        let p = ModelParams::sp500();
        let mut cfg = SimConfig::new(64, 0.5, 5);
        cfg.substeps = 4; // coarse on purpose, to stress truncation
        let ens = simulate(&p, &cfg).unwrap();
        assert!(ens.y_terminal.iter().all(|y| *y >= 0.0));
    }

    #[test]
    fn scheme_convergence_in_substeps() {
        let p = ModelParams::sp500();
        let mut cfg = SimConfig::new(20_000, 50.0 * TRADING_DAY, 31);
        cfg.substeps = 16;
        let (v16, se) = mc_statistic(&simulate(&p, &cfg).unwrap(), Statistic::MomentPow(2)).unwrap();
        cfg.substeps = 32;
        let (v32, _) = mc_statistic(&simulate(&p, &cfg).unwrap(), Statistic::MomentPow(2)).unwrap();
        assert!((v32 - v16).abs() < se, "doubling substeps moved variance {v16} -> {v32} (se {se})");
    }

    #[test]
    fn burn_in_matches_stationary_start() {
        let p = ModelParams::sp500();
        let tau_sigma = -1.0 / p.a;
        let mut cfg = SimConfig::new(4_000, 1.0, 77);
        cfg.init = InitCondition::Stationary;
        let stat = simulate(&p, &cfg).unwrap();
        cfg.init = InitCondition::BurnIn(10.0 * tau_sigma);
        cfg.seed = 78;
        let burned = simulate(&p, &cfg).unwrap();
        // Two-sample z-test on first and second daily moments at the 1% level.
        for stat_kind in [Statistic::MomentPow(1), Statistic::MomentPow(2)] {
            let (m_a, se_a) = mc_statistic(&stat, stat_kind).unwrap();
            let (m_b, se_b) = mc_statistic(&burned, stat_kind).unwrap();
            let z = (m_a - m_b).abs() / (se_a * se_a + se_b * se_b).sqrt();
            assert!(z < 2.576, "z = {z} for {stat_kind:?}");
        }
    }
}
