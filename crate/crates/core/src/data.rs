//! Price/return ingestion, detrending, and empirical PDF construction.
//!
//! The trading-day calendar is positional: rows are consecutive trading days
//! and the observation spacing is uniform (1/250 yr unless stated otherwise).

use crate::error::{Error, Result};
use crate::model::TRADING_DAY;
use std::path::Path;

/// Daily close prices with ISO-8601 day stamps, strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    pub dates: Vec<String>,
    pub closes: Vec<f64>,
}

impl PriceSeries {
    pub fn new(dates: Vec<String>, closes: Vec<f64>) -> Result<Self> {
        if dates.len() != closes.len() {
            return Err(Error::Degenerate("dates/closes length mismatch".into()));
        }
        for (i, d) in dates.iter().enumerate() {
            validate_iso_date(d).map_err(|reason| Error::Parse { line: i + 1, reason })?;
        }
        if dates.windows(2).any(|w| w[0].as_str() >= w[1].as_str()) {
            return Err(Error::Degenerate(
                "dates must be strictly increasing (duplicates rejected)".into(),
            ));
        }
        if let Some(i) = closes.iter().position(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("non-positive close {}", closes[i]),
            });
        }
        Ok(PriceSeries { dates, closes })
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,close\n");
        for (d, c) in self.dates.iter().zip(&self.closes) {
            out.push_str(&format!("{d},{c:.17e}\n"));
        }
        out
    }
}

fn validate_iso_date(s: &str) -> std::result::Result<(), String> {
    let bytes = s.as_bytes();
    let ok = bytes.len() == 10
        && bytes[4] == b'-'
        && bytes[7] == b'-'
        && bytes.iter().enumerate().all(|(i, b)| i == 4 || i == 7 || b.is_ascii_digit());
    if !ok {
        return Err(format!("'{s}' is not an ISO-8601 day stamp (YYYY-MM-DD)"));
    }
    let month: u32 = s[5..7].parse().unwrap();
    let day: u32 = s[8..10].parse().unwrap();
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return Err(format!("'{s}' has out-of-range month or day"));
    }
    Ok(())
}

/// Detrended log-returns at fixed horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnSeries {
    pub values: Vec<f64>,
    /// Observation spacing in years.
    pub dt: f64,
    /// Sample mean subtracted during detrending (the empirical drift term).
    pub detrend_mean: f64,
}

impl ReturnSeries {
    /// Wraps returns that are already centred (e.g. simulated X increments).
    pub fn from_detrended(values: Vec<f64>, dt: f64) -> Self {
        ReturnSeries { values, dt, detrend_mean: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Non-overlapping sums of k consecutive returns.
    pub fn aggregate(&self, k: usize) -> Result<ReturnSeries> {
        let values = crate::simulate::aggregate_values(&self.values, k)?;
        Ok(ReturnSeries {
            values,
            dt: self.dt * k as f64,
            detrend_mean: self.detrend_mean * k as f64,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,delta_x\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v:.17e}\n"));
        }
        out
    }
}

/// Loads a two-column `date,close` file. Comma or tab delimiter is
/// auto-detected; a header row is optional.
pub fn load_prices(path: impl AsRef<Path>) -> Result<PriceSeries> {
    let text = std::fs::read_to_string(path)?;
    parse_prices(&text)
}

pub fn parse_prices(text: &str) -> Result<PriceSeries> {
    let mut dates = Vec::new();
    let mut closes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let delim = if line.contains('\t') { '\t' } else { ',' };
        let mut fields = line.split(delim);
        let date = fields.next().unwrap_or("").trim();
        let close_raw = fields.next().ok_or(Error::Parse {
            line: i + 1,
            reason: "expected two columns: date,close".into(),
        })?;
        let close: f64 = match close_raw.trim().parse() {
            Ok(v) => v,
            Err(e) => {
                if i == 0 {
                    continue; // header row
                }
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("bad close '{}': {e}", close_raw.trim()),
                });
            }
        };
        if !(close > 0.0) || !close.is_finite() {
            return Err(Error::Parse { line: i + 1, reason: format!("non-positive close {close}") });
        }
        validate_iso_date(date).map_err(|reason| Error::Parse { line: i + 1, reason })?;
        dates.push(date.to_string());
        closes.push(close);
    }
    if dates.is_empty() {
        return Err(Error::Degenerate("no price rows found".into()));
    }
    PriceSeries::new(dates, closes)
}

/// Loads a return series from either a `index,delta_x` CSV or a plain
/// one-value-per-line file. Values are re-detrended.
pub fn load_returns(path: impl AsRef<Path>, dt: f64) -> Result<ReturnSeries> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(v) => {
                return Err(Error::Parse { line: i + 1, reason: format!("non-finite value {v}") })
            }
            Err(e) => {
                if i == 0 {
                    continue; // header row
                }
                return Err(Error::Parse { line: i + 1, reason: format!("bad value: {e}") });
            }
        }
    }
    if values.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 returns".into()));
    }
    Ok(detrend(values, dt))
}

fn detrend(mut values: Vec<f64>, dt: f64) -> ReturnSeries {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in values.iter_mut() {
        *v -= mean;
    }
    ReturnSeries { values, dt, detrend_mean: mean }
}

/// Log-returns `ln(S_{t+1}/S_t)`, detrended by their sample mean, at one
/// trading day spacing.
pub fn log_returns(prices: &PriceSeries) -> Result<ReturnSeries> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 prices".into()));
    }
    let values: Vec<f64> =
        prices.closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    Ok(detrend(values, TRADING_DAY))
}

/// Density histogram.
#[derive(Clone, Debug)]
pub struct EmpiricalPdf {
    pub bin_centers: Vec<f64>,
    pub densities: Vec<f64>,
    pub counts: Vec<usize>,
    pub bin_width: f64,
}

#[derive(Clone, Copy, Debug)]
pub enum BinSpec {
    /// Freedman-Diaconis width with a symmetric range about zero.
    Auto,
    /// Fixed bin count, symmetric range about zero.
    Count(usize),
}

impl EmpiricalPdf {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,density,count\n");
        for i in 0..self.bin_centers.len() {
            out.push_str(&format!(
                "{:.12e},{:.12e},{}\n",
                self.bin_centers[i], self.densities[i], self.counts[i]
            ));
        }
        out
    }

    /// Integral of the density, equal to 1 by construction.
    pub fn total_mass(&self) -> f64 {
        self.densities.iter().sum::<f64>() * self.bin_width
    }
}

pub fn empirical_pdf(values: &[f64], bins: BinSpec) -> Result<EmpiricalPdf> {
    if values.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "need at least 100 observations for a PDF, have {}",
            values.len()
        )));
    }
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::Degenerate("all observations are zero".into()));
    }
    let n_bins = match bins {
        BinSpec::Count(n) if n >= 1 => n,
        BinSpec::Count(_) => return Err(Error::Domain("bin count must be positive".into())),
        BinSpec::Auto => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
            let iqr = q(0.75) - q(0.25);
            if iqr <= 0.0 {
                return Err(Error::Degenerate("zero interquartile range".into()));
            }
            let width = 2.0 * iqr / (values.len() as f64).cbrt();
            ((2.0 * max_abs / width).ceil() as usize).max(1)
        }
    };
    let lo = -max_abs;
    let width = 2.0 * max_abs / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for v in values {
        let idx = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let n = values.len() as f64;
    let densities: Vec<f64> = counts.iter().map(|c| *c as f64 / (n * width)).collect();
    let bin_centers: Vec<f64> =
        (0..n_bins).map(|i| lo + (i as f64 + 0.5) * width).collect();
    Ok(EmpiricalPdf { bin_centers, densities, counts, bin_width: width })
}
