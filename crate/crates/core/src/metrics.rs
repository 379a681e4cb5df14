//! Point-forecast accuracy metrics and the naive2 reference forecast.
//!
//! Every function takes one slice per series; series may differ in length.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSet {
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    /// NaN when some series has a flat in-sample seasonal difference.
    pub mase: f64,
    pub owa: Option<f64>,
}

impl MetricSet {
    /// `key=value` lines with six decimals.
    pub fn render(&self) -> String {
        let mut s = format!(
            "mse={:.6}\nmae={:.6}\nsmape={:.6}\nmase={:.6}\n",
            self.mse, self.mae, self.smape, self.mase
        );
        if let Some(owa) = self.owa {
            s.push_str(&format!("owa={owa:.6}\n"));
        }
        s
    }
}

fn check_pairs(forecast: &[Vec<f64>], actual: &[Vec<f64>]) -> Result<usize> {
    if forecast.len() != actual.len() || forecast.is_empty() {
        return Err(Error::invalid(
            "metrics",
            format!("{} forecasts for {} series", forecast.len(), actual.len()),
        ));
    }
    let mut n = 0;
    for (k, (f, a)) in forecast.iter().zip(actual).enumerate() {
        if f.len() != a.len() || f.is_empty() {
            return Err(Error::invalid(
                "metrics",
                format!("series {k}: forecast length {} vs actual {}", f.len(), a.len()),
            ));
        }
        n += f.len();
    }
    Ok(n)
}

pub fn mse(forecast: &[Vec<f64>], actual: &[Vec<f64>]) -> Result<f64> {
    let n = check_pairs(forecast, actual)?;
    let s: f64 = forecast
        .iter()
        .zip(actual)
        .flat_map(|(f, a)| f.iter().zip(a).map(|(x, y)| (x - y) * (x - y)))
        .sum();
    Ok(s / n as f64)
}

pub fn mae(forecast: &[Vec<f64>], actual: &[Vec<f64>]) -> Result<f64> {
    let n = check_pairs(forecast, actual)?;
    let s: f64 = forecast
        .iter()
        .zip(actual)
        .flat_map(|(f, a)| f.iter().zip(a).map(|(x, y)| (x - y).abs()))
        .sum();
    Ok(s / n as f64)
}

fn smape_series(f: &[f64], a: &[f64]) -> f64 {
    let s: f64 = f
        .iter()
        .zip(a)
        .map(|(x, y)| {
            let den = x.abs() + y.abs();
            if den == 0.0 {
                0.0
            } else {
                (x - y).abs() / den
            }
        })
        .sum();
    200.0 * s / f.len() as f64
}

/// Mean over series of `(200/H)·Σ|ŷ−y|/(|ŷ|+|y|)`, 0/0 terms counted as 0.
pub fn smape(forecast: &[Vec<f64>], actual: &[Vec<f64>]) -> Result<f64> {
    check_pairs(forecast, actual)?;
    let s: f64 = forecast.iter().zip(actual).map(|(f, a)| smape_series(f, a)).sum();
    Ok(s / forecast.len() as f64)
}

/// In-sample mean of `|y_t − y_{t−m}|`.
pub fn seasonal_naive_scale(history: &[f64], m: usize) -> Option<f64> {
    if m == 0 || history.len() <= m {
        return None;
    }
    let s: f64 = (m..history.len()).map(|t| (history[t] - history[t - m]).abs()).sum();
    let scale = s / (history.len() - m) as f64;
    (scale > 0.0).then_some(scale)
}

/// Mean over series of MAE scaled by the in-sample seasonal-naive error.
pub fn mase(forecast: &[Vec<f64>], actual: &[Vec<f64>], history: &[Vec<f64>], m: usize) -> Result<f64> {
    check_pairs(forecast, actual)?;
    if history.len() != forecast.len() {
        return Err(Error::invalid("mase", format!("{} histories for {} series", history.len(), forecast.len())));
    }
    let mut total = 0.0;
    for (k, ((f, a), h)) in forecast.iter().zip(actual).zip(history).enumerate() {
        let scale = seasonal_naive_scale(h, m).ok_or(Error::MaseUndefined { series: k })?;
        let err: f64 = f.iter().zip(a).map(|(x, y)| (x - y).abs()).sum::<f64>() / f.len() as f64;
        total += err / scale;
    }
    Ok(total / forecast.len() as f64)
}

pub fn owa(smape: f64, mase: f64, smape_naive2: f64, mase_naive2: f64) -> f64 {
    0.5 * (smape / smape_naive2 + mase / mase_naive2)
}

/// Lag-`k` autocorrelation with the full-sample variance in the denominator.
fn acf(x: &[f64], k: usize) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let num: f64 = (0..x.len() - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum();
    let den: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    num / den
}

/// 90% autocorrelation test at lag `m`, following the M4 reference code
/// (including its unsquared lag-1 term).
pub fn seasonality_test(x: &[f64], m: usize) -> bool {
    let mut s = acf(x, 1);
    for i in 2..m {
        s += acf(x, i).powi(2);
    }
    let limit = 1.645 * ((1.0 + 2.0 * s) / x.len() as f64).sqrt();
    acf(x, m).abs() > limit
}

/// Multiplicative seasonal indices from a centred moving average of order `m`.
pub fn seasonal_indices(x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let filt: Vec<f64> = if m.is_multiple_of(2) {
        let mut f = vec![1.0 / m as f64; m + 1];
        f[0] = 0.5 / m as f64;
        f[m] = 0.5 / m as f64;
        f
    } else {
        vec![1.0 / m as f64; m]
    };
    let half = filt.len() / 2;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for t in half..n.saturating_sub(half) {
        let trend: f64 = filt.iter().enumerate().map(|(j, w)| w * x[t + j - half]).sum();
        sums[t % m] += x[t] / trend;
        counts[t % m] += 1;
    }
    let avg: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mean = avg.iter().sum::<f64>() / m as f64;
    avg.iter().map(|a| a / mean).collect()
}

/// Seasonally adjusted naive forecast of `horizon` steps.
pub fn naive2(history: &[f64], horizon: usize, m: usize) -> Vec<f64> {
    let n = history.len();
    let si = if m > 1 && n >= 3 * m && seasonality_test(history, m) {
        seasonal_indices(history, m)
    } else {
        vec![1.0; m.max(1)]
    };
    let p = si.len();
    let last = history[n - 1] / si[(n - 1) % p];
    (n..n + horizon).map(|t| last * si[t % p]).collect()
}

/// Full metric set. MASE is NaN when undefined for any series; OWA is
/// reported when `with_naive2` is set.
pub fn metrics(
    forecast: &[Vec<f64>],
    actual: &[Vec<f64>],
    history: &[Vec<f64>],
    m: usize,
    with_naive2: bool,
) -> Result<MetricSet> {
    let mase_v = match mase(forecast, actual, history, m) {
        Ok(v) => v,
        Err(Error::MaseUndefined { .. }) => f64::NAN,
        Err(e) => return Err(e),
    };
    let smape_v = smape(forecast, actual)?;
    let owa_v = if with_naive2 {
        let reference: Vec<Vec<f64>> = history
            .iter()
            .zip(actual)
            .map(|(h, a)| naive2(h, a.len(), m))
            .collect();
        let s2 = smape(&reference, actual)?;
        let m2 = mase(&reference, actual, history, m).unwrap_or(f64::NAN);
        Some(owa(smape_v, mase_v, s2, m2))
    } else {
        None
    };
    Ok(MetricSet {
        mse: mse(forecast, actual)?,
        mae: mae(forecast, actual)?,
        smape: smape_v,
        mase: mase_v,
        owa: owa_v,
    })
}
