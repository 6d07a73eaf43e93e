use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); absent for a single value.
    pub sd: Option<f64>,
    pub n: usize,
}

pub fn mean_sd(sample: &[f64]) -> Result<MeanSd, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = sample.len();
    let mean = sample.iter().sum::<f64>() / n as f64;
    let sd = (n >= 2).then(|| {
        let ss: f64 = sample.iter().map(|x| (x - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(MeanSd { mean, sd, n })
}

/// Signed percent change from `baseline` to `treatment`, rounded to the
/// nearest integer (halves away from zero).
///
/// The ratio is first rounded to 9 decimals so that a value that is a half in
/// decimal (e.g. 2.00 → 1.77 gives −11.5) is not pushed to the wrong side by
/// binary representation error.
pub fn mean_difference_pct(baseline: f64, treatment: f64) -> Result<i64, StatsError> {
    if baseline == 0.0 {
        return Err(StatsError::ZeroBaseline);
    }
    let pct = 100.0 * (treatment - baseline) / baseline;
    let cleaned = (pct * 1e9).round() / 1e9;
    Ok(cleaned.round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Quartiles by linear interpolation between order statistics.
pub fn quartiles(sample: &[f64]) -> Option<Quartiles> {
    if sample.is_empty() {
        return None;
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let h = (v.len() - 1) as f64 * q;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Some(Quartiles {
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
    })
}
