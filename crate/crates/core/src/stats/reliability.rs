use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::{mean_sd, MeanSd, StatsError, TestResult};
use crate::store::ResponseMatrix;

/// n·(n−1)·sample variance, exactly: n·Σx² − (Σx)².
fn scaled_variance(values: impl Iterator<Item = i64>) -> i128 {
    let (mut n, mut s, mut ss) = (0i128, 0i128, 0i128);
    for v in values {
        let v = i128::from(v);
        n += 1;
        s += v;
        ss += v * v;
    }
    n * ss - s * s
}

/// Cronbach's alpha over the complete rows of `matrix` (listwise deletion).
///
/// Codes are integers, so the variance ratio is formed in exact integer
/// arithmetic and only the final quotient is rounded.
pub fn cronbach_alpha(matrix: &ResponseMatrix) -> Result<f64, StatsError> {
    let k = matrix.cols();
    if k < 2 {
        return Err(StatsError::InsufficientData(format!(
            "need at least 2 items, got {k}"
        )));
    }
    let rows: Vec<Vec<i64>> = matrix
        .complete_rows()
        .into_iter()
        .map(|r| r.iter().map(|c| c.expect("complete row")).collect())
        .collect();
    if rows.len() < 2 {
        return Err(StatsError::InsufficientData(format!(
            "need at least 2 complete rows, got {}",
            rows.len()
        )));
    }
    let items: i128 = (0..k)
        .map(|j| scaled_variance(rows.iter().map(|r| r[j])))
        .sum();
    let total = scaled_variance(rows.iter().map(|r| r.iter().sum::<i64>()));
    if total == 0 {
        return Err(StatsError::ZeroTotalVariance);
    }
    let k = k as i128;
    // k/(k−1) · (1 − items/total)
    Ok((k * (total - items)) as f64 / ((k - 1) * total) as f64)
}

/// Feldt's test for two independent alphas: W = (1−α1)/(1−α2) against
/// F(n1−1, n2−1).
pub fn feldt_alpha_difference(
    alpha1: f64,
    n1: usize,
    alpha2: f64,
    n2: usize,
) -> Result<TestResult, StatsError> {
    for a in [alpha1, alpha2] {
        if !a.is_finite() || a >= 1.0 {
            return Err(StatsError::AlphaOutOfRange(a));
        }
    }
    for n in [n1, n2] {
        if n < 2 {
            return Err(StatsError::TooFewObservations { needed: 2, got: n });
        }
    }
    let w = (1.0 - alpha1) / (1.0 - alpha2);
    let (d1, d2) = ((n1 - 1) as f64, (n2 - 1) as f64);
    let f = FisherSnedecor::new(d1, d2).expect("positive df");
    let lower = f.cdf(w);
    let p = 2.0 * lower.min(f.sf(w));
    Ok(TestResult::new("feldt", w, Some(p))
        .extra("df1", d1)
        .extra("df2", d2))
}

/// Probability that two of the respondent's answers, drawn without
/// replacement, differ. Missing cells are ignored.
pub fn differentiation_index(row: &[Option<i64>]) -> Result<f64, StatsError> {
    let mut counts: HashMap<i64, u64> = HashMap::new();
    for v in row.iter().flatten() {
        *counts.entry(*v).or_default() += 1;
    }
    let n: u64 = counts.values().sum();
    if n < 2 {
        return Err(StatsError::TooFewAnswers(n as usize));
    }
    let same: u64 = counts.values().map(|&c| c * (c - 1)).sum();
    Ok(1.0 - same as f64 / (n * (n - 1)) as f64)
}

/// Mean and sd of the differentiation index over respondents with at least
/// two answers.
pub fn mean_differentiation(matrix: &ResponseMatrix) -> Result<MeanSd, StatsError> {
    let d: Vec<f64> = matrix
        .cells
        .iter()
        .filter_map(|r| differentiation_index(r).ok())
        .collect();
    if d.is_empty() {
        return Err(StatsError::InsufficientData(
            "no respondent has two answers".into(),
        ));
    }
    mean_sd(&d)
}
