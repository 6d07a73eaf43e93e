use std::collections::HashMap;

use super::{normal_two_tailed, Method, StatsError, TestResult};

/// Exact null distribution up to this many pairs of observations (no ties).
pub const KENDALL_EXACT_MAX: usize = 8;

pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    kendall_tau_b_with(x, y, Method::Auto)
}

/// Kendall's tau-b with two-tailed p for S = concordant − discordant.
///
/// Without ties and n ≤ 8 the p-value is exact (all n! orderings); otherwise
/// the tie-corrected normal approximation is used. S moves in steps of 2 when
/// there are no ties, so a continuity correction of 1 is applied then.
pub fn kendall_tau_b_with(x: &[f64], y: &[f64], method: Method) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    let mut s: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = (x[i] - x[j]).signum() * f64::from(x[i] != x[j]);
            let dy = (y[i] - y[j]).signum() * f64::from(y[i] != y[j]);
            s += (dx * dy) as i64;
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    let tx = tie_groups(x);
    let ty = tie_groups(y);
    let n1: f64 = tx.iter().map(|&t| t * (t - 1.0) / 2.0).sum();
    let n2: f64 = ty.iter().map(|&t| t * (t - 1.0) / 2.0).sum();
    if n1 == n0 || n2 == n0 {
        return Err(StatsError::ConstantInput);
    }
    let tau = s as f64 / ((n0 - n1) * (n0 - n2)).sqrt();
    let ties = n1 > 0.0 || n2 > 0.0;

    let exact = match method {
        Method::Exact => !ties,
        Method::Normal => false,
        Method::Auto => !ties && n <= KENDALL_EXACT_MAX,
    };
    let result = if exact {
        let counts = inversion_counts(n);
        let total: f64 = counts.iter().sum();
        let tail: f64 = counts
            .iter()
            .enumerate()
            .filter(|&(inv, _)| (n0 as i64 - 2 * inv as i64).abs() >= s.abs())
            .map(|(_, c)| c)
            .sum();
        TestResult::new("kendall-tau-b", tau, Some(tail / total)).flag("exact")
    } else {
        let nf = n as f64;
        let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
        let vt: f64 = tx.iter().map(|&t| t * (t - 1.0) * (2.0 * t + 5.0)).sum();
        let vu: f64 = ty.iter().map(|&u| u * (u - 1.0) * (2.0 * u + 5.0)).sum();
        let t1: f64 = tx.iter().map(|&t| t * (t - 1.0)).sum();
        let u1: f64 = ty.iter().map(|&u| u * (u - 1.0)).sum();
        let t2: f64 = tx.iter().map(|&t| t * (t - 1.0) * (t - 2.0)).sum();
        let u2: f64 = ty.iter().map(|&u| u * (u - 1.0) * (u - 2.0)).sum();
        let mut var = (v0 - vt - vu) / 18.0 + t1 * u1 / (2.0 * nf * (nf - 1.0));
        if n > 2 {
            var += t2 * u2 / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
        }
        let cc = if ties { 0.0 } else { 1.0 };
        let z = ((s.abs() as f64 - cc).max(0.0) / var.sqrt()).copysign(s as f64);
        TestResult::new("kendall-tau-b", tau, Some(normal_two_tailed(z)))
            .extra("z", z)
            .flag("normal")
    };
    let mut result = result.extra("s", s as f64).extra("n", n as f64);
    if ties {
        result = result.flag("ties");
    }
    Ok(result)
}

/// Sizes of groups of equal values (size ≥ 2 only).
fn tie_groups(v: &[f64]) -> Vec<f64> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for x in v {
        // +0.0 and -0.0 compare equal; fold them together
        let key = if *x == 0.0 {
            0.0f64.to_bits()
        } else {
            x.to_bits()
        };
        *counts.entry(key).or_default() += 1;
    }
    counts
        .into_values()
        .filter(|&c| c > 1)
        .map(|c| c as f64)
        .collect()
}

/// counts[k] = number of permutations of n items with k inversions.
fn inversion_counts(n: usize) -> Vec<f64> {
    let max = n * (n - 1) / 2;
    let mut dp = vec![0f64; max + 1];
    dp[0] = 1.0;
    for m in 2..=n {
        // inserting the m-th item adds 0..m-1 inversions
        let mut next = vec![0f64; max + 1];
        for (k, &c) in dp.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for add in 0..m {
                if k + add <= max {
                    next[k + add] += c;
                }
            }
        }
        dp = next;
    }
    dp
}
