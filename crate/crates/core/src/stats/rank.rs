//! Wilcoxon rank-sum (unpaired) and signed-rank (paired) tests.
//!
//! Exact p-values come from the permutation distribution of the observed
//! mid-ranks, so ties are handled exactly too. Ranks are doubled to keep the
//! counting in integers.

use super::{normal_two_tailed, Method, StatsError, TestResult};

/// Exact rank-sum enumeration up to this many observations in total.
pub const RANK_SUM_EXACT_MAX: usize = 12;
/// Exact signed-rank enumeration up to this many non-zero differences.
pub const SIGNED_RANK_EXACT_MAX: usize = 15;

/// Mid-ranks (1-based); tied values share the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    doubled_ranks(values)
        .into_iter()
        .map(|r| r as f64 / 2.0)
        .collect()
}

/// Twice the mid-ranks, which are always integers.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j+1, doubled mean = i + j + 2
        let r = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Σ (t³ − t) over groups of tied values.
fn tie_term(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        sum += t * t * t - t;
        i = j;
    }
    sum
}

pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    wilcoxon_rank_sum_with(a, b, Method::Auto)
}

/// Statistic: sum of `a`'s ranks in the pooled sample. Two-tailed p measures
/// distance from the null mean, so swapping `a` and `b` gives the same p.
pub fn wilcoxon_rank_sum_with(
    a: &[f64],
    b: &[f64],
    method: Method,
) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let r2 = doubled_ranks(&pooled);
    let w2: u64 = r2[..na].iter().sum();
    let w = w2 as f64 / 2.0;
    // doubled null mean: na (n + 1)
    let mean2 = (na * (n + 1)) as i64;
    let ties = tie_term(&pooled);

    let exact = match method {
        Method::Exact => true,
        Method::Normal => false,
        Method::Auto => n <= RANK_SUM_EXACT_MAX,
    };
    let mut result = if exact {
        let dist = subset_sum_counts(&r2, na);
        let total: f64 = dist.iter().sum();
        let observed = (w2 as i64 - mean2).abs();
        let tail: f64 = dist
            .iter()
            .enumerate()
            .filter(|&(s, _)| (s as i64 - mean2).abs() >= observed)
            .map(|(_, c)| c)
            .sum();
        TestResult::new("wilcoxon-rank-sum", w, Some(tail / total)).flag("exact")
    } else {
        let mean = mean2 as f64 / 2.0;
        let nf = n as f64;
        let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
        let (z, p) = if var > 0.0 {
            let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
            (z.copysign(w - mean), normal_two_tailed(z))
        } else {
            (0.0, 1.0)
        };
        TestResult::new("wilcoxon-rank-sum", w, Some(p))
            .extra("z", z)
            .flag("normal")
    };
    result = result
        .extra("u", w - (na * (na + 1)) as f64 / 2.0)
        .extra("n_a", na as f64)
        .extra("n_b", nb as f64);
    if ties > 0.0 {
        result = result.flag("ties");
    }
    Ok(result)
}

/// counts[s] = number of `k`-subsets of `weights` summing to `s`.
fn subset_sum_counts(weights: &[u64], k: usize) -> Vec<f64> {
    let max: usize = weights.iter().sum::<u64>() as usize;
    // dp[j][s]: subsets of size j with sum s, over the weights seen so far
    let mut dp = vec![vec![0f64; max + 1]; k + 1];
    dp[0][0] = 1.0;
    for (i, &w) in weights.iter().enumerate() {
        let w = w as usize;
        for j in (1..=k.min(i + 1)).rev() {
            let (lo, hi) = dp.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            for s in (w..=max).rev() {
                cur[s] += prev[s - w];
            }
        }
    }
    dp.swap_remove(k)
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    wilcoxon_signed_rank_with(a, b, Method::Auto)
}

/// Statistic: W+ (sum of ranks of positive differences a − b). Zero
/// differences are dropped before ranking.
pub fn wilcoxon_signed_rank_with(
    a: &[f64],
    b: &[f64],
    method: Method,
) -> Result<TestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let r2 = doubled_ranks(&abs);
    let wplus2: u64 = r2
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total2: u64 = r2.iter().sum();
    let wplus = wplus2 as f64 / 2.0;
    let wminus = (total2 - wplus2) as f64 / 2.0;
    // doubled null mean = total2 / 2 = n (n + 1) / 2
    let mean2 = (total2 / 2) as i64;
    let ties = tie_term(&abs);

    let exact = match method {
        Method::Exact => true,
        Method::Normal => false,
        Method::Auto => n <= SIGNED_RANK_EXACT_MAX,
    };
    let mut result = if exact {
        let max = total2 as usize;
        let mut dist = vec![0f64; max + 1];
        dist[0] = 1.0;
        for &w in &r2 {
            let w = w as usize;
            for s in (w..=max).rev() {
                dist[s] += dist[s - w];
            }
        }
        let all = 2f64.powi(n as i32);
        let observed = (wplus2 as i64 - mean2).abs();
        let tail: f64 = dist
            .iter()
            .enumerate()
            .filter(|&(s, _)| (s as i64 - mean2).abs() >= observed)
            .map(|(_, c)| c)
            .sum();
        TestResult::new("wilcoxon-signed-rank", wplus, Some(tail / all)).flag("exact")
    } else {
        let nf = n as f64;
        let mean = mean2 as f64 / 2.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let (z, p) = if var > 0.0 {
            let z = ((wplus - mean).abs() - 0.5).max(0.0) / var.sqrt();
            (z.copysign(wplus - mean), normal_two_tailed(z))
        } else {
            (0.0, 1.0)
        };
        TestResult::new("wilcoxon-signed-rank", wplus, Some(p))
            .extra("z", z)
            .flag("normal")
    };
    result = result.extra("w_minus", wminus).extra("n", n as f64);
    if ties > 0.0 {
        result = result.flag("ties");
    }
    Ok(result)
}
