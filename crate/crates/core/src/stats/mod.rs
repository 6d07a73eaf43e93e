//! Descriptive and inferential statistics for comparing survey designs.
//!
//! Every test returns a [`TestResult`]; p-values are always in `[0, 1]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod anova;
mod contingency;
mod descriptive;
mod kendall;
mod krippendorff;
mod rank;
mod reliability;
pub mod report;

pub use anova::one_way_anova;
pub use contingency::chi_square_independence;
pub use descriptive::{mean_difference_pct, mean_sd, quartiles, MeanSd, Quartiles};
pub use kendall::{kendall_tau_b, kendall_tau_b_with, KENDALL_EXACT_MAX};
pub use krippendorff::{
    krippendorff_alpha, krippendorff_alpha_difference, krippendorff_bootstrap_p, Bootstrap, Metric,
    Orientation,
};
pub use rank::{
    ranks, wilcoxon_rank_sum, wilcoxon_rank_sum_with, wilcoxon_signed_rank,
    wilcoxon_signed_rank_with, RANK_SUM_EXACT_MAX, SIGNED_RANK_EXACT_MAX,
};
pub use reliability::{
    cronbach_alpha, differentiation_index, feldt_alpha_difference, mean_differentiation,
};
pub use report::{descriptive_summary, StatReport, SurveyView};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("zero baseline mean")]
    ZeroBaseline,
    #[error("degenerate table: {0}")]
    DegenerateTable(String),
    #[error("input is constant; the statistic is undefined")]
    ConstantInput,
    #[error("need at least {needed} groups, got {got}")]
    TooFewGroups { needed: usize, got: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("total score variance is zero")]
    ZeroTotalVariance,
    #[error("alpha {0} outside the allowed range (< 1)")]
    AlphaOutOfRange(f64),
    #[error("need at least two answers, got {0}")]
    TooFewAnswers(usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// How a p-value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Exact at small sizes, normal approximation otherwise.
    #[default]
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl TestResult {
    pub fn new(name: impl Into<String>, statistic: f64, p_value: Option<f64>) -> Self {
        TestResult {
            name: name.into(),
            statistic,
            p_value: p_value.map(|p| p.clamp(0.0, 1.0)),
            extras: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    pub fn extra(mut self, key: &str, value: f64) -> Self {
        self.extras.insert(key.to_owned(), value);
        self
    }

    pub fn flag(mut self, flag: &str) -> Self {
        self.flags.push(flag.to_owned());
        self
    }

    pub fn p(&self) -> f64 {
        self.p_value.unwrap_or(f64::NAN)
    }
}

/// Standard normal two-tailed p for |z|.
pub(crate) fn normal_two_tailed(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).min(1.0)
}

/// Rounds to `digits` decimals for display.
pub fn round_to(x: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (x * f).round() / f
}
