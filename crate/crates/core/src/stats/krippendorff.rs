//! Krippendorff's alpha via the coincidence matrix, plus bootstrap tests.
//!
//! Missing cells are handled natively: a unit contributes only the pairs of
//! values it actually has, and units with fewer than two values are skipped.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{StatsError, TestResult};
use crate::store::ResponseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Nominal,
    Ordinal,
    #[default]
    Interval,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nominal" => Ok(Metric::Nominal),
            "ordinal" => Ok(Metric::Ordinal),
            "interval" => Ok(Metric::Interval),
            other => Err(format!(
                "unknown metric `{other}` (nominal, ordinal, interval)"
            )),
        }
    }
}

/// Who plays the part of the raters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Respondents rate items: units are the matrix columns.
    #[default]
    RespondentsAsRaters,
    /// Items rate respondents: units are the matrix rows.
    ItemsAsRaters,
}

impl std::str::FromStr for Orientation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "respondents" | "respondents-as-raters" => Ok(Orientation::RespondentsAsRaters),
            "items" | "items-as-raters" => Ok(Orientation::ItemsAsRaters),
            other => Err(format!(
                "unknown orientation `{other}` (respondents, items)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bootstrap {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Bootstrap {
            replicates: 10_000,
            seed: 0x00c0_ffee,
        }
    }
}

impl Bootstrap {
    fn check(&self) -> Result<(), StatsError> {
        if self.replicates == 0 {
            return Err(StatsError::InvalidParameter(
                "bootstrap needs at least one replicate".into(),
            ));
        }
        Ok(())
    }

    /// Independent stream per replicate, so results do not depend on how
    /// replicates are scheduled across threads.
    fn rng(&self, replicate: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate as u64);
        rng
    }
}

/// Matrix recoded to category indices.
#[derive(Clone)]
struct Coded {
    rows: Vec<Vec<Option<usize>>>,
    /// sorted distinct values
    values: Vec<f64>,
}

impl Coded {
    fn new(matrix: &ResponseMatrix) -> Self {
        let mut values: Vec<i64> = matrix.cells.iter().flatten().flatten().copied().collect();
        values.sort_unstable();
        values.dedup();
        let rows = matrix
            .cells
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| c.map(|v| values.binary_search(&v).expect("collected")))
                    .collect()
            })
            .collect();
        Coded {
            rows,
            values: values.into_iter().map(|v| v as f64).collect(),
        }
    }

    fn cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Alpha for the given rows, or `None` when undefined (no pairable values or
/// no variation).
fn alpha_of(
    rows: &[Vec<Option<usize>>],
    values: &[f64],
    metric: Metric,
    orientation: Orientation,
) -> Option<f64> {
    let c = values.len();
    let mut o = vec![0f64; c * c];
    let mut counts = vec![0f64; c];
    let mut add_unit = |counts: &mut Vec<f64>| {
        let m: f64 = counts.iter().sum();
        if m >= 2.0 {
            for a in 0..c {
                if counts[a] == 0.0 {
                    continue;
                }
                for b in 0..c {
                    let pairs = counts[a] * (counts[b] - f64::from(a == b));
                    if pairs > 0.0 {
                        o[a * c + b] += pairs / (m - 1.0);
                    }
                }
            }
        }
        counts.iter_mut().for_each(|x| *x = 0.0);
    };
    match orientation {
        Orientation::RespondentsAsRaters => {
            let k = rows.first().map_or(0, Vec::len);
            for j in 0..k {
                for r in rows {
                    if let Some(v) = r[j] {
                        counts[v] += 1.0;
                    }
                }
                add_unit(&mut counts);
            }
        }
        Orientation::ItemsAsRaters => {
            for r in rows {
                for v in r.iter().flatten() {
                    counts[*v] += 1.0;
                }
                add_unit(&mut counts);
            }
        }
    }
    let marg: Vec<f64> = (0..c).map(|a| (0..c).map(|b| o[a * c + b]).sum()).collect();
    let n: f64 = marg.iter().sum();
    if n < 2.0 {
        return None;
    }
    let delta = |a: usize, b: usize| -> f64 {
        match metric {
            Metric::Nominal => f64::from(a != b),
            Metric::Interval => (values[a] - values[b]).powi(2),
            Metric::Ordinal => {
                let (lo, hi) = (a.min(b), a.max(b));
                let between: f64 = marg[lo..=hi].iter().sum();
                (between - (marg[a] + marg[b]) / 2.0).powi(2)
            }
        }
    };
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for a in 0..c {
        for b in 0..c {
            if a == b {
                continue;
            }
            let d = delta(a, b);
            d_o += o[a * c + b] * d;
            d_e += marg[a] * marg[b] * d;
        }
    }
    if d_e == 0.0 {
        return None;
    }
    Some(1.0 - (n - 1.0) * d_o / d_e)
}

fn observed(coded: &Coded, metric: Metric, orientation: Orientation) -> Result<f64, StatsError> {
    if coded.rows.len() < 2 && orientation == Orientation::RespondentsAsRaters {
        return Err(StatsError::InsufficientData(
            "need at least two respondents".into(),
        ));
    }
    alpha_of(&coded.rows, &coded.values, metric, orientation).ok_or_else(|| {
        StatsError::InsufficientData("no unit has two values, or the values never vary".into())
    })
}

pub fn krippendorff_alpha(
    matrix: &ResponseMatrix,
    metric: Metric,
    orientation: Orientation,
) -> Result<f64, StatsError> {
    observed(&Coded::new(matrix), metric, orientation)
}

fn resample_rows(rows: &[Vec<Option<usize>>], rng: &mut ChaCha8Rng) -> Vec<Vec<Option<usize>>> {
    (0..rows.len())
        .map(|_| rows[rng.random_range(0..rows.len())].clone())
        .collect()
}

/// Shuffles each rater's values across the units that rater rated.
fn permute_within_raters(
    rows: &mut [Vec<Option<usize>>],
    orientation: Orientation,
    rng: &mut ChaCha8Rng,
) {
    match orientation {
        Orientation::RespondentsAsRaters => {
            for r in rows.iter_mut() {
                let mut vals: Vec<usize> = r.iter().flatten().copied().collect();
                vals.shuffle(rng);
                let mut it = vals.into_iter();
                for cell in r.iter_mut().filter(|c| c.is_some()) {
                    *cell = it.next();
                }
            }
        }
        Orientation::ItemsAsRaters => {
            let k = rows.first().map_or(0, Vec::len);
            for j in 0..k {
                let mut vals: Vec<usize> = rows.iter().filter_map(|r| r[j]).collect();
                vals.shuffle(rng);
                let mut it = vals.into_iter();
                for r in rows.iter_mut().filter(|r| r[j].is_some()) {
                    r[j] = it.next();
                }
            }
        }
    }
}

/// Significance of alpha against chance agreement.
///
/// Each replicate resamples respondents with replacement and then shuffles
/// every rater's values across units, which keeps each rater's distribution
/// but breaks any agreement on specific units. p is the fraction of
/// replicates with alpha at least as large as observed.
pub fn krippendorff_bootstrap_p(
    matrix: &ResponseMatrix,
    metric: Metric,
    orientation: Orientation,
    bootstrap: Bootstrap,
) -> Result<TestResult, StatsError> {
    bootstrap.check()?;
    let coded = Coded::new(matrix);
    let alpha = observed(&coded, metric, orientation)?;
    let draws: Vec<Option<f64>> = (0..bootstrap.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = bootstrap.rng(rep);
            let mut rows = resample_rows(&coded.rows, &mut rng);
            permute_within_raters(&mut rows, orientation, &mut rng);
            alpha_of(&rows, &coded.values, metric, orientation)
        })
        .collect();
    let valid: Vec<f64> = draws.into_iter().flatten().collect();
    if valid.is_empty() {
        return Err(StatsError::InsufficientData(
            "every bootstrap replicate was degenerate".into(),
        ));
    }
    let hits = valid.iter().filter(|&&a| a >= alpha).count();
    Ok(TestResult::new(
        "krippendorff-alpha",
        alpha,
        Some(hits as f64 / valid.len() as f64),
    )
    .extra("replicates", valid.len() as f64)
    .extra("units", coded.cols() as f64)
    .flag(metric_name(metric)))
}

/// Bootstrap test of α1 − α2 for two independent samples of respondents.
/// p is the two-tailed mass of the replicate differences beyond zero.
pub fn krippendorff_alpha_difference(
    first: &ResponseMatrix,
    second: &ResponseMatrix,
    metric: Metric,
    orientation: Orientation,
    bootstrap: Bootstrap,
) -> Result<TestResult, StatsError> {
    bootstrap.check()?;
    let c1 = Coded::new(first);
    let c2 = Coded::new(second);
    let a1 = observed(&c1, metric, orientation)?;
    let a2 = observed(&c2, metric, orientation)?;
    let mut diffs: Vec<f64> = (0..bootstrap.replicates)
        .into_par_iter()
        .filter_map(|rep| {
            let mut rng = bootstrap.rng(rep);
            let r1 = resample_rows(&c1.rows, &mut rng);
            let r2 = resample_rows(&c2.rows, &mut rng);
            Some(
                alpha_of(&r1, &c1.values, metric, orientation)?
                    - alpha_of(&r2, &c2.values, metric, orientation)?,
            )
        })
        .collect();
    if diffs.is_empty() {
        return Err(StatsError::InsufficientData(
            "every bootstrap replicate was degenerate".into(),
        ));
    }
    diffs.sort_by(f64::total_cmp);
    let b = diffs.len() as f64;
    let below = diffs.iter().filter(|&&d| d <= 0.0).count() as f64 / b;
    let above = diffs.iter().filter(|&&d| d >= 0.0).count() as f64 / b;
    let pct = |q: f64| diffs[((q * (b - 1.0)).round() as usize).min(diffs.len() - 1)];
    Ok(TestResult::new(
        "krippendorff-alpha-difference",
        a1 - a2,
        Some((2.0 * below.min(above)).min(1.0)),
    )
    .extra("alpha1", a1)
    .extra("alpha2", a2)
    .extra("ci_low", pct(0.025))
    .extra("ci_high", pct(0.975))
    .extra("replicates", b)
    .flag(metric_name(metric)))
}

fn metric_name(metric: Metric) -> &'static str {
    match metric {
        Metric::Nominal => "nominal",
        Metric::Ordinal => "ordinal",
        Metric::Interval => "interval",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[i64]]) -> ResponseMatrix {
        ResponseMatrix::from_rows(rows)
    }

    #[test]
    fn identical_respondents_agree_perfectly() {
        let mx = m(&[&[1, 2, 3, 4, 5], &[1, 2, 3, 4, 5], &[1, 2, 3, 4, 5]]);
        for metric in [Metric::Nominal, Metric::Ordinal, Metric::Interval] {
            assert_eq!(
                krippendorff_alpha(&mx, metric, Orientation::default()).unwrap(),
                1.0
            );
        }
    }

    #[test]
    fn hand_coincidence_matrix() {
        let a = krippendorff_alpha(
            &m(&[&[1, 2], &[2, 1]]),
            Metric::Nominal,
            Orientation::default(),
        )
        .unwrap();
        assert!((a + 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_cells_and_degenerate_inputs() {
        let mut mx = m(&[&[1, 2, 3], &[1, 2, 4], &[1, 3, 3]]);
        mx.cells[2][0] = None;
        assert!(krippendorff_alpha(&mx, Metric::Interval, Orientation::default()).is_ok());
        let constant = m(&[&[2, 2], &[2, 2]]);
        assert!(matches!(
            krippendorff_alpha(&constant, Metric::Interval, Orientation::default()),
            Err(StatsError::InsufficientData(_))
        ));
        let lonely = m(&[&[1, 2, 3]]);
        assert!(krippendorff_alpha(&lonely, Metric::Interval, Orientation::default()).is_err());
    }

    #[test]
    fn bootstrap_parameters() {
        let mx = m(&[&[1, 2, 3], &[1, 2, 3], &[2, 2, 3]]);
        let zero = Bootstrap {
            replicates: 0,
            seed: 1,
        };
        assert!(matches!(
            krippendorff_bootstrap_p(&mx, Metric::Interval, Orientation::default(), zero),
            Err(StatsError::InvalidParameter(_))
        ));
        assert!(matches!(
            krippendorff_alpha_difference(&mx, &mx, Metric::Interval, Orientation::default(), zero),
            Err(StatsError::InvalidParameter(_))
        ));
        let b = Bootstrap {
            replicates: 200,
            seed: 7,
        };
        let r1 =
            krippendorff_bootstrap_p(&mx, Metric::Interval, Orientation::default(), b).unwrap();
        let r2 =
            krippendorff_bootstrap_p(&mx, Metric::Interval, Orientation::default(), b).unwrap();
        assert_eq!(r1, r2);
    }
}
