use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::{StatsError, TestResult};

/// One-way ANOVA across `groups`.
///
/// With zero within-group variation the F ratio is infinite (p = 0, flagged
/// `zero-within-variance`); if all observations are equal it is undefined and
/// reported as F = 0, p = 1 with the flag `no-variance`.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups {
            needed: 2,
            got: groups.len(),
        });
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(StatsError::TooFewObservations {
            needed: 2,
            got: g.len(),
        });
    }
    let k = groups.len();
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let df1 = (k - 1) as f64;
    let df2 = (n - k) as f64;
    let result = if ssw == 0.0 && ssb == 0.0 {
        TestResult::new("one-way-anova", 0.0, Some(1.0)).flag("no-variance")
    } else if ssw == 0.0 {
        TestResult::new("one-way-anova", f64::INFINITY, Some(0.0)).flag("zero-within-variance")
    } else {
        let f = (ssb / df1) / (ssw / df2);
        let p = FisherSnedecor::new(df1, df2).expect("positive df").sf(f);
        TestResult::new("one-way-anova", f, Some(p))
    };
    Ok(result
        .extra("df_between", df1)
        .extra("df_within", df2)
        .extra("ss_between", ssb)
        .extra("ss_within", ssw))
}
