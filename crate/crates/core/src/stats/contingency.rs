use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{StatsError, TestResult};

/// Pearson chi-square test of independence on an r×c table of counts.
pub fn chi_square_independence(table: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    let r = table.len();
    let c = table.first().map_or(0, Vec::len);
    if r < 2 || c < 2 {
        return Err(StatsError::DegenerateTable(format!(
            "need at least 2×2, got {r}×{c}"
        )));
    }
    if table.iter().any(|row| row.len() != c) {
        return Err(StatsError::DegenerateTable("rows differ in length".into()));
    }
    if table.iter().flatten().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(StatsError::DegenerateTable(
            "counts must be finite and non-negative".into(),
        ));
    }
    let rows: Vec<f64> = table.iter().map(|row| row.iter().sum()).collect();
    let cols: Vec<f64> = (0..c)
        .map(|j| table.iter().map(|row| row[j]).sum())
        .collect();
    if let Some(i) = rows.iter().position(|&s| s == 0.0) {
        return Err(StatsError::DegenerateTable(format!("row {i} is all zero")));
    }
    if let Some(j) = cols.iter().position(|&s| s == 0.0) {
        return Err(StatsError::DegenerateTable(format!(
            "column {j} is all zero"
        )));
    }
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rows[i] * cols[j] / total;
            stat += (o - e) * (o - e) / e;
        }
    }
    let df = ((r - 1) * (c - 1)) as f64;
    let p = ChiSquared::new(df).expect("df ≥ 1").sf(stat);
    Ok(TestResult::new("chi-square", stat, Some(p)).extra("df", df))
}
