//! HTTP service and command-line front end for convey surveys.

pub mod api;
pub mod cli;

use convey_core::stats::{
    cronbach_alpha, krippendorff_alpha, krippendorff_bootstrap_p, mean_differentiation, Bootstrap,
    Metric, Orientation, TestResult,
};
use convey_core::store::ResponseMatrix;

pub use api::{app, AppState};

/// Reliability measures for a response matrix, skipping any that are
/// undefined for the data at hand. A bootstrap adds a p-value to
/// Krippendorff's alpha.
pub fn reliability_tests(
    matrix: &ResponseMatrix,
    metric: Metric,
    orientation: Orientation,
    bootstrap: Option<Bootstrap>,
) -> Vec<TestResult> {
    let mut out = Vec::new();
    let complete = matrix.complete_rows().len() as f64;
    if let Ok(a) = cronbach_alpha(matrix) {
        out.push(
            TestResult::new("cronbach_alpha", a, None)
                .extra("items", matrix.cols() as f64)
                .extra("n", complete),
        );
    }
    let kripp = match bootstrap {
        Some(b) => krippendorff_bootstrap_p(matrix, metric, orientation, b).ok(),
        None => krippendorff_alpha(matrix, metric, orientation)
            .ok()
            .map(|a| TestResult::new("krippendorff_alpha", a, None)),
    };
    if let Some(mut t) = kripp {
        t.name = format!("krippendorff_alpha ({})", metric_name(metric));
        out.push(t);
    }
    if let Ok(d) = mean_differentiation(matrix) {
        let mut t = TestResult::new("differentiation_index", d.mean, None).extra("n", d.n as f64);
        if let Some(sd) = d.sd {
            t = t.extra("sd", sd);
        }
        out.push(t);
    }
    out
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Nominal => "nominal",
        Metric::Ordinal => "ordinal",
        Metric::Interval => "interval",
    }
}
