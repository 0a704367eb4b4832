use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Paired two-sided t-test.
    T,
    /// Diebold-Mariano with Newey-West variance over `horizon − 1` lags.
    Dm { horizon: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub kind: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    /// Mean loss differential (A − B).
    pub mean_diff: f64,
    /// Set when the differential has zero variance.
    pub degenerate: bool,
}

/// Tests equal expected loss of A and B on paired losses (e.g. squared errors).
pub fn compare(loss_a: &[f64], loss_b: &[f64], kind: TestKind) -> Result<TestReport> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::InvalidData("loss vectors differ in length".into()));
    }
    let n = loss_a.len();
    if n < 5 {
        return Err(Error::InvalidData(format!(
            "need at least 5 paired losses, got {n}"
        )));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let gamma = |lag: usize| -> f64 {
        (lag..n)
            .map(|t| (d[t] - mean) * (d[t - lag] - mean))
            .sum::<f64>()
            / nf
    };
    let var_mean = match kind {
        TestKind::T => gamma(0) * nf / (nf - 1.0) / nf,
        TestKind::Dm { horizon } => {
            let lags = horizon.saturating_sub(1).min(n - 1);
            let mut lrv = gamma(0);
            for l in 1..=lags {
                let w = 1.0 - l as f64 / (lags + 1) as f64;
                lrv += 2.0 * w * gamma(l);
            }
            lrv / nf
        }
    };
    let scale = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(var_mean > 1e-30 * scale * scale) {
        return Ok(TestReport {
            kind,
            statistic: 0.0,
            p_value: 1.0,
            mean_diff: mean,
            degenerate: true,
        });
    }
    let statistic = mean / var_mean.sqrt();
    let tail = match kind {
        TestKind::T => StudentsT::new(0.0, 1.0, nf - 1.0)
            .expect("valid degrees of freedom")
            .sf(statistic.abs()),
        TestKind::Dm { .. } => Normal::standard().sf(statistic.abs()),
    };
    Ok(TestReport {
        kind,
        statistic,
        p_value: (2.0 * tail).clamp(0.0, 1.0),
        mean_diff: mean,
        degenerate: false,
    })
}

/// `***`, `**`, `*` at the 0.1%, 1% and 5% levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}
