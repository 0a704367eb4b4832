//! Greedy stagewise least squares and minimum-norm OLS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::persist;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyLsParams {
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for GreedyLsParams {
    fn default() -> Self {
        GreedyLsParams {
            steps: 100,
            learning_rate: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub feature: usize,
    /// Increment to the feature's original-scale coefficient.
    pub increment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyLsModel {
    params: GreedyLsParams,
    intercept: f64,
    coefficients: Vec<f64>,
    trace: Vec<Selection>,
    /// Training SSE after 0..=steps steps.
    train_sse: Vec<f64>,
}

fn column_moments(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stagewise fit: each step regresses the current residual on the single
/// standardised feature with the largest squared correlation and adds
/// `learning_rate` times that univariate coefficient. Earlier coefficients
/// are never revisited; a feature may be selected repeatedly.
pub fn greedy_ls_fit(x: &Matrix, y: &[f64], params: &GreedyLsParams) -> Result<GreedyLsModel> {
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "learning rate must lie in (0, 1], got {}",
            params.learning_rate
        )));
    }
    let n = x.n_rows();
    if n == 0 || y.len() != n {
        return Err(Error::InvalidData(
            "greedy LS needs a nonempty, consistent dataset".into(),
        ));
    }
    let k = x.n_cols();
    let moments: Vec<(f64, f64)> = (0..k).map(|j| column_moments(x.col(j))).collect();
    let scale = moments.iter().map(|m| m.1).fold(0.0, f64::max);
    let usable: Vec<usize> = (0..k)
        .filter(|&j| moments[j].1 > 1e-12 * scale.max(1e-300))
        .collect();
    let z: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let (m, s) = moments[j];
            if usable.binary_search(&j).is_ok() {
                x.col(j).iter().map(|v| (v - m) / s).collect()
            } else {
                Vec::new()
            }
        })
        .collect();

    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut residual: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut intercept = y_mean;
    let mut coefficients = vec![0.0; k];
    let mut trace = Vec::with_capacity(params.steps);
    let mut train_sse = vec![residual.iter().map(|r| r * r).sum::<f64>()];
    for _ in 0..params.steps {
        let mut best: Option<(usize, f64)> = None;
        for &j in &usable {
            let c: f64 = z[j].iter().zip(&residual).map(|(a, b)| a * b).sum();
            if best.is_none_or(|(_, bc)| c * c > bc * bc) {
                best = Some((j, c));
            }
        }
        let Some((j, c)) = best else { break };
        let gamma = params.learning_rate * c / n as f64;
        residual
            .iter_mut()
            .zip(&z[j])
            .for_each(|(r, zv)| *r -= gamma * zv);
        let (m, s) = moments[j];
        coefficients[j] += gamma / s;
        intercept -= gamma * m / s;
        trace.push(Selection {
            feature: j,
            increment: gamma / s,
        });
        train_sse.push(residual.iter().map(|r| r * r).sum());
    }
    Ok(GreedyLsModel {
        params: params.clone(),
        intercept,
        coefficients,
        trace,
        train_sse,
    })
}

impl GreedyLsModel {
    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn trace(&self) -> &[Selection] {
        &self.trace
    }

    pub fn train_sse(&self) -> &[f64] {
        &self.train_sse
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        linear_predict(self.intercept, &self.coefficients, x)
    }

    pub fn to_json(&self) -> Result<String> {
        persist::to_json("greedy_ls", self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        persist::from_json("greedy_ls", text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    intercept: f64,
    coefficients: Vec<f64>,
}

/// Least squares with an intercept; the minimum-norm solution (pseudo-inverse
/// of the centred design) when the design is rank deficient.
pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<OlsModel> {
    let n = x.n_rows();
    if n == 0 || y.len() != n {
        return Err(Error::InvalidData(
            "OLS needs a nonempty, consistent dataset".into(),
        ));
    }
    let k = x.n_cols();
    let means: Vec<f64> = (0..k)
        .map(|j| x.col(j).iter().sum::<f64>() / n as f64)
        .collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if k == 0 {
        return Ok(OlsModel {
            intercept: y_mean,
            coefficients: Vec::new(),
        });
    }
    let a = DMatrix::from_fn(n, k, |i, j| x.get(i, j) - means[j]);
    let b = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let svd = a.svd(true, true);
    let s_max = svd.singular_values.max();
    let eps = n.max(k) as f64 * f64::EPSILON * s_max;
    let beta = svd
        .solve(&b, eps)
        .map_err(|e| Error::InvalidData(format!("least-squares solve failed: {e}")))?;
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&means)
            .map(|(c, m)| c * m)
            .sum::<f64>();
    Ok(OlsModel {
        intercept,
        coefficients,
    })
}

impl OlsModel {
    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        linear_predict(self.intercept, &self.coefficients, x)
    }

    pub fn to_json(&self) -> Result<String> {
        persist::to_json("ols", self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        persist::from_json("ols", text)
    }
}

fn linear_predict(intercept: f64, coefficients: &[f64], x: &Matrix) -> Result<Vec<f64>> {
    if x.n_cols() != coefficients.len() {
        return Err(Error::Schema(format!(
            "linear model expects {} columns, got {}",
            coefficients.len(),
            x.n_cols()
        )));
    }
    let mut out = vec![intercept; x.n_rows()];
    for (j, &c) in coefficients.iter().enumerate() {
        if c != 0.0 {
            out.iter_mut().zip(x.col(j)).for_each(|(o, v)| *o += c * v);
        }
    }
    Ok(out)
}
