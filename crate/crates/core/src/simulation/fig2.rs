use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mse;
use crate::data::{fmt_real, Dataset, Matrix};
use crate::dgp::{Dgp, DgpKind, DgpSpec};
use crate::ensemble::{ensemble_fit_members, BaseLearner, EnsembleSpec};
use crate::error::{Error, Result};
use crate::linear::{ols_fit, GreedyLsParams};
use crate::rng::{ResamplePlan, SeedSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig2Spec {
    /// Numbers of useless regressors added to the true ones.
    pub grid: Vec<usize>,
    /// Model draws averaged per prediction (fresh useless regressors each).
    pub models: usize,
    /// Bootstrap replicas per Greedy LS model.
    pub bags: usize,
    pub n: usize,
    pub n_test: usize,
    pub snr: f64,
    pub k_signal: usize,
    pub reps: usize,
    pub greedy: GreedyLsParams,
    pub seed: u64,
}

impl Default for Fig2Spec {
    fn default() -> Self {
        Fig2Spec {
            grid: vec![0, 30, 60, 90, 120],
            models: 50,
            bags: 20,
            n: 100,
            n_test: 1000,
            snr: 2.0,
            k_signal: 10,
            reps: 20,
            greedy: GreedyLsParams::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig2Point {
    pub useless: usize,
    pub mse_greedy: f64,
    pub mse_ols: f64,
    pub mse_oracle: f64,
}

impl Fig2Point {
    pub fn greedy_log_ratio(&self) -> f64 {
        (self.mse_greedy / self.mse_oracle).ln()
    }

    pub fn ols_log_ratio(&self) -> f64 {
        (self.mse_ols / self.mse_oracle).ln()
    }
}

fn with_useless(data: &Dataset, extra: &[Vec<f64>]) -> Result<Dataset> {
    let x = data.design();
    let mut cols: Vec<Vec<f64>> = (0..x.n_cols()).map(|j| x.col(j).to_vec()).collect();
    cols.extend(extra.iter().cloned());
    Dataset::from_matrix(&Matrix::from_columns(cols)?, data.target().to_vec())
}

/// Test MSEs (greedy, OLS, oracle) for one replication at one grid point.
fn cell(spec: &Fig2Spec, rep: usize, useless: usize) -> Result<[f64; 3]> {
    let rep_seed = SeedSpec::new(spec.seed).child(rep as u64);
    let dgp = Dgp::new(&DgpSpec {
        n_test: spec.n_test,
        k_signal: spec.k_signal,
        k_noise: 0,
        ..DgpSpec::new(
            DgpKind::Linear,
            spec.n,
            spec.snr,
            rep_seed.named("dgp").key(),
        )
    })?;
    let (train, test) = dgp.generate();
    let oracle =
        ols_fit(&train.data.design(), train.data.target())?.predict(&test.data.design())?;

    let mut greedy = vec![0.0; spec.n_test];
    let mut ols = vec![0.0; spec.n_test];
    for m in 0..spec.models {
        let seed = rep_seed.child(useless as u64).child(m as u64);
        let mut rng = seed.named("useless").rng();
        let mut draw = |rows: usize| -> Vec<Vec<f64>> {
            (0..useless)
                .map(|_| (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect()
        };
        let extra_train = draw(spec.n);
        let extra_test = draw(spec.n_test);
        let tr = with_useless(&train.data, &extra_train)?;
        let te = with_useless(&test.data, &extra_test)?;

        let bagged = EnsembleSpec {
            resample: ResamplePlan::bootstrap(spec.bags),
            seed: seed.named("bags"),
            ..EnsembleSpec::single(BaseLearner::GreedyLs(spec.greedy.clone()), 0)
        };
        let g = ensemble_fit_members(&tr, &bagged)?.predict(te.features())?;
        let o = ols_fit(&tr.design(), tr.target())?.predict(&te.design())?;
        greedy
            .iter_mut()
            .zip(&g)
            .for_each(|(a, v)| *a += v / spec.models as f64);
        ols.iter_mut()
            .zip(&o)
            .for_each(|(a, v)| *a += v / spec.models as f64);
    }
    let y = test.data.target();
    Ok([mse(&greedy, y), mse(&ols, y), mse(&oracle, y)])
}

/// Averaged Greedy LS and OLS against the true-regressor OLS as useless
/// regressors are added. MSEs are averaged over replications before the
/// log ratios are taken.
pub fn run_fig2(spec: &Fig2Spec) -> Result<Vec<Fig2Point>> {
    if spec.grid.is_empty() || spec.models == 0 || spec.bags == 0 || spec.reps == 0 || spec.n < 2 {
        return Err(Error::InvalidParam(
            "fig2 needs a grid, models, bags, reps and n ≥ 2".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = spec
        .grid
        .iter()
        .flat_map(|&x| (0..spec.reps).map(move |r| (x, r)))
        .collect();
    let results: Vec<Result<[f64; 3]>> = jobs.par_iter().map(|&(x, r)| cell(spec, r, x)).collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(spec
        .grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let chunk = &results[i * spec.reps..(i + 1) * spec.reps];
            let avg = |k: usize| chunk.iter().map(|c| c[k]).sum::<f64>() / spec.reps as f64;
            Fig2Point {
                useless: x,
                mse_greedy: avg(0),
                mse_ols: avg(1),
                mse_oracle: avg(2),
            }
        })
        .collect())
}

pub fn write_fig2_csv(points: &[Fig2Point]) -> String {
    let mut out = String::from(
        "useless,mse_greedy_ls,mse_ols,mse_oracle,log_ratio_greedy_ls,log_ratio_ols\n",
    );
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.useless,
            fmt_real(p.mse_greedy),
            fmt_real(p.mse_ols),
            fmt_real(p.mse_oracle),
            fmt_real(p.greedy_log_ratio()),
            fmt_real(p.ols_log_ratio())
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_useless_regressors_means_ols_is_the_oracle() {
        let spec = Fig2Spec {
            grid: vec![0],
            models: 2,
            bags: 3,
            reps: 2,
            n_test: 200,
            ..Fig2Spec::default()
        };
        let p = &run_fig2(&spec).unwrap()[0];
        assert!(p.ols_log_ratio().abs() < 1e-12);
        assert!(p.greedy_log_ratio().abs() < 0.3, "{}", p.greedy_log_ratio());
    }

    #[test]
    fn csv_shape() {
        let spec = Fig2Spec {
            grid: vec![0, 5],
            models: 1,
            bags: 2,
            reps: 1,
            n_test: 50,
            ..Fig2Spec::default()
        };
        let csv = write_fig2_csv(&run_fig2(&spec).unwrap());
        assert_eq!(csv.lines().count(), 3);
    }
}
