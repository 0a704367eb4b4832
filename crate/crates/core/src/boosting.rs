//! Stochastic gradient boosting with squared loss and depth-limited trees.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::persist;
use crate::rng::{draw_indices, ResamplePlan, SeedSpec};
use crate::tree::{grow_sorted, presort, TreeModel, TreeParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub steps: usize,
    pub learning_rate: f64,
    /// Fraction of rows each stage is fit on, drawn without replacement.
    pub subsample: f64,
    /// Maximum depth of each stage tree.
    pub interaction_depth: usize,
    /// Fraction of features eligible at each split of a stage tree.
    pub mtry: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            steps: 100,
            learning_rate: 0.1,
            subsample: 1.0,
            interaction_depth: 3,
            mtry: 1.0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParam(
                "boosting needs at least one step".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "learning rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "stage subsample must lie in (0, 1], got {}",
                self.subsample
            )));
        }
        if self.interaction_depth == 0 {
            return Err(Error::InvalidParam(
                "interaction depth must be at least 1".into(),
            ));
        }
        if !(self.mtry > 0.0 && self.mtry <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "mtry must lie in (0, 1], got {}",
                self.mtry
            )));
        }
        Ok(())
    }

    fn stage_tree(&self) -> TreeParams {
        TreeParams {
            min_node: 1,
            mtry: self.mtry,
            max_depth: Some(self.interaction_depth),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    n_features: usize,
    params: BoostParams,
    intercept: f64,
    stages: Vec<TreeModel>,
    /// Training MSE after 0, 1, …, S stages.
    train_mse: Vec<f64>,
}

/// Fits `params.steps` stages, each a depth-limited tree on the current
/// residuals of a fresh row subsample; residuals are updated on all rows.
pub fn boost_fit(
    x: &Matrix,
    y: &[f64],
    params: &BoostParams,
    seed: SeedSpec,
) -> Result<BoostModel> {
    params.validate()?;
    let n = x.n_rows();
    if n == 0 || x.n_cols() == 0 {
        return Err(Error::InvalidData(
            "cannot boost on an empty dataset".into(),
        ));
    }
    if y.len() != n {
        return Err(Error::InvalidData(
            "target length differs from row count".into(),
        ));
    }
    let all: Vec<usize> = (0..n).collect();
    let sorted = presort(x, &all);
    let intercept = y.iter().sum::<f64>() / n as f64;
    let tree_params = params.stage_tree();
    let plan = ResamplePlan::subsample(params.subsample, 1);

    let mut stage_sum = vec![0.0; n];
    let mut residual: Vec<f64> = y.iter().map(|v| v - intercept).collect();
    let mut train_mse = Vec::with_capacity(params.steps + 1);
    train_mse.push(mean_square(&residual));
    let mut stages = Vec::with_capacity(params.steps);
    let mut in_stage = vec![false; n];
    for t in 0..params.steps {
        let stage_seed = seed.child(t as u64);
        let lists = if params.subsample < 1.0 {
            let rows = draw_indices(&plan, 0, n, stage_seed.named("rows"))?;
            in_stage.iter_mut().for_each(|m| *m = false);
            rows.iter().for_each(|&r| in_stage[r] = true);
            sorted
                .iter()
                .map(|order| keep_marked(order, &in_stage, rows.len()))
                .collect()
        } else {
            sorted.clone()
        };
        let tree = grow_sorted(x, &residual, lists, &tree_params, stage_seed.named("tree"));
        tree.predict_add(x, params.learning_rate, &mut stage_sum);
        for i in 0..n {
            residual[i] = y[i] - (intercept + stage_sum[i]);
        }
        train_mse.push(mean_square(&residual));
        stages.push(tree);
    }
    Ok(BoostModel {
        n_features: x.n_cols(),
        params: params.clone(),
        intercept,
        stages,
        train_mse,
    })
}

/// Entries of `order` whose row is marked, in order. Branch-free, since the
/// marks are random.
pub(crate) fn keep_marked(order: &[u32], marked: &[bool], count: usize) -> Vec<u32> {
    let mut out = vec![0u32; count + 1];
    let mut j = 0;
    for &r in order {
        out[j] = r;
        j += marked[r as usize] as usize;
    }
    out.truncate(j);
    out
}

fn mean_square(v: &[f64]) -> f64 {
    v.iter().map(|r| r * r).sum::<f64>() / v.len() as f64
}

impl BoostModel {
    /// Assembles a model from explicit stages (shrinkage taken from `params`).
    pub fn from_stages(
        n_features: usize,
        params: BoostParams,
        intercept: f64,
        stages: Vec<TreeModel>,
    ) -> Result<Self> {
        if stages.iter().any(|s| s.n_features() != n_features) {
            return Err(Error::Schema(
                "stage trees disagree on the feature count".into(),
            ));
        }
        Ok(BoostModel {
            n_features,
            params,
            intercept,
            stages,
            train_mse: Vec::new(),
        })
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn stages(&self) -> &[TreeModel] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut Vec<TreeModel> {
        &mut self.stages
    }

    pub fn params(&self) -> &BoostParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Training MSE after 0..=S stages, as recorded during fitting.
    pub fn train_mse(&self) -> &[f64] {
        &self.train_mse
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.n_cols() != self.n_features {
            return Err(Error::Schema(format!(
                "boosting model expects {} columns, got {}",
                self.n_features,
                x.n_cols()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .staged_predict(x, &[self.stages.len()])?
            .pop()
            .expect("one checkpoint"))
    }

    /// Predictions of the sub-models made of the first `t` stages, for each
    /// `t` in `checkpoints` (any order, each ≤ stage count).
    pub fn staged_predict(&self, x: &Matrix, checkpoints: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check(x)?;
        if let Some(&t) = checkpoints.iter().find(|&&t| t > self.stages.len()) {
            return Err(Error::InvalidParam(format!(
                "checkpoint {t} exceeds the {} fitted stages",
                self.stages.len()
            )));
        }
        let mut order: Vec<usize> = (0..checkpoints.len()).collect();
        order.sort_by_key(|&i| checkpoints[i]);
        let mut out = vec![Vec::new(); checkpoints.len()];
        let mut stage_sum = vec![0.0; x.n_rows()];
        let mut done = 0;
        for i in order {
            while done < checkpoints[i] {
                self.stages[done].predict_add(x, self.params.learning_rate, &mut stage_sum);
                done += 1;
            }
            out[i] = stage_sum.iter().map(|s| self.intercept + s).collect();
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        persist::to_json("boost", self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        persist::from_json("boost", text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::grow;
    use rand::Rng;

    fn instance(seed: u64, n: usize, k: usize) -> (Matrix, Vec<f64>) {
        let mut rng = SeedSpec::new(seed).rng();
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
            .collect();
        let y = (0..n)
            .map(|i| {
                (6.0 * cols[0][i]).sin() + cols[1 % k][i] * cols[0][i] + 0.3 * rng.random::<f64>()
            })
            .collect();
        (Matrix::from_columns(cols).unwrap(), y)
    }

    #[test]
    fn one_stage_equals_stump_on_centered_target() {
        let (x, y) = instance(1, 80, 3);
        let params = BoostParams {
            steps: 1,
            learning_rate: 1.0,
            subsample: 1.0,
            interaction_depth: 1,
            mtry: 1.0,
        };
        let model = boost_fit(&x, &y, &params, SeedSpec::new(0)).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let centered: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let stump = grow(
            &x,
            &centered,
            &TreeParams {
                max_depth: Some(1),
                ..TreeParams::default()
            },
            SeedSpec::new(0),
        )
        .unwrap();
        let want: Vec<f64> = stump
            .predict(&x)
            .unwrap()
            .iter()
            .map(|p| mean + p)
            .collect();
        let got = model.predict(&x).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mse_non_increasing_without_subsampling() {
        let (x, y) = instance(2, 120, 4);
        let params = BoostParams {
            steps: 200,
            subsample: 1.0,
            ..BoostParams::default()
        };
        let model = boost_fit(&x, &y, &params, SeedSpec::new(0)).unwrap();
        assert!(model
            .train_mse()
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn simulation_configuration_runs() {
        let (x, y) = instance(3, 200, 5);
        let params = BoostParams {
            steps: 300,
            learning_rate: 0.1,
            subsample: 0.5,
            interaction_depth: 3,
            mtry: 1.0,
        };
        let model = boost_fit(&x, &y, &params, SeedSpec::new(4)).unwrap();
        let mse = model.train_mse();
        assert!(mse[300] < 0.2 * mse[0]);
        for tree in model.stages() {
            assert!(tree.depth() <= 3);
        }
        let again = boost_fit(&x, &y, &params, SeedSpec::new(4)).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn zero_stages_predict_the_intercept() {
        let model = BoostModel::from_stages(2, BoostParams::default(), 1.25, Vec::new()).unwrap();
        let x = Matrix::zeros(3, 2);
        assert_eq!(model.predict(&x).unwrap(), vec![1.25; 3]);
    }

    #[test]
    fn opposite_stages_cancel_exactly() {
        let (x, y) = instance(5, 50, 2);
        let tree = grow(&x, &y, &TreeParams::default(), SeedSpec::new(0)).unwrap();
        let mut neg = tree.clone();
        neg.scale_leaves(-1.0);
        let model =
            BoostModel::from_stages(2, BoostParams::default(), 0.1, vec![tree, neg]).unwrap();
        assert_eq!(model.predict(&x).unwrap(), vec![0.1; 50]);
    }

    #[test]
    fn staged_predictions_match_training_trajectory() {
        let (x, y) = instance(6, 150, 3);
        let params = BoostParams {
            steps: 60,
            subsample: 0.5,
            ..BoostParams::default()
        };
        let model = boost_fit(&x, &y, &params, SeedSpec::new(9)).unwrap();
        let checkpoints: Vec<usize> = (0..=60).collect();
        let staged = model.staged_predict(&x, &checkpoints).unwrap();
        for (t, preds) in staged.iter().enumerate() {
            let mse = preds
                .iter()
                .zip(&y)
                .map(|(p, v)| (v - p).powi(2))
                .sum::<f64>()
                / y.len() as f64;
            assert_eq!(mse, model.train_mse()[t]);
        }
    }

    #[test]
    fn removing_and_readding_last_stage_is_exact() {
        let (x, y) = instance(7, 100, 3);
        let mut model = boost_fit(&x, &y, &BoostParams::default(), SeedSpec::new(1)).unwrap();
        let before = model.predict(&x).unwrap();
        let last = model.stages_mut().pop().unwrap();
        let shorter = model.predict(&x).unwrap();
        assert_ne!(before, shorter);
        model.stages_mut().push(last);
        assert_eq!(model.predict(&x).unwrap(), before);
    }

    #[test]
    fn json_round_trip_and_schema_check() {
        let (x, y) = instance(8, 60, 3);
        let model = boost_fit(
            &x,
            &y,
            &BoostParams {
                steps: 10,
                ..BoostParams::default()
            },
            SeedSpec::new(1),
        )
        .unwrap();
        let back = BoostModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        assert!(model.predict(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let (x, y) = instance(9, 10, 1);
        for bad in [
            BoostParams {
                steps: 0,
                ..BoostParams::default()
            },
            BoostParams {
                learning_rate: 0.0,
                ..BoostParams::default()
            },
            BoostParams {
                subsample: 1.5,
                ..BoostParams::default()
            },
            BoostParams {
                interaction_depth: 0,
                ..BoostParams::default()
            },
        ] {
            assert!(matches!(
                boost_fit(&x, &y, &bad, SeedSpec::new(0)),
                Err(Error::InvalidParam(_))
            ));
        }
    }
}
