use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{compare, r2, stars, Family, TestKind, TestReport};
use crate::data::{fmt_real, outlier_filter, Dataset};
use crate::ensemble::{ensemble_fit, ensemble_fit_members, make_recipe, BaseModel, EnsembleSpec};
use crate::error::{Error, Result};
use crate::rng::SeedSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchModel {
    CartPlain,
    CartTuned,
    Rf,
    BoostPlain,
    BoostTuned,
    BpBoost,
    Booging,
    MarsPlain,
    MarsTuned,
    BpMars,
    Marsquake,
}

impl BenchModel {
    pub const ALL: [BenchModel; 11] = [
        BenchModel::CartPlain,
        BenchModel::CartTuned,
        BenchModel::Rf,
        BenchModel::BoostPlain,
        BenchModel::BoostTuned,
        BenchModel::BpBoost,
        BenchModel::Booging,
        BenchModel::MarsPlain,
        BenchModel::MarsTuned,
        BenchModel::BpMars,
        BenchModel::Marsquake,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchModel::CartPlain => "cart_plain",
            BenchModel::CartTuned => "cart_tuned",
            BenchModel::Rf => "rf",
            BenchModel::BoostPlain => "boost_plain",
            BenchModel::BoostTuned => "boost_tuned",
            BenchModel::BpBoost => "bp_boost",
            BenchModel::Booging => "booging",
            BenchModel::MarsPlain => "mars_plain",
            BenchModel::MarsTuned => "mars_tuned",
            BenchModel::BpMars => "bp_mars",
            BenchModel::Marsquake => "marsquake",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        BenchModel::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::InvalidParam(format!("unknown bench model '{name}'")))
    }

    pub fn family(self) -> Family {
        match self {
            BenchModel::CartPlain | BenchModel::CartTuned | BenchModel::Rf => Family::Tree,
            BenchModel::BoostPlain
            | BenchModel::BoostTuned
            | BenchModel::BpBoost
            | BenchModel::Booging => Family::Boosting,
            _ => Family::Mars,
        }
    }

    /// The CV-tuned model of the same family, which the others are tested against.
    pub fn reference(self) -> Option<BenchModel> {
        let tuned = match self.family() {
            Family::Tree => BenchModel::CartTuned,
            Family::Boosting => BenchModel::BoostTuned,
            Family::Mars => BenchModel::MarsTuned,
        };
        (tuned != self).then_some(tuned)
    }

    fn recipe(self) -> Option<&'static str> {
        match self {
            BenchModel::Rf => Some("rf"),
            BenchModel::BpBoost => Some("bp_boost"),
            BenchModel::Booging => Some("booging"),
            BenchModel::BpMars => Some("bp_mars"),
            BenchModel::Marsquake => Some("marsquake"),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub models: Vec<BenchModel>,
    pub tree_grid: Vec<usize>,
    pub boost_grid: Vec<usize>,
    pub mars_grid: Vec<usize>,
    pub folds: usize,
    /// Ensemble size of the recipe models, including the RF fallback.
    pub members: usize,
    pub test_kind: TestKind,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            models: BenchModel::ALL.to_vec(),
            tree_grid: Family::Tree.default_grid(),
            boost_grid: Family::Boosting.default_grid(),
            mars_grid: Family::Mars.default_grid(),
            folds: 5,
            members: 100,
            test_kind: TestKind::T,
            seed: 0,
        }
    }
}

impl BenchSpec {
    fn grid(&self, family: Family) -> &[usize] {
        match family {
            Family::Tree => &self.tree_grid,
            Family::Boosting => &self.boost_grid,
            Family::Mars => &self.mars_grid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: BenchModel,
    pub r2_train: f64,
    pub r2_test: f64,
    /// Depth chosen by CV, for tuned models.
    pub depth: Option<usize>,
    pub reference: Option<BenchModel>,
    pub report: Option<TestReport>,
    /// Test predictions after the outlier filter.
    pub test_pred: Vec<f64>,
}

/// Fit of the plain family learner at `depth`, or staged at every grid point.
fn plain_paths(
    family: Family,
    grid: &[usize],
    train: &Dataset,
    evals: &[&Dataset],
    seed: SeedSpec,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let x = train.design();
    if family.staged() {
        let model = BaseModel::fit(
            &family.plain(family.deepest(grid)),
            &x,
            train.target(),
            seed,
        )?;
        evals
            .iter()
            .map(|d| model.staged_predict(&d.design(), grid))
            .collect()
    } else {
        let mut out = vec![Vec::new(); evals.len()];
        for &depth in grid {
            let model = BaseModel::fit(&family.plain(depth), &x, train.target(), seed)?;
            for (o, d) in out.iter_mut().zip(evals) {
                o.push(model.predict(&d.design())?);
            }
        }
        Ok(out)
    }
}

/// Grid point with the lowest K-fold CV MSE (first on ties).
fn cv_depth(
    family: Family,
    grid: &[usize],
    train: &Dataset,
    folds: usize,
    seed: SeedSpec,
) -> Result<usize> {
    let n = train.n_rows();
    if folds < 2 || folds > n {
        return Err(Error::InvalidParam(format!(
            "cannot run {folds}-fold CV on {n} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.named("folds").rng());
    let mut sse = vec![0.0; grid.len()];
    for f in 0..folds {
        let held: Vec<usize> = order.iter().copied().skip(f).step_by(folds).collect();
        let mut in_fold = vec![false; n];
        held.iter().for_each(|&i| in_fold[i] = true);
        let kept: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
        let fit = train.select_rows(&kept);
        let val = train.select_rows(&held);
        let preds = plain_paths(family, grid, &fit, &[&val], seed.child(f as u64))?.remove(0);
        for (s, p) in sse.iter_mut().zip(&preds) {
            *s += p
                .iter()
                .zip(val.target())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
    }
    let best = sse
        .iter()
        .enumerate()
        .fold(0, |b, (i, &s)| if s < sse[b] { i } else { b });
    Ok(grid[best])
}

fn recipe_spec(name: &str, spec: &BenchSpec, seed: SeedSpec) -> Result<EnsembleSpec> {
    let mut e = make_recipe(name, &[("members".into(), spec.members.to_string())])?;
    e.seed = seed;
    Ok(e)
}

/// Fits each listed model on `train`, scores it on `test`, and tests its
/// squared errors against the tuned model of its family.
pub fn run_bench(train: &Dataset, test: &Dataset, spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    if spec.models.is_empty() {
        return Err(Error::InvalidParam("bench needs at least one model".into()));
    }
    let root = SeedSpec::new(spec.seed);
    let fallback = ensemble_fit_members(train, &recipe_spec("rf", spec, root.named("fallback"))?)?
        .predict(test.features())?;

    let mut wanted = spec.models.clone();
    for m in &spec.models {
        if let Some(r) = m.reference() {
            if !wanted.contains(&r) {
                wanted.push(r);
            }
        }
    }
    let mut rows = Vec::new();
    for &model in &wanted {
        let seed = root.named(model.name());
        let family = model.family();
        let grid = spec.grid(family);
        let (train_pred, test_pred, depth) = if let Some(name) = model.recipe() {
            let fitted = ensemble_fit(train, &recipe_spec(name, spec, seed)?)?;
            (
                fitted.train_fitted().to_vec(),
                fitted.predict(test.features())?,
                None,
            )
        } else {
            let depth = match model {
                BenchModel::CartTuned | BenchModel::BoostTuned | BenchModel::MarsTuned => {
                    cv_depth(family, grid, train, spec.folds, seed.named("cv"))?
                }
                _ => family.deepest(grid),
            };
            let mut p = plain_paths(family, &[depth], train, &[train, test], seed)?;
            let test_pred = p.pop().expect("test path").remove(0);
            let train_pred = p.pop().expect("train path").remove(0);
            (train_pred, test_pred, Some(depth))
        };
        let test_pred = outlier_filter(&test_pred, train.target(), &fallback);
        rows.push(BenchRow {
            model,
            r2_train: r2(&train_pred, train.target()),
            r2_test: r2(&test_pred, test.target()),
            depth,
            reference: model.reference(),
            report: None,
            test_pred,
        });
    }
    let losses: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.test_pred
                .iter()
                .zip(test.target())
                .map(|(p, y)| (p - y).powi(2))
                .collect()
        })
        .collect();
    for i in 0..rows.len() {
        if let Some(reference) = rows[i].reference {
            let j = rows
                .iter()
                .position(|r| r.model == reference)
                .expect("reference fitted");
            rows[i].report = Some(compare(&losses[i], &losses[j], spec.test_kind)?);
        }
    }
    rows.retain(|r| spec.models.contains(&r.model));
    rows.sort_by_key(|r| spec.models.iter().position(|m| *m == r.model));
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("model,r2_train,r2_test,depth,reference,statistic,p_value,stars\n");
    for r in rows {
        let depth = r.depth.map(|d| d.to_string()).unwrap_or_default();
        let reference = r.reference.map(|m| m.name()).unwrap_or("");
        let (stat, p, s) = match &r.report {
            Some(t) => (fmt_real(t.statistic), fmt_real(t.p_value), stars(t.p_value)),
            None => (String::new(), String::new(), ""),
        };
        let _ = writeln!(
            out,
            "{},{},{},{depth},{reference},{stat},{p},{s}",
            r.model.name(),
            fmt_real(r.r2_train),
            fmt_real(r.r2_test)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, SplitPlan};
    use crate::dgp::{generate, DgpKind, DgpSpec};

    #[test]
    fn tuned_boosting_on_noiseless_data_fits_the_training_set() {
        let (sample, _) = generate(&DgpSpec::new(DgpKind::Linear, 120, f64::INFINITY, 1)).unwrap();
        let (train, test) = split(&sample.data, &SplitPlan::random(0.7, 2)).unwrap();
        let spec = BenchSpec {
            models: vec![BenchModel::BoostTuned],
            boost_grid: vec![5, 50, 400],
            members: 5,
            ..BenchSpec::default()
        };
        let rows = run_bench(&train, &test, &spec).unwrap();
        assert_eq!(rows[0].depth, Some(400));
        assert!(rows[0].r2_train > 0.99, "{}", rows[0].r2_train);
    }

    #[test]
    fn small_bench_table() {
        let (sample, _) = generate(&DgpSpec::new(DgpKind::Friedman1, 90, 2.0, 3)).unwrap();
        let (train, test) = split(&sample.data, &SplitPlan::random(0.7, 4)).unwrap();
        let spec = BenchSpec {
            models: vec![BenchModel::Rf, BenchModel::CartPlain, BenchModel::MarsPlain],
            tree_grid: vec![20, 5, 1],
            mars_grid: vec![4, 12],
            members: 10,
            ..BenchSpec::default()
        };
        let rows = run_bench(&train, &test, &spec).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.model).collect::<Vec<_>>(),
            spec.models
        );
        assert_eq!(rows[1].r2_train, 1.0);
        assert!(rows.iter().all(|r| r.report.is_some()));
        let csv = write_bench_csv(&rows);
        assert!(csv.starts_with("model,r2_train,r2_test,depth,reference,statistic,p_value,stars\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
