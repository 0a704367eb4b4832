//! Bagging, perturbation and data augmentation around any base learner.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::{boost_fit, BoostModel, BoostParams};
use crate::data::{Column, ColumnKind, Dataset, Features, Matrix, Schema};
use crate::error::{Error, Result};
use crate::linear::{greedy_ls_fit, ols_fit, GreedyLsModel, GreedyLsParams, OlsModel};
use crate::mars::{mars_forward, MarsModel, MarsParams};
use crate::persist;
use crate::rng::{
    choose_features, draw_indices, hash_normal, hash_uniform, mix, ResampleKind, ResamplePlan,
    SeedSpec,
};
use crate::tree::{grow, TreeModel, TreeParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum BaseLearner {
    Tree(TreeParams),
    Boosting(BoostParams),
    Mars(MarsParams),
    GreedyLs(GreedyLsParams),
    Ols,
}

impl BaseLearner {
    pub fn name(&self) -> &'static str {
        match self {
            BaseLearner::Tree(_) => "tree",
            BaseLearner::Boosting(_) => "boosting",
            BaseLearner::Mars(_) => "mars",
            BaseLearner::GreedyLs(_) => "greedy_ls",
            BaseLearner::Ols => "ols",
        }
    }

    /// Default parameters for a family name.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "tree" => BaseLearner::Tree(TreeParams::default()),
            "boosting" => BaseLearner::Boosting(BoostParams::default()),
            "mars" => BaseLearner::Mars(MarsParams::default()),
            "greedy_ls" => BaseLearner::GreedyLs(GreedyLsParams::default()),
            "ols" => BaseLearner::Ols,
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown base learner '{other}'"
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseLearner::Tree(p) => p.validate(),
            BaseLearner::Boosting(p) => p.validate(),
            BaseLearner::Mars(p) => p.validate(),
            BaseLearner::GreedyLs(p) => {
                if p.learning_rate > 0.0 && p.learning_rate <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParam(format!(
                        "learning rate must lie in (0, 1], got {}",
                        p.learning_rate
                    )))
                }
            }
            BaseLearner::Ols => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Overrides the base learner's per-step feature fraction (trees, boosting, MARS).
    pub mtry: Option<f64>,
    /// Fraction of view columns removed for each member.
    pub feature_drop: f64,
    /// Overrides the per-stage row fraction of boosting.
    pub stage_subsample: Option<f64>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            mtry: None,
            feature_drop: 0.0,
            stage_subsample: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub replicas: usize,
    /// Noise SD of numeric replicas, relative to the column's training SD.
    pub noise_sd_fraction: f64,
    /// Share of categorical replica cells redrawn from the level frequencies.
    pub shuffle_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: false,
            replicas: 2,
            noise_sd_fraction: 1.0 / 3.0,
            shuffle_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub base: BaseLearner,
    pub resample: ResamplePlan,
    pub perturb: PerturbConfig,
    pub augment: AugmentConfig,
    pub seed: SeedSpec,
}

impl EnsembleSpec {
    /// B=1 on all rows with no perturbation: the plain base learner.
    pub fn single(base: BaseLearner, seed: u64) -> Self {
        EnsembleSpec {
            base,
            resample: ResamplePlan::subsample(1.0, 1),
            perturb: PerturbConfig::default(),
            augment: AugmentConfig::default(),
            seed: SeedSpec::new(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.resample.validate()?;
        self.effective_base().validate()?;
        let p = &self.perturb;
        if !(0.0..1.0).contains(&p.feature_drop) {
            return Err(Error::InvalidParam(format!(
                "feature_drop must lie in [0, 1), got {}",
                p.feature_drop
            )));
        }
        let a = &self.augment;
        if a.enabled {
            if a.replicas == 0 {
                return Err(Error::InvalidParam(
                    "augmentation needs at least one replica".into(),
                ));
            }
            if !(a.noise_sd_fraction >= 0.0 && a.noise_sd_fraction.is_finite()) {
                return Err(Error::InvalidParam(
                    "noise_sd_fraction must be non-negative".into(),
                ));
            }
            if !(0.0..=1.0).contains(&a.shuffle_fraction) {
                return Err(Error::InvalidParam(
                    "shuffle_fraction must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Base parameters with the perturbation overrides applied.
    pub fn effective_base(&self) -> BaseLearner {
        let mut base = self.base.clone();
        match &mut base {
            BaseLearner::Tree(p) => {
                if let Some(m) = self.perturb.mtry {
                    p.mtry = m;
                }
            }
            BaseLearner::Boosting(p) => {
                if let Some(m) = self.perturb.mtry {
                    p.mtry = m;
                }
                if let Some(s) = self.perturb.stage_subsample {
                    p.subsample = s;
                }
            }
            BaseLearner::Mars(p) => {
                if let Some(m) = self.perturb.mtry {
                    p.mtry = m;
                }
            }
            BaseLearner::GreedyLs(_) | BaseLearner::Ols => {}
        }
        base
    }

    fn augmenting(&self) -> bool {
        self.augment.enabled && self.resample.kind != ResampleKind::Population
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum BaseModel {
    Tree(TreeModel),
    Boosting(BoostModel),
    Mars(MarsModel),
    GreedyLs(GreedyLsModel),
    Ols(OlsModel),
}

impl BaseModel {
    pub fn fit(base: &BaseLearner, x: &Matrix, y: &[f64], seed: SeedSpec) -> Result<Self> {
        Ok(match base {
            BaseLearner::Tree(p) => BaseModel::Tree(grow(x, y, p, seed)?),
            BaseLearner::Boosting(p) => BaseModel::Boosting(boost_fit(x, y, p, seed)?),
            BaseLearner::Mars(p) => BaseModel::Mars(mars_forward(x, y, p, seed)?),
            BaseLearner::GreedyLs(p) => BaseModel::GreedyLs(greedy_ls_fit(x, y, p)?),
            BaseLearner::Ols => BaseModel::Ols(ols_fit(x, y)?),
        })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            BaseModel::Tree(m) => m.predict(x),
            BaseModel::Boosting(m) => m.predict(x),
            BaseModel::Mars(m) => m.predict(x),
            BaseModel::GreedyLs(m) => m.predict(x),
            BaseModel::Ols(m) => m.predict(x),
        }
    }

    /// Predictions at several points of the fitting path: stage counts for
    /// boosting, term counts for MARS.
    pub fn staged_predict(&self, x: &Matrix, checkpoints: &[usize]) -> Result<Vec<Vec<f64>>> {
        match self {
            BaseModel::Boosting(m) => m.staged_predict(x, checkpoints),
            BaseModel::Mars(m) => m.staged_predict(x, checkpoints),
            other => Err(Error::InvalidParam(format!(
                "{} models have no fitting path to stage",
                other.family()
            ))),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            BaseModel::Tree(_) => "tree",
            BaseModel::Boosting(_) => "boosting",
            BaseModel::Mars(_) => "mars",
            BaseModel::GreedyLs(_) => "greedy_ls",
            BaseModel::Ols(_) => "ols",
        }
    }
}

/// Training-set statistics the replica columns are built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentStats {
    /// Population SD of each numeric column (0 for categoricals).
    pub sd: Vec<f64>,
    /// Cumulative level frequencies of each categorical column (empty for numerics).
    pub level_cdf: Vec<Vec<f64>>,
}

impl AugmentStats {
    pub fn from_features(features: &Features) -> Self {
        let n = features.n_rows() as f64;
        let mut sd = Vec::new();
        let mut level_cdf = Vec::new();
        for c in features.columns() {
            match &c.kind {
                ColumnKind::Numeric => {
                    let mean = c.values.iter().sum::<f64>() / n;
                    let var = c.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    sd.push(var.sqrt());
                    level_cdf.push(Vec::new());
                }
                ColumnKind::Categorical { levels } => {
                    let mut counts = vec![0.0; levels.len()];
                    c.values.iter().for_each(|&v| counts[v as usize] += 1.0);
                    let mut acc = 0.0;
                    let cdf = counts
                        .iter()
                        .map(|k| {
                            acc += k / n;
                            acc
                        })
                        .collect();
                    sd.push(0.0);
                    level_cdf.push(cdf);
                }
            }
        }
        AugmentStats { sd, level_cdf }
    }
}

/// What one member sees: the logical columns it kept (originals first, then
/// replica r of column j at index r·K + j) and the key its replica noise is
/// derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberView {
    pub kept: Vec<usize>,
    pub augment_key: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub view: MemberView,
    pub model: BaseModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    spec: EnsembleSpec,
    schema: Schema,
    stats: AugmentStats,
    members: Vec<Member>,
    train_fitted: Vec<f64>,
}

fn row_keys(features: &Features) -> Vec<u64> {
    let mut keys = vec![0x9E37_79B9_7F4A_7C15u64; features.n_rows()];
    for c in features.columns() {
        keys.iter_mut()
            .zip(&c.values)
            .for_each(|(k, v)| *k = mix(*k, v.to_bits()));
    }
    keys
}

/// Builds the member's design matrix. Replica noise is a function of the
/// member key, the replica and column index, and the row's original values,
/// so the same row always receives the same replica values.
fn member_design(
    features: &Features,
    view: &MemberView,
    stats: &AugmentStats,
    augment: &AugmentConfig,
    keys: &[u64],
) -> Result<Matrix> {
    let k = features.n_cols();
    let columns: Vec<Column> = view
        .kept
        .iter()
        .map(|&idx| {
            let (r, j) = (idx / k, idx % k);
            let src = features.column(j);
            if r == 0 {
                return src.clone();
            }
            let base = mix(mix(view.augment_key, r as u64), j as u64);
            let values = match &src.kind {
                ColumnKind::Numeric => {
                    let scale = augment.noise_sd_fraction * stats.sd[j];
                    src.values
                        .iter()
                        .zip(keys)
                        .map(|(&v, &rk)| v + scale * hash_normal(mix(base, rk)))
                        .collect()
                }
                ColumnKind::Categorical { .. } => {
                    let cdf = &stats.level_cdf[j];
                    src.values
                        .iter()
                        .zip(keys)
                        .map(|(&v, &rk)| {
                            let key = mix(base, rk);
                            if hash_uniform(key) < augment.shuffle_fraction {
                                let u = hash_uniform(mix(key, 1));
                                cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) as f64
                            } else {
                                v
                            }
                        })
                        .collect()
                }
            };
            Column {
                name: format!("{}~{r}", src.name),
                kind: src.kind.clone(),
                values,
            }
        })
        .collect();
    Ok(Features::new(columns)?.design())
}

/// Fits every member and records the training-set fitted values.
pub fn ensemble_fit(train: &Dataset, spec: &EnsembleSpec) -> Result<EnsembleModel> {
    let mut model = ensemble_fit_members(train, spec)?;
    model.train_fitted = model.predict(train.features())?;
    Ok(model)
}

/// As [`ensemble_fit`] but leaves the training fitted values empty, for
/// callers that score the training rows themselves.
pub fn ensemble_fit_members(train: &Dataset, spec: &EnsembleSpec) -> Result<EnsembleModel> {
    spec.validate()?;
    let features = train.features();
    let n = train.n_rows();
    let k = features.n_cols();
    let base = spec.effective_base();
    let stats = AugmentStats::from_features(features);
    let width = if spec.augmenting() {
        k * (1 + spec.augment.replicas)
    } else {
        k
    };
    if spec.resample.kind == ResampleKind::Population && !n.is_multiple_of(spec.resample.members) {
        return Err(Error::InvalidData(format!(
            "population sampling needs B·N rows; {n} is not a multiple of B={}",
            spec.resample.members
        )));
    }

    let members: Vec<Result<Member>> = (0..spec.resample.members)
        .into_par_iter()
        .map(|b| {
            let seed = spec.seed.child(b as u64);
            let rows = draw_indices(&spec.resample, b, n, seed.named("rows"))?;
            let kept = if spec.perturb.feature_drop > 0.0 {
                choose_features(
                    width,
                    1.0 - spec.perturb.feature_drop,
                    &mut seed.named("drop").rng(),
                )
            } else {
                (0..width).collect()
            };
            let view = MemberView {
                kept,
                augment_key: seed.named("augment").key(),
            };
            let sub = features.select_rows(&rows);
            let x = member_design(&sub, &view, &stats, &spec.augment, &row_keys(&sub))?;
            let y: Vec<f64> = rows.iter().map(|&r| train.target()[r]).collect();
            let model = BaseModel::fit(&base, &x, &y, seed.named("fit"))?;
            Ok(Member { view, model })
        })
        .collect();
    let members = members
        .into_iter()
        .enumerate()
        .map(|(b, m)| {
            m.map_err(|e| Error::Member {
                member: b,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EnsembleModel {
        spec: spec.clone(),
        schema: features.schema(),
        stats,
        members,
        train_fitted: Vec::new(),
    })
}

impl EnsembleModel {
    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn train_fitted(&self) -> &[f64] {
        &self.train_fitted
    }

    fn member_outputs<T: Send>(
        &self,
        features: &Features,
        f: impl Fn(&BaseModel, &Matrix) -> Result<T> + Sync,
    ) -> Result<Vec<T>> {
        self.schema.check(features)?;
        let keys = row_keys(features);
        let outs: Vec<Result<T>> = self
            .members
            .par_iter()
            .map(|m| {
                let x = member_design(features, &m.view, &self.stats, &self.spec.augment, &keys)?;
                f(&m.model, &x)
            })
            .collect();
        outs.into_iter().collect()
    }

    /// Unweighted mean of member predictions, summed in member order.
    pub fn predict(&self, features: &Features) -> Result<Vec<f64>> {
        let outs = self.member_outputs(features, |m, x| m.predict(x))?;
        Ok(mean_of(&outs, features.n_rows()))
    }

    /// Ensemble predictions with every member cut at each checkpoint of its
    /// fitting path (boosting stages or MARS terms).
    pub fn staged_predict(
        &self,
        features: &Features,
        checkpoints: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        let outs = self.member_outputs(features, |m, x| m.staged_predict(x, checkpoints))?;
        Ok((0..checkpoints.len())
            .map(|c| {
                let at: Vec<&Vec<f64>> = outs.iter().map(|o| &o[c]).collect();
                mean_of(&at, features.n_rows())
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        persist::to_json("ensemble", self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        persist::from_json("ensemble", text)
    }
}

fn mean_of<V: AsRef<[f64]>>(outs: &[V], n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    for o in outs {
        acc.iter_mut().zip(o.as_ref()).for_each(|(a, v)| *a += v);
    }
    let b = outs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= b);
    acc
}

pub const RECIPES: [&str; 5] = ["rf", "bp_boost", "booging", "bp_mars", "marsquake"];

/// Boosting steps and MARS terms the overfit recipes run to.
pub const RECIPE_BOOST_STEPS: usize = 1478;
pub const RECIPE_MARS_TERMS: usize = 218;

/// Named ensemble configurations, with `key=value` overrides applied in order.
pub fn make_recipe(name: &str, overrides: &[(String, String)]) -> Result<EnsembleSpec> {
    let augment = AugmentConfig {
        enabled: true,
        ..AugmentConfig::default()
    };
    let bp_boost = BaseLearner::Boosting(BoostParams {
        steps: RECIPE_BOOST_STEPS,
        learning_rate: 0.1,
        subsample: 0.5,
        interaction_depth: 3,
        mtry: 1.0,
    });
    let bp_mars = BaseLearner::Mars(MarsParams {
        max_terms: RECIPE_MARS_TERMS,
        max_degree: 3,
        mtry: 1.0,
        tol: 0.0,
        fast_k: Some(20),
        ..MarsParams::default()
    });
    let mut spec = EnsembleSpec {
        base: BaseLearner::Ols,
        resample: ResamplePlan::subsample(2.0 / 3.0, 100),
        perturb: PerturbConfig::default(),
        augment: AugmentConfig::default(),
        seed: SeedSpec::new(0),
    };
    match name {
        "rf" => {
            spec.base = BaseLearner::Tree(TreeParams::default());
            spec.perturb.mtry = Some(1.0 / 3.0);
        }
        "bp_boost" | "booging" => {
            spec.base = bp_boost;
            spec.perturb.stage_subsample = Some(0.5);
            if name == "booging" {
                spec.augment = augment;
                spec.perturb.feature_drop = 0.2;
            }
        }
        "bp_mars" | "marsquake" => {
            spec.base = bp_mars;
            spec.perturb.mtry = Some(0.5);
            if name == "marsquake" {
                spec.augment = augment;
                spec.perturb.feature_drop = 0.2;
            }
        }
        other => return Err(Error::UnknownRecipe(other.to_string())),
    }
    for (key, value) in overrides {
        apply_override(&mut spec, key, value)?;
    }
    spec.validate()?;
    Ok(spec)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParam(format!("cannot parse '{value}' for '{key}'")))
}

/// Sets one spec field from its config-file name.
pub fn apply_override(spec: &mut EnsembleSpec, key: &str, value: &str) -> Result<()> {
    let key = key.trim();
    match key {
        "members" | "b" => spec.resample.members = parse(key, value)?,
        "subsample" | "rate" => spec.resample.rate = parse(key, value)?,
        "resample" => {
            spec.resample.kind = match value.trim() {
                "subsample" => ResampleKind::Subsample,
                "bootstrap" => ResampleKind::Bootstrap,
                "population" => ResampleKind::Population,
                other => {
                    return Err(Error::InvalidParam(format!(
                        "unknown resample kind '{other}'"
                    )))
                }
            }
        }
        "seed" => spec.seed = SeedSpec::new(parse(key, value)?),
        "mtry" => spec.perturb.mtry = Some(parse(key, value)?),
        "feature_drop" => spec.perturb.feature_drop = parse(key, value)?,
        "stage_subsample" => spec.perturb.stage_subsample = Some(parse(key, value)?),
        "augment" => spec.augment.enabled = parse(key, value)?,
        "replicas" => spec.augment.replicas = parse(key, value)?,
        "noise_sd_fraction" => spec.augment.noise_sd_fraction = parse(key, value)?,
        "shuffle_fraction" => spec.augment.shuffle_fraction = parse(key, value)?,
        _ => match &mut spec.base {
            BaseLearner::Tree(p) => match key {
                "min_node" => p.min_node = parse(key, value)?,
                "max_depth" => p.max_depth = Some(parse(key, value)?),
                _ => return unknown(key, "tree"),
            },
            BaseLearner::Boosting(p) => match key {
                "steps" => p.steps = parse(key, value)?,
                "learning_rate" => p.learning_rate = parse(key, value)?,
                "interaction_depth" => p.interaction_depth = parse(key, value)?,
                _ => return unknown(key, "boosting"),
            },
            BaseLearner::Mars(p) => match key {
                "max_terms" => p.max_terms = parse(key, value)?,
                "max_degree" => p.max_degree = parse(key, value)?,
                "tol" => p.tol = parse(key, value)?,
                "fast_k" => {
                    p.fast_k = match value.trim() {
                        "none" | "0" => None,
                        v => Some(parse(key, v)?),
                    }
                }
                "restart_r2" => {
                    p.restart_r2 = match value.trim() {
                        "none" => None,
                        v => Some(parse(key, v)?),
                    }
                }
                "endspan" | "minspan" => {
                    let v = match value.trim() {
                        "auto" => None,
                        v => Some(parse(key, v)?),
                    };
                    if key == "endspan" {
                        p.endspan = v;
                    } else {
                        p.minspan = v;
                    }
                }
                _ => return unknown(key, "mars"),
            },
            BaseLearner::GreedyLs(p) => match key {
                "steps" => p.steps = parse(key, value)?,
                "learning_rate" => p.learning_rate = parse(key, value)?,
                _ => return unknown(key, "greedy_ls"),
            },
            BaseLearner::Ols => return unknown(key, "ols"),
        },
    }
    Ok(())
}

fn unknown(key: &str, family: &str) -> Result<()> {
    Err(Error::InvalidParam(format!(
        "'{key}' is not a setting of {family} ensembles"
    )))
}
