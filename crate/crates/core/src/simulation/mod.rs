//! Experiment drivers: depth sweeps, the greedy-vs-global linear curve,
//! benchmark tables and forecast comparison tests.

mod bench;
mod fig2;
mod plot;
mod stats;
mod sweep;

pub use bench::{run_bench, write_bench_csv, BenchModel, BenchRow, BenchSpec};
pub use fig2::{run_fig2, write_fig2_csv, Fig2Point, Fig2Spec};
pub use plot::{fig2_svg, sweep_svg, Chart, Series};
pub use stats::{compare, stars, TestKind, TestReport};
pub use sweep::{run_sweep, CellSummary, SweepRecord, SweepResult, SweepSpec};

use serde::{Deserialize, Serialize};

use crate::boosting::BoostParams;
use crate::ensemble::{apply_override, make_recipe, AugmentConfig, BaseLearner, EnsembleSpec};
use crate::error::{Error, Result};
use crate::mars::MarsParams;
use crate::rng::{ResamplePlan, SeedSpec};
use crate::tree::TreeParams;

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter()
        .zip(y)
        .map(|(p, v)| (p - v).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

/// 1 − SSE/SST against `y` (observed targets or the conditional mean).
pub fn r2(pred: &[f64], y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let sse: f64 = pred.iter().zip(y).map(|(p, v)| (p - v).powi(2)).sum();
    1.0 - sse / sst
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `base^e` for e in `exponents`, rounded and deduplicated, in the given order.
pub fn geometric_grid(base: f64, exponents: impl IntoIterator<Item = i32>) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for e in exponents {
        let v = base.powi(e).round().max(1.0) as usize;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Minimum leaf sizes 1.4^16 down to 1.4^2.
pub fn tree_grid() -> Vec<usize> {
    geometric_grid(1.4, (2..=16).rev())
}

/// Boosting steps 1.5^4 up to 1.5^18.
pub fn boost_grid() -> Vec<usize> {
    geometric_grid(1.5, 4..=18)
}

/// MARS term counts 1.4^2 up to 1.4^16.
pub fn mars_grid() -> Vec<usize> {
    geometric_grid(1.4, 2..=16)
}

/// Minimum leaf sizes from 200 down to 1 in `steps` geometric steps.
pub fn descent_grid(steps: usize) -> Vec<usize> {
    let steps = steps.max(2);
    let mut out: Vec<usize> = Vec::new();
    for i in 0..steps {
        let v = (200f64.ln() * (1.0 - i as f64 / (steps - 1) as f64))
            .exp()
            .round() as usize;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Tree,
    Boosting,
    Mars,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Tree, Family::Boosting, Family::Mars];

    pub fn name(self) -> &'static str {
        match self {
            Family::Tree => "tree",
            Family::Boosting => "boosting",
            Family::Mars => "mars",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::InvalidParam(format!("unknown learner family '{name}'")))
    }

    pub fn default_grid(self) -> Vec<usize> {
        match self {
            Family::Tree => tree_grid(),
            Family::Boosting => boost_grid(),
            Family::Mars => mars_grid(),
        }
    }

    /// Depth knob as an override key.
    pub fn depth_key(self) -> &'static str {
        match self {
            Family::Tree => "min_node",
            Family::Boosting => "steps",
            Family::Mars => "max_terms",
        }
    }

    /// Deepest point of a grid: the smallest leaf size or the largest step/term count.
    pub fn deepest(self, grid: &[usize]) -> usize {
        match self {
            Family::Tree => *grid.iter().min().expect("nonempty grid"),
            _ => *grid.iter().max().expect("nonempty grid"),
        }
    }

    /// Whether one fit at the deepest point yields every shallower point.
    pub fn staged(self) -> bool {
        self != Family::Tree
    }

    /// The single-learner configuration at `depth`.
    pub fn plain(self, depth: usize) -> BaseLearner {
        match self {
            Family::Tree => BaseLearner::Tree(TreeParams {
                min_node: depth,
                ..TreeParams::default()
            }),
            Family::Boosting => BaseLearner::Boosting(BoostParams {
                steps: depth,
                learning_rate: 0.1,
                subsample: 0.5,
                interaction_depth: 3,
                mtry: 1.0,
            }),
            Family::Mars => BaseLearner::Mars(MarsParams {
                max_terms: depth,
                max_degree: 3,
                mtry: 1.0,
                tol: 0.0,
                fast_k: Some(20),
                ..MarsParams::default()
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Bp,
    Population,
    /// B&P plus data augmentation and feature dropping (Booging, MARSquake).
    BpDa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Plain,
        Variant::Bp,
        Variant::Population,
        Variant::BpDa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Bp => "bp",
            Variant::Population => "population",
            Variant::BpDa => "bp_da",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::InvalidParam(format!("unknown variant '{name}'")))
    }
}

/// Ensemble configuration of `variant` for `family` at `depth`. B&P trees use
/// the simulation forest (mtry 0.9); `overrides` are applied last to every
/// variant except plain.
pub fn variant_spec(
    family: Family,
    variant: Variant,
    depth: usize,
    members: usize,
    overrides: &[(String, String)],
    seed: SeedSpec,
) -> Result<EnsembleSpec> {
    if variant == Variant::Plain {
        let mut spec = EnsembleSpec::single(family.plain(depth), 0);
        spec.seed = seed;
        return Ok(spec);
    }
    let recipe = match (family, variant) {
        (Family::Tree, Variant::BpDa) => {
            return Err(Error::InvalidParam(
                "the bp_da variant applies to boosting and MARS only".into(),
            ))
        }
        (Family::Tree, _) => "rf",
        (Family::Boosting, Variant::BpDa) => "booging",
        (Family::Boosting, _) => "bp_boost",
        (Family::Mars, Variant::BpDa) => "marsquake",
        (Family::Mars, _) => "bp_mars",
    };
    let mut spec = make_recipe(recipe, &[])?;
    if family == Family::Tree {
        spec.perturb.mtry = Some(0.9);
    }
    spec.base = family.plain(depth);
    spec.resample = match variant {
        Variant::Population => ResamplePlan::population(members),
        _ => ResamplePlan::subsample(spec.resample.rate, members),
    };
    if variant == Variant::Population {
        spec.augment = AugmentConfig::default();
    }
    spec.seed = seed;
    for (k, v) in overrides {
        apply_override(&mut spec, k, v)?;
    }
    spec.validate()?;
    Ok(spec)
}
