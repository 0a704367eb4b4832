//! Synthetic regression problems with a known conditional mean.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{csv_string_with, write_csv_with, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::rng::SeedSpec;
use crate::tree::{grow, TreeModel, TreeParams};

/// Draws used to estimate Var f(X) for the noise calibration.
pub const CALIBRATION_DRAWS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    Tree,
    Friedman1,
    Friedman2,
    Friedman3,
    Linear,
    NoiseNode,
}

impl DgpKind {
    pub const ALL: [DgpKind; 6] = [
        DgpKind::Tree,
        DgpKind::Friedman1,
        DgpKind::Friedman2,
        DgpKind::Friedman3,
        DgpKind::Linear,
        DgpKind::NoiseNode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DgpKind::Tree => "tree",
            DgpKind::Friedman1 => "friedman1",
            DgpKind::Friedman2 => "friedman2",
            DgpKind::Friedman3 => "friedman3",
            DgpKind::Linear => "linear",
            DgpKind::NoiseNode => "noise_node",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        DgpKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::InvalidParam(format!("unknown DGP '{name}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    /// Training rows; the test sample has `n_test` rows.
    pub n: usize,
    pub n_test: usize,
    /// Var f(X) / σ². Infinite for noiseless targets.
    pub snr: f64,
    pub seed: u64,
    /// Tree DGP: leaf size of the generating tree.
    pub tree_min_node: usize,
    /// Linear DGP: unit-coefficient regressors, then inert ones.
    pub k_signal: usize,
    pub k_noise: usize,
    /// Noise-node DGP: constant mean and noise SD (SNR does not apply).
    pub mu: f64,
    pub noise_sd: f64,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize, snr: f64, seed: u64) -> Self {
        DgpSpec {
            kind,
            n,
            n_test: n,
            snr,
            seed,
            tree_min_node: 40,
            k_signal: 5,
            k_noise: 5,
            mu: 0.0,
            noise_sd: 1.0,
        }
    }

    /// SNR that gives the requested population R² of the true mean.
    pub fn snr_for_r2(r2: f64) -> f64 {
        r2 / (1.0 - r2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_test == 0 {
            return Err(Error::InvalidParam("sample sizes must be positive".into()));
        }
        if self.kind != DgpKind::NoiseNode && !(self.snr > 0.0) {
            return Err(Error::InvalidParam(format!(
                "snr must be positive, got {}",
                self.snr
            )));
        }
        if self.tree_min_node == 0 {
            return Err(Error::InvalidParam(
                "tree_min_node must be at least 1".into(),
            ));
        }
        if self.kind == DgpKind::Linear && self.k_signal + self.k_noise == 0 {
            return Err(Error::InvalidParam(
                "linear DGP needs at least one regressor".into(),
            ));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidParam("noise_sd must be non-negative".into()));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        match self.kind {
            DgpKind::Linear => self.k_signal + self.k_noise,
            _ => 10,
        }
    }
}

/// A generated sample and its noiseless conditional mean.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub data: Dataset,
    pub f: Vec<f64>,
}

impl Sample {
    /// CSV of features, target and the conditional mean in a `__f` column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv_with(&self.data, &[("__f", &self.f)], path)
    }

    pub fn csv_string(&self) -> String {
        csv_string_with(&self.data, &[("__f", &self.f)])
    }
}

pub fn friedman1(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

pub fn friedman2(x: &[f64]) -> f64 {
    (x[0].powi(2) + (x[1] * x[2] - 1.0 / (x[1] * x[3])).powi(2)).sqrt()
}

pub fn friedman3(x: &[f64]) -> f64 {
    ((x[1] * x[2] - 1.0 / (x[1] * x[3])) / x[0]).atan()
}

/// Fits the generating tree: a CART with leaves of at least `min_node` rows on
/// 400 uniform rows of 10 features against a standard-normal pseudo-target.
pub fn make_true_tree(seed: SeedSpec, min_node: usize) -> Result<TreeModel> {
    let mut rng = seed.rng();
    let x = uniform_matrix(&mut rng, 400, 10);
    let y: Vec<f64> = (0..400).map(|_| StandardNormal.sample(&mut rng)).collect();
    grow(
        &x,
        &y,
        &TreeParams {
            min_node,
            ..TreeParams::default()
        },
        seed.named("grow"),
    )
}

fn uniform_matrix<R: Rng>(rng: &mut R, n: usize, k: usize) -> Matrix {
    let values: Vec<f64> = (0..n * k).map(|_| rng.random::<f64>()).collect();
    Matrix::from_row_major(n, k, &values).expect("sized buffer")
}

/// A DGP with its random structure (the generating tree) fixed and its noise
/// level calibrated.
pub struct Dgp {
    spec: DgpSpec,
    tree: Option<TreeModel>,
    sigma: f64,
}

impl Dgp {
    pub fn new(spec: &DgpSpec) -> Result<Self> {
        spec.validate()?;
        let root = SeedSpec::new(spec.seed);
        let tree = match spec.kind {
            DgpKind::Tree => Some(make_true_tree(root.named("structure"), spec.tree_min_node)?),
            _ => None,
        };
        let mut dgp = Dgp {
            spec: spec.clone(),
            tree,
            sigma: 0.0,
        };
        dgp.sigma = if spec.kind == DgpKind::NoiseNode {
            spec.noise_sd
        } else if spec.snr.is_infinite() {
            0.0
        } else {
            let (x, _) = dgp.draw_x(CALIBRATION_DRAWS, root.named("calibrate"));
            let f = dgp.mean(&x);
            let m = f.iter().sum::<f64>() / f.len() as f64;
            let var = f.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (f.len() - 1) as f64;
            (var / spec.snr).sqrt()
        };
        Ok(dgp)
    }

    pub fn spec(&self) -> &DgpSpec {
        &self.spec
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn true_tree(&self) -> Option<&TreeModel> {
        self.tree.as_ref()
    }

    fn draw_x(&self, n: usize, seed: SeedSpec) -> (Matrix, SeedSpec) {
        let mut rng = seed.rng();
        let k = self.spec.n_features();
        let x = match self.spec.kind {
            DgpKind::Linear => {
                let values: Vec<f64> = (0..n * k)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                Matrix::from_row_major(n, k, &values).expect("sized buffer")
            }
            DgpKind::Friedman2 | DgpKind::Friedman3 => {
                let mut x = uniform_matrix(&mut rng, n, k);
                let ranges = [
                    (0.0, 100.0),
                    (40.0 * PI, 560.0 * PI),
                    (0.0, 1.0),
                    (1.0, 11.0),
                ];
                for (j, (lo, hi)) in ranges.into_iter().enumerate() {
                    x.col_mut(j)
                        .iter_mut()
                        .for_each(|v| *v = lo + (hi - lo) * *v);
                }
                x
            }
            _ => uniform_matrix(&mut rng, n, k),
        };
        (x, seed.named("noise"))
    }

    /// Conditional mean f(X) row by row.
    pub fn mean(&self, x: &Matrix) -> Vec<f64> {
        match self.spec.kind {
            DgpKind::Tree => self
                .tree
                .as_ref()
                .expect("tree DGP holds its tree")
                .predict(x)
                .expect("generated width matches"),
            DgpKind::Linear => (0..x.n_rows())
                .map(|i| (0..self.spec.k_signal).map(|j| x.get(i, j)).sum())
                .collect(),
            DgpKind::NoiseNode => vec![self.spec.mu; x.n_rows()],
            DgpKind::Friedman1 => (0..x.n_rows()).map(|i| friedman1(&x.row(i))).collect(),
            DgpKind::Friedman2 => (0..x.n_rows()).map(|i| friedman2(&x.row(i))).collect(),
            DgpKind::Friedman3 => (0..x.n_rows()).map(|i| friedman3(&x.row(i))).collect(),
        }
    }

    /// `n` rows from the stream `seed`: target = f(X) + σ·ε.
    pub fn draw(&self, n: usize, seed: SeedSpec) -> Sample {
        let (x, noise_seed) = self.draw_x(n, seed);
        let f = self.mean(&x);
        let mut rng = noise_seed.rng();
        let y = f
            .iter()
            .map(|m| {
                let e: f64 = StandardNormal.sample(&mut rng);
                m + self.sigma * e
            })
            .collect();
        Sample {
            data: Dataset::from_matrix(&x, y).expect("generated sample is consistent"),
            f,
        }
    }

    /// Independent train and test samples.
    pub fn generate(&self) -> (Sample, Sample) {
        let root = SeedSpec::new(self.spec.seed);
        (
            self.draw(self.spec.n, root.named("train")),
            self.draw(self.spec.n_test, root.named("test")),
        )
    }
}

pub fn generate(spec: &DgpSpec) -> Result<(Sample, Sample)> {
    Ok(Dgp::new(spec)?.generate())
}
