use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{median, r2, variant_spec, Family, Variant};
use crate::data::fmt_real;
use crate::dgp::{Dgp, DgpSpec};
use crate::ensemble::ensemble_fit_members;
use crate::error::{Error, Result};
use crate::rng::SeedSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub dgp: DgpSpec,
    pub family: Family,
    pub variants: Vec<Variant>,
    pub depth_grid: Vec<usize>,
    pub reps: usize,
    /// Ensemble size B of every non-plain variant.
    pub members: usize,
    /// Settings applied to every non-plain variant (e.g. `mtry`).
    pub overrides: Vec<(String, String)>,
    pub seed: u64,
}

impl SweepSpec {
    pub fn new(dgp: DgpSpec, family: Family) -> Self {
        let variants = match family {
            Family::Tree => vec![Variant::Plain, Variant::Bp, Variant::Population],
            _ => vec![
                Variant::Plain,
                Variant::Bp,
                Variant::Population,
                Variant::BpDa,
            ],
        };
        SweepSpec {
            dgp,
            family,
            variants,
            depth_grid: family.default_grid(),
            reps: 10,
            members: 50,
            overrides: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_grid.is_empty() || self.variants.is_empty() || self.reps == 0 {
            return Err(Error::InvalidParam(
                "a sweep needs a depth grid, variants and replications".into(),
            ));
        }
        if self.depth_grid.contains(&0) {
            return Err(Error::InvalidParam(
                "depth grid values must be positive".into(),
            ));
        }
        self.dgp.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub variant: Variant,
    pub depth: usize,
    pub rep: usize,
    pub r2_true_test: f64,
    pub r2_train: f64,
    pub r2_test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variant: Variant,
    pub depth: usize,
    /// (r2_true_test, r2_train, r2_test)
    pub median: [f64; 3],
    pub mean: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub records: Vec<SweepRecord>,
    pub cells: Vec<CellSummary>,
}

fn score(
    variant: Variant,
    depth: usize,
    rep: usize,
    test_pred: &[f64],
    test_y: &[f64],
    test_f: &[f64],
    train_pred: &[f64],
    train_y: &[f64],
) -> SweepRecord {
    SweepRecord {
        variant,
        depth,
        rep,
        r2_true_test: r2(test_pred, test_f),
        r2_train: r2(train_pred, train_y),
        r2_test: r2(test_pred, test_y),
    }
}

fn run_rep(spec: &SweepSpec, rep: usize) -> Result<Vec<SweepRecord>> {
    let rep_seed = SeedSpec::new(spec.seed).child(rep as u64);
    let dgp = Dgp::new(&DgpSpec {
        seed: rep_seed.named("dgp").key(),
        ..spec.dgp.clone()
    })?;
    let (train, test) = dgp.generate();
    let pool = spec
        .variants
        .contains(&Variant::Population)
        .then(|| dgp.draw(spec.members * spec.dgp.n, rep_seed.named("pool")));
    let grid = &spec.depth_grid;
    let mut out = Vec::new();
    for &variant in &spec.variants {
        let tag = |depth: usize| {
            move |e: Error| Error::Cell {
                variant: variant.name().to_string(),
                depth,
                rep,
                source: Box::new(e),
            }
        };
        let data = match (variant, &pool) {
            (Variant::Population, Some(p)) => &p.data,
            _ => &train.data,
        };
        // The pooled fit is scored on every B-th pool row: N rows spread
        // evenly over the members' blocks.
        let scored = match (variant, &pool) {
            (Variant::Population, Some(p)) => {
                let rows: Vec<usize> = (0..spec.dgp.n).map(|i| i * spec.members).collect();
                p.data.select_rows(&rows)
            }
            _ => train.data.clone(),
        };
        let seed = rep_seed.named(variant.name());
        if spec.family.staged() {
            let deepest = spec.family.deepest(grid);
            let ens_spec = variant_spec(
                spec.family,
                variant,
                deepest,
                spec.members,
                &spec.overrides,
                seed,
            )
            .map_err(tag(deepest))?;
            let model = ensemble_fit_members(data, &ens_spec).map_err(tag(deepest))?;
            let test_preds = model
                .staged_predict(test.data.features(), grid)
                .map_err(tag(deepest))?;
            let train_preds = model
                .staged_predict(scored.features(), grid)
                .map_err(tag(deepest))?;
            for (i, &depth) in grid.iter().enumerate() {
                out.push(score(
                    variant,
                    depth,
                    rep,
                    &test_preds[i],
                    test.data.target(),
                    &test.f,
                    &train_preds[i],
                    scored.target(),
                ));
            }
        } else {
            for &depth in grid {
                let ens_spec = variant_spec(
                    spec.family,
                    variant,
                    depth,
                    spec.members,
                    &spec.overrides,
                    seed,
                )
                .map_err(tag(depth))?;
                let model = ensemble_fit_members(data, &ens_spec).map_err(tag(depth))?;
                let test_pred = model.predict(test.data.features()).map_err(tag(depth))?;
                let train_pred = model.predict(scored.features()).map_err(tag(depth))?;
                out.push(score(
                    variant,
                    depth,
                    rep,
                    &test_pred,
                    test.data.target(),
                    &test.f,
                    &train_pred,
                    scored.target(),
                ));
            }
        }
    }
    Ok(out)
}

/// Fits every (variant, depth) cell on fresh samples for each replication.
/// Records come back ordered by variant (as listed), depth (grid order), rep.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let per_rep: Vec<Result<Vec<SweepRecord>>> = (0..spec.reps)
        .into_par_iter()
        .map(|r| run_rep(spec, r))
        .collect();
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(per_rep.iter().map(Vec::len).sum());
    let mut cells = Vec::new();
    for &variant in &spec.variants {
        for &depth in &spec.depth_grid {
            let cell: Vec<&SweepRecord> = per_rep
                .iter()
                .flatten()
                .filter(|r| r.variant == variant && r.depth == depth)
                .collect();
            let metric =
                |f: fn(&SweepRecord) -> f64| cell.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let m = [
                metric(|r| r.r2_true_test),
                metric(|r| r.r2_train),
                metric(|r| r.r2_test),
            ];
            cells.push(CellSummary {
                variant,
                depth,
                median: [median(&m[0]), median(&m[1]), median(&m[2])],
                mean: m.clone().map(|v| v.iter().sum::<f64>() / v.len() as f64),
            });
            records.extend(cell.into_iter().cloned());
        }
    }
    Ok(SweepResult {
        spec: spec.clone(),
        records,
        cells,
    })
}

impl SweepResult {
    /// Median r2_true_test per depth, in grid order.
    pub fn median_curve(&self, variant: Variant) -> Vec<(usize, f64)> {
        self.cells
            .iter()
            .filter(|c| c.variant == variant)
            .map(|c| (c.depth, c.median[0]))
            .collect()
    }

    pub fn cell(&self, variant: Variant, depth: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.depth == depth)
    }

    pub fn records_csv(&self) -> String {
        let mut out = String::from("variant,depth,rep,r2_true_test,r2_train,r2_test\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.variant.name(),
                r.depth,
                r.rep,
                fmt_real(r.r2_true_test),
                fmt_real(r.r2_train),
                fmt_real(r.r2_test)
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "variant,depth,median_r2_true_test,median_r2_train,median_r2_test,mean_r2_true_test,mean_r2_train,mean_r2_test\n",
        );
        for c in &self.cells {
            let _ = write!(out, "{},{}", c.variant.name(), c.depth);
            for v in c.median.iter().chain(&c.mean) {
                let _ = write!(out, ",{}", fmt_real(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.records_csv()).map_err(|e| Error::io(path, e))
    }
}
