//! MARS forward pass: greedy reflected-hinge basis expansion, no backward pass.
//!
//! The basis is kept orthonormalised (Gram-Schmidt, applied twice). For a
//! candidate pair h₊ = b·(x−t)₊, h₋ = b·(t−x)₊ the SSE reduction only needs
//! hᵀr and the Gram matrix of the components of h orthogonal to the basis.
//! The projections ‖Qᵀh₊‖², ‖Qᵀh₋‖² and (Qᵀh₊)ᵀ(Qᵀh₋) are sums over basis
//! columns, so each (parent, feature) pair caches them per knot and only folds
//! in the columns added since it was last evaluated.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::persist;
use crate::rng::{choose_features, feature_count, SeedSpec};
use crate::tree::presort;

/// Columns whose squared norm after projection falls below this fraction of
/// their original squared norm are treated as linearly dependent.
const DEPENDENT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// max(0, x − t)
    #[serde(rename = "+")]
    Plus,
    /// max(0, t − x)
    #[serde(rename = "-")]
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HingeFactor {
    pub feature: usize,
    pub knot: f64,
    pub direction: Direction,
}

impl HingeFactor {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self.direction {
            Direction::Plus => (x - self.knot).max(0.0),
            Direction::Minus => (self.knot - x).max(0.0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HingeTerm {
    pub factors: Vec<HingeFactor>,
}

impl HingeTerm {
    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    pub fn eval(&self, row: impl Fn(usize) -> f64) -> f64 {
        self.factors
            .iter()
            .map(|f| f.eval(row(f.feature)))
            .product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarsParams {
    /// Maximum number of non-intercept terms; reflected pairs count as two.
    pub max_terms: usize,
    pub max_degree: usize,
    /// Fraction of features eligible at each forward step.
    pub mtry: f64,
    /// A pair is added only if it lowers the SSE by more than this.
    pub tol: f64,
    /// Fast-MARS parent limit: search only this many parent terms per step,
    /// chosen by their last observed improvement with ageing. `None` searches
    /// every eligible parent.
    pub fast_k: Option<usize>,
    /// If set, a second forward pass is fit on the residuals whenever the
    /// first pass ends with a training R² below this value.
    pub restart_r2: Option<f64>,
    /// Rows kept clear of either end of a parent's support before the first
    /// or after the last candidate knot. `None` picks 3 − log2(0.05/p).
    #[serde(default)]
    pub endspan: Option<usize>,
    /// Rows between consecutive candidate knots. `None` picks
    /// −log2(−ln(0.95)/(p·m))/2.5 with m the parent's support size.
    #[serde(default)]
    pub minspan: Option<usize>,
}

impl Default for MarsParams {
    fn default() -> Self {
        MarsParams {
            max_terms: 21,
            max_degree: 1,
            mtry: 1.0,
            tol: 0.0,
            fast_k: None,
            restart_r2: None,
            endspan: None,
            minspan: None,
        }
    }
}

impl MarsParams {
    fn endspan_for(&self, p: usize) -> usize {
        self.endspan
            .unwrap_or_else(|| (3.0 - (0.05 / p as f64).log2()).floor().max(0.0) as usize)
    }

    fn minspan_for(&self, p: usize, m: usize) -> usize {
        self.minspan.unwrap_or_else(|| {
            let v = -(-(0.95f64.ln()) / (p as f64 * m as f64)).log2() / 2.5;
            v.floor().max(1.0) as usize
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_terms == 0 {
            return Err(Error::InvalidParam("max_terms must be at least 1".into()));
        }
        if self.max_degree == 0 {
            return Err(Error::InvalidParam("max_degree must be at least 1".into()));
        }
        if !(self.mtry > 0.0 && self.mtry <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "mtry must lie in (0, 1], got {}",
                self.mtry
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParam("tol must be non-negative".into()));
        }
        if self.fast_k == Some(0) {
            return Err(Error::InvalidParam("fast_k must be positive".into()));
        }
        if let Some(f) = self.restart_r2 {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidParam(format!(
                    "restart floor must lie in [0, 1), got {f}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarsModel {
    n_features: usize,
    params: MarsParams,
    terms: Vec<HingeTerm>,
    /// `path[s]` holds the intercept and the least-squares coefficients of the
    /// first 2s terms, i.e. the model after s forward steps.
    path: Vec<Vec<f64>>,
    /// Second forward pass fit on the residuals of this one.
    residual_pass: Option<Box<MarsModel>>,
}

struct PairCache {
    q_done: usize,
    pp: Vec<f64>,
    mm: Vec<f64>,
    pm: Vec<f64>,
}

struct Parent {
    term: usize,
    features: Vec<usize>,
    caches: Vec<Option<PairCache>>,
    last_reduction: f64,
    last_evaluated: usize,
}

/// Support rows of a parent in ascending order of one feature, grouped by
/// distinct value.
struct Support {
    rows: Vec<u32>,
    /// `starts[g]..starts[g+1]` are the rows of group g.
    starts: Vec<usize>,
    knots: Vec<f64>,
    /// Candidate knots that respect the end and minimum spans.
    allowed: Vec<bool>,
}

impl Support {
    fn build(&mut self, b: &[f64], order: &[u32], col: &[f64]) {
        self.rows.clear();
        self.starts.clear();
        self.knots.clear();
        for &r in order {
            if b[r as usize] > 0.0 {
                let v = col[r as usize];
                if self.knots.last() != Some(&v) {
                    self.starts.push(self.rows.len());
                    self.knots.push(v);
                }
                self.rows.push(r);
            }
        }
        self.starts.push(self.rows.len());
    }

    /// Marks candidate knot j allowed when at least `endspan` support rows lie
    /// on each side of it and at least `minspan` rows separate it from the
    /// previous allowed knot. Returns whether any knot is allowed.
    fn restrict(&mut self, endspan: usize, minspan: usize) -> bool {
        let m = self.rows.len();
        let l = self.n_candidates();
        self.allowed.clear();
        let mut last: Option<usize> = None;
        let mut any = false;
        for j in 0..l {
            let c = self.starts[j + 1];
            let ok =
                c >= endspan && m - c >= endspan && last.is_none_or(|prev| c - prev >= minspan);
            if ok {
                last = Some(c);
                any = true;
            }
            self.allowed.push(ok);
        }
        any
    }

    fn group(&self, g: usize) -> &[u32] {
        &self.rows[self.starts[g]..self.starts[g + 1]]
    }

    /// Number of candidate knots (every distinct value but the largest).
    fn n_candidates(&self) -> usize {
        self.knots.len().saturating_sub(1)
    }
}

/// Hinge-projection sums of one new orthonormal column, folded into a cache.
fn fold_column(cache: &mut PairCache, q: &[f64], b: &[f64], s: &Support, scratch: &mut Vec<f64>) {
    let l = s.n_candidates();
    scratch.clear();
    scratch.resize(l, 0.0);
    let (mut a, mut a0) = (0.0, 0.0);
    for j in (0..l).rev() {
        for &r in s.group(j + 1) {
            a0 += q[r as usize] * b[r as usize];
        }
        a += (s.knots[j + 1] - s.knots[j]) * a0;
        scratch[j] = a;
    }
    let (mut c, mut c0) = (0.0, 0.0);
    for j in 0..l {
        if j > 0 {
            for &r in s.group(j - 1) {
                c0 += q[r as usize] * b[r as usize];
            }
            c += (s.knots[j] - s.knots[j - 1]) * c0;
        }
        let a = scratch[j];
        cache.pp[j] += a * a;
        cache.mm[j] += c * c;
        cache.pm[j] += a * c;
    }
}

/// SSE reduction from adding the pair with the given projected Gram entries
/// and right-hand sides; either column may be dependent.
fn pair_reduction(
    hh_p: f64,
    hh_m: f64,
    g_pp: f64,
    g_mm: f64,
    g_pm: f64,
    c_p: f64,
    c_m: f64,
) -> f64 {
    let ok_p = hh_p > 0.0 && g_pp > DEPENDENT_TOL * hh_p;
    let ok_m = hh_m > 0.0 && g_mm > DEPENDENT_TOL * hh_m;
    let single_p = if ok_p { c_p * c_p / g_pp } else { 0.0 };
    let single_m = if ok_m { c_m * c_m / g_mm } else { 0.0 };
    if ok_p && ok_m {
        let det = g_pp * g_mm - g_pm * g_pm;
        if det > DEPENDENT_TOL * g_pp * g_mm {
            return ((g_mm * c_p * c_p - 2.0 * g_pm * c_p * c_m + g_pp * c_m * c_m) / det).max(0.0);
        }
    }
    single_p.max(single_m)
}

struct Candidate {
    reduction: f64,
    parent: usize,
    feature: usize,
    knot: f64,
}

/// Best knot for one (parent, feature) pair; returns (reduction, knot).
fn evaluate_pair(
    cache: &PairCache,
    b: &[f64],
    r: &[f64],
    s: &Support,
    scratch: &mut Vec<[f64; 3]>,
) -> Option<(f64, f64)> {
    let l = s.n_candidates();
    if l == 0 {
        return None;
    }
    // Suffix side: rows with x > t.
    scratch.clear();
    scratch.resize(l, [0.0; 3]);
    let (mut w0, mut w1, mut w2, mut v0, mut v1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for j in (0..l).rev() {
        for &row in s.group(j + 1) {
            let bi = b[row as usize];
            w0 += bi * bi;
            v0 += bi * r[row as usize];
        }
        let d = s.knots[j + 1] - s.knots[j];
        w2 += d * (2.0 * w1 + d * w0);
        w1 += d * w0;
        v1 += d * v0;
        scratch[j] = [w2, v1, 0.0];
    }
    let mut best: Option<(f64, f64)> = None;
    let (mut w0, mut w1, mut w2, mut v0, mut v1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for j in 0..l {
        if j > 0 {
            for &row in s.group(j - 1) {
                let bi = b[row as usize];
                w0 += bi * bi;
                v0 += bi * r[row as usize];
            }
            let d = s.knots[j] - s.knots[j - 1];
            w2 += d * (2.0 * w1 + d * w0);
            w1 += d * w0;
            v1 += d * v0;
        }
        if !s.allowed[j] {
            continue;
        }
        let [hh_p, c_p, _] = scratch[j];
        let red = pair_reduction(
            hh_p,
            w2,
            hh_p - cache.pp[j],
            w2 - cache.mm[j],
            -cache.pm[j],
            c_p,
            v1,
        );
        if best.is_none_or(|(bred, _)| red > bred) {
            best = Some((red, s.knots[j]));
        }
    }
    best
}

/// Orthonormal basis with its triangular factor, grown one column at a time.
struct Basis {
    q: Vec<Vec<f64>>,
    /// Column i of R (length i+1) for kept column i.
    r: Vec<Vec<f64>>,
    /// Qᵀy.
    z: Vec<f64>,
    /// For every basis term, the index of its kept column.
    kept: Vec<Option<usize>>,
}

impl Basis {
    /// Orthogonalises `h` against the basis and keeps it unless dependent.
    fn push(&mut self, mut h: Vec<f64>, y: &[f64], residual: &mut [f64]) {
        let norm0: f64 = h.iter().map(|v| v * v).sum();
        let mut rcol = vec![0.0; self.q.len() + 1];
        for _ in 0..2 {
            for (l, q) in self.q.iter().enumerate() {
                let c: f64 = q.iter().zip(&h).map(|(a, b)| a * b).sum();
                rcol[l] += c;
                h.iter_mut().zip(q).for_each(|(hv, qv)| *hv -= c * qv);
            }
        }
        let norm: f64 = h.iter().map(|v| v * v).sum();
        if !(norm0 > 0.0 && norm > DEPENDENT_TOL * norm0) {
            self.kept.push(None);
            return;
        }
        let nrm = norm.sqrt();
        h.iter_mut().for_each(|v| *v /= nrm);
        rcol[self.q.len()] = nrm;
        let z: f64 = h.iter().zip(y).map(|(a, b)| a * b).sum();
        residual
            .iter_mut()
            .zip(&h)
            .for_each(|(rv, qv)| *rv -= z * qv);
        self.kept.push(Some(self.q.len()));
        self.q.push(h);
        self.r.push(rcol);
        self.z.push(z);
    }

    /// Least-squares coefficients of every basis term (zero for dependent ones).
    fn coefficients(&self) -> Vec<f64> {
        let m = self.q.len();
        let mut beta = vec![0.0; m];
        for i in (0..m).rev() {
            let mut s = self.z[i];
            for j in i + 1..m {
                s -= self.r[j][i] * beta[j];
            }
            beta[i] = s / self.r[i][i];
        }
        self.kept
            .iter()
            .map(|k| k.map_or(0.0, |i| beta[i]))
            .collect()
    }
}

/// Forward pass on all rows of `x`.
pub fn mars_forward(
    x: &Matrix,
    y: &[f64],
    params: &MarsParams,
    seed: SeedSpec,
) -> Result<MarsModel> {
    params.validate()?;
    let n = x.n_rows();
    let k = x.n_cols();
    if n == 0 || k == 0 {
        return Err(Error::InvalidData(
            "cannot fit MARS on an empty dataset".into(),
        ));
    }
    if y.len() != n {
        return Err(Error::InvalidData(
            "target length differs from row count".into(),
        ));
    }
    let all: Vec<usize> = (0..n).collect();
    let sorted = presort(x, &all);

    let mut residual = y.to_vec();
    let mut basis = Basis {
        q: Vec::new(),
        r: Vec::new(),
        z: Vec::new(),
        kept: Vec::new(),
    };
    let mut values: Vec<Vec<f64>> = vec![vec![1.0; n]];
    basis.push(vec![1.0; n], y, &mut residual);
    let mut terms: Vec<HingeTerm> = vec![HingeTerm::default()];
    let mut path = vec![basis.coefficients()];
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let min_reduction = params.tol.max(1e-12 * sst);

    let mut parents = vec![Parent {
        term: 0,
        features: Vec::new(),
        caches: (0..k).map(|_| None).collect(),
        last_reduction: f64::INFINITY,
        last_evaluated: 0,
    }];
    let draw = feature_count(k, params.mtry) < k;
    let mut support = Support {
        rows: Vec::new(),
        starts: Vec::new(),
        knots: Vec::new(),
        allowed: Vec::new(),
    };
    let endspan = params.endspan_for(k);
    let mut fold_scratch = Vec::new();
    let mut eval_scratch = Vec::new();

    let mut step = 0;
    while terms.len() - 1 + 2 <= params.max_terms {
        step += 1;
        let eligible = if draw {
            choose_features(k, params.mtry, &mut seed.child(step as u64).rng())
        } else {
            (0..k).collect()
        };
        let searched = select_parents(&parents, params.fast_k, step);
        let mut best: Option<Candidate> = None;
        for &pi in &searched {
            let parent = &mut parents[pi];
            let b = &values[parent.term];
            let mut parent_best = 0.0f64;
            for &v in &eligible {
                if parent.features.binary_search(&v).is_ok() {
                    continue;
                }
                support.build(b, &sorted[v], x.col(v));
                let l = support.n_candidates();
                if l == 0 || !support.restrict(endspan, params.minspan_for(k, support.rows.len())) {
                    continue;
                }
                let cache = parent.caches[v].get_or_insert_with(|| PairCache {
                    q_done: 0,
                    pp: vec![0.0; l],
                    mm: vec![0.0; l],
                    pm: vec![0.0; l],
                });
                while cache.q_done < basis.q.len() {
                    fold_column(
                        cache,
                        &basis.q[cache.q_done],
                        b,
                        &support,
                        &mut fold_scratch,
                    );
                    cache.q_done += 1;
                }
                if let Some((red, knot)) =
                    evaluate_pair(cache, b, &residual, &support, &mut eval_scratch)
                {
                    parent_best = parent_best.max(red);
                    if best.as_ref().is_none_or(|c| red > c.reduction) {
                        best = Some(Candidate {
                            reduction: red,
                            parent: pi,
                            feature: v,
                            knot,
                        });
                    }
                }
            }
            parent.last_reduction = parent_best;
            parent.last_evaluated = step;
        }
        let Some(best) = best.filter(|c| c.reduction > min_reduction) else {
            break;
        };
        let parent_term = parents[best.parent].term;
        let b = values[parent_term].clone();
        let col = x.col(best.feature);
        for direction in [Direction::Plus, Direction::Minus] {
            let factor = HingeFactor {
                feature: best.feature,
                knot: best.knot,
                direction,
            };
            let h: Vec<f64> = b
                .iter()
                .zip(col)
                .map(|(bi, &xi)| bi * factor.eval(xi))
                .collect();
            let mut term = terms[parent_term].clone();
            term.factors.push(factor);
            basis.push(h.clone(), y, &mut residual);
            if term.degree() < params.max_degree {
                let mut features: Vec<usize> = term.factors.iter().map(|f| f.feature).collect();
                features.sort_unstable();
                parents.push(Parent {
                    term: terms.len(),
                    features,
                    caches: (0..k).map(|_| None).collect(),
                    last_reduction: f64::INFINITY,
                    last_evaluated: step,
                });
            }
            terms.push(term);
            values.push(h);
        }
        path.push(basis.coefficients());
    }

    let mut model = MarsModel {
        n_features: k,
        params: params.clone(),
        terms: terms.split_off(1),
        path,
        residual_pass: None,
    };
    if let Some(floor) = params.restart_r2 {
        let rss: f64 = residual.iter().map(|v| v * v).sum();
        let r2 = if sst > 0.0 { 1.0 - rss / sst } else { 1.0 };
        if r2 < floor {
            let fitted = model.predict(x)?;
            let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
            let second = MarsParams {
                restart_r2: None,
                ..params.clone()
            };
            model.residual_pass = Some(Box::new(mars_forward(
                x,
                &resid,
                &second,
                seed.named("restart"),
            )?));
        }
    }
    Ok(model)
}

/// Parents searched this step. Fast-MARS ranking: parents are ordered by
/// their last improvement; each step without evaluation moves a parent one
/// rank up, so stale parents are eventually revisited. Parents never
/// evaluated come first.
fn select_parents(parents: &[Parent], fast_k: Option<usize>, step: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..parents.len()).collect();
    let Some(limit) = fast_k.filter(|&f| f < parents.len()) else {
        return all;
    };
    let mut by_reduction = all.clone();
    by_reduction.sort_by(|&a, &b| {
        parents[b]
            .last_reduction
            .total_cmp(&parents[a].last_reduction)
            .then(a.cmp(&b))
    });
    let mut priority: Vec<(f64, usize)> = by_reduction
        .iter()
        .enumerate()
        .map(|(rank, &p)| {
            let score = if parents[p].last_reduction.is_infinite() {
                f64::NEG_INFINITY
            } else {
                rank as f64 - (step - parents[p].last_evaluated) as f64
            };
            (score, p)
        })
        .collect();
    priority.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = priority.into_iter().take(limit).map(|(_, p)| p).collect();
    chosen.sort_unstable();
    chosen
}

/// Forward pass followed, if the training R² stays below `r2_floor`, by a
/// second pass on the residuals; the result predicts the sum of both.
pub fn mars_restart(
    x: &Matrix,
    y: &[f64],
    params: &MarsParams,
    r2_floor: f64,
    seed: SeedSpec,
) -> Result<MarsModel> {
    mars_forward(
        x,
        y,
        &MarsParams {
            restart_r2: Some(r2_floor),
            ..params.clone()
        },
        seed,
    )
}

impl MarsModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn params(&self) -> &MarsParams {
        &self.params
    }

    /// Non-intercept terms of the first pass, in the order they were added.
    pub fn terms(&self) -> &[HingeTerm] {
        &self.terms
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients()[0]
    }

    /// Intercept followed by one coefficient per term.
    pub fn coefficients(&self) -> &[f64] {
        self.path
            .last()
            .expect("path holds the intercept-only model")
    }

    pub fn residual_pass(&self) -> Option<&MarsModel> {
        self.residual_pass.as_deref()
    }

    /// Number of forward steps taken (each adds one reflected pair).
    pub fn steps(&self) -> usize {
        self.path.len() - 1
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.n_cols() != self.n_features {
            return Err(Error::Schema(format!(
                "MARS model expects {} columns, got {}",
                self.n_features,
                x.n_cols()
            )));
        }
        Ok(())
    }

    fn basis_values(&self, x: &Matrix, n_terms: usize) -> Vec<Vec<f64>> {
        self.terms[..n_terms]
            .iter()
            .map(|t| (0..x.n_rows()).map(|i| t.eval(|f| x.get(i, f))).collect())
            .collect()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check(x)?;
        let values = self.basis_values(x, self.terms.len());
        let mut out = combine(self.coefficients(), &values, x.n_rows());
        if let Some(second) = &self.residual_pass {
            for (o, s) in out.iter_mut().zip(second.predict(x)?) {
                *o += s;
            }
        }
        Ok(out)
    }

    /// Predictions of the first-pass model truncated to `m` terms (the first
    /// ⌊m/2⌋ forward steps), for each `m` in `term_counts`.
    pub fn staged_predict(&self, x: &Matrix, term_counts: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check(x)?;
        let values = self.basis_values(x, self.terms.len());
        Ok(term_counts
            .iter()
            .map(|&m| {
                let steps = (m / 2).min(self.steps());
                combine(&self.path[steps], &values, x.n_rows())
            })
            .collect())
    }

    /// The first-pass model after ⌊m/2⌋ forward steps.
    pub fn truncate(&self, m: usize) -> MarsModel {
        let steps = (m / 2).min(self.steps());
        MarsModel {
            n_features: self.n_features,
            params: MarsParams {
                max_terms: m,
                ..self.params.clone()
            },
            terms: self.terms[..2 * steps].to_vec(),
            path: self.path[..=steps].to_vec(),
            residual_pass: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        persist::to_json("mars", self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        persist::from_json("mars", text)
    }
}

fn combine(coefs: &[f64], values: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out = vec![coefs[0]; n];
    for (c, v) in coefs[1..].iter().zip(values) {
        if *c != 0.0 {
            out.iter_mut().zip(v).for_each(|(o, b)| *o += c * b);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn uniform(seed: u64, n: usize, k: usize) -> Matrix {
        let mut rng = SeedSpec::new(seed).rng();
        Matrix::from_columns(
            (0..k)
                .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
                .collect(),
        )
        .unwrap()
    }

    fn r2(y: &[f64], p: &[f64]) -> f64 {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let sst: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
        1.0 - y.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / sst
    }

    fn lstsq_rss(cols: &[Vec<f64>], y: &[f64]) -> f64 {
        let n = y.len();
        let a = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        let b = DVector::from_column_slice(y);
        let svd = a.clone().svd(true, true);
        let beta = svd.solve(&b, 1e-12).unwrap();
        (b - a * beta).norm_squared()
    }

    #[test]
    fn single_hinge_is_recovered() {
        let n = 201;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = xs.iter().map(|&v| (v - 0.5).max(0.0)).collect();
        let x = Matrix::from_columns(vec![xs.clone()]).unwrap();
        let params = MarsParams {
            max_terms: 2,
            endspan: Some(0),
            minspan: Some(0),
            ..MarsParams::default()
        };
        let model = mars_forward(&x, &y, &params, SeedSpec::new(0)).unwrap();
        assert_eq!(model.terms().len(), 2);
        let knot = model.terms()[0].factors[0].knot;
        assert!((knot - 0.5).abs() < 1.0 / n as f64, "knot {knot}");
        assert!(xs.contains(&knot));
        let fit = model.predict(&x).unwrap();
        assert!(r2(&y, &fit) > 1.0 - 1e-9);
    }

    /// Oracle: enumerate every (parent, feature, knot) pair explicitly and
    /// refit the full basis by least squares.
    fn brute_force_step(
        x: &Matrix,
        y: &[f64],
        model: &MarsModel,
        max_degree: usize,
    ) -> (f64, HingeTerm) {
        let n = y.len();
        let mut base: Vec<Vec<f64>> = vec![vec![1.0; n]];
        base.extend(model.basis_values(x, model.terms().len()));
        let mut parents: Vec<HingeTerm> = vec![HingeTerm::default()];
        parents.extend(model.terms().iter().cloned());
        let mut best = (f64::INFINITY, HingeTerm::default());
        for (pi, p) in parents.iter().enumerate() {
            if p.degree() >= max_degree {
                continue;
            }
            for v in 0..x.n_cols() {
                if p.factors.iter().any(|f| f.feature == v) {
                    continue;
                }
                let mut knots: Vec<f64> = (0..n)
                    .filter(|&i| base[pi][i] > 0.0)
                    .map(|i| x.get(i, v))
                    .collect();
                knots.sort_by(f64::total_cmp);
                knots.dedup();
                knots.pop();
                for &t in &knots {
                    let mut cols = base.clone();
                    for dir in [Direction::Plus, Direction::Minus] {
                        let f = HingeFactor {
                            feature: v,
                            knot: t,
                            direction: dir,
                        };
                        cols.push((0..n).map(|i| base[pi][i] * f.eval(x.get(i, v))).collect());
                    }
                    let rss = lstsq_rss(&cols, y);
                    if rss < best.0 - 1e-9 {
                        let mut term = p.clone();
                        term.factors.push(HingeFactor {
                            feature: v,
                            knot: t,
                            direction: Direction::Plus,
                        });
                        best = (rss, term);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn interaction_target_selects_degree_two_term() {
        let n = 200;
        let x = uniform(11, n, 3);
        let y: Vec<f64> = (0..n)
            .map(|i| x.get(i, 0) * if x.get(i, 1) > 0.5 { 1.0 } else { 0.0 })
            .collect();
        let params = MarsParams {
            max_terms: 6,
            max_degree: 2,
            endspan: Some(0),
            minspan: Some(0),
            ..MarsParams::default()
        };
        let model = mars_forward(&x, &y, &params, SeedSpec::new(0)).unwrap();
        for s in 0..3 {
            let (oracle_rss, oracle_term) = brute_force_step(&x, &y, &model.truncate(2 * s), 2);
            let chosen = &model.terms()[2 * s];
            let got: Vec<(usize, f64)> =
                chosen.factors.iter().map(|f| (f.feature, f.knot)).collect();
            let want: Vec<(usize, f64)> = oracle_term
                .factors
                .iter()
                .map(|f| (f.feature, f.knot))
                .collect();
            assert_eq!(got, want, "step {s}");
            let fit = model.truncate(2 * s + 2).predict(&x).unwrap();
            let rss: f64 = y.iter().zip(&fit).map(|(a, b)| (a - b).powi(2)).sum();
            assert!((rss - oracle_rss).abs() < 1e-8 * (1.0 + oracle_rss));
        }
        assert!(model
            .terms()
            .iter()
            .any(|t| t.degree() == 2 && t.factors.iter().any(|f| f.feature == 1)));
    }

    #[test]
    fn every_step_matches_exhaustive_search() {
        let n = 40;
        let x = uniform(12, n, 2);
        let y: Vec<f64> = (0..n)
            .map(|i| (5.0 * x.get(i, 0)).sin() + x.get(i, 0) * x.get(i, 1) + 0.1 * (i % 3) as f64)
            .collect();
        let params = MarsParams {
            max_terms: 8,
            max_degree: 2,
            endspan: Some(0),
            minspan: Some(0),
            ..MarsParams::default()
        };
        let model = mars_forward(&x, &y, &params, SeedSpec::new(0)).unwrap();
        for s in 0..model.steps() {
            let prefix = model.truncate(2 * s);
            let (oracle_rss, _) = brute_force_step(&x, &y, &prefix, 2);
            let next = model.truncate(2 * s + 2).predict(&x).unwrap();
            let rss: f64 = y.iter().zip(&next).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(
                (rss - oracle_rss).abs() < 1e-7 * (1.0 + oracle_rss),
                "step {s}: {rss} vs {oracle_rss}"
            );
        }
    }

    #[test]
    fn training_sse_non_increasing_and_deterministic() {
        let n = 150;
        let x = uniform(13, n, 4);
        let y: Vec<f64> = (0..n)
            .map(|i| (3.0 * x.get(i, 0)).cos() + x.get(i, 2) * x.get(i, 3))
            .collect();
        let params = MarsParams {
            max_terms: 30,
            max_degree: 3,
            ..MarsParams::default()
        };
        let model = mars_forward(&x, &y, &params, SeedSpec::new(1)).unwrap();
        let counts: Vec<usize> = (0..=model.terms().len()).step_by(2).collect();
        let staged = model.staged_predict(&x, &counts).unwrap();
        let sse: Vec<f64> = staged
            .iter()
            .map(|p| y.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        assert!(sse.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
        assert_eq!(
            model,
            mars_forward(&x, &y, &params, SeedSpec::new(999)).unwrap()
        );
        for t in model.terms() {
            assert!(t.degree() <= 3);
            for f in &t.factors {
                assert!(x.col(f.feature).contains(&f.knot));
            }
            let mut feats: Vec<usize> = t.factors.iter().map(|f| f.feature).collect();
            feats.dedup();
            assert_eq!(feats.len(), t.degree());
        }
    }

    #[test]
    fn empty_model_predicts_mean_and_training_rows_reproduce_fit() {
        let x = uniform(14, 30, 2);
        let y: Vec<f64> = (0..30).map(|i| x.get(i, 0) * 2.0).collect();
        let model = mars_forward(
            &x,
            &y,
            &MarsParams {
                max_terms: 10,
                ..MarsParams::default()
            },
            SeedSpec::new(0),
        )
        .unwrap();
        let mean = y.iter().sum::<f64>() / 30.0;
        let base = model.truncate(1).predict(&x).unwrap();
        assert!(base.iter().all(|p| (p - mean).abs() < 1e-12));
        let fit = model.predict(&x).unwrap();
        for i in 0..30 {
            let row = x.select_rows(&[i]);
            assert_eq!(model.predict(&row).unwrap()[0], fit[i]);
        }
    }

    #[test]
    fn predictions_are_continuous() {
        let x = uniform(15, 120, 2);
        let y: Vec<f64> = (0..120)
            .map(|i| (4.0 * x.get(i, 0)).sin() * x.get(i, 1))
            .collect();
        let model = mars_forward(
            &x,
            &y,
            &MarsParams {
                max_terms: 20,
                max_degree: 2,
                ..MarsParams::default()
            },
            SeedSpec::new(0),
        )
        .unwrap();
        // Lipschitz bound from the coefficients: |Δf| ≤ Σ|β|·C·|Δx| on [0,1]².
        let lip: f64 = model.coefficients()[1..]
            .iter()
            .map(|c| c.abs())
            .sum::<f64>()
            * 2.0;
        let h = 1e-4;
        for gi in 0..50 {
            let a = gi as f64 / 49.0;
            for gj in 0..50 {
                let b = gj as f64 / 49.0;
                let p = Matrix::from_row_major(3, 2, &[a, b, a + h, b, a, b + h]).unwrap();
                let v = model.predict(&p).unwrap();
                assert!((v[1] - v[0]).abs() <= lip * h + 1e-12);
                assert!((v[2] - v[0]).abs() <= lip * h + 1e-12);
            }
        }
    }

    #[test]
    fn full_mtry_consumes_no_randomness_and_partial_mtry_varies() {
        let x = uniform(16, 80, 6);
        let y: Vec<f64> = (0..80)
            .map(|i| (0..6).map(|j| (j as f64 + 1.0) * x.get(i, j)).sum())
            .collect();
        let p = MarsParams {
            max_terms: 10,
            ..MarsParams::default()
        };
        assert_eq!(
            mars_forward(&x, &y, &p, SeedSpec::new(1)).unwrap(),
            mars_forward(&x, &y, &p, SeedSpec::new(2)).unwrap()
        );
        let half = MarsParams { mtry: 0.5, ..p };
        let a = mars_forward(&x, &y, &half, SeedSpec::new(1)).unwrap();
        assert_eq!(a, mars_forward(&x, &y, &half, SeedSpec::new(1)).unwrap());
        assert_ne!(a, mars_forward(&x, &y, &half, SeedSpec::new(2)).unwrap());
    }

    #[test]
    fn restart_behaviour() {
        let x = uniform(17, 200, 3);
        let y: Vec<f64> = (0..200)
            .map(|i| (6.0 * x.get(i, 0)).sin() + (5.0 * x.get(i, 1)).cos() + x.get(i, 2).powi(2))
            .collect();
        let p = MarsParams {
            max_terms: 4,
            ..MarsParams::default()
        };
        let single = mars_forward(&x, &y, &p, SeedSpec::new(0)).unwrap();
        let restarted = mars_restart(&x, &y, &p, 0.99, SeedSpec::new(0)).unwrap();
        assert!(restarted.residual_pass().is_some());
        assert!(r2(&y, &restarted.predict(&x).unwrap()) > r2(&y, &single.predict(&x).unwrap()));

        let lin: Vec<f64> = (0..200).map(|i| (x.get(i, 0) - 0.3).max(0.0)).collect();
        let easy = mars_restart(&x, &lin, &p, 0.95, SeedSpec::new(0)).unwrap();
        assert!(easy.residual_pass().is_none());

        let zero = mars_forward(&x, &vec![0.0; 200], &p, SeedSpec::new(0)).unwrap();
        assert!(zero.terms().is_empty());
    }

    #[test]
    fn additive_knots_respect_end_and_minimum_spans() {
        let n = 120;
        let x = uniform(21, n, 3);
        let y: Vec<f64> = (0..n)
            .map(|i| (8.0 * x.get(i, 0)).sin() + x.get(i, 1).powi(2))
            .collect();
        let params = MarsParams {
            max_terms: 20,
            endspan: Some(15),
            minspan: Some(7),
            ..MarsParams::default()
        };
        let model = mars_forward(&x, &y, &params, SeedSpec::new(0)).unwrap();
        assert!(!model.terms().is_empty());
        for t in model.terms() {
            let f = &t.factors[0];
            let below = (0..n).filter(|&i| x.get(i, f.feature) <= f.knot).count();
            assert!(
                below >= 15 && n - below >= 15,
                "knot {} leaves {below}",
                f.knot
            );
        }

        // First step against exhaustive search over the knots the span rule allows.
        let allowed = |v: usize| -> Vec<f64> {
            let mut col: Vec<f64> = x.col(v).to_vec();
            col.sort_by(f64::total_cmp);
            let mut out = Vec::new();
            let mut last: Option<usize> = None;
            for c in 1..n {
                if col[c] != col[c - 1] && c >= 15 && n - c >= 15 && last.is_none_or(|l| c - l >= 7)
                {
                    out.push(col[c - 1]);
                    last = Some(c);
                }
            }
            out
        };
        let mut best = f64::INFINITY;
        for v in 0..3 {
            for t in allowed(v) {
                let mut cols = vec![vec![1.0; n]];
                for dir in [Direction::Plus, Direction::Minus] {
                    let f = HingeFactor {
                        feature: v,
                        knot: t,
                        direction: dir,
                    };
                    cols.push((0..n).map(|i| f.eval(x.get(i, v))).collect());
                }
                best = best.min(lstsq_rss(&cols, &y));
            }
        }
        let fit = model.truncate(2).predict(&x).unwrap();
        let rss: f64 = y.iter().zip(&fit).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((rss - best).abs() < 1e-8 * (1.0 + best), "{rss} vs {best}");
    }

    #[test]
    fn automatic_spans_follow_the_usual_formulas() {
        let p = MarsParams::default();
        assert_eq!(p.endspan_for(10), 10);
        assert_eq!(p.minspan_for(10, 267), 6);
        assert_eq!(
            MarsParams {
                minspan: Some(0),
                ..p
            }
            .minspan_for(10, 267),
            0
        );
    }

    #[test]
    fn fast_mars_limits_search_but_still_fits() {
        let x = uniform(18, 200, 5);
        let y: Vec<f64> = (0..200)
            .map(|i| (4.0 * x.get(i, 0)).sin() + x.get(i, 1) * x.get(i, 2))
            .collect();
        let p = MarsParams {
            max_terms: 40,
            max_degree: 3,
            fast_k: Some(5),
            ..MarsParams::default()
        };
        let model = mars_forward(&x, &y, &p, SeedSpec::new(0)).unwrap();
        assert_eq!(model.terms().len(), 40);
        assert!(r2(&y, &model.predict(&x).unwrap()) > 0.95);
    }

    #[test]
    fn json_round_trip() {
        let x = uniform(19, 50, 2);
        let y: Vec<f64> = (0..50).map(|i| x.get(i, 0) - x.get(i, 1)).collect();
        let model = mars_restart(
            &x,
            &y,
            &MarsParams {
                max_terms: 2,
                ..MarsParams::default()
            },
            0.999,
            SeedSpec::new(0),
        )
        .unwrap();
        let back = MarsModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        assert!(model.predict(&Matrix::zeros(1, 3)).is_err());
    }
}
