//! CART regression trees: exhaustive split search, depth-first growth,
//! cost-complexity pruning and prediction.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::persist;
use crate::rng::{choose_features, feature_count, mix, SeedSpec};

/// Relative tolerance used to call two split scores equal.
const TIE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Minimum number of training rows in a leaf.
    pub min_node: usize,
    /// Fraction of features eligible at each split.
    pub mtry: f64,
    /// Maximum depth, root at depth 0. `None` grows until the other rules stop.
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_node: 1,
            mtry: 1.0,
            max_depth: None,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_node == 0 {
            return Err(Error::InvalidParam("min_node must be at least 1".into()));
        }
        if !(self.mtry > 0.0 && self.mtry <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "mtry must lie in (0, 1], got {}",
                self.mtry
            )));
        }
        Ok(())
    }
}

/// Result of one cutting step: rows with `x[feature] <= threshold` go left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left_mean: f64,
    pub right_mean: f64,
    pub left_count: usize,
    pub right_count: usize,
    /// Total within-child sum of squares.
    pub sse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub mean: f64,
    pub count: usize,
    /// Sum of squared deviations of the node's training targets from `mean`.
    pub sse: f64,
    pub split: Option<NodeSplit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    n_features: usize,
    params: TreeParams,
    /// Node 0 is the root; children always have larger indices than parents.
    nodes: Vec<Node>,
}

struct Scan {
    gain: f64,
    threshold: f64,
    n_left: usize,
}

/// Best cut on one feature given the node's rows sorted by that feature.
/// `gain` is the drop in SSE relative to not splitting.
fn scan_feature(
    col: &[f64],
    y: &[f64],
    order: &[u32],
    mean: f64,
    min_leaf: usize,
    tol: f64,
) -> Option<Scan> {
    let n = order.len();
    let total: f64 = order.iter().map(|&r| y[r as usize] - mean).sum();
    let base = total * total / n as f64;
    let mut best: Option<Scan> = None;
    let mut sl = 0.0;
    for i in 0..n - 1 {
        sl += y[order[i] as usize] - mean;
        let nl = i + 1;
        let nr = n - nl;
        if nr < min_leaf {
            break;
        }
        if nl < min_leaf {
            continue;
        }
        let a = col[order[i] as usize];
        let b = col[order[i + 1] as usize];
        if !(b > a) {
            continue;
        }
        let sr = total - sl;
        let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - base;
        if best.as_ref().is_none_or(|s| gain > s.gain + tol) {
            let mut c = a + (b - a) * 0.5;
            if c >= b {
                c = a;
            }
            best = Some(Scan {
                gain,
                threshold: c,
                n_left: nl,
            });
        }
    }
    best
}

fn mean_sse(y: &[f64], rows: impl Iterator<Item = usize> + Clone) -> (f64, f64, usize) {
    let (sum, n) = rows
        .clone()
        .fold((0.0, 0usize), |(s, n), r| (s + y[r], n + 1));
    let mean = sum / n as f64;
    let sse = rows.map(|r| (y[r] - mean).powi(2)).sum();
    (mean, sse, n)
}

/// Rows of each feature column sorted ascending by value (ties by row index).
pub(crate) fn presort(x: &Matrix, rows: &[usize]) -> Vec<Vec<u32>> {
    (0..x.n_cols())
        .map(|j| {
            let col = x.col(j);
            let mut order: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
            order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            order
        })
        .collect()
}

/// Exhaustive cutting step over `candidates` for the given rows: returns the
/// (feature, midpoint) minimising total child SSE, ties going to the lowest
/// feature and then the lowest threshold. `None` when no cut reduces SSE.
pub fn best_split(x: &Matrix, y: &[f64], rows: &[usize], candidates: &[usize]) -> Option<Split> {
    best_split_min_leaf(x, y, rows, candidates, 1)
}

/// [`best_split`] restricted to cuts leaving at least `min_leaf` rows per side.
pub fn best_split_min_leaf(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    if rows.len() < 2 {
        return None;
    }
    let (mean, sse, n) = mean_sse(y, rows.iter().copied());
    let tol = TIE_TOL * sse;
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let mut best: Option<(usize, Scan)> = None;
    for &f in &cands {
        let col = x.col(f);
        let mut order: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
        order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
        if let Some(s) = scan_feature(col, y, &order, mean, min_leaf.max(1), tol) {
            if best.as_ref().is_none_or(|(_, b)| s.gain > b.gain + tol) {
                best = Some((f, s));
            }
        }
    }
    let (feature, s) = best?;
    if !(s.gain > tol) || !(sse > 0.0) {
        return None;
    }
    let col = x.col(feature);
    let left = rows.iter().copied().filter(|&r| col[r] <= s.threshold);
    let right = rows.iter().copied().filter(|&r| col[r] > s.threshold);
    let (left_mean, left_sse, left_count) = mean_sse(y, left);
    let (right_mean, right_sse, right_count) = mean_sse(y, right);
    debug_assert_eq!(left_count + right_count, n);
    Some(Split {
        feature,
        threshold: s.threshold,
        left_mean,
        right_mean,
        left_count,
        right_count,
        sse: left_sse + right_sse,
    })
}

struct Pending {
    node: usize,
    sorted: Vec<Vec<u32>>,
    depth: usize,
    key: u64,
}

/// Grows a tree on all rows of `x`.
pub fn grow(x: &Matrix, y: &[f64], params: &TreeParams, seed: SeedSpec) -> Result<TreeModel> {
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    grow_rows(x, y, &rows, params, seed)
}

/// Grows a tree on the given rows of `x` (duplicates allowed).
pub fn grow_rows(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    params: &TreeParams,
    seed: SeedSpec,
) -> Result<TreeModel> {
    params.validate()?;
    if rows.is_empty() || x.n_cols() == 0 {
        return Err(Error::InvalidData(
            "cannot grow a tree on an empty dataset".into(),
        ));
    }
    if y.len() != x.n_rows() {
        return Err(Error::InvalidData(
            "target length differs from row count".into(),
        ));
    }
    Ok(grow_sorted(x, y, presort(x, rows), params, seed))
}

/// Growth from presorted per-feature row lists. Each node's candidate features
/// come from a stream keyed by the node's path from the root, so a node's
/// split does not depend on how much of the rest of the tree was grown.
pub(crate) fn grow_sorted(
    x: &Matrix,
    y: &[f64],
    sorted: Vec<Vec<u32>>,
    params: &TreeParams,
    seed: SeedSpec,
) -> TreeModel {
    let k = x.n_cols();
    let draw_features = feature_count(k, params.mtry) < k;
    let min_leaf = params.min_node.max(1);
    let mut mask = vec![false; x.n_rows()];
    let mut nodes = vec![Node {
        mean: 0.0,
        count: 0,
        sse: 0.0,
        split: None,
    }];
    let mut stack = vec![Pending {
        node: 0,
        sorted,
        depth: 0,
        key: 1,
    }];
    while let Some(Pending {
        node,
        sorted,
        depth,
        key,
    }) = stack.pop()
    {
        let rows = &sorted[0];
        let (mean, sse, n) = mean_sse(y, rows.iter().map(|&r| r as usize));
        nodes[node].mean = mean;
        nodes[node].sse = sse;
        nodes[node].count = n;
        if n < 2 * min_leaf || !(sse > 0.0) || params.max_depth.is_some_and(|d| depth >= d) {
            continue;
        }
        let candidates = if draw_features {
            choose_features(k, params.mtry, &mut seed.child(key).rng())
        } else {
            (0..k).collect()
        };
        let tol = TIE_TOL * sse;
        let mut best: Option<(usize, Scan)> = None;
        for &f in &candidates {
            if let Some(s) = scan_feature(x.col(f), y, &sorted[f], mean, min_leaf, tol) {
                if best.as_ref().is_none_or(|(_, b)| s.gain > b.gain + tol) {
                    best = Some((f, s));
                }
            }
        }
        let Some((feature, s)) = best.filter(|(_, s)| s.gain > tol) else {
            continue;
        };
        // A child that cannot split only needs its row set.
        let terminal =
            |count: usize| count < 2 * min_leaf || params.max_depth.is_some_and(|d| depth + 1 >= d);
        let (left, right) = if terminal(s.n_left) && terminal(n - s.n_left) {
            let (l, r) = sorted[feature].split_at(s.n_left);
            (vec![l.to_vec()], vec![r.to_vec()])
        } else {
            for &r in &sorted[feature][..s.n_left] {
                mask[r as usize] = true;
            }
            let mut left = Vec::with_capacity(k);
            let mut right = Vec::with_capacity(k);
            let n_left = s.n_left;
            for order in &sorted {
                let mut l = vec![0u32; n_left + 1];
                let mut r = vec![0u32; n - n_left + 1];
                let (mut i, mut j) = (0, 0);
                for &row in order {
                    let m = mask[row as usize] as usize;
                    l[i] = row;
                    r[j] = row;
                    i += m;
                    j += 1 - m;
                }
                l.truncate(i);
                r.truncate(j);
                left.push(l);
                right.push(r);
            }
            for &r in &sorted[feature][..s.n_left] {
                mask[r as usize] = false;
            }
            (left, right)
        };
        let l_idx = nodes.len();
        let r_idx = l_idx + 1;
        for _ in 0..2 {
            nodes.push(Node {
                mean: 0.0,
                count: 0,
                sse: 0.0,
                split: None,
            });
        }
        nodes[node].split = Some(NodeSplit {
            feature,
            threshold: s.threshold,
            left: l_idx,
            right: r_idx,
        });
        stack.push(Pending {
            node: r_idx,
            sorted: right,
            depth: depth + 1,
            key: mix(key, 2),
        });
        stack.push(Pending {
            node: l_idx,
            sorted: left,
            depth: depth + 1,
            key: mix(key, 1),
        });
    }
    TreeModel {
        n_features: k,
        params: params.clone(),
        nodes,
    }
}

impl TreeModel {
    /// A single-leaf tree predicting `mean`.
    pub fn constant(n_features: usize, mean: f64, count: usize) -> Self {
        TreeModel {
            n_features,
            params: TreeParams::default(),
            nodes: vec![Node {
                mean,
                count,
                sse: 0.0,
                split: None,
            }],
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(s) = node.split {
                depth[s.left] = depth[i] + 1;
                depth[s.right] = depth[i] + 1;
                max = max.max(depth[i] + 1);
            }
        }
        max
    }

    #[inline]
    fn leaf_for(&self, value: impl Fn(usize) -> f64) -> &Node {
        let mut node = &self.nodes[0];
        while let Some(s) = node.split {
            node = if value(s.feature) <= s.threshold {
                &self.nodes[s.left]
            } else {
                &self.nodes[s.right]
            };
        }
        node
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.leaf_for(|f| row[f]).mean
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.n_cols() != self.n_features {
            return Err(Error::Schema(format!(
                "tree expects {} columns, got {}",
                self.n_features,
                x.n_cols()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..x.n_rows())
            .map(|i| self.leaf_for(|f| x.get(i, f)).mean)
            .collect())
    }

    /// Adds `scale` times the tree's prediction to `out`.
    pub(crate) fn predict_add(&self, x: &Matrix, scale: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o += scale * self.leaf_for(|f| x.get(i, f)).mean;
        }
    }

    /// Multiplies every node mean by `factor`.
    pub fn scale_leaves(&mut self, factor: f64) {
        for node in &mut self.nodes {
            node.mean *= factor;
        }
    }

    /// For every node, the complexity parameter α at which weakest-link
    /// pruning turns it into a leaf. Nodes removed together with an ancestor
    /// inherit the ancestor's α. Leaves hold `-inf`.
    pub fn collapse_alphas(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut alpha = vec![f64::NEG_INFINITY; n];
        let mut collapsed: Vec<bool> = self.nodes.iter().map(|n| n.split.is_none()).collect();
        let eps = 1e-12 * self.nodes[0].sse.max(f64::MIN_POSITIVE);
        let mut subtree_sse = vec![0.0; n];
        let mut leaves = vec![0usize; n];
        let mut g = vec![f64::INFINITY; n];
        while !collapsed[0] {
            // Children have larger indices, so a reverse sweep is post-order.
            for i in (0..n).rev() {
                if collapsed[i] {
                    subtree_sse[i] = self.nodes[i].sse;
                    leaves[i] = 1;
                    g[i] = f64::INFINITY;
                } else {
                    let s = self.nodes[i].split.expect("internal node");
                    subtree_sse[i] = subtree_sse[s.left] + subtree_sse[s.right];
                    leaves[i] = leaves[s.left] + leaves[s.right];
                    g[i] = ((self.nodes[i].sse - subtree_sse[i]) / (leaves[i] - 1) as f64).max(0.0);
                }
            }
            let min_g = self
                .reachable(&collapsed)
                .map(|i| g[i])
                .fold(f64::INFINITY, f64::min);
            let batch: Vec<usize> = self
                .reachable(&collapsed)
                .filter(|&i| !collapsed[i] && g[i] <= min_g + eps)
                .collect();
            for i in batch {
                self.mark_subtree(i, min_g, &mut alpha, &mut collapsed);
            }
        }
        alpha
    }

    fn reachable<'a>(&'a self, collapsed: &'a [bool]) -> impl Iterator<Item = usize> + 'a {
        let mut stack = vec![0usize];
        std::iter::from_fn(move || {
            let i = stack.pop()?;
            if !collapsed[i] {
                let s = self.nodes[i].split.expect("internal node");
                stack.push(s.right);
                stack.push(s.left);
            }
            Some(i)
        })
    }

    fn mark_subtree(&self, root: usize, a: f64, alpha: &mut [f64], collapsed: &mut [bool]) {
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            if let Some(s) = self.nodes[i].split {
                if !collapsed[i] || i == root {
                    alpha[i] = a;
                    collapsed[i] = true;
                    stack.push(s.left);
                    stack.push(s.right);
                }
            }
        }
    }

    /// The increasing weakest-link sequence α₁ < α₂ < … at which subtrees
    /// are pruned away; the last entry collapses the root.
    pub fn weakest_link_path(&self) -> Vec<f64> {
        let alpha = self.collapse_alphas();
        let mut path: Vec<f64> = self
            .nodes
            .iter()
            .zip(&alpha)
            .filter(|(n, _)| n.split.is_some())
            .map(|(_, &a)| a)
            .collect();
        path.sort_by(f64::total_cmp);
        path.dedup();
        path
    }

    /// The optimal subtree for complexity parameter `alpha`.
    pub fn prune(&self, alpha: f64) -> TreeModel {
        let collapse = self.collapse_alphas();
        self.prune_with(&collapse, alpha)
    }

    fn prune_with(&self, collapse: &[f64], alpha: f64) -> TreeModel {
        // Children are allocated in pairs when their parent is visited, the
        // same numbering the grower produces, so `prune(0)` is the identity.
        let mut nodes = vec![Node {
            split: None,
            ..self.nodes[0].clone()
        }];
        let mut stack = vec![(0usize, 0usize)];
        while let Some((old, new)) = stack.pop() {
            let Some(s) = self.nodes[old].split.filter(|_| collapse[old] > alpha) else {
                continue;
            };
            let l = nodes.len();
            for child in [s.left, s.right] {
                nodes.push(Node {
                    split: None,
                    ..self.nodes[child].clone()
                });
            }
            nodes[new].split = Some(NodeSplit {
                left: l,
                right: l + 1,
                ..s
            });
            stack.push((s.right, l + 1));
            stack.push((s.left, l));
        }
        TreeModel {
            n_features: self.n_features,
            params: self.params.clone(),
            nodes,
        }
    }

    fn predict_pruned_row(
        &self,
        collapse: &[f64],
        alpha: f64,
        value: impl Fn(usize) -> f64,
    ) -> f64 {
        let mut i = 0;
        while let Some(s) = self.nodes[i].split.filter(|_| collapse[i] > alpha) {
            i = if value(s.feature) <= s.threshold {
                s.left
            } else {
                s.right
            };
        }
        self.nodes[i].mean
    }

    pub fn to_json(&self) -> Result<String> {
        persist::to_json("tree", self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        persist::from_json("tree", text)
    }
}

/// Selects the complexity parameter of `model` (grown on `x`, `y`) by K-fold
/// cross-validated MSE over the geometric midpoints of its weakest-link
/// sequence and returns the corresponding pruned subtree. Ties in CV error go
/// to the smaller α.
pub fn cost_complexity_prune(
    model: &TreeModel,
    x: &Matrix,
    y: &[f64],
    folds: usize,
    seed: SeedSpec,
) -> Result<TreeModel> {
    if folds < 2 {
        return Err(Error::InvalidParam("pruning needs at least 2 folds".into()));
    }
    if model.nodes.len() == 1 {
        return Ok(model.clone());
    }
    let n = x.n_rows();
    if n < folds {
        return Err(Error::InvalidData(format!(
            "{n} rows cannot form {folds} folds"
        )));
    }
    let mut alphas = vec![0.0];
    alphas.extend(model.weakest_link_path());
    let betas: Vec<f64> = (0..alphas.len())
        .map(|k| match alphas.get(k + 1) {
            Some(next) => (alphas[k] * next).sqrt(),
            None => f64::INFINITY,
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.named("folds").rng());
    let mut cv_sse = vec![0.0; betas.len()];
    for fold in 0..folds {
        let (held, train): (Vec<usize>, Vec<usize>) = {
            let mut held = Vec::new();
            let mut train = Vec::new();
            for (pos, &r) in order.iter().enumerate() {
                if pos % folds == fold {
                    held.push(r);
                } else {
                    train.push(r);
                }
            }
            (held, train)
        };
        let tree = grow_rows(x, y, &train, &model.params, seed.child(fold as u64 + 1))?;
        let collapse = tree.collapse_alphas();
        for (k, &beta) in betas.iter().enumerate() {
            cv_sse[k] += held
                .iter()
                .map(|&r| {
                    (y[r] - tree.predict_pruned_row(&collapse, beta, |f| x.get(r, f))).powi(2)
                })
                .sum::<f64>();
        }
    }
    let mut best = 0;
    for k in 1..betas.len() {
        if cv_sse[k] < cv_sse[best] {
            best = k;
        }
    }
    Ok(model.prune(betas[best]))
}
