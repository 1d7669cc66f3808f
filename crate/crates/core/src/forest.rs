//! Random forest of CART trees for regression (MSE) and classification (Gini).
//!
//! Splits are searched exactly: candidate thresholds are midpoints between
//! consecutive distinct feature values present at a node. Defaults mirror the
//! usual library conventions: min samples split 2, min samples leaf 1, no
//! leaf-count limit, and a weighted impurity-decrease floor.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Rng};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestHyperparams {
    pub max_depth: usize,
    pub max_features: usize,
    pub n_estimators: usize,
    pub min_impurity_decrease: f64,
    pub seed: u64,
    /// Fit each tree on a bootstrap resample. Disable only for exact-fit checks.
    #[serde(default = "default_true")]
    pub bootstrap: bool,
}

fn default_true() -> bool {
    true
}

impl ForestHyperparams {
    pub fn regression() -> Self {
        ForestHyperparams {
            max_depth: 20,
            max_features: 18,
            n_estimators: 400,
            min_impurity_decrease: 0.000186,
            seed: 0,
            bootstrap: true,
        }
    }

    pub fn classification_joint() -> Self {
        ForestHyperparams {
            max_depth: 8,
            max_features: 3,
            n_estimators: 400,
            min_impurity_decrease: 0.000285,
            seed: 0,
            bootstrap: true,
        }
    }

    pub fn classification_independent() -> Self {
        ForestHyperparams {
            max_depth: 7,
            max_features: 4,
            n_estimators: 200,
            min_impurity_decrease: 0.000529,
            seed: 0,
            bootstrap: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.max_features == 0 || self.n_estimators == 0 {
            return Err(Error::invalid("forest hyperparameters must be positive"));
        }
        if !(self.min_impurity_decrease >= 0.0 && self.min_impurity_decrease.is_finite()) {
            return Err(Error::invalid("min_impurity_decrease must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Task {
    Regression,
    Classification { n_classes: usize },
}

/// Tree node stored as `[feature, threshold, left, right, value]`.
/// Leaves have `feature = -1` and carry the prediction in `value`
/// (mean target, or class index for classification).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node(pub i64, pub f64, pub u32, pub u32, pub f64);

impl Node {
    fn leaf(value: f64) -> Self {
        Node(-1, 0.0, 0, 0, value)
    }

    pub fn is_leaf(&self) -> bool {
        self.0 < 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return n.4;
            }
            i = if x[n.0 as usize] <= n.1 { n.2 } else { n.3 } as usize;
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + go(t, n.2 as usize).max(go(t, n.3 as usize))
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub schema_version: u32,
    pub task: Task,
    pub hyperparams: ForestHyperparams,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    pub importances: Vec<f64>,
    /// Layout version of the feature vectors the forest was trained on, if any.
    #[serde(default)]
    pub feature_layout_version: Option<u32>,
}

impl Forest {
    pub fn fit(x: &[Vec<f64>], y: &[f64], hp: &ForestHyperparams) -> Result<Forest> {
        check_y(y)?;
        fit_impl(x, Target::Regression(y), hp)
    }

    pub fn fit_classifier(x: &[Vec<f64>], labels: &[usize], n_classes: usize, hp: &ForestHyperparams) -> Result<Forest> {
        if labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::invalid("class label out of range"));
        }
        fit_impl(x, Target::Classification(labels, n_classes.max(1)), hp)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::WidthMismatch { expected: self.n_features, got: x.len() });
        }
        Ok(self.predict_unchecked(x))
    }

    /// Prediction without the width check; `x` must have `n_features` entries.
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match self.task {
            Task::Regression => self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64,
            Task::Classification { n_classes } => {
                let mut votes = vec![0usize; n_classes];
                for t in &self.trees {
                    votes[t.predict(x) as usize] += 1;
                }
                argmax_first(&votes) as f64
            }
        }
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(self.predict(x)? as usize)
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn feature_importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Forest> {
        let f: Forest = crate::io::read_json(path)?;
        if f.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::invalid(format!("unsupported model schema {}", f.schema_version)));
        }
        Ok(f)
    }
}

fn argmax_first(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in v.iter().enumerate() {
        if c > v[best] {
            best = i;
        }
    }
    best
}

fn check_y(y: &[f64]) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite regression target"));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Target<'a> {
    Regression(&'a [f64]),
    Classification(&'a [usize], usize),
}

impl Target<'_> {
    fn len(&self) -> usize {
        match self {
            Target::Regression(y) => y.len(),
            Target::Classification(l, _) => l.len(),
        }
    }

    /// Width of a sufficient-statistics record.
    fn stride(&self) -> usize {
        match self {
            Target::Regression(_) => 3,
            Target::Classification(_, k) => k + 1,
        }
    }

    #[inline]
    fn add(&self, acc: &mut [f64], i: usize, w: f64) {
        match self {
            Target::Regression(y) => {
                acc[0] += w;
                acc[1] += w * y[i];
                acc[2] += w * y[i] * y[i];
            }
            Target::Classification(l, _) => {
                acc[0] += w;
                acc[1 + l[i]] += w;
            }
        }
    }

    fn impurity(&self, acc: &[f64]) -> f64 {
        let w = acc[0];
        if w <= 0.0 {
            return 0.0;
        }
        match self {
            Target::Regression(_) => {
                let m = acc[1] / w;
                (acc[2] / w - m * m).max(0.0)
            }
            Target::Classification(..) => 1.0 - acc[1..].iter().map(|c| (c / w) * (c / w)).sum::<f64>(),
        }
    }

    /// Quantity whose sum over children is maximized by the best split.
    #[inline]
    fn proxy(&self, acc: &[f64]) -> f64 {
        let w = acc[0];
        match self {
            Target::Regression(_) => acc[1] * acc[1] / w,
            Target::Classification(..) => acc[1..].iter().map(|c| c * c).sum::<f64>() / w,
        }
    }

    fn value(&self, acc: &[f64]) -> f64 {
        match self {
            Target::Regression(_) => acc[1] / acc[0],
            Target::Classification(..) => {
                let mut best = 1;
                for k in 2..acc.len() {
                    if acc[k] > acc[best] {
                        best = k;
                    }
                }
                (best - 1) as f64
            }
        }
    }
}

/// Column-major view of the training matrix with per-feature value ranks.
struct Columns {
    ranks: Vec<Vec<u32>>,
    uniques: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
}

impl Columns {
    fn new(x: &[Vec<f64>], width: usize) -> Columns {
        let mut ranks = Vec::with_capacity(width);
        let mut uniques = Vec::with_capacity(width);
        let mut raw = Vec::with_capacity(width);
        for f in 0..width {
            let col: Vec<f64> = x.iter().map(|r| r[f]).collect();
            let mut u = col.clone();
            u.sort_by(f64::total_cmp);
            u.dedup();
            let r = col
                .iter()
                .map(|v| u.binary_search_by(|p| p.total_cmp(v)).unwrap_or(0) as u32)
                .collect();
            ranks.push(r);
            uniques.push(u);
            raw.push(col);
        }
        Columns { ranks, uniques, raw }
    }
}

fn fit_impl(x: &[Vec<f64>], target: Target, hp: &ForestHyperparams) -> Result<Forest> {
    hp.validate()?;
    if x.is_empty() || x.len() != target.len() {
        return Err(Error::invalid(format!(
            "forest needs matching non-empty X and y (got {} rows, {} targets)",
            x.len(),
            target.len()
        )));
    }
    let width = x[0].len();
    if width == 0 {
        return Err(Error::invalid("forest needs at least one feature"));
    }
    for r in x {
        if r.len() != width {
            return Err(Error::WidthMismatch { expected: width, got: r.len() });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
    }
    let cols = Columns::new(x, width);
    let max_features = hp.max_features.min(width);
    let fitted: Vec<(Tree, Vec<f64>)> = (0..hp.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(derive_seed(hp.seed, &[t as u64]), &[]);
            let n = x.len();
            let mut weights = vec![0.0f64; n];
            if hp.bootstrap {
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1.0;
                }
            } else {
                weights.fill(1.0);
            }
            let mut b = Builder::new(&cols, target, &weights, hp, max_features, rng);
            let mut samples: Vec<u32> = (0..n as u32).filter(|&i| weights[i as usize] > 0.0).collect();
            b.build(&mut samples, 0);
            (Tree { nodes: b.nodes }, b.importance)
        })
        .collect();

    let mut importances = vec![0.0; width];
    let mut contributing = 0usize;
    let mut trees = Vec::with_capacity(fitted.len());
    for (tree, imp) in fitted {
        let total: f64 = imp.iter().sum();
        if tree.nodes.len() > 1 && total > 0.0 {
            contributing += 1;
            for (acc, v) in importances.iter_mut().zip(&imp) {
                *acc += v / total;
            }
        }
        trees.push(tree);
    }
    if contributing > 0 {
        let total: f64 = importances.iter().sum();
        for v in &mut importances {
            *v /= total;
        }
    }
    let task = match target {
        Target::Regression(_) => Task::Regression,
        Target::Classification(_, k) => Task::Classification { n_classes: k },
    };
    Ok(Forest {
        schema_version: MODEL_SCHEMA_VERSION,
        task,
        hyperparams: hp.clone(),
        n_features: width,
        trees,
        importances,
        feature_layout_version: None,
    })
}

struct Split {
    feature: usize,
    threshold: f64,
    proxy: f64,
}

struct Builder<'a> {
    cols: &'a Columns,
    target: Target<'a>,
    weights: &'a [f64],
    hp: &'a ForestHyperparams,
    max_features: usize,
    rng: Rng,
    total_weight: f64,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    // scratch
    buckets: Vec<f64>,
    order: Vec<(u32, u32)>,
    features: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn new(
        cols: &'a Columns,
        target: Target<'a>,
        weights: &'a [f64],
        hp: &'a ForestHyperparams,
        max_features: usize,
        rng: Rng,
    ) -> Self {
        let width = cols.ranks.len();
        Builder {
            cols,
            target,
            weights,
            hp,
            max_features,
            rng,
            total_weight: weights.iter().sum(),
            nodes: Vec::new(),
            importance: vec![0.0; width],
            buckets: Vec::new(),
            order: Vec::new(),
            features: (0..width).collect(),
        }
    }

    fn stats(&self, samples: &[u32]) -> Vec<f64> {
        let mut acc = vec![0.0; self.target.stride()];
        for &i in samples {
            self.target.add(&mut acc, i as usize, self.weights[i as usize]);
        }
        acc
    }

    fn build(&mut self, samples: &mut [u32], depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let acc = self.stats(samples);
        let impurity = self.target.impurity(&acc);
        self.nodes.push(Node::leaf(self.target.value(&acc)));
        if depth >= self.hp.max_depth || samples.len() < 2 || impurity <= f64::EPSILON {
            return id;
        }
        let Some(split) = self.best_split(samples, &acc) else {
            return id;
        };

        let col = &self.cols.raw[split.feature];
        let mut mid = 0;
        for k in 0..samples.len() {
            if col[samples[k] as usize] <= split.threshold {
                samples.swap(k, mid);
                mid += 1;
            }
        }
        let (left, right) = samples.split_at_mut(mid);
        let la = self.stats(left);
        let ra = self.stats(right);
        let w = acc[0];
        let decrease_abs =
            w * impurity - la[0] * self.target.impurity(&la) - ra[0] * self.target.impurity(&ra);
        let decrease = decrease_abs / self.total_weight;
        if decrease + 1e-12 < self.hp.min_impurity_decrease {
            return id;
        }
        self.importance[split.feature] += decrease_abs.max(0.0);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id as usize] = Node(split.feature as i64, split.threshold, l, r, self.nodes[id as usize].4);
        id
    }

    /// Visits features in random order until `max_features` of them have
    /// admitted at least one split (constant features do not count).
    fn best_split(&mut self, samples: &[u32], total: &[f64]) -> Option<Split> {
        let width = self.features.len();
        let mut best: Option<Split> = None;
        let mut visited = 0;
        for k in 0..width {
            let j = self.rng.random_range(k..width);
            self.features.swap(k, j);
            let f = self.features[k];
            if let Some(s) = self.scan_feature(f, samples, total) {
                visited += 1;
                if best.as_ref().is_none_or(|b| s.proxy > b.proxy) {
                    best = Some(s);
                }
            }
            if visited >= self.max_features {
                break;
            }
        }
        best
    }

    fn scan_feature(&mut self, f: usize, samples: &[u32], total: &[f64]) -> Option<Split> {
        let target = self.target;
        let weights = self.weights;
        let stride = target.stride();
        let ranks = &self.cols.ranks[f];
        let uniq = &self.cols.uniques[f];
        let u = uniq.len();
        if u < 2 {
            return None;
        }
        let n = samples.len();
        let mut left = vec![0.0; stride];
        let mut right = vec![0.0; stride];
        let mut best: Option<(f64, u32, u32)> = None;

        let consider = |left: &[f64], right: &mut [f64], lo: u32, hi: u32, best: &mut Option<(f64, u32, u32)>| {
            for s in 0..stride {
                right[s] = total[s] - left[s];
            }
            if left[0] <= 0.0 || right[0] <= 0.0 {
                return;
            }
            let p = target.proxy(left) + target.proxy(right);
            if best.is_none_or(|(bp, _, _)| p > bp) {
                *best = Some((p, lo, hi));
            }
        };

        let use_buckets = (n as f64) * (n as f64).log2().max(1.0) > u as f64;
        if use_buckets {
            self.buckets.clear();
            self.buckets.resize(u * stride, 0.0);
            let mut present_min = u32::MAX;
            let mut present_max = 0u32;
            for &i in samples {
                let r = ranks[i as usize];
                present_min = present_min.min(r);
                present_max = present_max.max(r);
                let base = r as usize * stride;
                target.add(&mut self.buckets[base..base + stride], i as usize, weights[i as usize]);
            }
            if present_min == present_max {
                return None;
            }
            let mut prev: Option<u32> = None;
            for r in present_min..=present_max {
                let base = r as usize * stride;
                if self.buckets[base] <= 0.0 {
                    continue;
                }
                if let Some(p) = prev {
                    consider(&left, &mut right, p, r, &mut best);
                }
                for s in 0..stride {
                    left[s] += self.buckets[base + s];
                }
                prev = Some(r);
            }
        } else {
            self.order.clear();
            self.order.extend(samples.iter().map(|&i| (ranks[i as usize], i)));
            self.order.sort_unstable();
            if self.order[0].0 == self.order[n - 1].0 {
                return None;
            }
            let order = std::mem::take(&mut self.order);
            for k in 0..n {
                let (r, i) = order[k];
                if k > 0 && order[k - 1].0 != r {
                    consider(&left, &mut right, order[k - 1].0, r, &mut best);
                }
                target.add(&mut left, i as usize, weights[i as usize]);
            }
            self.order = order;
        }

        let (proxy, lo, hi) = best?;
        let (a, b) = (uniq[lo as usize], uniq[hi as usize]);
        let mut threshold = a / 2.0 + b / 2.0;
        if threshold >= b || !threshold.is_finite() {
            threshold = a;
        }
        Some(Split { feature: f, threshold, proxy })
    }
}
