//! Multiclass gradient-boosted decision trees with second-order (Newton)
//! leaf weights and exact greedy split search.
//!
//! Each boosting round fits one regression tree per class to the softmax
//! gradient `p - y` and hessian `p (1 - p)` of the current scores. A split
//! is scored by
//!
//! ```text
//! gain = 1/2 [ G_L^2/(H_L+λ) + G_R^2/(H_R+λ) - (G_L+G_R)^2/(H_L+H_R+λ) ] - γ
//! ```
//!
//! and leaves store `-η G / (H + λ)`, so the shrinkage is already applied
//! and inference is a plain sum of leaf weights followed by a softmax.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmatrix::LabeledExample;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Candidates whose gain is within this (relative) distance of the best
/// gain at a node are treated as tied; the tie goes to the lowest feature
/// index, then the lowest threshold.
pub const SPLIT_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("need at least 2 distinct labels, found {0}")]
    DegenerateLabels(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("rows have no features")]
    NoFeatures,
    #[error("non-finite value at row {row}, feature {feature}")]
    NonFiniteFeature { row: usize, feature: usize },
    #[error("row {row} has {found} features, expected {expected}")]
    FeatureCountMismatch { row: usize, expected: usize, found: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),
    #[error("invalid model file: {0}")]
    ModelFormat(String),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtHyperparams {
    pub num_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for GbtHyperparams {
    fn default() -> Self {
        GbtHyperparams {
            num_rounds: 100,
            max_depth: 6,
            learning_rate: 0.3,
            l2_lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            seed: 42,
        }
    }
}

impl GbtHyperparams {
    pub fn validate(&self) -> Result<(), GbtError> {
        let bad = |m: &str| Err(GbtError::InvalidHyperparams(m.to_string()));
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be a finite value >= 0");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be a finite value >= 0");
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad("min_child_weight must be a finite value >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    /// `x[feature] < threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { weight: f64 },
}

/// Nodes are stored flat; index 0 is the root and children always have
/// larger indices than their parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub round: usize,
    pub class_index: usize,
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Index of the leaf that `x` lands in.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] < threshold { left } else { right };
                }
                TreeNode::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            TreeNode::Leaf { weight } => weight,
            TreeNode::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub label_map: Vec<String>,
    /// Round-major: tree `r * K + k` is round `r`, class `k`.
    pub trees: Vec<Tree>,
    pub hyperparams: GbtHyperparams,
    pub base_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FitOptions {
    /// Grow the K class trees of a round on separate threads. The model is
    /// identical to the sequential one.
    pub parallel_classes: bool,
}

/// A split decision at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `G^2 / (H + λ)`, or zero when the denominator vanishes.
fn score_term(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

pub fn split_gain(g_left: f64, h_left: f64, g_right: f64, h_right: f64, params: &GbtHyperparams) -> f64 {
    let l = params.l2_lambda;
    0.5 * (score_term(g_left, h_left, l) + score_term(g_right, h_right, l)
        - score_term(g_left + g_right, h_left + h_right, l))
        - params.gamma
}

pub fn leaf_weight(g: f64, h: f64, params: &GbtHyperparams) -> f64 {
    let d = h + params.l2_lambda;
    if d > 0.0 {
        -params.learning_rate * g / d
    } else {
        0.0
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // adjacent floats: fall back to the upper value so `a < t <= b` holds
    if m > a && m <= b {
        m
    } else {
        b
    }
}

/// Scans one feature's rows in ascending value order and pushes every
/// admissible candidate (positive gain, both children heavy enough).
fn scan_feature(
    feature: usize,
    sorted: impl Iterator<Item = (f64, usize)>,
    grad: &[f64],
    hess: &[f64],
    total_g: f64,
    total_h: f64,
    params: &GbtHyperparams,
    out: &mut Vec<SplitCandidate>,
) {
    let mut g_left = 0.0;
    let mut h_left = 0.0;
    let mut prev: Option<f64> = None;
    for (value, row) in sorted {
        if let Some(p) = prev {
            if value > p {
                let g_right = total_g - g_left;
                let h_right = total_h - h_left;
                if h_left >= params.min_child_weight && h_right >= params.min_child_weight {
                    let gain = split_gain(g_left, h_left, g_right, h_right, params);
                    if gain > 0.0 {
                        out.push(SplitCandidate { feature, threshold: midpoint(p, value), gain });
                    }
                }
            }
        }
        g_left += grad[row];
        h_left += hess[row];
        prev = Some(value);
    }
}

/// Candidates arrive ordered by (feature, threshold); the first one within
/// tolerance of the maximum wins.
fn pick_best(candidates: &[SplitCandidate]) -> Option<SplitCandidate> {
    let max = candidates.iter().map(|c| c.gain).fold(f64::NEG_INFINITY, f64::max);
    let floor = max - SPLIT_TIE_TOLERANCE * (1.0 + max.abs());
    candidates.iter().find(|c| c.gain >= floor).copied()
}

/// Exact greedy split search over node-local data. `columns[f][i]` is the
/// value of feature `f` for the node's `i`-th example. Every midpoint
/// between distinct consecutive values of every feature is considered.
pub fn find_best_split(
    columns: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    params: &GbtHyperparams,
) -> Option<SplitCandidate> {
    let total_g: f64 = grad.iter().sum();
    let total_h: f64 = hess.iter().sum();
    let mut candidates = Vec::new();
    for (f, col) in columns.iter().enumerate() {
        let mut order: Vec<usize> = (0..col.len()).collect();
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        scan_feature(f, order.iter().map(|&i| (col[i], i)), grad, hess, total_g, total_h, params, &mut candidates);
    }
    pick_best(&candidates)
}

struct TrainMatrix<'a> {
    rows: Vec<&'a [f64]>,
    num_features: usize,
    /// Row indices sorted by each feature's value.
    presorted: Vec<Vec<u32>>,
}

impl<'a> TrainMatrix<'a> {
    fn value(&self, row: u32, feature: usize) -> f64 {
        self.rows[row as usize][feature]
    }
}

struct TreeBuilder<'m, 'a> {
    data: &'m TrainMatrix<'a>,
    grad: &'m [f64],
    hess: &'m [f64],
    params: &'m GbtHyperparams,
    nodes: Vec<TreeNode>,
    /// Leaf weight each training row ends up in.
    row_weight: Vec<f64>,
    go_left: Vec<bool>,
    candidates: Vec<SplitCandidate>,
}

impl<'m, 'a> TreeBuilder<'m, 'a> {
    fn grow(&mut self, node_rows: Vec<Vec<u32>>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { weight: 0.0 });

        let (mut g, mut h) = (0.0, 0.0);
        for &r in &node_rows[0] {
            g += self.grad[r as usize];
            h += self.hess[r as usize];
        }

        let split = if depth < self.params.max_depth && node_rows[0].len() > 1 {
            self.candidates.clear();
            for (f, rows) in node_rows.iter().enumerate() {
                let data = self.data;
                scan_feature(
                    f,
                    rows.iter().map(|&r| (data.value(r, f), r as usize)),
                    self.grad,
                    self.hess,
                    g,
                    h,
                    self.params,
                    &mut self.candidates,
                );
            }
            pick_best(&self.candidates)
        } else {
            None
        };

        let Some(split) = split else {
            let weight = leaf_weight(g, h, self.params);
            for &r in &node_rows[0] {
                self.row_weight[r as usize] = weight;
            }
            self.nodes[id] = TreeNode::Leaf { weight };
            return id;
        };

        for &r in &node_rows[0] {
            self.go_left[r as usize] = self.data.value(r, split.feature) < split.threshold;
        }
        let mut left_rows = Vec::with_capacity(node_rows.len());
        let mut right_rows = Vec::with_capacity(node_rows.len());
        for rows in node_rows {
            let (l, r): (Vec<u32>, Vec<u32>) = rows.into_iter().partition(|&r| self.go_left[r as usize]);
            left_rows.push(l);
            right_rows.push(r);
        }
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = TreeNode::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

fn grow_tree(
    data: &TrainMatrix<'_>,
    grad: &[f64],
    hess: &[f64],
    params: &GbtHyperparams,
    round: usize,
    class_index: usize,
) -> (Tree, Vec<f64>) {
    let n = data.rows.len();
    let mut b = TreeBuilder {
        data,
        grad,
        hess,
        params,
        nodes: Vec::new(),
        row_weight: vec![0.0; n],
        go_left: vec![false; n],
        candidates: Vec::new(),
    };
    b.grow(data.presorted.clone(), 0);
    (Tree { round, class_index, nodes: b.nodes }, b.row_weight)
}

pub fn fit(examples: &[LabeledExample], params: &GbtHyperparams) -> Result<GbtModel, GbtError> {
    fit_with_options(examples, params, FitOptions::default())
}

pub fn fit_with_options(
    examples: &[LabeledExample],
    params: &GbtHyperparams,
    options: FitOptions,
) -> Result<GbtModel, GbtError> {
    let rows: Vec<&[f64]> = examples.iter().map(|e| &e.features[..]).collect();
    let labels: Vec<&str> = examples.iter().map(|e| e.label.as_str()).collect();
    fit_rows(&rows, &labels, params, options)
}

/// Trains on rows of any (uniform) width. The label map is the sorted set
/// of distinct labels.
pub fn fit_rows<R: AsRef<[f64]>, L: AsRef<str>>(
    rows: &[R],
    labels: &[L],
    params: &GbtHyperparams,
    options: FitOptions,
) -> Result<GbtModel, GbtError> {
    params.validate()?;
    if rows.is_empty() {
        return Err(GbtError::EmptyDataset);
    }
    assert_eq!(rows.len(), labels.len(), "one label per row");
    let num_features = rows[0].as_ref().len();
    if num_features == 0 {
        return Err(GbtError::NoFeatures);
    }
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != num_features {
            return Err(GbtError::FeatureCountMismatch { row: i, expected: num_features, found: r.len() });
        }
        if let Some(f) = r.iter().position(|v| !v.is_finite()) {
            return Err(GbtError::NonFiniteFeature { row: i, feature: f });
        }
    }
    let label_map: Vec<String> =
        labels.iter().map(|l| l.as_ref()).collect::<BTreeSet<_>>().into_iter().map(str::to_string).collect();
    if label_map.len() < 2 {
        return Err(GbtError::DegenerateLabels(label_map.len()));
    }
    let k = label_map.len();
    let targets: Vec<usize> =
        labels.iter().map(|l| label_map.binary_search_by(|m| m.as_str().cmp(l.as_ref())).expect("in map")).collect();

    let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_ref()).collect();
    let n = row_refs.len();
    let presorted = (0..num_features)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| row_refs[a as usize][f].total_cmp(&row_refs[b as usize][f]));
            idx
        })
        .collect();
    let data = TrainMatrix { rows: row_refs, num_features, presorted };
    debug_assert_eq!(data.presorted.len(), data.num_features);

    let base_score = 0.0;
    let mut scores = vec![base_score; n * k];
    let mut probs = vec![0.0; n * k];
    let mut trees = Vec::with_capacity(params.num_rounds * k);

    for round in 0..params.num_rounds {
        for i in 0..n {
            softmax_into(&scores[i * k..(i + 1) * k], &mut probs[i * k..(i + 1) * k]);
        }
        let gradients = |class: usize| -> (Vec<f64>, Vec<f64>) {
            (0..n)
                .map(|i| {
                    let p = probs[i * k + class];
                    let y = if targets[i] == class { 1.0 } else { 0.0 };
                    (p - y, p * (1.0 - p))
                })
                .unzip()
        };
        let grow = |class: usize| {
            let (g, h) = gradients(class);
            grow_tree(&data, &g, &h, params, round, class)
        };
        let round_trees: Vec<(Tree, Vec<f64>)> = if options.parallel_classes {
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..k).map(|c| s.spawn(move || grow(c))).collect();
                handles.into_iter().map(|h| h.join().expect("tree worker panicked")).collect()
            })
        } else {
            (0..k).map(grow).collect()
        };
        for (class, (tree, row_weight)) in round_trees.into_iter().enumerate() {
            for (i, w) in row_weight.into_iter().enumerate() {
                scores[i * k + class] += w;
            }
            trees.push(tree);
        }
    }

    Ok(GbtModel { label_map, trees, hyperparams: *params, base_score })
}

impl GbtModel {
    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn num_rounds(&self) -> usize {
        self.trees.len() / self.num_classes()
    }

    pub fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut scores = vec![self.base_score; self.num_classes()];
        self.accumulate(x, &mut scores);
        scores
    }

    fn accumulate(&self, x: &[f64], scores: &mut [f64]) {
        for t in &self.trees {
            scores[t.class_index] += t.predict(x);
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.raw_scores(x))
    }

    /// Index of the most probable class; ties go to the lowest index.
    pub fn predict_index(&self, x: &[f64]) -> usize {
        argmax(&self.raw_scores(x))
    }

    pub fn predict(&self, x: &[f64]) -> &str {
        &self.label_map[self.predict_index(x)]
    }

    /// Batched class-index prediction reusing one score buffer.
    pub fn predict_batch<R: AsRef<[f64]>>(&self, rows: &[R]) -> Vec<usize> {
        let mut scores = vec![0.0; self.num_classes()];
        rows.iter()
            .map(|x| {
                scores.fill(self.base_score);
                self.accumulate(x.as_ref(), &mut scores);
                argmax(&scores)
            })
            .collect()
    }

    /// The same model cut back to its first `rounds` boosting rounds.
    pub fn truncated(&self, rounds: usize) -> GbtModel {
        let keep = rounds.min(self.num_rounds()) * self.num_classes();
        GbtModel {
            label_map: self.label_map.clone(),
            trees: self.trees[..keep].to_vec(),
            hyperparams: GbtHyperparams { num_rounds: keep / self.num_classes(), ..self.hyperparams },
            base_score: self.base_score,
        }
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.label_map.iter().position(|l| l == label)
    }

    pub fn to_json(&self) -> Result<String, GbtError> {
        let doc = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            label_map: self.label_map.clone(),
            hyperparams: self.hyperparams,
            base_score: self.base_score,
            trees: self
                .trees
                .iter()
                .map(|t| TreeRecord {
                    round: t.round,
                    class_index: t.class_index,
                    nodes: t
                        .nodes
                        .iter()
                        .enumerate()
                        .map(|(id, n)| match *n {
                            TreeNode::Split { feature, threshold, left, right } => NodeRecord {
                                id,
                                feature: Some(feature),
                                threshold: Some(threshold),
                                left: Some(left),
                                right: Some(right),
                                weight: None,
                            },
                            TreeNode::Leaf { weight } => NodeRecord {
                                id,
                                feature: None,
                                threshold: None,
                                left: None,
                                right: None,
                                weight: Some(weight),
                            },
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<GbtModel, GbtError> {
        let doc: ModelFile = serde_json::from_str(text)?;
        doc.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GbtError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GbtModel, GbtError> {
        GbtModel::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// On-disk layout. f64 values go through serde_json's shortest round-trip
// formatting, and parsing uses the exact (float_roundtrip) path, so a reload
// reproduces every bit.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    label_map: Vec<String>,
    hyperparams: GbtHyperparams,
    base_score: f64,
    trees: Vec<TreeRecord>,
}

#[derive(Serialize, Deserialize)]
struct TreeRecord {
    round: usize,
    class_index: usize,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
}

impl ModelFile {
    fn into_model(self) -> Result<GbtModel, GbtError> {
        let bad = |m: String| Err(GbtError::ModelFormat(m));
        if self.format_version != MODEL_FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        let k = self.label_map.len();
        if k < 2 {
            return bad(format!("label_map has {k} classes, need at least 2"));
        }
        if self.label_map.iter().collect::<BTreeSet<_>>().len() != k {
            return bad("label_map has duplicates".into());
        }
        if self.trees.len() != self.hyperparams.num_rounds * k {
            return bad(format!(
                "{} trees for {} rounds x {} classes",
                self.trees.len(),
                self.hyperparams.num_rounds,
                k
            ));
        }
        let mut trees = Vec::with_capacity(self.trees.len());
        for (t_idx, t) in self.trees.into_iter().enumerate() {
            if t.round != t_idx / k || t.class_index != t_idx % k {
                return bad(format!("tree {t_idx} is out of round-major order"));
            }
            if t.nodes.is_empty() {
                return bad(format!("tree {t_idx} has no nodes"));
            }
            let count = t.nodes.len();
            let mut nodes = Vec::with_capacity(count);
            for (i, n) in t.nodes.into_iter().enumerate() {
                if n.id != i {
                    return bad(format!("tree {t_idx}: node id {} at position {i}", n.id));
                }
                let node = match (n.feature, n.threshold, n.left, n.right, n.weight) {
                    (Some(feature), Some(threshold), Some(left), Some(right), None) => {
                        if left <= i || right <= i || left >= count || right >= count || !threshold.is_finite() {
                            return bad(format!("tree {t_idx}: node {i} has invalid children or threshold"));
                        }
                        TreeNode::Split { feature, threshold, left, right }
                    }
                    (None, None, None, None, Some(weight)) if weight.is_finite() => TreeNode::Leaf { weight },
                    _ => return bad(format!("tree {t_idx}: node {i} is neither a split nor a leaf")),
                };
                nodes.push(node);
            }
            trees.push(Tree { round: t.round, class_index: t.class_index, nodes });
        }
        Ok(GbtModel { label_map: self.label_map, trees, hyperparams: self.hyperparams, base_score: self.base_score })
    }
}
