//! Brute-force reference for boosted-tree training. Replays boosting from
//! the model's own trees, and at every node enumerates all
//! (feature, midpoint) candidates over the examples routed there with
//! direct sums, then checks the stored split and leaf weights against it.
//!
//! Nothing here calls into the learner's split search or gradient code.

#![allow(dead_code)]

use lim_core::gbt::{GbtHyperparams, GbtModel, TreeNode, SPLIT_TIE_TOLERANCE};

pub const GAIN_TOLERANCE: f64 = 1e-9;
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Default, Clone, Copy)]
pub struct OracleTally {
    pub splits_checked: usize,
    pub leaves_checked: usize,
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn term(g: f64, h: f64, lambda: f64) -> f64 {
    if h + lambda > 0.0 {
        g * g / (h + lambda)
    } else {
        0.0
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    h_left: f64,
    h_right: f64,
}

fn enumerate(rows: &[Vec<f64>], members: &[usize], g: &[f64], h: &[f64], p: &GbtHyperparams) -> Vec<Candidate> {
    let nf = rows[0].len();
    let mut out = Vec::new();
    for f in 0..nf {
        let mut vals: Vec<f64> = members.iter().map(|&i| rows[i][f]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for &i in members {
                if rows[i][f] < t {
                    gl += g[i];
                    hl += h[i];
                } else {
                    gr += g[i];
                    hr += h[i];
                }
            }
            let gain = 0.5 * (term(gl, hl, p.l2_lambda) + term(gr, hr, p.l2_lambda) - term(gl + gr, hl + hr, p.l2_lambda))
                - p.gamma;
            out.push(Candidate { feature: f, threshold: t, gain, h_left: hl, h_right: hr });
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn check_node(
    tree_nodes: &[TreeNode],
    node: usize,
    depth: usize,
    members: Vec<usize>,
    rows: &[Vec<f64>],
    g: &[f64],
    h: &[f64],
    p: &GbtHyperparams,
    tally: &mut OracleTally,
    ctx: &str,
) -> Result<(), String> {
    let admissible: Vec<Candidate> = if depth < p.max_depth && members.len() > 1 {
        enumerate(rows, &members, g, h, p)
            .into_iter()
            .filter(|c| c.h_left >= p.min_child_weight && c.h_right >= p.min_child_weight)
            .collect()
    } else {
        Vec::new()
    };
    let best = admissible.iter().map(|c| c.gain).fold(f64::NEG_INFINITY, f64::max);

    match tree_nodes[node] {
        TreeNode::Leaf { weight } => {
            if best > GAIN_TOLERANCE {
                return Err(format!("{ctx} node {node}: leaf, but a split with gain {best} exists"));
            }
            let gs: f64 = members.iter().map(|&i| g[i]).sum();
            let hs: f64 = members.iter().map(|&i| h[i]).sum();
            let expected = if hs + p.l2_lambda > 0.0 { -p.learning_rate * gs / (hs + p.l2_lambda) } else { 0.0 };
            if (weight - expected).abs() > WEIGHT_TOLERANCE {
                return Err(format!("{ctx} node {node}: leaf weight {weight}, closed form {expected}"));
            }
            tally.leaves_checked += 1;
            Ok(())
        }
        TreeNode::Split { feature, threshold, left, right } => {
            if depth >= p.max_depth {
                return Err(format!("{ctx} node {node}: split below max depth"));
            }
            let chosen = admissible
                .iter()
                .position(|c| c.feature == feature && c.threshold == threshold)
                .ok_or_else(|| format!("{ctx} node {node}: split ({feature}, {threshold}) is not an admissible midpoint"))?;
            let cg = admissible[chosen].gain;
            if cg <= -GAIN_TOLERANCE || cg < best - GAIN_TOLERANCE {
                return Err(format!("{ctx} node {node}: chosen gain {cg}, best {best}"));
            }
            // Ties resolve to the lowest (feature, threshold): nothing earlier
            // may be tied with the best.
            let tie_floor = best - 0.5 * SPLIT_TIE_TOLERANCE * (1.0 + best.abs());
            // Gains within tolerance of zero carry no usable sign, so any of
            // those splits is acceptable.
            let tied_earlier = admissible[..chosen].iter().find(|c| c.gain >= tie_floor);
            if let Some(c) = tied_earlier.filter(|_| best > GAIN_TOLERANCE) {
                return Err(format!(
                    "{ctx} node {node}: tie-break picked ({feature}, {threshold}) over earlier ({}, {}) with gain {}",
                    c.feature, c.threshold, c.gain
                ));
            }
            tally.splits_checked += 1;
            let (l, r): (Vec<usize>, Vec<usize>) = members.into_iter().partition(|&i| rows[i][feature] < threshold);
            check_node(tree_nodes, left, depth + 1, l, rows, g, h, p, tally, ctx)?;
            check_node(tree_nodes, right, depth + 1, r, rows, g, h, p, tally, ctx)
        }
    }
}

fn route(nodes: &[TreeNode], x: &[f64]) -> f64 {
    let mut i = 0;
    loop {
        match nodes[i] {
            TreeNode::Split { feature, threshold, left, right } => i = if x[feature] < threshold { left } else { right },
            TreeNode::Leaf { weight } => return weight,
        }
    }
}

/// Verifies every node of every tree in `model`, trained on `rows`/`labels`.
pub fn check_model(rows: &[Vec<f64>], labels: &[String], model: &GbtModel) -> Result<OracleTally, String> {
    let mut classes: Vec<&String> = labels.iter().collect();
    classes.sort();
    classes.dedup();
    if classes.iter().map(|s| s.as_str()).ne(model.label_map.iter().map(|s| s.as_str())) {
        return Err("label map differs from sorted distinct labels".into());
    }
    let k = classes.len();
    let y: Vec<usize> = labels.iter().map(|l| classes.iter().position(|c| *c == l).unwrap()).collect();
    let p = &model.hyperparams;
    if model.trees.len() != p.num_rounds * k {
        return Err("tree count".into());
    }
    let n = rows.len();
    let mut scores = vec![vec![model.base_score; k]; n];
    let mut tally = OracleTally::default();
    for round in 0..p.num_rounds {
        let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
        for class in 0..k {
            let g: Vec<f64> = (0..n).map(|i| probs[i][class] - if y[i] == class { 1.0 } else { 0.0 }).collect();
            let h: Vec<f64> = (0..n).map(|i| probs[i][class] * (1.0 - probs[i][class])).collect();
            let tree = &model.trees[round * k + class];
            if tree.round != round || tree.class_index != class {
                return Err(format!("tree order at round {round} class {class}"));
            }
            let ctx = format!("round {round} class {class}");
            check_node(&tree.nodes, 0, 0, (0..n).collect(), rows, &g, &h, p, &mut tally, &ctx)?;
        }
        for class in 0..k {
            let tree = &model.trees[round * k + class];
            for i in 0..n {
                scores[i][class] += route(&tree.nodes, &rows[i]);
            }
        }
    }
    Ok(tally)
}
