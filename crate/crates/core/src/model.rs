//! Gradient-boosted regression trees for binary log loss.
//!
//! Each round fits one tree to the Newton step of the log loss: per-row
//! gradient `p - y` and hessian `p (1 - p)`, greedy exact splits maximizing
//! the second-order gain, leaf values `-G / (H + lambda)`. Trees grow
//! leaf-wise (best leaf first) up to `max_leaves`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, N_FEATURES};

/// L2 regularization on leaf values.
pub const LAMBDA: f64 = 1.0;
/// Raw scores are clamped to this magnitude before the sigmoid.
pub const RAW_CLAMP: f64 = 30.0;
/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-12;

const FORMAT_HEADER: &str = "itm-gbdt v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("labels and probabilities differ in length ({labels} vs {probs})")]
    LengthMismatch { labels: usize, probs: usize },
    #[error("training data needs at least two rows and both classes")]
    DegenerateData,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("model file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[inline]
pub fn sigmoid(raw: f64) -> f64 {
    let r = raw.clamp(-RAW_CLAMP, RAW_CLAMP);
    1.0 / (1.0 + (-r).exp())
}

#[inline]
fn sample_loss(y: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Log loss of one example as a function of its raw score.
pub fn raw_loss(y: f64, raw: f64) -> f64 {
    sample_loss(y, sigmoid(raw))
}

/// First and second derivative of [`raw_loss`] with respect to the raw score.
#[inline]
pub fn gradient_hessian(y: f64, raw: f64) -> (f64, f64) {
    let p = sigmoid(raw);
    (p - y, p * (1.0 - p))
}

/// Mean binary log loss.
pub fn logloss(labels: &[f64], probs: &[f64]) -> Result<f64, ModelError> {
    if labels.len() != probs.len() {
        return Err(ModelError::LengthMismatch {
            labels: labels.len(),
            probs: probs.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels.iter().zip(probs).map(|(&y, &p)| sample_loss(y, p)).sum();
    Ok(total / labels.len() as f64)
}

/// One labelled example. `group` is the shipment the row was derived from,
/// `truck_id` the candidate it describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub features: FeatureVector,
    pub label: u8,
    pub group: String,
    pub truck_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    /// Fraction of rows sampled per round; 1.0 uses every row.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            learning_rate: 0.1,
            max_leaves: 31,
            min_samples_leaf: 20,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig("learning_rate must be positive"));
        }
        if self.max_leaves < 2 {
            return Err(ModelError::InvalidConfig("max_leaves must be at least 2"));
        }
        if self.min_samples_leaf == 0 {
            return Err(ModelError::InvalidConfig("min_samples_leaf must be positive"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(ModelError::InvalidConfig("subsample must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A regression tree stored as a preorder node list rooted at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn new(nodes: Vec<Node>) -> Result<Self, String> {
        let tree = Tree { nodes };
        tree.validate()?;
        Ok(tree)
    }

    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    fn leaf_index(&self, x: &[f64; N_FEATURES]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Checks the preorder layout: every subtree occupies a contiguous range,
    /// left child immediately follows its parent.
    fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let end = self.check_subtree(0)?;
        if end != self.nodes.len() {
            return Err(format!("{} unreachable node(s)", self.nodes.len() - end));
        }
        Ok(())
    }

    fn check_subtree(&self, i: usize) -> Result<usize, String> {
        match self.nodes.get(i) {
            None => Err(format!("node {i} out of range")),
            Some(Node::Leaf { value }) => {
                if value.is_finite() {
                    Ok(i + 1)
                } else {
                    Err(format!("node {i}: non-finite leaf value"))
                }
            }
            Some(&Node::Split {
                feature,
                threshold,
                left,
                right,
            }) => {
                if feature >= N_FEATURES {
                    return Err(format!("node {i}: feature index {feature} out of range"));
                }
                if !threshold.is_finite() {
                    return Err(format!("node {i}: non-finite threshold"));
                }
                if left != i + 1 {
                    return Err(format!("node {i}: left child must be {}", i + 1));
                }
                let left_end = self.check_subtree(left)?;
                if right != left_end {
                    return Err(format!("node {i}: right child must be {left_end}"));
                }
                self.check_subtree(right)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    trees: Vec<Tree>,
    base_score: f64,
    learning_rate: f64,
    max_leaves: usize,
}

impl BoostedModel {
    pub fn new(trees: Vec<Tree>, base_score: f64, learning_rate: f64, max_leaves: usize) -> Self {
        Self {
            trees,
            base_score,
            learning_rate,
            max_leaves,
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn max_leaves(&self) -> usize {
        self.max_leaves
    }

    pub fn push_tree(&mut self, tree: Tree) {
        self.trees.push(tree);
    }

    pub fn predict_raw(&self, x: &[f64; N_FEATURES]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_score + self.learning_rate * sum
    }

    pub fn predict_array(&self, x: &[f64; N_FEATURES]) -> f64 {
        sigmoid(self.predict_raw(x))
    }

    /// Match probability of a feature vector.
    pub fn predict(&self, features: &FeatureVector) -> f64 {
        self.predict_array(&features.to_array())
    }

    // -----------------------------------------------------------------------
    // Persistence
    // -----------------------------------------------------------------------

    pub fn to_text(&self) -> String {
        // `{:?}` prints the shortest representation that parses back to the same f64.
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "n_trees {}", self.trees.len());
        let _ = writeln!(out, "learning_rate {:?}", self.learning_rate);
        let _ = writeln!(out, "base_score {:?}", self.base_score);
        let _ = writeln!(out, "max_leaves {}", self.max_leaves);
        for (i, tree) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree {i} nodes {}", tree.nodes.len());
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        let _ = writeln!(out, "split {feature} {threshold:?} {left} {right}");
                    }
                    Node::Leaf { value } => {
                        let _ = writeln!(out, "leaf {value:?}");
                    }
                }
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| ModelError::Format {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };
        let err = |line: usize, msg: String| ModelError::Format { line, msg };

        let (ln, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(err(ln, format!("unsupported header `{header}`")));
        }
        fn field<T: std::str::FromStr>(entry: (usize, &str), key: &str) -> Result<T, ModelError> {
            let (ln, line) = entry;
            line.strip_prefix(key)
                .and_then(|v| v.strip_prefix(' '))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ModelError::Format {
                    line: ln,
                    msg: format!("expected `{key} <value>`"),
                })
        }
        let n_trees: usize = field(next("n_trees")?, "n_trees")?;
        let learning_rate: f64 = field(next("learning_rate")?, "learning_rate")?;
        let base_score: f64 = field(next("base_score")?, "base_score")?;
        let max_leaves: usize = field(next("max_leaves")?, "max_leaves")?;
        if !(learning_rate.is_finite() && learning_rate > 0.0) || !base_score.is_finite() {
            return Err(err(3, "non-finite or non-positive header value".into()));
        }

        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let (ln, line) = next("tree header")?;
            let parts: Vec<&str> = line.split(' ').collect();
            let n_nodes: usize = match parts.as_slice() {
                ["tree", idx, "nodes", n] if idx.parse::<usize>().ok() == Some(t) => {
                    n.parse().map_err(|_| err(ln, "bad node count".into()))?
                }
                _ => return Err(err(ln, format!("expected `tree {t} nodes <n>`"))),
            };
            let first_line = ln + 1;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let (ln, line) = next("node")?;
                let parts: Vec<&str> = line.split(' ').collect();
                let node = match parts.as_slice() {
                    ["leaf", v] => Node::Leaf {
                        value: v.parse().map_err(|_| err(ln, "bad leaf value".into()))?,
                    },
                    ["split", f, th, l, r] => Node::Split {
                        feature: f.parse().map_err(|_| err(ln, "bad feature index".into()))?,
                        threshold: th.parse().map_err(|_| err(ln, "bad threshold".into()))?,
                        left: l.parse().map_err(|_| err(ln, "bad left index".into()))?,
                        right: r.parse().map_err(|_| err(ln, "bad right index".into()))?,
                    },
                    _ => return Err(err(ln, format!("malformed node `{line}`"))),
                };
                nodes.push(node);
            }
            trees.push(Tree::new(nodes).map_err(|m| err(first_line, format!("tree {t}: {m}")))?);
        }
        let (ln, line) = next("end")?;
        if line != "end" {
            return Err(err(ln, "expected `end`".into()));
        }
        Ok(BoostedModel::new(trees, base_score, learning_rate, max_leaves))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Per-round training log loss; entry 0 is the base-score-only model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// A leaf under construction with its rows presorted by every feature.
struct GrowingLeaf {
    sorted: [Vec<usize>; N_FEATURES],
    grad: f64,
    hess: f64,
    best: Option<SplitCandidate>,
    arena_id: usize,
}

enum ArenaNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        slot: usize,
    },
}

struct TreeGrower<'a> {
    x: &'a [[f64; N_FEATURES]],
    grad: &'a [f64],
    hess: &'a [f64],
    min_samples_leaf: usize,
}

impl TreeGrower<'_> {
    fn best_split(&self, sorted: &[Vec<usize>; N_FEATURES], g_total: f64, h_total: f64) -> Option<SplitCandidate> {
        let n = sorted[0].len();
        if n < 2 * self.min_samples_leaf {
            return None;
        }
        let parent = g_total * g_total / (h_total + LAMBDA);
        let mut best: Option<SplitCandidate> = None;
        for (feature, order) in sorted.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..n - 1 {
                let i = order[k];
                gl += self.grad[i];
                hl += self.hess[i];
                let left_n = k + 1;
                if left_n < self.min_samples_leaf || n - left_n < self.min_samples_leaf {
                    continue;
                }
                let (v, v_next) = (self.x[i][feature], self.x[order[k + 1]][feature]);
                if v == v_next {
                    continue;
                }
                let (gr, hr) = (g_total - gl, h_total - hl);
                let gain = gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - parent;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
                    let mut threshold = v + (v_next - v) / 2.0;
                    if threshold >= v_next {
                        threshold = v;
                    }
                    best = Some(SplitCandidate {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }

    fn make_leaf(&self, sorted: [Vec<usize>; N_FEATURES], arena_id: usize) -> GrowingLeaf {
        let grad = sorted[0].iter().map(|&i| self.grad[i]).sum::<f64>();
        let hess = sorted[0].iter().map(|&i| self.hess[i]).sum::<f64>();
        let best = self.best_split(&sorted, grad, hess);
        GrowingLeaf {
            sorted,
            grad,
            hess,
            best,
            arena_id,
        }
    }

    /// Grows one tree over `rows`. Returns the tree with raw (unshrunk)
    /// Newton leaf values.
    fn grow(&self, rows: &[usize], max_leaves: usize) -> Tree {
        let sorted: [Vec<usize>; N_FEATURES] = std::array::from_fn(|f| {
            let mut order: Vec<usize> = rows.to_vec();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            order
        });

        let mut arena = vec![ArenaNode::Leaf { slot: 0 }];
        let mut leaves = vec![self.make_leaf(sorted, 0)];
        let mut go_left = vec![false; self.x.len()];

        while leaves.len() < max_leaves {
            let pick = leaves
                .iter()
                .enumerate()
                .filter_map(|(k, l)| l.best.map(|b| (k, b.gain)))
                .fold(None, |acc: Option<(usize, f64)>, (k, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((k, g)),
                });
            let Some((k, _)) = pick else { break };
            let leaf = leaves.swap_remove(k);
            let split = leaf.best.expect("picked leaf has a split");
            for &i in &leaf.sorted[0] {
                go_left[i] = self.x[i][split.feature] <= split.threshold;
            }
            let mut left_sorted: [Vec<usize>; N_FEATURES] = Default::default();
            let mut right_sorted: [Vec<usize>; N_FEATURES] = Default::default();
            for f in 0..N_FEATURES {
                let (l, r): (Vec<usize>, Vec<usize>) = leaf.sorted[f].iter().partition(|&&i| go_left[i]);
                left_sorted[f] = l;
                right_sorted[f] = r;
            }
            let left_id = arena.len();
            let right_id = left_id + 1;
            arena.push(ArenaNode::Leaf { slot: 0 });
            arena.push(ArenaNode::Leaf { slot: 0 });
            arena[leaf.arena_id] = ArenaNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: left_id,
                right: right_id,
            };
            // Keep leaves ordered by creation for deterministic tie-breaking.
            leaves.push(self.make_leaf(left_sorted, left_id));
            leaves.push(self.make_leaf(right_sorted, right_id));
            leaves.sort_by_key(|l| l.arena_id);
        }

        let mut values = Vec::with_capacity(leaves.len());
        for (slot, leaf) in leaves.iter().enumerate() {
            arena[leaf.arena_id] = ArenaNode::Leaf { slot };
            values.push(-leaf.grad / (leaf.hess + LAMBDA));
        }
        let mut nodes = Vec::with_capacity(arena.len());
        emit_preorder(&arena, 0, &values, &mut nodes);
        Tree { nodes }
    }
}

fn emit_preorder(arena: &[ArenaNode], id: usize, values: &[f64], out: &mut Vec<Node>) {
    match arena[id] {
        ArenaNode::Leaf { slot } => out.push(Node::Leaf { value: values[slot] }),
        ArenaNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let me = out.len();
            out.push(Node::Leaf { value: 0.0 });
            emit_preorder(arena, left, values, out);
            let right_pos = out.len();
            emit_preorder(arena, right, values, out);
            out[me] = Node::Split {
                feature,
                threshold,
                left: me + 1,
                right: right_pos,
            };
        }
    }
}

/// Trains a boosted model on `rows`.
pub fn train(rows: &[TrainRow], cfg: &TrainConfig) -> Result<BoostedModel, ModelError> {
    train_with_report(rows, cfg).map(|(m, _)| m)
}

pub fn train_with_report(rows: &[TrainRow], cfg: &TrainConfig) -> Result<(BoostedModel, TrainReport), ModelError> {
    cfg.validate()?;
    let n = rows.len();
    let positives = rows.iter().filter(|r| r.label == 1).count();
    if n < 2 || positives == 0 || positives == n {
        return Err(ModelError::DegenerateData);
    }
    if rows.iter().any(|r| r.label > 1) {
        return Err(ModelError::DegenerateData);
    }
    let x: Vec<[f64; N_FEATURES]> = rows.iter().map(|r| r.features.to_array()).collect();
    let y: Vec<f64> = rows.iter().map(|r| f64::from(r.label)).collect();

    let rate = positives as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let mut model = BoostedModel::new(
        Vec::with_capacity(cfg.n_trees),
        base_score,
        cfg.learning_rate,
        cfg.max_leaves,
    );
    let mut raw = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all_rows: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    report.losses.push(mean_loss(&y, &raw));

    for _ in 0..cfg.n_trees {
        for i in 0..n {
            (grad[i], hess[i]) = gradient_hessian(y[i], raw[i]);
        }
        let sample: Vec<usize> = if cfg.subsample < 1.0 {
            all_rows
                .iter()
                .copied()
                .filter(|_| rng.gen::<f64>() < cfg.subsample)
                .collect()
        } else {
            all_rows.clone()
        };
        if sample.is_empty() {
            continue;
        }
        let grower = TreeGrower {
            x: &x,
            grad: &grad,
            hess: &hess,
            min_samples_leaf: cfg.min_samples_leaf,
        };
        let mut tree = grower.grow(&sample, cfg.max_leaves);
        guard_leaf_values(&mut tree, &x, &y, &raw, cfg.learning_rate);
        for i in 0..n {
            raw[i] += cfg.learning_rate * tree.predict(&x[i]);
        }
        model.push_tree(tree);
        report.losses.push(mean_loss(&y, &raw));
    }
    Ok((model, report))
}

fn mean_loss(y: &[f64], raw: &[f64]) -> f64 {
    y.iter()
        .zip(raw)
        .map(|(&yi, &r)| sample_loss(yi, sigmoid(r)))
        .sum::<f64>()
        / y.len() as f64
}

/// Halves any leaf value whose shrunk step would raise the loss of the rows
/// routed to that leaf. Leaves partition the rows, so total loss cannot rise.
fn guard_leaf_values(tree: &mut Tree, x: &[[f64; N_FEATURES]], y: &[f64], raw: &[f64], lr: f64) {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
    for (i, xi) in x.iter().enumerate() {
        members[tree.leaf_index(xi)].push(i);
    }
    for (id, rows) in members.iter().enumerate() {
        let Node::Leaf { value } = tree.nodes[id] else { continue };
        if rows.is_empty() || value == 0.0 {
            continue;
        }
        let loss_at = |step: f64| -> f64 { rows.iter().map(|&i| sample_loss(y[i], sigmoid(raw[i] + step))).sum() };
        let base = loss_at(0.0);
        let mut v = value;
        let mut accepted = false;
        for _ in 0..40 {
            if loss_at(lr * v) <= base {
                accepted = true;
                break;
            }
            v *= 0.5;
        }
        if !accepted {
            v = 0.0;
        }
        if v != value {
            log::debug!("leaf step shrunk from {value} to {v}");
        }
        tree.nodes[id] = Node::Leaf { value: v };
    }
}
