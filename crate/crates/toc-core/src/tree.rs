//! Shallow CART scaffold: greedy Gini induction on the initial slice, frozen
//! thereafter. Leaves form the concept vocabulary; each leaf renders as a
//! human-readable conjunction of threshold tests in raw feature units.
//!
//! Determinism contract: split search scans features in ascending index order
//! and thresholds in ascending value order, accepting a candidate only when
//! strictly better, so equal-impurity ties resolve to the lowest feature
//! index, then the lowest threshold. Leaf ids are assigned left-to-right.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mat::Mat;
use crate::tabular::Preprocessor;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("cannot fit a tree on empty data")]
    EmptyData,
    #[error("input width {got} does not match tree width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("leaf id {0} out of range")]
    InvalidLeafId(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { leaf_id: usize, counts: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        // the protocol's shallow-scaffold setting
        TreeParams { max_depth: 4, min_leaf: 50, seed: 0 }
    }
}

/// Immutable trained tree. Structure never changes after `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenTree {
    nodes: Vec<Node>,
    root: usize,
    depth: usize,
    n_leaves: usize,
    n_features: usize,
    n_classes: usize,
    params: TreeParams,
    fingerprint: String,
}

struct Builder<'a> {
    x: &'a Mat,
    y: &'a [usize],
    n_classes: usize,
    params: TreeParams,
    nodes: Vec<Node>,
    next_leaf: usize,
    depth_seen: usize,
}

impl<'a> Builder<'a> {
    fn class_counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &r in rows {
            counts[self.y[r]] += 1;
        }
        counts
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.class_counts(&rows);
        let impurity = gini(&counts);
        let can_split = depth < self.params.max_depth
            && rows.len() >= 2 * self.params.min_leaf
            && impurity > 0.0;

        if let Some(split) = can_split.then(|| self.best_split(&rows)).flatten() {
            let (feature, threshold) = split;
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                rows.into_iter().partition(|&r| self.x.get(r, feature) <= threshold);
            let left = self.build(left_rows, depth + 1);
            let right = self.build(right_rows, depth + 1);
            self.nodes.push(Node::Internal { feature, threshold, left, right });
            self.nodes.len() - 1
        } else {
            self.depth_seen = self.depth_seen.max(depth);
            let leaf_id = self.next_leaf;
            self.next_leaf += 1;
            self.nodes.push(Node::Leaf { leaf_id, counts });
            self.nodes.len() - 1
        }
    }

    /// Exhaustive scan over (feature, midpoint-of-consecutive-distinct-values)
    /// candidates minimizing the weighted child Gini; respects `min_leaf` on
    /// both children. Returns `None` when no admissible split improves on the
    /// parent.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len() as f64;
        let parent = gini(&self.class_counts(rows));
        let mut best: Option<(f64, usize, f64)> = None;

        for feature in 0..self.x.cols() {
            let mut ordered: Vec<(f64, usize)> = rows.iter().map(|&r| (self.x.get(r, feature), self.y[r])).collect();
            ordered.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let mut left_counts = vec![0usize; self.n_classes];
            let mut right_counts = self.class_counts(rows);
            let mut n_left = 0usize;

            for i in 0..ordered.len() - 1 {
                let (value, label) = ordered[i];
                left_counts[label] += 1;
                right_counts[label] -= 1;
                n_left += 1;
                let next_value = ordered[i + 1].0;
                if next_value == value {
                    continue;
                }
                let n_right = ordered.len() - n_left;
                if n_left < self.params.min_leaf || n_right < self.params.min_leaf {
                    continue;
                }
                let threshold = value + (next_value - value) / 2.0;
                let weighted = (n_left as f64 * gini(&left_counts) + n_right as f64 * gini(&right_counts)) / n;
                if weighted < parent && best.map_or(true, |(b, _, _)| weighted < b) {
                    best = Some((weighted, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

pub fn gini(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t) * (c as f64 / t)).sum::<f64>()
}

/// Greedy CART fit; `n_classes` may be given explicitly so leaf count vectors
/// line up with the run's class space even when a slice misses a class.
pub fn fit_tree(x: &Mat, y: &[usize], params: TreeParams, n_classes: Option<usize>) -> Result<FrozenTree, TreeError> {
    if x.rows() == 0 || y.is_empty() {
        return Err(TreeError::EmptyData);
    }
    assert_eq!(x.rows(), y.len(), "feature/label row mismatch");
    assert!(params.max_depth >= 1 && params.min_leaf >= 1);
    let n_classes = n_classes.unwrap_or_else(|| y.iter().max().unwrap() + 1);

    let mut builder = Builder {
        x,
        y,
        n_classes,
        params,
        nodes: Vec::new(),
        next_leaf: 0,
        depth_seen: 0,
    };
    let root = builder.build((0..x.rows()).collect(), 0);

    let fingerprint = data_fingerprint(x, y, params);
    Ok(FrozenTree {
        nodes: builder.nodes,
        root,
        depth: builder.depth_seen,
        n_leaves: builder.next_leaf,
        n_features: x.cols(),
        n_classes,
        params,
        fingerprint,
    })
}

fn data_fingerprint(x: &Mat, y: &[usize], params: TreeParams) -> String {
    let mut h = Sha256::new();
    for v in x.data() {
        h.update(v.to_le_bytes());
    }
    for &l in y {
        h.update(l.to_le_bytes());
    }
    h.update(params.max_depth.to_le_bytes());
    h.update(params.min_leaf.to_le_bytes());
    h.update(params.seed.to_le_bytes());
    format!("{:x}", h.finalize())
}

impl FrozenTree {
    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Deterministic descent: left iff `x[feature] <= threshold`.
    pub fn route(&self, x: &[f64]) -> Result<usize, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::WidthMismatch { expected: self.n_features, got: x.len() });
        }
        let mut node = self.root;
        loop {
            match &self.nodes[node] {
                Node::Internal { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { leaf_id, .. } => return Ok(*leaf_id),
            }
        }
    }

    /// Route every row of a matrix.
    pub fn route_batch(&self, x: &Mat) -> Result<Vec<usize>, TreeError> {
        if x.cols() != self.n_features {
            return Err(TreeError::WidthMismatch { expected: self.n_features, got: x.cols() });
        }
        Ok(crate::par::map_indexed(x.rows(), |i| {
            self.route(x.row(i)).expect("width checked")
        }))
    }

    /// Sequential [`FrozenTree::route_batch`], for the benchmark comparison.
    pub fn route_batch_seq(&self, x: &Mat) -> Result<Vec<usize>, TreeError> {
        if x.cols() != self.n_features {
            return Err(TreeError::WidthMismatch { expected: self.n_features, got: x.cols() });
        }
        Ok(crate::par::map_indexed_seq(x.rows(), |i| {
            self.route(x.row(i)).expect("width checked")
        }))
    }

    /// Normalized training class counts of the routed leaf.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, TreeError> {
        let leaf = self.route(x)?;
        Ok(self.leaf_distribution(leaf).expect("routed leaf exists"))
    }

    /// Class-probability rows for a whole matrix.
    pub fn predict_batch(&self, x: &Mat) -> Result<Mat, TreeError> {
        let dists: Vec<Vec<f64>> = self
            .route_batch(x)?
            .into_iter()
            .map(|leaf| self.leaf_distribution(leaf).expect("routed leaf exists"))
            .collect();
        Ok(Mat::from_rows(&dists))
    }

    pub fn leaf_distribution(&self, leaf_id: usize) -> Result<Vec<f64>, TreeError> {
        let counts = self.leaf_counts(leaf_id)?;
        let total: usize = counts.iter().sum();
        Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn leaf_counts(&self, leaf_id: usize) -> Result<&Vec<usize>, TreeError> {
        self.nodes
            .iter()
            .find_map(|n| match n {
                Node::Leaf { leaf_id: id, counts } if *id == leaf_id => Some(counts),
                _ => None,
            })
            .ok_or(TreeError::InvalidLeafId(leaf_id))
    }

    /// Path from root to `leaf_id` as (feature, threshold, goes_left) clauses.
    fn path_to(&self, leaf_id: usize) -> Result<Vec<(usize, f64, bool)>, TreeError> {
        if leaf_id >= self.n_leaves {
            return Err(TreeError::InvalidLeafId(leaf_id));
        }
        let mut path = Vec::new();
        let mut found = false;
        self.walk(self.root, &mut path, leaf_id, &mut found);
        debug_assert!(found);
        Ok(path)
    }

    fn walk(&self, node: usize, path: &mut Vec<(usize, f64, bool)>, target: usize, found: &mut bool) {
        match &self.nodes[node] {
            Node::Leaf { leaf_id, .. } => {
                if *leaf_id == target {
                    *found = true;
                }
            }
            Node::Internal { feature, threshold, left, right } => {
                path.push((*feature, *threshold, true));
                self.walk(*left, path, target, found);
                if *found {
                    return;
                }
                path.pop();
                path.push((*feature, *threshold, false));
                self.walk(*right, path, target, found);
                if !*found {
                    path.pop();
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One clause of a rendered leaf rule, in raw feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleClause {
    pub feature_name: String,
    /// `<=` when true, `>` when false.
    pub is_leq: bool,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleText {
    pub leaf_id: usize,
    pub clauses: Vec<RuleClause>,
    pub rendered: String,
}

/// Render the path rule of `leaf_id`, inverse-transforming thresholds through
/// the preprocessor so they read in raw units.
pub fn path_rule(tree: &FrozenTree, leaf_id: usize, prep: &Preprocessor) -> Result<RuleText, TreeError> {
    let names = prep.encoded_feature_names();
    let path = tree.path_to(leaf_id)?;
    let clauses: Vec<RuleClause> = path
        .into_iter()
        .map(|(feature, threshold, is_leq)| RuleClause {
            feature_name: names.get(feature).cloned().unwrap_or_else(|| format!("x{feature}")),
            is_leq,
            threshold: prep.decode_threshold(feature, threshold),
        })
        .collect();
    let rendered = if clauses.is_empty() {
        "TRUE".to_string()
    } else {
        clauses
            .iter()
            .map(|c| format!("{} {} {}", c.feature_name, if c.is_leq { "\u{2264}" } else { ">" }, fmt_threshold(c.threshold)))
            .collect::<Vec<_>>()
            .join(" AND ")
    };
    Ok(RuleText { leaf_id, clauses, rendered })
}

/// Dump one rendered rule per leaf, in leaf-id order.
pub fn rule_dump(tree: &FrozenTree, prep: &Preprocessor) -> Result<String, TreeError> {
    let mut out = String::new();
    for leaf in 0..tree.n_leaves() {
        let rule = path_rule(tree, leaf, prep)?;
        out.push_str(&format!("leaf {:>3}: {}\n", leaf, rule.rendered));
    }
    Ok(out)
}

/// Up to four decimals, trailing zeros trimmed, always at least one decimal.
fn fmt_threshold(v: f64) -> String {
    let mut s = format!("{v:.4}");
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    s
}
