//! Sparse categorical decision trees with information-gain splits,
//! classification-time pruning, and confidence-thresholded classification.
//!
//! Trees are built in full; pruning happens when classifying, by halting
//! traversal at the first node whose partition size falls below the
//! pruning level. The stopping node's class statistics then decide the
//! label: a binary tree returns positive iff the proportion of positive
//! instances is at least the confidence threshold. Proportions and
//! thresholds are exact rationals, so threshold comparisons never suffer
//! float fuzz. Pruning level and threshold are set per tree by tenfold
//! cross-validation against the f-measure.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureValue, Instance};
use crate::real::Real;
use crate::rng::Rng;
use crate::schema::LabelPolicy;

pub const POSITIVE: &str = "positive";
pub const NEGATIVE: &str = "negative";
pub const NONE: &str = "none";

pub type Label = String;
pub type ClassCounts = BTreeMap<Label, usize>;
/// Exact class proportion at a node.
pub type Confidence = Ratio<u64>;

#[derive(Debug, Error)]
pub enum Id3Error {
    #[error("entropy of an empty partition is undefined")]
    EmptyPartition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: String,
    pub branches: BTreeMap<FeatureValue, TreeNode>,
    /// Partition of instances lacking the feature (the false branch of a
    /// boolean feature, or an empty categorical slot).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absent: Option<Box<TreeNode>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub counts: ClassCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl TreeNode {
    pub fn leaf(counts: ClassCounts) -> Self {
        TreeNode { counts, split: None }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn count(&self, label: &str) -> usize {
        self.counts.get(label).copied().unwrap_or(0)
    }

    /// Proportion of `label` at this node.
    pub fn proportion(&self, label: &str) -> Confidence {
        let total = self.total();
        if total == 0 {
            Ratio::new(0, 1)
        } else {
            Ratio::new(self.count(label) as u64, total as u64)
        }
    }

    /// Every internal node's counts must equal the element-wise sum over
    /// its branches.
    pub fn counts_conserved(&self) -> bool {
        let Some(split) = &self.split else { return true };
        let mut sum: ClassCounts = BTreeMap::new();
        let children = split
            .branches
            .values()
            .chain(split.absent.as_deref().into_iter());
        for child in children.clone() {
            for (label, n) in &child.counts {
                *sum.entry(label.clone()).or_insert(0) += n;
            }
        }
        let mine: ClassCounts = self
            .counts
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(l, n)| (l.clone(), *n))
            .collect();
        sum == mine && children.clone().all(TreeNode::counts_conserved)
    }
}

/// Shannon entropy in bits over the labels present in `counts`.
pub fn entropy<R: Real>(counts: &ClassCounts) -> Result<R, Id3Error> {
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Id3Error::EmptyPartition);
    }
    Ok(entropy_of(counts, total))
}

fn entropy_of<R: Real>(counts: &ClassCounts, total: usize) -> R {
    let total_r = R::of_usize(total);
    let mut h = R::zero();
    for &n in counts.values() {
        if n > 0 {
            let p = R::of_usize(n) / total_r;
            h = h - p * p.log2();
        }
    }
    h
}

fn count_labels<'a>(instances: impl Iterator<Item = &'a Instance>) -> ClassCounts {
    let mut counts = ClassCounts::new();
    for inst in instances {
        let label = inst.label.as_deref().expect("training instance has a label");
        *counts.entry(label.to_string()).or_insert(0) += 1;
    }
    counts
}

/// Information gain of partitioning `instances` on `feature`; instances
/// lacking the feature fall into the absent partition.
pub fn info_gain<R: Real>(instances: &[&Instance], feature: &str) -> R {
    let base = entropy_of::<R>(&count_labels(instances.iter().copied()), instances.len());
    gain_from_base(instances, feature, base)
}

fn gain_from_base<R: Real>(instances: &[&Instance], feature: &str, base: R) -> R {
    let mut partitions: BTreeMap<Option<&FeatureValue>, ClassCounts> = BTreeMap::new();
    for inst in instances {
        let label = inst.label.as_deref().expect("labeled");
        let counts = partitions.entry(inst.value(feature)).or_default();
        *counts.entry(label.to_string()).or_insert(0) += 1;
    }
    // A feature independent of the labels has exactly zero gain; the
    // integer proportionality test keeps that exact where float entropy
    // arithmetic would wobble by an ulp.
    let parent = count_labels(instances.iter().copied());
    let total = instances.len();
    let independent = partitions.values().all(|counts| {
        let n: usize = counts.values().sum();
        parent
            .iter()
            .all(|(label, &c)| counts.get(label).copied().unwrap_or(0) * total == c * n)
    });
    if independent {
        return R::zero();
    }
    let total_r = R::of_usize(total);
    let mut remainder = R::zero();
    for counts in partitions.values() {
        let n: usize = counts.values().sum();
        remainder = remainder + (R::of_usize(n) / total_r) * entropy_of::<R>(counts, n);
    }
    base - remainder
}

/// Build the full (unpruned) tree. Recursion stops at pure nodes, when no
/// candidate feature remains, or when the best gain is zero. Ties on equal
/// gain resolve to the lexicographically smallest feature name.
pub fn build_tree(instances: &[Instance]) -> TreeNode {
    assert!(!instances.is_empty(), "build_tree requires at least one instance");
    let refs: Vec<&Instance> = instances.iter().collect();
    grow(&refs, &mut Vec::new())
}

fn grow(instances: &[&Instance], used: &mut Vec<String>) -> TreeNode {
    let counts = count_labels(instances.iter().copied());
    if counts.len() <= 1 {
        return TreeNode::leaf(counts);
    }

    // Candidate features: those stored by at least one instance here.
    let mut candidates: BTreeMap<&str, ()> = BTreeMap::new();
    for inst in instances {
        for name in inst.features.keys() {
            candidates.entry(name.as_str()).or_insert(());
        }
    }

    let base = entropy_of::<f64>(&counts, instances.len());
    let mut best: Option<(&str, f64)> = None;
    for name in candidates.keys() {
        if used.iter().any(|u| u == name) {
            continue;
        }
        let gain = gain_from_base(instances, name, base);
        // Strict comparison keeps the lexicographically first maximum.
        if best.map_or(true, |(_, g)| gain > g) {
            best = Some((name, gain));
        }
    }
    let Some((feature, gain)) = best else {
        return TreeNode::leaf(counts);
    };
    if gain <= 0.0 {
        return TreeNode::leaf(counts);
    }

    let feature = feature.to_string();
    let mut by_value: BTreeMap<&FeatureValue, Vec<&Instance>> = BTreeMap::new();
    let mut absent: Vec<&Instance> = Vec::new();
    for inst in instances {
        match inst.value(&feature) {
            Some(v) => by_value.entry(v).or_default().push(inst),
            None => absent.push(inst),
        }
    }

    used.push(feature.clone());
    let branches: BTreeMap<FeatureValue, TreeNode> = by_value
        .into_iter()
        .map(|(v, part)| (v.clone(), grow(&part, used)))
        .collect();
    let absent_node = if absent.is_empty() {
        None
    } else {
        Some(Box::new(grow(&absent, used)))
    };
    used.pop();

    TreeNode {
        counts,
        split: Some(Split {
            feature,
            branches,
            absent: absent_node,
        }),
    }
}

/// Nodes visited when classifying `instance`, root first. Traversal stops
/// at a leaf, at an unseen categorical value, or when the next branch is
/// empty; pruning then truncates this path at classification time.
pub fn classify_path<'a>(root: &'a TreeNode, instance: &Instance) -> Vec<&'a TreeNode> {
    let mut path = vec![root];
    let mut node = root;
    loop {
        let Some(split) = &node.split else { break };
        let next = match instance.value(&split.feature) {
            Some(v) => split.branches.get(v),
            None => split.absent.as_deref(),
        };
        match next {
            Some(child) if child.total() > 0 => {
                path.push(child);
                node = child;
            }
            _ => break,
        }
    }
    path
}

fn stop_node<'a>(path: &[&'a TreeNode], pruning: usize) -> &'a TreeNode {
    for node in path {
        if node.total() < pruning {
            return node;
        }
    }
    path.last().expect("path contains the root")
}

fn decide(node: &TreeNode, policy: &LabelPolicy, threshold: Confidence) -> (Label, Confidence) {
    if node.total() == 0 {
        let default = match policy {
            LabelPolicy::Binary => NEGATIVE,
            LabelPolicy::Multi { default, .. } => default,
        };
        return (default.to_string(), Ratio::new(0, 1));
    }
    match policy {
        LabelPolicy::Binary => {
            let conf = node.proportion(POSITIVE);
            let label = if conf >= threshold { POSITIVE } else { NEGATIVE };
            (label.to_string(), conf)
        }
        LabelPolicy::Multi { default, .. } => {
            let (label, _) = node
                .counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .expect("non-empty counts");
            let conf = node.proportion(label);
            if conf >= threshold {
                (label.clone(), conf)
            } else {
                (default.clone(), conf)
            }
        }
    }
}

/// Classify against an explicit parameter set (used by cross-validation).
pub fn classify_with(
    root: &TreeNode,
    policy: &LabelPolicy,
    pruning: usize,
    threshold: Confidence,
    instance: &Instance,
) -> (Label, Confidence) {
    let path = classify_path(root, instance);
    decide(stop_node(&path, pruning), policy, threshold)
}

/// A full tree plus its tuned classification parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecisionTree<R> {
    pub root: TreeNode,
    pub policy: LabelPolicy,
    pub pruning_level: usize,
    pub threshold: Confidence,
    pub beta: R,
    pub cv_f: Option<R>,
}

impl<R: Real> DecisionTree<R> {
    pub fn classify(&self, instance: &Instance) -> (Label, Confidence) {
        classify_with(&self.root, &self.policy, self.pruning_level, self.threshold, instance)
    }

    /// Number of nodes on the classification path under current pruning.
    pub fn classify_depth(&self, instance: &Instance) -> usize {
        let path = classify_path(&self.root, instance);
        let mut depth = 0;
        for node in &path {
            depth += 1;
            if node.total() < self.pruning_level {
                break;
            }
        }
        depth
    }

    /// Plain-text rendering: one node per line with per-node class counts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        render_node(&mut out, &self.root, &self.policy, 0, None);
        out
    }
}

fn fmt_counts(node: &TreeNode, policy: &LabelPolicy) -> String {
    match policy {
        LabelPolicy::Binary => format!("({}/{})", node.count(POSITIVE), node.count(NEGATIVE)),
        LabelPolicy::Multi { .. } => {
            let parts: Vec<String> = node
                .counts
                .iter()
                .filter(|(_, n)| **n > 0)
                .map(|(l, n)| format!("{l}:{n}"))
                .collect();
            format!("({})", parts.join(" "))
        }
    }
}

fn render_node(
    out: &mut String,
    node: &TreeNode,
    policy: &LabelPolicy,
    depth: usize,
    edge: Option<String>,
) {
    let indent = "  ".repeat(depth);
    match edge {
        None => {
            let _ = writeln!(out, "{indent}{}", fmt_counts(node, policy));
        }
        Some(e) => {
            let _ = writeln!(out, "{indent}{e} {}", fmt_counts(node, policy));
        }
    }
    if let Some(split) = &node.split {
        for (value, child) in &split.branches {
            let e = format!("{} = {value}", split.feature);
            render_node(out, child, policy, depth + 1, Some(e));
        }
        if let Some(child) = &split.absent {
            let e = format!("{} absent", split.feature);
            render_node(out, child, policy, depth + 1, Some(e));
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics and tuning
// ---------------------------------------------------------------------------

/// Recall/precision/f triple. Values are on whatever scale the caller
/// uses (fractions or percentages); the f-measure is scale-invariant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics<R> {
    pub recall: R,
    pub precision: R,
    pub f: R,
}

impl<R: Real> Metrics<R> {
    pub fn new(precision: R, recall: R, beta: R) -> Self {
        Metrics {
            recall,
            precision,
            f: f_measure(precision, recall, beta),
        }
    }
}

/// f = (β² + 1)·P·R / (β²·P + R); zero when P + R = 0.
pub fn f_measure<R: Real>(precision: R, recall: R, beta: R) -> R {
    let denom = beta * beta * precision + recall;
    if denom <= R::zero() {
        return R::zero();
    }
    (beta * beta + R::one()) * precision * recall / denom
}

/// Grid searched by cross-validation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Grid {
    pub pruning: Vec<usize>,
    pub thresholds: Vec<Confidence>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            pruning: vec![0, 2, 5, 10, 25, 50, 100],
            thresholds: (1..=19).map(|k| Ratio::new(k, 20)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tuned<R> {
    pub pruning: usize,
    pub threshold: Confidence,
    pub cv_f: R,
}

/// Pick (pruning level, confidence threshold) by k-fold cross-validation:
/// each fold is scored on a tree built from the remaining folds, recall and
/// precision are averaged over folds, and the grid point maximizing f(β)
/// wins. Ties prefer the higher threshold, then the smaller pruning level.
///
/// Fewer instances than folds degrades to leave-one-out; fewer than two
/// instances returns cautious defaults.
pub fn tune<R: Real>(
    instances: &[Instance],
    policy: &LabelPolicy,
    beta: R,
    grid: &Grid,
    folds: usize,
    rng: &mut Rng,
) -> Tuned<R> {
    let max_threshold = grid
        .thresholds
        .iter()
        .copied()
        .max()
        .unwrap_or_else(|| Ratio::new(1, 1));
    if instances.len() < 2 || grid.pruning.is_empty() || grid.thresholds.is_empty() {
        return Tuned {
            pruning: 0,
            threshold: max_threshold,
            cv_f: R::zero(),
        };
    }

    let n = instances.len();
    let folds = folds.max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);

    let default_label = match policy {
        LabelPolicy::Binary => NEGATIVE.to_string(),
        LabelPolicy::Multi { default, .. } => default.clone(),
    };

    // tallies[pi][ti] = (tp, fp, fn) summed per fold, then folded into means.
    let np = grid.pruning.len();
    let nt = grid.thresholds.len();
    let mut sum_p = vec![R::zero(); np * nt];
    let mut sum_r = vec![R::zero(); np * nt];

    for fold in 0..folds {
        let train: Vec<Instance> = order
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % folds != fold)
            .map(|(_, &i)| instances[i].clone())
            .collect();
        let test: Vec<&Instance> = order
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % folds == fold)
            .map(|(_, &i)| &instances[i])
            .collect();
        if train.is_empty() || test.is_empty() {
            continue;
        }
        let root = build_tree(&train);

        let mut tally = vec![(0usize, 0usize, 0usize); np * nt];
        for inst in &test {
            let truth = inst.label.as_deref().expect("labeled");
            let path = classify_path(&root, inst);
            for (pi, &p) in grid.pruning.iter().enumerate() {
                let node = stop_node(&path, p);
                for (ti, &t) in grid.thresholds.iter().enumerate() {
                    let (pred, _) = decide(node, policy, t);
                    let cell = &mut tally[pi * nt + ti];
                    if pred != default_label && pred == truth {
                        cell.0 += 1;
                    }
                    if pred != default_label && pred != truth {
                        cell.1 += 1;
                    }
                    if truth != default_label && pred != truth {
                        cell.2 += 1;
                    }
                }
            }
        }
        for (cell, (tp, fp, fnn)) in tally.iter().enumerate() {
            let p = if tp + fp > 0 { R::frac(*tp, tp + fp) } else { R::zero() };
            let r = if tp + fnn > 0 { R::frac(*tp, tp + fnn) } else { R::zero() };
            sum_p[cell] = sum_p[cell] + p;
            sum_r[cell] = sum_r[cell] + r;
        }
    }

    let folds_r = R::of_usize(folds);
    let mut best: Option<(R, Confidence, usize)> = None;
    for (pi, &p) in grid.pruning.iter().enumerate() {
        for (ti, &t) in grid.thresholds.iter().enumerate() {
            let cell = pi * nt + ti;
            let f = f_measure(sum_p[cell] / folds_r, sum_r[cell] / folds_r, beta);
            let better = match &best {
                None => true,
                Some((bf, bt, bp)) => {
                    f > *bf || (f == *bf && (t > *bt || (t == *bt && p < *bp)))
                }
            };
            if better {
                best = Some((f, t, p));
            }
        }
    }
    let (cv_f, threshold, pruning) = best.expect("non-empty grid");
    Tuned { pruning, threshold, cv_f }
}
