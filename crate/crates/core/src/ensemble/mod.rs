//! Tree ensembles: bagged CART training with OOB bookkeeping, and the reference
//! traversal every CAM layout is checked against.

mod dataset;
mod train;

pub use dataset::Dataset;
pub use train::{train_forest, TrainParams};

use crate::error::{Error, Result};
use crate::pathspace::Condition;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeafValue {
    Class(usize),
    Value(f64),
}

/// Training-time annotation recorded on every node of a bagging-trained tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeStats {
    pub majority_class: usize,
    /// Weighted share of `majority_class` among the in-bag instances reaching the node.
    pub purity: f64,
    /// In-bag instances reaching the node, counted with bootstrap multiplicity.
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Split {
        condition: Condition,
        left: NodeId,
        right: NodeId,
    },
    Leaf(LeafValue),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub stats: Option<NodeStats>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf(_))
    }
}

/// A binary tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    /// Bootstrap sample, sorted, with repetitions.
    pub in_bag: Vec<usize>,
    /// Training indices never drawn into `in_bag`, sorted.
    pub oob: Vec<usize>,
    /// Output group of a margin-sum tree (class index for multi-class models, 0 otherwise).
    pub group: usize,
}

impl Tree {
    /// Validates arena shape: node 0 is the root, children are in range,
    /// and every node other than the root has exactly one parent.
    pub fn new(nodes: Vec<Node>, in_bag: Vec<usize>, oob: Vec<usize>, group: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::format("tree", "no nodes"));
        }
        let mut parents = vec![0u32; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            if let NodeKind::Split { left, right, .. } = node.kind {
                for child in [left, right] {
                    if child >= nodes.len() || child == 0 || child == id {
                        return Err(Error::format(
                            format!("node {id}"),
                            format!("invalid child reference {child}"),
                        ));
                    }
                    parents[child] += 1;
                }
            }
        }
        if let Some(id) = (1..nodes.len()).find(|&i| parents[i] != 1) {
            return Err(Error::format(
                format!("node {id}"),
                format!("referenced by {} parents, expected 1", parents[id]),
            ));
        }
        // every non-root node has one parent and node count is finite, but a
        // cycle detached from the root would still pass; count reachable nodes
        let mut reachable = 0;
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            reachable += 1;
            if reachable > nodes.len() {
                break;
            }
            if let NodeKind::Split { left, right, .. } = nodes[id].kind {
                stack.push(right);
                stack.push(left);
            }
        }
        if reachable != nodes.len() {
            return Err(Error::format("tree", "nodes unreachable from the root"));
        }
        Ok(Self {
            nodes,
            in_bag,
            oob,
            group,
        })
    }

    pub(crate) fn from_parts_unchecked(nodes: Vec<Node>, in_bag: Vec<usize>, oob: Vec<usize>, group: usize) -> Self {
        Self {
            nodes,
            in_bag,
            oob,
            group,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((id, d)) = stack.pop() {
            match self.nodes[id].kind {
                NodeKind::Split { left, right, .. } => {
                    stack.push((left, d + 1));
                    stack.push((right, d + 1));
                }
                NodeKind::Leaf(_) => best = best.max(d),
            }
        }
        best
    }

    pub fn is_annotated(&self) -> bool {
        self.nodes.iter().all(|n| n.stats.is_some())
    }

    pub fn leaf_id(&self, instance: &[f64]) -> NodeId {
        let mut id = 0;
        while let NodeKind::Split { condition, left, right } = &self.nodes[id].kind {
            id = if condition.holds(instance) { *left } else { *right };
        }
        id
    }

    /// Nodes visited from the root down to the reached leaf.
    pub fn decision_path(&self, instance: &[f64]) -> Vec<NodeId> {
        let mut out = vec![0];
        let mut id = 0;
        while let NodeKind::Split { condition, left, right } = &self.nodes[id].kind {
            id = if condition.holds(instance) { *left } else { *right };
            out.push(id);
        }
        out
    }

    pub fn leaf_value(&self, instance: &[f64]) -> LeafValue {
        match self.nodes[self.leaf_id(instance)].kind {
            NodeKind::Leaf(v) => v,
            NodeKind::Split { .. } => unreachable!("leaf_id stops at a leaf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregation {
    /// One vote per tree; ties go to the lowest class id.
    MajorityVote,
    /// Per-group sum of leaf values plus `base_score`. `groups` is 1 for binary
    /// models (margin > 0 means class 1) and the class count for multi-class ones.
    MarginSum { base_score: f64, groups: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class(usize),
    Margin(Vec<f64>),
}

impl Prediction {
    /// Class decision; margins resolve by sign (one group) or argmax, ties to the lowest id.
    pub fn class(&self) -> usize {
        match self {
            Prediction::Class(c) => *c,
            Prediction::Margin(m) if m.len() == 1 => usize::from(m[0] > 0.0),
            Prediction::Margin(m) => argmax_lowest(m.iter().copied()),
        }
    }
}

pub(crate) fn argmax_lowest<T: PartialOrd + Copy>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v.partial_cmp(&b) != Some(std::cmp::Ordering::Greater) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    trees: Vec<Tree>,
    aggregation: Aggregation,
    class_count: usize,
    feature_count: usize,
    params: Option<TrainParams>,
}

impl Ensemble {
    pub fn new(
        trees: Vec<Tree>,
        aggregation: Aggregation,
        class_count: usize,
        feature_count: usize,
        params: Option<TrainParams>,
    ) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::format("ensemble", "no trees"));
        }
        if class_count == 0 {
            return Err(Error::format("ensemble", "class count must be at least 1"));
        }
        if let Aggregation::MarginSum { base_score, groups } = aggregation {
            if groups == 0 || !base_score.is_finite() {
                return Err(Error::format(
                    "ensemble",
                    "margin groups must be >= 1 with a finite base score",
                ));
            }
        }
        for (t, tree) in trees.iter().enumerate() {
            let ctx = |id: usize| format!("tree {t}, node {id}");
            if let Aggregation::MarginSum { groups, .. } = aggregation {
                if tree.group >= groups {
                    return Err(Error::format(
                        format!("tree {t}"),
                        format!("group {} out of range", tree.group),
                    ));
                }
            }
            for (id, node) in tree.nodes.iter().enumerate() {
                match (&node.kind, aggregation) {
                    (NodeKind::Split { condition, .. }, _) => {
                        if condition.feature >= feature_count {
                            return Err(Error::format(
                                ctx(id),
                                format!("feature {} out of range", condition.feature),
                            ));
                        }
                        if !condition.threshold.is_finite() {
                            return Err(Error::format(ctx(id), "non-finite threshold"));
                        }
                    }
                    (NodeKind::Leaf(LeafValue::Class(c)), Aggregation::MajorityVote) => {
                        if *c >= class_count {
                            return Err(Error::format(ctx(id), format!("class {c} out of range")));
                        }
                    }
                    (NodeKind::Leaf(LeafValue::Value(v)), Aggregation::MarginSum { .. }) => {
                        if !v.is_finite() {
                            return Err(Error::format(ctx(id), "non-finite leaf value"));
                        }
                    }
                    (NodeKind::Leaf(_), _) => {
                        return Err(Error::format(ctx(id), "leaf kind does not match aggregation mode"));
                    }
                }
                if let Some(s) = node.stats {
                    if s.majority_class >= class_count || !(0.0..=1.0).contains(&s.purity) {
                        return Err(Error::format(ctx(id), "invalid purity annotation"));
                    }
                }
            }
        }
        Ok(Self {
            trees,
            aggregation,
            class_count,
            feature_count,
            params,
        })
    }

    pub(crate) fn with_trees(&self, trees: Vec<Tree>) -> Self {
        Self {
            trees,
            aggregation: self.aggregation,
            class_count: self.class_count,
            feature_count: self.feature_count,
            params: self.params.clone(),
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn params(&self) -> Option<&TrainParams> {
        self.params.as_ref()
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().map(Tree::node_count).sum()
    }

    /// Bagging-trained ensembles carry purity annotations on every node.
    pub fn is_prunable(&self) -> bool {
        self.aggregation == Aggregation::MajorityVote && self.trees.iter().all(Tree::is_annotated)
    }

    pub fn check_instance(&self, instance: &[f64]) -> Result<()> {
        if instance.len() != self.feature_count {
            return Err(Error::FeatureCount {
                expected: self.feature_count,
                got: instance.len(),
            });
        }
        if let Some(feature) = instance.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { feature });
        }
        Ok(())
    }

    /// Reference traversal of every tree followed by aggregation.
    pub fn predict(&self, instance: &[f64]) -> Result<Prediction> {
        self.check_instance(instance)?;
        Ok(self.aggregate(self.trees.iter().map(|t| (t.group, t.leaf_value(instance)))))
    }

    pub fn predict_class(&self, instance: &[f64]) -> Result<usize> {
        self.predict(instance).map(|p| p.class())
    }

    /// Combines one leaf per tree, visited in tree order.
    pub(crate) fn aggregate(&self, leaves: impl IntoIterator<Item = (usize, LeafValue)>) -> Prediction {
        aggregate_leaves(self.aggregation, self.class_count, leaves)
    }

    /// Plain accuracy of `predict_class` over a labelled dataset.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        for (i, row) in data.rows().enumerate() {
            if self.predict_class(row)? == data.label(i) {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Votes or sums `(group, leaf)` pairs according to `aggregation`.
pub fn aggregate_leaves(
    aggregation: Aggregation,
    class_count: usize,
    leaves: impl IntoIterator<Item = (usize, LeafValue)>,
) -> Prediction {
    match aggregation {
        Aggregation::MajorityVote => {
            let mut votes = vec![0usize; class_count];
            for (_, leaf) in leaves {
                if let LeafValue::Class(c) = leaf {
                    votes[c] += 1;
                }
            }
            Prediction::Class(argmax_lowest(votes))
        }
        Aggregation::MarginSum { base_score, groups } => {
            let mut margin = vec![base_score; groups];
            for (group, leaf) in leaves {
                if let LeafValue::Value(v) = leaf {
                    margin[group] += v;
                }
            }
            Prediction::Margin(margin)
        }
    }
}

/// How OOB correctness is averaged over instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccuracyWeighting {
    #[default]
    Unweighted,
    /// Each instance counts with its class weight.
    ClassWeighted,
}

/// Fraction of instances with at least one OOB tree whose OOB-only vote is correct.
pub fn oob_accuracy(ensemble: &Ensemble, data: &Dataset) -> Result<f64> {
    oob_accuracy_with(ensemble, data, AccuracyWeighting::Unweighted)
}

pub fn oob_accuracy_with(ensemble: &Ensemble, data: &Dataset, weighting: AccuracyWeighting) -> Result<f64> {
    if ensemble.aggregation() != Aggregation::MajorityVote {
        return Err(Error::NoOobCoverage);
    }
    if data.feature_count() != ensemble.feature_count() {
        return Err(Error::FeatureCount {
            expected: ensemble.feature_count(),
            got: data.feature_count(),
        });
    }
    let k = ensemble.class_count();
    let mut votes = vec![0u32; data.len() * k];
    let mut covered = vec![false; data.len()];
    for tree in ensemble.trees() {
        for &i in &tree.oob {
            if i >= data.len() {
                return Err(Error::InvalidDataset(format!(
                    "OOB index {i} beyond dataset of {} rows",
                    data.len()
                )));
            }
            if let LeafValue::Class(c) = tree.leaf_value(data.row(i)) {
                votes[i * k + c] += 1;
                covered[i] = true;
            }
        }
    }
    let outcomes = (0..data.len())
        .filter(|&i| covered[i])
        .map(|i| (data.label(i), argmax_lowest(votes[i * k..(i + 1) * k].iter().copied())));
    weighted_accuracy(outcomes, data.class_weights(), weighting).ok_or(Error::NoOobCoverage)
}

/// `(label, predicted)` pairs to an accuracy; `None` when there are no pairs.
pub(crate) fn weighted_accuracy(
    outcomes: impl Iterator<Item = (usize, usize)>,
    class_weights: &[f64],
    weighting: AccuracyWeighting,
) -> Option<f64> {
    let mut hits = vec![0usize; class_weights.len()];
    let mut totals = vec![0usize; class_weights.len()];
    for (label, predicted) in outcomes {
        totals[label] += 1;
        hits[label] += usize::from(label == predicted);
    }
    accuracy_from_counts(&hits, &totals, class_weights, weighting)
}

/// Accuracy from per-class hit and instance counts. Summing per class keeps
/// the result independent of instance order.
pub(crate) fn accuracy_from_counts(
    hits: &[usize],
    totals: &[usize],
    class_weights: &[f64],
    weighting: AccuracyWeighting,
) -> Option<f64> {
    if totals.iter().all(|&t| t == 0) {
        return None;
    }
    let w = |c: usize| match weighting {
        AccuracyWeighting::Unweighted => 1.0,
        AccuracyWeighting::ClassWeighted => class_weights[c],
    };
    let hit: f64 = hits.iter().enumerate().map(|(c, &h)| w(c) * h as f64).sum();
    let total: f64 = totals.iter().enumerate().map(|(c, &t)| w(c) * t as f64).sum();
    Some(hit / total)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn leaf(class: usize) -> Node {
        Node {
            kind: NodeKind::Leaf(LeafValue::Class(class)),
            stats: None,
        }
    }

    pub fn split(feature: usize, threshold: f64, left: NodeId, right: NodeId) -> Node {
        Node {
            kind: NodeKind::Split {
                condition: Condition::new(feature, threshold),
                left,
                right,
            },
            stats: None,
        }
    }

    /// T0: (f0 <= 0.5) ? A : ((f1 <= 2.0) ? B : C), with A, B, C = classes 0, 1, 2.
    pub fn t0() -> Tree {
        Tree::new(
            vec![split(0, 0.5, 1, 2), leaf(0), split(1, 2.0, 3, 4), leaf(1), leaf(2)],
            vec![],
            vec![],
            0,
        )
        .unwrap()
    }

    pub fn t0_ensemble() -> Ensemble {
        Ensemble::new(vec![t0()], Aggregation::MajorityVote, 3, 2, None).unwrap()
    }
}
