use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Aggregation, Dataset, Ensemble, LeafValue, Node, NodeId, NodeKind, NodeStats, Tree};
use crate::error::{Error, Result};
use crate::pathspace::Condition;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainParams {
    pub num_trees: usize,
    pub seed: u64,
    /// Features tried per split; `None` means `ceil(sqrt(feature_count))`.
    pub mtry: Option<usize>,
    pub min_samples_leaf: usize,
    /// Pre-pruning pass-through for baselines; `None` grows trees fully.
    pub max_depth: Option<usize>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            num_trees: 100,
            seed: 42,
            mtry: None,
            min_samples_leaf: 1,
            max_depth: None,
        }
    }
}

impl TrainParams {
    pub fn new(num_trees: usize, seed: u64) -> Self {
        Self {
            num_trees,
            seed,
            ..Self::default()
        }
    }

    pub fn effective_mtry(&self, feature_count: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (feature_count as f64).sqrt().ceil() as usize)
            .clamp(1, feature_count)
    }
}

/// Trains a bagged forest of CART trees (Gini, per-split random feature subsets).
///
/// Tree `i` draws from its own ChaCha stream `i` under `params.seed`, so the
/// result does not depend on how rayon schedules the trees.
pub fn train_forest(data: &Dataset, params: &TrainParams) -> Result<Ensemble> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if params.num_trees == 0 {
        return Err(Error::InvalidParams("num_trees must be at least 1".into()));
    }
    if params.min_samples_leaf == 0 {
        return Err(Error::InvalidParams("min_samples_leaf must be at least 1".into()));
    }
    if let Some(m) = params.mtry {
        if m == 0 || m > data.feature_count() {
            return Err(Error::InvalidParams(format!(
                "mtry {m} outside 1..={}",
                data.feature_count()
            )));
        }
    }
    let mut seen = vec![false; data.class_count()];
    data.labels().iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        log::warn!("training data holds a single class; every tree degenerates to a root leaf");
    }

    let mtry = params.effective_mtry(data.feature_count());
    let trees: Vec<Tree> = (0..params.num_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64);
            grow_tree(data, params, mtry, &mut rng)
        })
        .collect();
    Ensemble::new(
        trees,
        Aggregation::MajorityVote,
        data.class_count(),
        data.feature_count(),
        Some(params.clone()),
    )
}

fn grow_tree(data: &Dataset, params: &TrainParams, mtry: usize, rng: &mut ChaCha8Rng) -> Tree {
    let n = data.len();
    let mut in_bag: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    in_bag.sort_unstable();
    let mut drawn = vec![false; n];
    in_bag.iter().for_each(|&i| drawn[i] = true);
    let oob: Vec<usize> = (0..n).filter(|&i| !drawn[i]).collect();

    let mut builder = Builder {
        data,
        params,
        mtry,
        nodes: Vec::new(),
        features: (0..data.feature_count()).collect(),
        scratch: Vec::new(),
    };
    let mut work: Vec<(NodeId, Vec<usize>, usize)> = vec![(builder.placeholder(), in_bag.clone(), 0)];
    while let Some((id, samples, depth)) = work.pop() {
        let stats = builder.stats(&samples);
        builder.nodes[id].stats = Some(stats);
        let split = if builder.may_split(&samples, &stats, depth) {
            builder.best_split(&samples, rng)
        } else {
            None
        };
        match split {
            Some(condition) => {
                let (left, right): (Vec<usize>, Vec<usize>) = samples
                    .iter()
                    .copied()
                    .partition(|&i| data.value(i, condition.feature) <= condition.threshold);
                let l = builder.placeholder();
                let r = builder.placeholder();
                builder.nodes[id].kind = NodeKind::Split {
                    condition,
                    left: l,
                    right: r,
                };
                work.push((r, right, depth + 1));
                work.push((l, left, depth + 1));
            }
            None => builder.nodes[id].kind = NodeKind::Leaf(LeafValue::Class(stats.majority_class)),
        }
    }
    Tree::from_parts_unchecked(builder.nodes, in_bag, oob, 0)
}

struct Builder<'a> {
    data: &'a Dataset,
    params: &'a TrainParams,
    mtry: usize,
    nodes: Vec<Node>,
    features: Vec<usize>,
    scratch: Vec<(f64, usize)>,
}

impl Builder<'_> {
    fn placeholder(&mut self) -> NodeId {
        self.nodes.push(Node {
            kind: NodeKind::Leaf(LeafValue::Class(0)),
            stats: None,
        });
        self.nodes.len() - 1
    }

    fn class_weights(&self, samples: &[usize]) -> Vec<f64> {
        let w = self.data.class_weights();
        let mut acc = vec![0.0; self.data.class_count()];
        for &i in samples {
            let l = self.data.label(i);
            acc[l] += w[l];
        }
        acc
    }

    fn stats(&self, samples: &[usize]) -> NodeStats {
        let acc = self.class_weights(samples);
        let total: f64 = acc.iter().sum();
        let majority_class = super::argmax_lowest(acc.iter().copied());
        NodeStats {
            majority_class,
            purity: if total > 0.0 { acc[majority_class] / total } else { 1.0 },
            sample_count: samples.len(),
        }
    }

    fn may_split(&self, samples: &[usize], stats: &NodeStats, depth: usize) -> bool {
        stats.purity < 1.0
            && samples.len() >= 2 * self.params.min_samples_leaf
            && self.params.max_depth.is_none_or(|d| depth < d)
    }

    /// Best Gini split over `mtry` random features. If none of those features can
    /// split the node, the remaining features are tried in the same random order
    /// so that fully grown trees only stop on pure or indivisible nodes.
    fn best_split(&mut self, samples: &[usize], rng: &mut ChaCha8Rng) -> Option<Condition> {
        self.features.shuffle(rng);
        let parent = self.class_weights(samples);
        let mut best: Option<(f64, Condition)> = None;
        for k in 0..self.features.len() {
            if k >= self.mtry && best.is_some() {
                break;
            }
            let feature = self.features[k];
            if let Some((score, threshold)) = self.best_threshold(samples, feature, &parent) {
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, Condition::new(feature, threshold)));
                }
            }
        }
        best.map(|(_, c)| c)
    }

    /// Maximises `sum_c wL_c^2 / W_L + sum_c wR_c^2 / W_R`, which minimises the
    /// weighted Gini impurity of the children.
    fn best_threshold(&mut self, samples: &[usize], feature: usize, parent: &[f64]) -> Option<(f64, f64)> {
        let data = self.data;
        let weights = data.class_weights();
        self.scratch.clear();
        self.scratch
            .extend(samples.iter().map(|&i| (data.value(i, feature), i)));
        self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        let first = self.scratch.first()?.0;
        let last = self.scratch.last()?.0;
        if first == last {
            return None;
        }

        let min_leaf = self.params.min_samples_leaf;
        let mut left = vec![0.0; parent.len()];
        let mut right = parent.to_vec();
        let mut w_left = 0.0;
        let mut w_right: f64 = parent.iter().sum();
        let mut sq_left = 0.0;
        let mut sq_right: f64 = parent.iter().map(|w| w * w).sum();
        let mut best: Option<(f64, f64)> = None;
        let n = self.scratch.len();
        for pos in 0..n - 1 {
            let (value, i) = self.scratch[pos];
            let c = data.label(i);
            let w = weights[c];
            sq_left += (2.0 * left[c] + w) * w;
            sq_right -= (2.0 * right[c] - w) * w;
            left[c] += w;
            right[c] -= w;
            w_left += w;
            w_right -= w;
            let next = self.scratch[pos + 1].0;
            if value == next || pos + 1 < min_leaf || n - pos - 1 < min_leaf {
                continue;
            }
            let score = sq_left / w_left + sq_right / w_right.max(f64::MIN_POSITIVE);
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, midpoint(value, next)));
            }
        }
        best
    }
}

/// Midpoint of `lo < hi`, kept strictly below `hi` so `x <= t` separates them.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= lo && mid < hi {
        mid
    } else {
        lo
    }
}
