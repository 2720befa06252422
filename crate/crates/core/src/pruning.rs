//! Purity threshold pruning: every shallowest node whose purity reaches the
//! threshold becomes a majority-class leaf, and the threshold is the smallest
//! one that keeps OOB accuracy within a tolerance of the unpruned forest.

use crate::ensemble::{
    accuracy_from_counts, argmax_lowest, oob_accuracy_with, weighted_accuracy, AccuracyWeighting, Dataset, Ensemble,
    LeafValue, Node, NodeKind, Tree,
};
use crate::error::{Error, Result};
use crate::pathspace::extract_paths;

/// Threshold above every purity; pruning with it leaves the ensemble unchanged.
pub const NO_PRUNING: f64 = 1.0 + f64::EPSILON;

/// Copy of `ensemble` where, top-down, the first node on each branch with
/// `purity >= threshold` is replaced by a leaf predicting its majority class.
pub fn prune_with_threshold(ensemble: &Ensemble, threshold: f64) -> Result<Ensemble> {
    if !ensemble.is_prunable() {
        return Err(Error::NotPrunable);
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidThreshold(threshold));
    }
    let trees = ensemble.trees().iter().map(|t| prune_tree(t, threshold)).collect();
    Ok(ensemble.with_trees(trees))
}

fn prune_tree(tree: &Tree, threshold: f64) -> Tree {
    let mut nodes: Vec<Node> = Vec::with_capacity(tree.node_count());
    // (source node, slot in `nodes`)
    let mut stack = vec![(0usize, 0usize)];
    nodes.push(tree.root().clone());
    while let Some((src, dst)) = stack.pop() {
        let node = tree.node(src);
        let stats = node.stats.expect("prunable trees are annotated");
        match node.kind {
            NodeKind::Split { condition, left, right } if stats.purity < threshold => {
                let l = nodes.len();
                nodes.push(tree.node(left).clone());
                let r = nodes.len();
                nodes.push(tree.node(right).clone());
                nodes[dst] = Node {
                    kind: NodeKind::Split {
                        condition,
                        left: l,
                        right: r,
                    },
                    stats: Some(stats),
                };
                stack.push((right, r));
                stack.push((left, l));
            }
            NodeKind::Split { .. } => {
                nodes[dst] = Node {
                    kind: NodeKind::Leaf(LeafValue::Class(stats.majority_class)),
                    stats: Some(stats),
                };
            }
            NodeKind::Leaf(_) => {}
        }
    }
    Tree::from_parts_unchecked(nodes, tree.in_bag.clone(), tree.oob.clone(), tree.group)
}

/// Distinct internal-node purities in ascending order, then [`NO_PRUNING`].
pub fn candidate_thresholds(ensemble: &Ensemble) -> Vec<f64> {
    let mut out: Vec<f64> = ensemble
        .trees()
        .iter()
        .flat_map(|t| t.nodes())
        .filter(|n| !n.is_leaf())
        .filter_map(|n| n.stats.map(|s| s.purity))
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out.push(NO_PRUNING);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchStrategy {
    /// Assumes OOB accuracy is non-decreasing in the threshold.
    #[default]
    Binary,
    /// Evaluates every candidate and keeps the smallest passing one.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    /// Allowed OOB accuracy loss as a fraction (0.03 = 3 percentage points).
    pub tolerance: f64,
    pub search: SearchStrategy,
    pub weighting: AccuracyWeighting,
}

impl PruneConfig {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            search: SearchStrategy::default(),
            weighting: AccuracyWeighting::default(),
        }
    }

    pub fn with_search(mut self, search: SearchStrategy) -> Self {
        self.search = search;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    /// Selected threshold; [`NO_PRUNING`] when no candidate keeps accuracy in tolerance.
    pub threshold: f64,
    pub pruned: Ensemble,
    pub oob_before: f64,
    pub oob_after: f64,
    pub nodes_removed: usize,
    /// Candidate thresholds whose OOB accuracy was evaluated.
    pub evaluations: usize,
}

impl PruneResult {
    pub fn is_pruned(&self) -> bool {
        self.threshold < NO_PRUNING
    }
}

/// Prunes with the default (binary) search and unweighted OOB accuracy.
pub fn purity_threshold_prune(ensemble: &Ensemble, data: &Dataset, tolerance: f64) -> Result<PruneResult> {
    purity_threshold_prune_with(ensemble, data, &PruneConfig::new(tolerance))
}

pub fn purity_threshold_prune_with(ensemble: &Ensemble, data: &Dataset, config: &PruneConfig) -> Result<PruneResult> {
    if !ensemble.is_prunable() {
        return Err(Error::NotPrunable);
    }
    let tolerance = config.tolerance;
    if !(0.0..1.0).contains(&tolerance) {
        return Err(Error::InvalidTolerance(tolerance));
    }
    let oob_before = oob_accuracy_with(ensemble, data, config.weighting)?;
    let evaluator = OobEvaluator::new(ensemble, data, config.weighting)?;
    let candidates = candidate_thresholds(ensemble);
    let passes = |acc: f64| oob_before - acc <= tolerance;

    let (index, evaluations) = match config.search {
        SearchStrategy::Binary => {
            let (mut lo, mut hi) = (0, candidates.len() - 1);
            let mut evals = 0;
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                evals += 1;
                if passes(evaluator.accuracy(candidates[mid])) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            (lo, evals)
        }
        SearchStrategy::Exhaustive => {
            let accs = evaluator.accuracy_curve(&candidates);
            let first = accs.iter().position(|&a| passes(a)).unwrap_or(candidates.len() - 1);
            (first, candidates.len())
        }
    };

    let threshold = candidates[index];
    let pruned = prune_with_threshold(ensemble, threshold)?;
    let oob_after = oob_accuracy_with(&pruned, data, config.weighting)?;
    if !passes(oob_after) {
        return Err(Error::Invariant(format!(
            "pruned OOB accuracy {oob_after} breaks tolerance {tolerance} from {oob_before} at threshold {threshold}"
        )));
    }
    Ok(PruneResult {
        threshold,
        nodes_removed: ensemble.node_count() - pruned.node_count(),
        pruned,
        oob_before,
        oob_after,
        evaluations,
    })
}

/// OOB accuracy of `prune_with_threshold(ensemble, t)` for any `t`, without
/// rebuilding trees: each (tree, OOB instance) pair keeps the running maximum
/// purity along its decision path, so the cut node is found by binary search.
pub struct OobEvaluator<'a> {
    data: &'a Dataset,
    class_count: usize,
    weighting: AccuracyWeighting,
    pairs: Vec<OobPair>,
}

struct OobPair {
    instance: usize,
    prefix_max: Vec<f64>,
    majority: Vec<usize>,
    leaf_class: usize,
}

impl<'a> OobEvaluator<'a> {
    pub fn new(ensemble: &Ensemble, data: &'a Dataset, weighting: AccuracyWeighting) -> Result<Self> {
        if !ensemble.is_prunable() {
            return Err(Error::NotPrunable);
        }
        let mut pairs = Vec::new();
        for tree in ensemble.trees() {
            for &i in &tree.oob {
                if i >= data.len() {
                    return Err(Error::InvalidDataset(format!("OOB index {i} beyond dataset")));
                }
                let path = tree.decision_path(data.row(i));
                let mut prefix_max = Vec::with_capacity(path.len());
                let mut majority = Vec::with_capacity(path.len());
                let mut running = f64::NEG_INFINITY;
                for &id in &path {
                    let s = tree.node(id).stats.expect("annotated");
                    running = running.max(s.purity);
                    prefix_max.push(running);
                    majority.push(s.majority_class);
                }
                let leaf_class = match tree.node(*path.last().unwrap()).kind {
                    NodeKind::Leaf(LeafValue::Class(c)) => c,
                    _ => unreachable!("vote trees end in class leaves"),
                };
                pairs.push(OobPair {
                    instance: i,
                    prefix_max,
                    majority,
                    leaf_class,
                });
            }
        }
        if pairs.is_empty() {
            return Err(Error::NoOobCoverage);
        }
        Ok(Self {
            data,
            class_count: ensemble.class_count(),
            weighting,
            pairs,
        })
    }

    pub fn accuracy(&self, threshold: f64) -> f64 {
        let k = self.class_count;
        let mut votes = vec![0u32; self.data.len() * k];
        let mut covered = vec![false; self.data.len()];
        for p in &self.pairs {
            let cut = p.prefix_max.partition_point(|&m| m < threshold);
            let class = if cut < p.majority.len() {
                p.majority[cut]
            } else {
                p.leaf_class
            };
            votes[p.instance * k + class] += 1;
            covered[p.instance] = true;
        }
        let outcomes = (0..self.data.len()).filter(|&i| covered[i]).map(|i| {
            (
                self.data.label(i),
                argmax_lowest(votes[i * k..(i + 1) * k].iter().copied()),
            )
        });
        weighted_accuracy(outcomes, self.data.class_weights(), self.weighting).expect("pairs are non-empty")
    }
}

impl OobEvaluator<'_> {
    /// `accuracy(t)` for every `t` in `thresholds`, in one sweep from high to
    /// low thresholds. Each pair changes its vote only where its running
    /// maximum purity rises, so the sweep applies about one event per node
    /// on each OOB decision path.
    pub fn accuracy_curve(&self, thresholds: &[f64]) -> Vec<f64> {
        let k = self.class_count;
        let n = self.data.len();
        let mut votes = vec![0u32; n * k];
        let mut covered = vec![false; n];
        let mut current: Vec<usize> = Vec::with_capacity(self.pairs.len());
        let mut events: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, p) in self.pairs.iter().enumerate() {
            votes[p.instance * k + p.leaf_class] += 1;
            covered[p.instance] = true;
            current.push(p.leaf_class);
            let mut last = f64::NEG_INFINITY;
            for (j, &m) in p.prefix_max.iter().enumerate() {
                if m > last {
                    events.push((m, pi, p.majority[j]));
                    last = m;
                }
            }
        }
        events.sort_by(|a, b| b.0.total_cmp(&a.0));

        let weights = self.data.class_weights();
        let predict = |votes: &[u32], i: usize| argmax_lowest(votes[i * k..(i + 1) * k].iter().copied());
        let mut predicted = vec![0usize; n];
        let mut hits = vec![0usize; weights.len()];
        let mut totals = vec![0usize; weights.len()];
        for i in (0..n).filter(|&i| covered[i]) {
            predicted[i] = predict(&votes, i);
            let label = self.data.label(i);
            totals[label] += 1;
            hits[label] += usize::from(predicted[i] == label);
        }

        let mut order: Vec<usize> = (0..thresholds.len()).collect();
        order.sort_by(|&a, &b| thresholds[b].total_cmp(&thresholds[a]));
        let mut out = vec![0.0; thresholds.len()];
        let mut next = 0;
        for ti in order {
            let t = thresholds[ti];
            while next < events.len() && events[next].0 >= t {
                let (_, pi, class) = events[next];
                next += 1;
                if current[pi] == class {
                    continue;
                }
                let i = self.pairs[pi].instance;
                votes[i * k + current[pi]] -= 1;
                votes[i * k + class] += 1;
                current[pi] = class;
                let label = self.data.label(i);
                let now = predict(&votes, i);
                hits[label] = hits[label] + usize::from(now == label) - usize::from(predicted[i] == label);
                predicted[i] = now;
            }
            out[ti] = accuracy_from_counts(&hits, &totals, weights, self.weighting).expect("pairs are non-empty");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelComplexity {
    pub path_count: usize,
    pub unique_condition_count: usize,
    pub avg_path_length: f64,
}

pub fn model_complexity(ensemble: &Ensemble) -> ModelComplexity {
    let s = extract_paths(ensemble).stats();
    ModelComplexity {
        path_count: s.path_count,
        unique_condition_count: s.unique_condition_count,
        avg_path_length: s.avg_path_length,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::fixtures::t0_ensemble;
    use crate::ensemble::{oob_accuracy, train_forest, TrainParams};
    use rand::{Rng, SeedableRng};

    fn noisy(n: usize, classes: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..4).map(|_| (rng.random::<f64>() * 20.0).round() / 4.0).collect();
            let mut label = usize::from(x[0] + x[1] > 5.0) + usize::from(x[2] > 3.0 && classes > 2);
            if rng.random::<f64>() < 0.15 {
                label = rng.random_range(0..classes);
            }
            rows.push(x);
            labels.push(label.min(classes - 1));
        }
        Dataset::new(rows, labels, classes).unwrap()
    }

    fn forest(data: &Dataset, trees: usize) -> Ensemble {
        train_forest(data, &TrainParams::new(trees, 17)).unwrap()
    }

    /// Recursive re-statement of the cut rule, independent of `prune_tree`.
    fn oracle_leaf_class(tree: &Tree, id: usize, x: &[f64], threshold: f64) -> usize {
        let node = tree.node(id);
        let stats = node.stats.unwrap();
        if stats.purity >= threshold {
            return stats.majority_class;
        }
        match node.kind {
            NodeKind::Leaf(LeafValue::Class(c)) => c,
            NodeKind::Split { condition, left, right } => {
                let next = if x[condition.feature] <= condition.threshold {
                    left
                } else {
                    right
                };
                oracle_leaf_class(tree, next, x, threshold)
            }
            _ => unreachable!(),
        }
    }

    fn oracle_node_count(tree: &Tree, id: usize, threshold: f64) -> usize {
        let node = tree.node(id);
        match node.kind {
            NodeKind::Split { left, right, .. } if node.stats.unwrap().purity < threshold => {
                1 + oracle_node_count(tree, left, threshold) + oracle_node_count(tree, right, threshold)
            }
            _ => 1,
        }
    }

    #[test]
    fn threshold_above_all_purities_keeps_ensemble() {
        let data = noisy(300, 3, 1);
        let e = forest(&data, 5);
        let max_internal = candidate_thresholds(&e).iter().rev().nth(1).copied().unwrap();
        let pruned = prune_with_threshold(&e, max_internal + 1e-9).unwrap();
        assert_eq!(pruned.node_count(), e.node_count());
        for row in data.rows() {
            assert_eq!(pruned.predict(row).unwrap(), e.predict(row).unwrap());
        }
        assert_eq!(prune_with_threshold(&e, NO_PRUNING).unwrap(), e);
    }

    #[test]
    fn half_threshold_collapses_binary_trees_to_root_leaves() {
        let data = noisy(200, 2, 2);
        let e = forest(&data, 6);
        let pruned = prune_with_threshold(&e, 0.5).unwrap();
        for (t, orig) in pruned.trees().iter().zip(e.trees()) {
            assert_eq!(t.node_count(), 1);
            assert_eq!(
                t.root().kind,
                NodeKind::Leaf(LeafValue::Class(orig.root().stats.unwrap().majority_class))
            );
        }
    }

    #[test]
    fn prune_matches_recursive_oracle() {
        let data = noisy(400, 3, 3);
        let e = forest(&data, 8);
        for &threshold in candidate_thresholds(&e).iter().step_by(7) {
            let pruned = prune_with_threshold(&e, threshold).unwrap();
            for (t, (p, o)) in pruned.trees().iter().zip(e.trees()).enumerate() {
                assert_eq!(p.node_count(), oracle_node_count(o, 0, threshold), "tree {t}");
                for row in data.rows().take(100) {
                    let got = match p.leaf_value(row) {
                        LeafValue::Class(c) => c,
                        LeafValue::Value(_) => unreachable!(),
                    };
                    assert_eq!(got, oracle_leaf_class(o, 0, row, threshold));
                }
            }
        }
    }

    #[test]
    fn evaluator_matches_full_reevaluation() {
        let data = noisy(300, 3, 4);
        let e = forest(&data, 10);
        let ev = OobEvaluator::new(&e, &data, AccuracyWeighting::Unweighted).unwrap();
        for &t in &candidate_thresholds(&e) {
            let full = oob_accuracy(&prune_with_threshold(&e, t).unwrap(), &data).unwrap();
            assert_eq!(ev.accuracy(t), full, "threshold {t}");
        }
    }

    #[test]
    fn accuracy_curve_matches_pointwise_accuracy() {
        for (seed, k, weighting) in [
            (4, 3, AccuracyWeighting::Unweighted),
            (8, 4, AccuracyWeighting::ClassWeighted),
            (9, 2, AccuracyWeighting::ClassWeighted),
        ] {
            let data = noisy(300, k, seed);
            let e = forest(&data, 15);
            let ev = OobEvaluator::new(&e, &data, weighting).unwrap();
            let mut ts = candidate_thresholds(&e);
            ts.push(0.0);
            ts.reverse();
            let curve = ev.accuracy_curve(&ts);
            for (&t, &a) in ts.iter().zip(&curve) {
                assert_eq!(a, ev.accuracy(t), "threshold {t} seed {seed}");
            }
        }
    }

    /// Full re-evaluation at every candidate, scanning from the top down.
    fn exhaustive_scan(e: &Ensemble, data: &Dataset, tolerance: f64) -> f64 {
        let before = oob_accuracy(e, data).unwrap();
        let mut best = NO_PRUNING;
        for &t in candidate_thresholds(e).iter().rev() {
            let acc = oob_accuracy(&prune_with_threshold(e, t).unwrap(), data).unwrap();
            if before - acc <= tolerance {
                best = t;
            }
        }
        best
    }

    #[test]
    fn search_matches_exhaustive_scan_oracle() {
        let data = noisy(300, 2, 5);
        let e = forest(&data, 12);
        for tolerance in [0.0, 0.01, 0.03, 0.05, 0.2] {
            let expected = exhaustive_scan(&e, &data, tolerance);
            let exhaustive = purity_threshold_prune_with(
                &e,
                &data,
                &PruneConfig::new(tolerance).with_search(SearchStrategy::Exhaustive),
            )
            .unwrap();
            assert_eq!(exhaustive.threshold, expected, "tolerance {tolerance}");
            let r = purity_threshold_prune(&e, &data, tolerance).unwrap();
            assert!(r.oob_before - r.oob_after <= tolerance);
            assert!(r.nodes_removed <= e.node_count());
        }
    }

    #[test]
    fn loose_tolerance_picks_smallest_purity() {
        let data = noisy(250, 3, 6);
        let e = forest(&data, 5);
        let r = purity_threshold_prune(&e, &data, 0.99).unwrap();
        assert_eq!(r.threshold, candidate_thresholds(&e)[0]);
    }

    #[test]
    fn zero_tolerance_without_lossless_candidate_keeps_model() {
        let data = noisy(300, 3, 7);
        let e = forest(&data, 9);
        let before = oob_accuracy(&e, &data).unwrap();
        let r = purity_threshold_prune_with(
            &e,
            &data,
            &PruneConfig::new(0.0).with_search(SearchStrategy::Exhaustive),
        )
        .unwrap();
        assert!(r.oob_after >= before);
        if candidate_thresholds(&e)[..candidate_thresholds(&e).len() - 1]
            .iter()
            .all(|&t| oob_accuracy(&prune_with_threshold(&e, t).unwrap(), &data).unwrap() < before)
        {
            assert_eq!(r.threshold, NO_PRUNING);
            assert_eq!(r.pruned, e);
        }
    }

    #[test]
    fn unannotated_models_are_rejected() {
        let e = t0_ensemble();
        assert!(matches!(prune_with_threshold(&e, 0.9), Err(Error::NotPrunable)));
        let data = Dataset::new(vec![vec![0.0, 0.0]], vec![0], 3).unwrap();
        assert!(matches!(
            purity_threshold_prune(&e, &data, 0.03),
            Err(Error::NotPrunable)
        ));
    }

    #[test]
    fn rejects_bad_threshold_and_tolerance() {
        let data = noisy(100, 2, 8);
        let e = forest(&data, 3);
        assert!(prune_with_threshold(&e, 0.0).is_err());
        assert!(prune_with_threshold(&e, f64::NAN).is_err());
        assert!(purity_threshold_prune(&e, &data, 1.0).is_err());
        assert!(purity_threshold_prune(&e, &data, -0.1).is_err());
    }

    #[test]
    fn complexity_of_fixtures() {
        let c = model_complexity(&t0_ensemble());
        assert_eq!((c.path_count, c.unique_condition_count), (3, 2));
        assert!((c.avg_path_length - 5.0 / 3.0).abs() < 1e-12);

        let data = noisy(300, 3, 9);
        let e = forest(&data, 10);
        let r = purity_threshold_prune(&e, &data, 0.05).unwrap();
        let (a, b) = (model_complexity(&e), model_complexity(&r.pruned));
        assert!(b.path_count <= a.path_count);
        assert!(b.unique_condition_count <= a.unique_condition_count);
    }

    #[test]
    fn lower_thresholds_truncate_higher_threshold_paths() {
        let data = noisy(300, 3, 10);
        let e = forest(&data, 6);
        let cands = candidate_thresholds(&e);
        let (lo, hi) = (cands[cands.len() / 3], cands[2 * cands.len() / 3]);
        let (plo, phi) = (
            extract_paths(&prune_with_threshold(&e, lo).unwrap()),
            extract_paths(&prune_with_threshold(&e, hi).unwrap()),
        );
        let conds = |ps: &crate::pathspace::PathSet, p: &crate::pathspace::Path| {
            p.cells
                .iter()
                .map(|&(c, b)| (ps.index().condition(c), b))
                .collect::<std::collections::HashSet<_>>()
        };
        for p in plo.paths() {
            let short = conds(&plo, p);
            assert!(phi.tree_paths(p.tree).iter().any(|q| short.is_subset(&conds(&phi, q))));
        }
    }
}
