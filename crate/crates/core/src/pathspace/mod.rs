//! Root-to-leaf path extraction, the global condition index, and the
//! redundancy/size metrics of the naive unified CAM matrix.

mod condition;

pub use condition::Condition;

use std::collections::HashMap;
use std::ops::Range;

use crate::ensemble::{Aggregation, Ensemble, LeafValue, NodeKind, Tree};
use crate::error::{Error, Result};

/// Position of a condition in [`ConditionIndex::conditions`].
pub type ConditionId = usize;
/// Position of a path in [`PathSet::paths`].
pub type PathId = usize;

/// Unique conditions in ascending `(feature, threshold)` order.
///
/// Conditions of one feature are contiguous, so each feature's threshold list
/// is a sorted slice that [`encode_features`] can binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionIndex {
    conditions: Vec<Condition>,
    frequency: Vec<usize>,
    feature_ranges: Vec<Range<usize>>,
    lookup: HashMap<Condition, ConditionId>,
}

impl ConditionIndex {
    /// Builds the index from `(condition, frequency)` pairs; duplicates are summed.
    pub fn new(counts: impl IntoIterator<Item = (Condition, usize)>, feature_count: usize) -> Result<Self> {
        let mut merged: HashMap<Condition, usize> = HashMap::new();
        for (c, n) in counts {
            if c.feature >= feature_count || !c.threshold.is_finite() {
                return Err(Error::format("condition index", format!("invalid condition {c}")));
            }
            *merged.entry(c).or_default() += n;
        }
        let mut pairs: Vec<(Condition, usize)> = merged.into_iter().collect();
        pairs.sort_by_key(|p| p.0);
        let conditions: Vec<Condition> = pairs.iter().map(|p| p.0).collect();
        let frequency = pairs.iter().map(|p| p.1).collect();
        let mut feature_ranges = vec![0..0; feature_count];
        let mut start = 0;
        while start < conditions.len() {
            let f = conditions[start].feature;
            let end = start + conditions[start..].partition_point(|c| c.feature == f);
            feature_ranges[f] = start..end;
            start = end;
        }
        let lookup = conditions.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Ok(Self {
            conditions,
            frequency,
            feature_ranges,
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    pub fn condition(&self, id: ConditionId) -> Condition {
        self.conditions[id]
    }

    /// Number of paths containing each condition.
    pub fn frequencies(&self) -> &[usize] {
        &self.frequency
    }

    pub fn frequency(&self, id: ConditionId) -> usize {
        self.frequency[id]
    }

    pub fn id_of(&self, condition: &Condition) -> Option<ConditionId> {
        self.lookup.get(condition).copied()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_ranges.len()
    }

    /// Ids of `feature`'s conditions; their thresholds ascend with the id.
    pub fn feature_range(&self, feature: usize) -> Range<ConditionId> {
        self.feature_ranges[feature].clone()
    }

    /// Condition ids ordered by descending frequency, ties by ascending id.
    pub fn by_descending_frequency(&self) -> Vec<ConditionId> {
        let mut ids: Vec<ConditionId> = (0..self.len()).collect();
        ids.sort_by(|&a, &b| self.frequency[b].cmp(&self.frequency[a]).then(a.cmp(&b)));
        ids
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub id: PathId,
    pub tree: usize,
    /// Conditions checked on the way to the leaf, sorted by id; `true` means
    /// the path takes the condition's left (`<=`) branch.
    pub cells: Vec<(ConditionId, bool)>,
    pub leaf: LeafValue,
}

impl Path {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn bit(&self, condition: ConditionId) -> Option<bool> {
        self.cells
            .binary_search_by_key(&condition, |c| c.0)
            .ok()
            .map(|i| self.cells[i].1)
    }

    pub fn contains(&self, condition: ConditionId) -> bool {
        self.bit(condition).is_some()
    }

    /// True when every cell agrees with the truth assignment.
    pub fn consistent_with(&self, truth: &TruthAssignment) -> bool {
        self.cells.iter().all(|&(c, b)| truth.get(c) == b)
    }
}

/// What the CAM simulator needs to aggregate matched leaves like the ensemble does.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMeta {
    pub aggregation: Aggregation,
    pub class_count: usize,
    pub feature_count: usize,
    pub tree_groups: Vec<usize>,
}

impl EnsembleMeta {
    pub fn of(ensemble: &Ensemble) -> Self {
        Self {
            aggregation: ensemble.aggregation(),
            class_count: ensemble.class_count(),
            feature_count: ensemble.feature_count(),
            tree_groups: ensemble.trees().iter().map(|t| t.group).collect(),
        }
    }

    pub fn tree_count(&self) -> usize {
        self.tree_groups.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
    index: ConditionIndex,
    tree_ranges: Vec<Range<PathId>>,
    meta: EnsembleMeta,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PathStats {
    pub path_count: usize,
    pub unique_condition_count: usize,
    pub avg_path_length: f64,
    pub max_path_length: usize,
}

impl PathSet {
    /// Assembles a path set from already-indexed paths (e.g. read back from a layout file).
    pub fn from_parts(paths: Vec<Path>, index: ConditionIndex, meta: EnsembleMeta) -> Result<Self> {
        let mut tree_ranges = vec![0..0; meta.tree_count()];
        let mut freq = vec![0usize; index.len()];
        for (pos, p) in paths.iter().enumerate() {
            if p.id != pos {
                return Err(Error::format(format!("path {pos}"), "path ids must be consecutive"));
            }
            if p.tree >= meta.tree_count() {
                return Err(Error::format(
                    format!("path {pos}"),
                    format!("tree {} out of range", p.tree),
                ));
            }
            if pos > 0 && paths[pos - 1].tree > p.tree {
                return Err(Error::format(format!("path {pos}"), "paths must be grouped by tree"));
            }
            if !p.cells.windows(2).all(|w| w[0].0 < w[1].0) {
                return Err(Error::format(format!("path {pos}"), "cells must be sorted and unique"));
            }
            for &(c, _) in &p.cells {
                if c >= index.len() {
                    return Err(Error::format(
                        format!("path {pos}"),
                        format!("condition {c} not in index"),
                    ));
                }
                freq[c] += 1;
            }
            let r = &mut tree_ranges[p.tree];
            if r.start == r.end {
                *r = pos..pos + 1;
            } else {
                r.end = pos + 1;
            }
        }
        if freq != index.frequencies() {
            return Err(Error::format(
                "path set",
                "condition frequencies disagree with the paths",
            ));
        }
        Ok(Self {
            paths,
            index,
            tree_ranges,
            meta,
        })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn path(&self, id: PathId) -> &Path {
        &self.paths[id]
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn index(&self) -> &ConditionIndex {
        &self.index
    }

    pub fn meta(&self) -> &EnsembleMeta {
        &self.meta
    }

    pub fn tree_count(&self) -> usize {
        self.tree_ranges.len()
    }

    pub fn tree_paths(&self, tree: usize) -> &[Path] {
        &self.paths[self.tree_ranges[tree].clone()]
    }

    pub fn tree_range(&self, tree: usize) -> Range<PathId> {
        self.tree_ranges[tree].clone()
    }

    pub fn total_cells(&self) -> usize {
        self.paths.iter().map(Path::len).sum()
    }

    pub fn stats(&self) -> PathStats {
        PathStats {
            path_count: self.len(),
            unique_condition_count: self.index.len(),
            avg_path_length: if self.is_empty() {
                0.0
            } else {
                self.total_cells() as f64 / self.len() as f64
            },
            max_path_length: self.paths.iter().map(Path::len).max().unwrap_or(0),
        }
    }

    /// Fraction of X cells in the `#paths x #unique_conditions` unified matrix.
    pub fn redundancy(&self) -> f64 {
        let s = self.stats();
        redundancy_from_counts(s.avg_path_length, s.unique_condition_count)
    }

    pub fn size(&self) -> LayoutSize {
        layout_size(self.len(), self.index.len())
    }

    pub fn encode(&self, instance: &[f64]) -> Result<TruthAssignment> {
        encode_features(instance, &self.index)
    }
}

/// Depth-first, left-first enumeration of every root-to-leaf path.
///
/// A condition repeated with the same outcome on one path is kept once; a
/// path that needs both outcomes of one condition is unreachable and dropped.
pub fn extract_paths(ensemble: &Ensemble) -> PathSet {
    let mut raw: Vec<RawPath> = Vec::new();
    for (t, tree) in ensemble.trees().iter().enumerate() {
        let mut prefix = Vec::new();
        walk(tree, 0, t, &mut prefix, &mut raw);
    }

    let mut counts: HashMap<Condition, usize> = HashMap::new();
    for (_, cells, _) in &raw {
        for (c, _) in cells {
            *counts.entry(*c).or_default() += 1;
        }
    }
    let index = ConditionIndex::new(counts, ensemble.feature_count())
        .expect("ensemble conditions are validated at construction");

    let mut tree_ranges = vec![0..0; ensemble.trees().len()];
    let paths: Vec<Path> = raw
        .into_iter()
        .enumerate()
        .map(|(id, (tree, cells, leaf))| {
            let mut cells: Vec<(ConditionId, bool)> = cells
                .iter()
                .map(|(c, b)| (index.id_of(c).expect("indexed above"), *b))
                .collect();
            cells.sort_unstable_by_key(|c| c.0);
            let r = &mut tree_ranges[tree];
            if r.start == r.end {
                *r = id..id + 1;
            } else {
                r.end = id + 1;
            }
            Path { id, tree, cells, leaf }
        })
        .collect();
    PathSet {
        paths,
        index,
        tree_ranges,
        meta: EnsembleMeta::of(ensemble),
    }
}

type RawPath = (usize, Vec<(Condition, bool)>, LeafValue);

fn walk(tree: &Tree, id: usize, t: usize, prefix: &mut Vec<(Condition, bool)>, out: &mut Vec<RawPath>) {
    match tree.node(id).kind {
        NodeKind::Leaf(leaf) => {
            let mut cells: Vec<(Condition, bool)> = Vec::with_capacity(prefix.len());
            for &(c, b) in prefix.iter() {
                match cells.iter().find(|(d, _)| *d == c) {
                    Some(&(_, prev)) if prev == b => {}
                    Some(_) => {
                        log::warn!("tree {t}: dropping unreachable path with contradictory condition {c}");
                        return;
                    }
                    None => cells.push((c, b)),
                }
            }
            out.push((t, cells, leaf));
        }
        NodeKind::Split { condition, left, right } => {
            prefix.push((condition, true));
            walk(tree, left, t, prefix, out);
            prefix.pop();
            prefix.push((condition, false));
            walk(tree, right, t, prefix, out);
            prefix.pop();
        }
    }
}

/// `1 - avg_path_length / unique_conditions`; zero when there are no conditions.
pub fn redundancy_from_counts(avg_path_length: f64, unique_condition_count: usize) -> f64 {
    if unique_condition_count == 0 {
        0.0
    } else {
        1.0 - avg_path_length / unique_condition_count as f64
    }
}

pub const MIB: f64 = 1_048_576.0;

/// Storage of the naive unified matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutSize {
    pub cells: u128,
    /// One bit per ternary cell.
    pub nominal_bytes: f64,
    /// Two bits per ternary cell.
    pub physical_bytes: f64,
}

impl LayoutSize {
    pub fn nominal_mib(&self) -> f64 {
        self.nominal_bytes / MIB
    }

    pub fn physical_mib(&self) -> f64 {
        self.physical_bytes / MIB
    }
}

pub fn layout_size(path_count: usize, unique_condition_count: usize) -> LayoutSize {
    let cells = path_count as u128 * unique_condition_count as u128;
    LayoutSize {
        cells,
        nominal_bytes: cells as f64 / 8.0,
        physical_bytes: cells as f64 / 4.0,
    }
}

/// One truth bit per unique condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthAssignment(Vec<bool>);

impl TruthAssignment {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn get(&self, condition: ConditionId) -> bool {
        self.0[condition]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }
}

/// Evaluates every indexed condition with one binary search per feature.
pub fn encode_features(instance: &[f64], index: &ConditionIndex) -> Result<TruthAssignment> {
    if instance.len() != index.feature_count() {
        return Err(Error::FeatureCount {
            expected: index.feature_count(),
            got: instance.len(),
        });
    }
    let mut bits = vec![false; index.len()];
    for (feature, &value) in instance.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { feature });
        }
        let range = index.feature_range(feature);
        let thresholds = &index.conditions()[range.clone()];
        // first threshold >= value; it and everything above hold under `<=`
        let rank = thresholds.partition_point(|c| c.threshold < value);
        bits[range.start + rank..range.end].fill(true);
    }
    Ok(TruthAssignment(bits))
}

/// Binary-search condition checks for encoding: `F * log2(U / F)`, never below `F`.
pub fn estimate_condition_checks(feature_count: usize, unique_condition_count: usize) -> f64 {
    let f = feature_count as f64;
    if feature_count == 0 {
        return 0.0;
    }
    if unique_condition_count < feature_count {
        return f;
    }
    (f * (unique_condition_count as f64 / f).log2()).max(f)
}
