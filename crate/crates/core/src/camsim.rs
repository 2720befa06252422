//! Behavioural TCAM model. Blocks hold ternary rows packed into `u64` words;
//! a search returns one match line per row, and retrieval combines the match
//! lines of a layout into the set of matched paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{aggregate_leaves, Prediction};
use crate::error::{Error, Result};
use crate::mapping::{Layout, RetrievalMode};
use crate::pathspace::{estimate_condition_checks, ConditionIndex, PathId, PathSet, TruthAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ternary {
    Zero,
    One,
    X,
}

/// An `S x width` ternary array. Unused rows never match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernaryBlock {
    rows: usize,
    width: usize,
    words: usize,
    care: Vec<u64>,
    value: Vec<u64>,
    valid: Vec<bool>,
}

impl TernaryBlock {
    pub fn new(rows: usize, width: usize) -> Self {
        let words = width.div_ceil(64);
        Self {
            rows,
            width,
            words,
            care: vec![0; rows * words],
            value: vec![0; rows * words],
            valid: vec![false; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Writes `row` with the given `(column, bit)` cells; other columns become X.
    pub fn set_row(&mut self, row: usize, cells: impl IntoIterator<Item = (usize, bool)>) {
        let base = row * self.words;
        self.care[base..base + self.words].fill(0);
        self.value[base..base + self.words].fill(0);
        for (col, bit) in cells {
            assert!(col < self.width, "column {col} outside block of width {}", self.width);
            let (w, m) = (base + col / 64, 1u64 << (col % 64));
            self.care[w] |= m;
            if bit {
                self.value[w] |= m;
            }
        }
        self.valid[row] = true;
    }

    pub fn is_valid(&self, row: usize) -> bool {
        self.valid[row]
    }

    pub fn cell(&self, row: usize, col: usize) -> Ternary {
        let (w, m) = (row * self.words + col / 64, 1u64 << (col % 64));
        match (self.care[w] & m != 0, self.value[w] & m != 0) {
            (false, _) => Ternary::X,
            (true, false) => Ternary::Zero,
            (true, true) => Ternary::One,
        }
    }

    fn row_matches(&self, r: usize, query: &[u64]) -> bool {
        let base = r * self.words;
        self.valid[r] && (0..self.words).all(|w| (query[w] ^ self.value[base + w]) & self.care[base + w] == 0)
    }

    fn match_packed(&self, query: &[u64]) -> Vec<bool> {
        (0..self.rows).map(|r| self.row_matches(r, query)).collect()
    }
}

fn pack(bits: &[bool]) -> Vec<u64> {
    let mut out = vec![0u64; bits.len().div_ceil(64)];
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        out[i / 64] |= 1 << (i % 64);
    }
    out
}

/// Match lines of `block` for a query of exactly `block.width()` bits.
pub fn match_block(block: &TernaryBlock, query: &[bool]) -> Result<Vec<bool>> {
    if query.len() != block.width {
        return Err(Error::WidthMismatch {
            expected: block.width,
            got: query.len(),
        });
    }
    Ok(block.match_packed(&pack(query)))
}

/// Search vectors for one instance: one per layout unit, in unit column order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPlan {
    pub retrieval: RetrievalMode,
    pub unit_queries: Vec<Vec<bool>>,
}

impl QueryPlan {
    /// The bits a given strip of a given unit is searched with.
    pub fn strip_query<'a>(&'a self, layout: &Layout, unit: usize, strip: usize) -> &'a [bool] {
        &self.unit_queries[unit][layout.units[unit].strips[strip].columns.clone()]
    }
}

/// Projects a truth assignment onto the column order of every unit.
pub fn pack_queries(layout: &Layout, truth: &TruthAssignment) -> Result<QueryPlan> {
    let unit_queries = layout
        .units
        .iter()
        .map(|unit| {
            unit.columns
                .iter()
                .map(|&c| {
                    if c < truth.len() {
                        Ok(truth.get(c))
                    } else {
                        Err(Error::MissingCondition {
                            missing: c,
                            got: truth.len(),
                        })
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(QueryPlan {
        retrieval: layout.retrieval,
        unit_queries,
    })
}

/// Match lines of every present block, in layout order (unit, strip, row block).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMasks(pub Vec<Vec<bool>>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Matched path ids, ascending.
    pub matched: Vec<PathId>,
}

impl MatchResult {
    pub fn per_tree_counts(&self, paths: &PathSet) -> Vec<usize> {
        let mut counts = vec![0; paths.tree_count()];
        for &p in &self.matched {
            counts[paths.path(p).tree] += 1;
        }
        counts
    }
}

/// Combines per-block match lines into matched paths. A row matches when every
/// strip that stores it reports a match; deleted blocks are all-X and report a
/// match on every row. Rows stored in no strip have no cells and always match.
pub fn retrieve(layout: &Layout, masks: &BlockMasks) -> Result<MatchResult> {
    let s = layout.tcam_size;
    let mut next = masks.0.iter();
    let mut matched = Vec::new();
    for (u, unit) in layout.units.iter().enumerate() {
        let mut ok = vec![true; unit.rows.len()];
        for (si, strip) in unit.strips.iter().enumerate() {
            for (b, &present) in strip.blocks.iter().enumerate() {
                if !present {
                    continue;
                }
                let mask = next
                    .next()
                    .ok_or_else(|| Error::MaskShape(format!("no mask for block ({u}, {si}, {b})")))?;
                if mask.len() != s {
                    return Err(Error::MaskShape(format!(
                        "block ({u}, {si}, {b}) has {} match lines, expected {s}",
                        mask.len()
                    )));
                }
                let lo = (b * s).min(strip.rows.len());
                let hi = ((b + 1) * s).min(strip.rows.len());
                for (i, &r) in strip.rows[lo..hi].iter().enumerate() {
                    ok[r] &= mask[i];
                }
            }
        }
        matched.extend(unit.rows.iter().zip(&ok).filter(|(_, &m)| m).map(|(&p, _)| p));
    }
    if next.next().is_some() {
        return Err(Error::MaskShape("more masks than present blocks".into()));
    }
    matched.sort_unstable();
    Ok(MatchResult { matched })
}

/// A layout materialised as ternary blocks, ready to search.
#[derive(Debug, Clone)]
pub struct CamSimulator<'a> {
    layout: &'a Layout,
    paths: &'a PathSet,
    /// `(unit, strip, block)` per present block, in layout order.
    blocks: Vec<(usize, usize, TernaryBlock)>,
}

impl<'a> CamSimulator<'a> {
    pub fn new(layout: &'a Layout, paths: &'a PathSet) -> Result<Self> {
        layout.validate(paths)?;
        let s = layout.tcam_size;
        let mut blocks = Vec::with_capacity(layout.total_tcams());
        for (u, unit) in layout.units.iter().enumerate() {
            for (si, strip) in unit.strips.iter().enumerate() {
                for (b, &present) in strip.blocks.iter().enumerate() {
                    if !present {
                        continue;
                    }
                    let mut block = TernaryBlock::new(s, strip.width());
                    let lo = (b * s).min(strip.rows.len());
                    let hi = ((b + 1) * s).min(strip.rows.len());
                    for (i, &r) in strip.rows[lo..hi].iter().enumerate() {
                        let cells = unit.cells[r]
                            .iter()
                            .filter(|(c, _)| strip.columns.contains(c))
                            .map(|&(c, bit)| (c - strip.columns.start, bit));
                        block.set_row(i, cells);
                    }
                    blocks.push((u, si, block));
                }
            }
        }
        Ok(Self { layout, paths, blocks })
    }

    pub fn layout(&self) -> &Layout {
        self.layout
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &TernaryBlock> {
        self.blocks.iter().map(|(_, _, b)| b)
    }

    pub fn search(&self, plan: &QueryPlan) -> Result<BlockMasks> {
        if plan.unit_queries.len() != self.layout.units.len() {
            return Err(Error::MaskShape(format!(
                "query plan has {} units, layout has {}",
                plan.unit_queries.len(),
                self.layout.units.len()
            )));
        }
        let run =
            |(u, si, block): &(usize, usize, TernaryBlock)| match_block(block, plan.strip_query(self.layout, *u, *si));
        let masks = if self.blocks.len() >= 256 {
            self.blocks.par_iter().map(run).collect::<Result<_>>()?
        } else {
            self.blocks.iter().map(run).collect::<Result<_>>()?
        };
        Ok(BlockMasks(masks))
    }

    /// Same result as `retrieve(search(pack_queries(..)))`, without
    /// materialising per-block match lines: each strip query is packed once
    /// and block rows are folded straight into the unit's row table.
    pub fn match_instance(&self, instance: &[f64]) -> Result<MatchResult> {
        let truth = self.paths.encode(instance)?;
        let s = self.layout.tcam_size;
        let mut blocks = self.blocks.iter().map(|(_, _, b)| b);
        let mut matched = Vec::new();
        let mut query = Vec::new();
        for unit in &self.layout.units {
            let mut ok = vec![true; unit.rows.len()];
            for strip in &unit.strips {
                query.clear();
                query.resize(strip.width().div_ceil(64), 0u64);
                for (i, pos) in strip.columns.clone().enumerate() {
                    if truth.get(unit.columns[pos]) {
                        query[i / 64] |= 1 << (i % 64);
                    }
                }
                for (b, &present) in strip.blocks.iter().enumerate() {
                    if !present {
                        continue;
                    }
                    let block = blocks.next().expect("one block per present entry");
                    let lo = (b * s).min(strip.rows.len());
                    let hi = ((b + 1) * s).min(strip.rows.len());
                    for (i, &r) in strip.rows[lo..hi].iter().enumerate() {
                        if ok[r] && !block.row_matches(i, &query) {
                            ok[r] = false;
                        }
                    }
                }
            }
            matched.extend(unit.rows.iter().zip(&ok).filter(|(_, &m)| m).map(|(&p, _)| p));
        }
        matched.sort_unstable();
        Ok(MatchResult { matched })
    }

    /// Prediction through the CAM: every tree must contribute exactly one path.
    pub fn predict(&self, instance: &[f64]) -> Result<Prediction> {
        let result = self.match_instance(instance)?;
        let counts = result.per_tree_counts(self.paths);
        if let Some((tree, &n)) = counts.iter().enumerate().find(|(_, &n)| n != 1) {
            return Err(Error::Invariant(format!("tree {tree} matched {n} paths, expected 1")));
        }
        let meta = self.paths.meta();
        let leaves = result.matched.iter().map(|&p| {
            let path = self.paths.path(p);
            (meta.tree_groups[path.tree], path.leaf)
        });
        Ok(aggregate_leaves(meta.aggregation, meta.class_count, leaves))
    }
}

/// One-shot convenience around [`CamSimulator::predict`].
pub fn cam_predict(layout: &Layout, paths: &PathSet, instance: &[f64]) -> Result<Prediction> {
    CamSimulator::new(layout, paths)?.predict(instance)
}

/// Random instances that exercise every condition: each value is either an
/// indexed threshold itself or a uniform draw around the feature's threshold range.
pub fn random_instances(index: &ConditionIndex, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..index.feature_count())
                .map(|f| {
                    let conds = &index.conditions()[index.feature_range(f)];
                    match (conds.first(), conds.last()) {
                        (Some(lo), Some(hi)) => {
                            if rng.random_bool(0.5) {
                                conds[rng.random_range(0..conds.len())].threshold
                            } else {
                                let pad = (hi.threshold - lo.threshold).abs().max(1.0) * 0.1;
                                rng.random_range(lo.threshold - pad..=hi.threshold + pad)
                            }
                        }
                        _ => rng.random_range(-1.0..1.0),
                    }
                })
                .collect()
        })
        .collect()
}

/// Per-query cost of searching a layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub tcam_count: usize,
    /// Query bits driven into all present blocks.
    pub query_bits_total: usize,
    /// Distinct query bits the encoder must produce.
    pub shared_query_bits: usize,
    /// Estimated comparisons to encode features into condition bits.
    pub condition_checks: f64,
    /// Block outputs combined by strip intersection; 0 for other retrieval modes.
    pub retrieval_ops: usize,
}

pub fn cost_report(layout: &Layout, paths: &PathSet) -> CostReport {
    let query_bits_total = layout
        .units
        .iter()
        .flat_map(|u| &u.strips)
        .map(|s| s.width() * s.present_blocks())
        .sum();
    let shared_query_bits = match layout.retrieval {
        RetrievalMode::PerUnitTable => layout.units.iter().map(|u| u.columns.len()).sum(),
        RetrievalMode::FixedRow | RetrievalMode::StripIntersection => paths.index().len(),
    };
    let tcam_count = layout.total_tcams();
    CostReport {
        tcam_count,
        query_bits_total,
        shared_query_bits,
        condition_checks: estimate_condition_checks(paths.meta().feature_count, paths.index().len()),
        retrieval_ops: if layout.retrieval == RetrievalMode::StripIntersection {
            tcam_count
        } else {
            0
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::fixtures::t0_ensemble;
    use crate::mapping::{map, Strategy};
    use crate::pathspace::extract_paths;
    use crate::pathspace::fixtures::{t1, t1_twice};
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};

    #[test]
    fn ternary_match_semantics() {
        let mut b = TernaryBlock::new(4, 3);
        b.set_row(0, [(0, true), (2, false)]);
        b.set_row(1, []);
        b.set_row(2, [(1, true)]);
        assert_eq!(b.cell(0, 1), Ternary::X);
        assert_eq!(b.cell(0, 2), Ternary::Zero);
        assert_eq!(
            match_block(&b, &[true, false, false]).unwrap(),
            vec![true, true, false, false]
        );
        assert_eq!(
            match_block(&b, &[false, true, true]).unwrap(),
            vec![false, true, true, false]
        );
        assert!(matches!(
            match_block(&b, &[true]),
            Err(Error::WidthMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn wide_rows_span_words() {
        let mut b = TernaryBlock::new(1, 130);
        b.set_row(0, [(0, true), (64, false), (129, true)]);
        let mut q = vec![false; 130];
        q[0] = true;
        q[129] = true;
        assert_eq!(match_block(&b, &q).unwrap(), vec![true]);
        q[64] = true;
        assert_eq!(match_block(&b, &q).unwrap(), vec![false]);
    }

    #[test]
    fn t0_cam_matches_traversal() {
        let e = t0_ensemble();
        let paths = extract_paths(&e);
        for strategy in Strategy::ALL {
            let layout = map(&paths, strategy, 2).unwrap();
            let sim = CamSimulator::new(&layout, &paths).unwrap();
            for x in [[0.3, 0.0], [0.7, 1.0], [0.7, 3.0], [0.5, 2.0]] {
                assert_eq!(sim.predict(&x).unwrap(), e.predict(&x).unwrap(), "{strategy} {x:?}");
            }
        }
    }

    #[test]
    fn t1_one_match_per_tree() {
        for e in [t1(), t1_twice()] {
            let paths = extract_paths(&e);
            for strategy in Strategy::ALL {
                for s in [1, 2, 4] {
                    if strategy == Strategy::Spc && s < 3 {
                        continue;
                    }
                    let layout = map(&paths, strategy, s).unwrap();
                    let sim = CamSimulator::new(&layout, &paths).unwrap();
                    for bits in 0..8u32 {
                        let x: Vec<f64> = (0..3).map(|f| if bits >> f & 1 == 1 { 0.0 } else { 2.0 }).collect();
                        let r = sim.match_instance(&x).unwrap();
                        assert!(r.per_tree_counts(&paths).iter().all(|&n| n == 1));
                        assert_eq!(sim.predict(&x).unwrap(), e.predict(&x).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn odr_deleted_blocks_are_sound() {
        let paths = extract_paths(&t1());
        let layout = map(&paths, Strategy::Odr, 2).unwrap();
        assert!(!layout.deleted_blocks().is_empty());
        let mut full = layout.clone();
        for unit in &mut full.units {
            for strip in &mut unit.strips {
                strip.blocks.fill(true);
            }
        }
        let sparse = CamSimulator::new(&layout, &paths).unwrap();
        let dense = CamSimulator::new(&full, &paths).unwrap();
        assert!(dense.block_count() > sparse.block_count());
        for bits in 0..8u32 {
            let x: Vec<f64> = (0..3).map(|f| if bits >> f & 1 == 1 { 0.0 } else { 2.0 }).collect();
            assert_eq!(sparse.match_instance(&x).unwrap(), dense.match_instance(&x).unwrap());
        }
    }

    #[test]
    fn mask_shape_errors() {
        let paths = extract_paths(&t1());
        let layout = map(&paths, Strategy::Unified, 2).unwrap();
        assert!(matches!(
            retrieve(&layout, &BlockMasks(vec![])),
            Err(Error::MaskShape(_))
        ));
        let n = layout.total_tcams();
        assert!(matches!(
            retrieve(&layout, &BlockMasks(vec![vec![true; 2]; n + 1])),
            Err(Error::MaskShape(_))
        ));
        assert!(matches!(
            retrieve(&layout, &BlockMasks(vec![vec![true; 3]; n])),
            Err(Error::MaskShape(_))
        ));
        let short = TruthAssignment::new(vec![true]);
        assert!(matches!(
            pack_queries(&layout, &short),
            Err(Error::MissingCondition { .. })
        ));
    }

    #[test]
    fn t1_costs() {
        let paths = extract_paths(&t1());
        let unified = cost_report(&map(&paths, Strategy::Unified, 2).unwrap(), &paths);
        assert_eq!(unified.tcam_count, 4);
        assert_eq!(unified.query_bits_total, 2 * 2 + 2);
        assert_eq!(unified.shared_query_bits, 3);
        assert_eq!(unified.retrieval_ops, 0);
        let fr = cost_report(&map(&paths, Strategy::Fr, 2).unwrap(), &paths);
        assert_eq!(fr.retrieval_ops, fr.tcam_count);
        let odr = cost_report(&map(&paths, Strategy::Odr, 2).unwrap(), &paths);
        assert_eq!(odr.tcam_count, 3);
    }

    #[test]
    fn random_instances_hit_thresholds() {
        let paths = extract_paths(&t1());
        let xs = random_instances(paths.index(), 200, 3);
        assert_eq!(xs.len(), 200);
        assert!(xs.iter().any(|x| x[0] == 1.0));
        assert!(xs.iter().any(|x| x[0] < 1.0) && xs.iter().any(|x| x[0] > 1.0));
        assert_eq!(xs, random_instances(paths.index(), 200, 3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_forests_cam_exact(seed in 0u64..1000, s in 1usize..9) {
            let data = crate::datasets::blobs(60, 4, 3, seed);
            let e = crate::ensemble::train_forest(&data, &crate::ensemble::TrainParams::new(3, seed)).unwrap();
            let paths = extract_paths(&e);
            for strategy in Strategy::ALL {
                if strategy == Strategy::Spc && paths.stats().max_path_length > s {
                    continue;
                }
                let layout = map(&paths, strategy, s).unwrap();
                let sim = CamSimulator::new(&layout, &paths).unwrap();
                for x in data.rows().take(20) {
                    prop_assert_eq!(sim.predict(x).unwrap(), e.predict(x).unwrap());
                    let plan = pack_queries(&layout, &paths.encode(x).unwrap()).unwrap();
                    let explicit = retrieve(&layout, &sim.search(&plan).unwrap()).unwrap();
                    prop_assert_eq!(sim.match_instance(x).unwrap(), explicit);
                }
            }
        }
    }
}
