//! CAM placement strategies. Every layout stores paths as rows and conditions
//! as columns of `S x S` ternary blocks; strategies differ in how rows and
//! columns are grouped, ordered and trimmed.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pathspace::{ConditionId, Path, PathId, PathSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Whole ensemble in one matrix.
    Unified,
    /// One matrix per tree.
    Independent,
    /// Frequency-sorted columns cut into strips; all-X row segments removed per strip.
    Fr,
    /// Frequency-sorted columns, rare-condition rows first; all-X blocks removed.
    Odr,
    /// Greedy similarity clustering, one block per cluster.
    Spc,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Unified,
        Strategy::Independent,
        Strategy::Fr,
        Strategy::Odr,
        Strategy::Spc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Unified => "unified",
            Strategy::Independent => "independent",
            Strategy::Fr => "fr",
            Strategy::Odr => "odr",
            Strategy::Spc => "spc",
        }
    }

    pub fn retrieval(self) -> RetrievalMode {
        match self {
            Strategy::Unified | Strategy::Odr => RetrievalMode::FixedRow,
            Strategy::Independent | Strategy::Spc => RetrievalMode::PerUnitTable,
            Strategy::Fr => RetrievalMode::StripIntersection,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::format("strategy", format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// A path owns one row across all column strips of its unit.
    FixedRow,
    /// Like `FixedRow`, but each unit has its own query and row table.
    PerUnitTable,
    /// Each strip stores only the rows with a non-X cell in it; a path matches
    /// when it matches in every strip that stores it.
    StripIntersection,
}

/// A group of at most `S` adjacent columns of a unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strip {
    /// Column positions within the unit.
    pub columns: Range<usize>,
    /// Unit row positions stored in this strip, top to bottom.
    pub rows: Vec<usize>,
    /// One entry per `S`-row chunk of `rows`: `false` marks an all-X block that was deleted.
    pub blocks: Vec<bool>,
}

impl Strip {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn present_blocks(&self) -> usize {
        self.blocks.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutUnit {
    pub columns: Vec<ConditionId>,
    pub rows: Vec<PathId>,
    /// Per row, `(column position, bit)` sorted by column; absent columns are X.
    pub cells: Vec<Vec<(usize, bool)>>,
    pub strips: Vec<Strip>,
}

impl LayoutUnit {
    pub fn block_count(&self) -> usize {
        self.strips.iter().map(Strip::present_blocks).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub strategy: Strategy,
    pub tcam_size: usize,
    pub retrieval: RetrievalMode,
    pub units: Vec<LayoutUnit>,
}

impl Layout {
    pub fn total_tcams(&self) -> usize {
        self.units.iter().map(LayoutUnit::block_count).sum()
    }

    /// `(unit, strip, row block)` of every deleted block.
    pub fn deleted_blocks(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (u, unit) in self.units.iter().enumerate() {
            for (s, strip) in unit.strips.iter().enumerate() {
                for (b, &present) in strip.blocks.iter().enumerate() {
                    if !present {
                        out.push((u, s, b));
                    }
                }
            }
        }
        out
    }

    /// Checks that the layout stores exactly the cells of `paths`, that every
    /// block fits `S x S`, and that removed rows and blocks really were all-X.
    pub fn validate(&self, paths: &PathSet) -> Result<()> {
        let s = self.tcam_size;
        if s == 0 {
            return Err(Error::ZeroTcamSize);
        }
        let bad = |msg: String| Err(Error::Invariant(msg));
        let mut seen = vec![false; paths.len()];
        for (u, unit) in self.units.iter().enumerate() {
            if unit.cells.len() != unit.rows.len() {
                return bad(format!("unit {u}: cell rows disagree with row table"));
            }
            for (r, &pid) in unit.rows.iter().enumerate() {
                if pid >= paths.len() || std::mem::replace(&mut seen[pid], true) {
                    return bad(format!("unit {u}: path {pid} missing or placed twice"));
                }
                let mut expect: Vec<(usize, bool)> = Vec::new();
                for &(c, b) in &paths.path(pid).cells {
                    match unit.columns.iter().position(|&col| col == c) {
                        Some(pos) => expect.push((pos, b)),
                        None => return bad(format!("unit {u}: path {pid} uses condition {c} outside the unit")),
                    }
                }
                expect.sort_unstable();
                if expect != unit.cells[r] {
                    return bad(format!("unit {u}: row {r} does not reproduce path {pid}"));
                }
            }
            let mut covered = 0;
            for (si, strip) in unit.strips.iter().enumerate() {
                if strip.columns.start != covered || strip.width() > s {
                    return bad(format!("unit {u}: strip {si} columns {:?} malformed", strip.columns));
                }
                covered = strip.columns.end;
                if strip.blocks.len() != strip.rows.len().div_ceil(s).max(usize::from(strip.width() == 0)) {
                    return bad(format!("unit {u}: strip {si} block count disagrees with its rows"));
                }
                let in_strip = |r: usize| unit.cells[r].iter().any(|(c, _)| strip.columns.contains(c));
                if self.retrieval == RetrievalMode::StripIntersection {
                    let kept: BTreeSet<usize> = strip.rows.iter().copied().collect();
                    for r in 0..unit.rows.len() {
                        if in_strip(r) != kept.contains(&r) {
                            return bad(format!("unit {u}: strip {si} row {r} kept/eliminated incorrectly"));
                        }
                    }
                } else if strip.rows != (0..unit.rows.len()).collect::<Vec<_>>() {
                    return bad(format!("unit {u}: strip {si} must hold every row"));
                }
                for (b, &present) in strip.blocks.iter().enumerate() {
                    let chunk = &strip.rows[(b * s).min(strip.rows.len())..((b + 1) * s).min(strip.rows.len())];
                    if !present && chunk.iter().any(|&r| in_strip(r)) {
                        return bad(format!("unit {u}: deleted block ({si}, {b}) holds cells"));
                    }
                }
            }
            if covered != unit.columns.len() {
                return bad(format!(
                    "unit {u}: strips cover {covered} of {} columns",
                    unit.columns.len()
                ));
            }
        }
        if let Some(p) = seen.iter().position(|&x| !x) {
            return bad(format!("path {p} is not placed"));
        }
        Ok(())
    }
}

pub fn tcam_count(layout: &Layout) -> usize {
    layout.total_tcams()
}

pub fn map(paths: &PathSet, strategy: Strategy, tcam_size: usize) -> Result<Layout> {
    match strategy {
        Strategy::Unified => map_naive_unified(paths, tcam_size),
        Strategy::Independent => map_naive_independent(paths, tcam_size),
        Strategy::Fr => map_fr(paths, tcam_size),
        Strategy::Odr => map_odr(paths, tcam_size),
        Strategy::Spc => map_spc(paths, tcam_size),
    }
}

fn check_size(tcam_size: usize) -> Result<()> {
    if tcam_size == 0 {
        Err(Error::ZeroTcamSize)
    } else {
        Ok(())
    }
}

/// Sparse cells of `rows` re-expressed in the unit's column positions.
fn unit_cells(paths: &PathSet, columns: &[ConditionId], rows: &[PathId]) -> Vec<Vec<(usize, bool)>> {
    let mut position = vec![usize::MAX; paths.index().len()];
    for (pos, &c) in columns.iter().enumerate() {
        position[c] = pos;
    }
    rows.iter()
        .map(|&pid| {
            let mut cells: Vec<(usize, bool)> = paths
                .path(pid)
                .cells
                .iter()
                .map(|&(c, b)| {
                    debug_assert_ne!(position[c], usize::MAX);
                    (position[c], b)
                })
                .collect();
            cells.sort_unstable();
            cells
        })
        .collect()
}

/// Columns cut every `S`, rows cut every `S`; optionally drop all-X blocks.
fn grid_unit(paths: &PathSet, columns: Vec<ConditionId>, rows: Vec<PathId>, s: usize, drop_empty: bool) -> LayoutUnit {
    let cells = unit_cells(paths, &columns, &rows);
    let all_rows: Vec<usize> = (0..rows.len()).collect();
    let row_blocks = rows.len().div_ceil(s);
    let strips = (0..columns.len().div_ceil(s))
        .map(|k| {
            let cols = k * s..((k + 1) * s).min(columns.len());
            let blocks = (0..row_blocks)
                .map(|b| {
                    !drop_empty
                        || (b * s..((b + 1) * s).min(rows.len()))
                            .any(|r| cells[r].iter().any(|(c, _)| cols.contains(c)))
                })
                .collect();
            Strip {
                columns: cols,
                rows: all_rows.clone(),
                blocks,
            }
        })
        .collect();
    LayoutUnit {
        columns,
        rows,
        cells,
        strips,
    }
}

/// Single unit over all paths in id order and all conditions in index order:
/// `ceil(U/S) * ceil(P/S)` blocks.
pub fn map_naive_unified(paths: &PathSet, tcam_size: usize) -> Result<Layout> {
    check_size(tcam_size)?;
    let unit = grid_unit(
        paths,
        (0..paths.index().len()).collect(),
        (0..paths.len()).collect(),
        tcam_size,
        false,
    );
    Ok(Layout {
        strategy: Strategy::Unified,
        tcam_size,
        retrieval: RetrievalMode::FixedRow,
        units: vec![unit],
    })
}

/// One unit per tree over that tree's own conditions.
pub fn map_naive_independent(paths: &PathSet, tcam_size: usize) -> Result<Layout> {
    check_size(tcam_size)?;
    let units = (0..paths.tree_count())
        .map(|t| {
            let tree_paths = paths.tree_paths(t);
            let columns: Vec<ConditionId> = tree_paths
                .iter()
                .flat_map(|p| p.cells.iter().map(|c| c.0))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            grid_unit(paths, columns, paths.tree_range(t).collect(), tcam_size, false)
        })
        .collect();
    Ok(Layout {
        strategy: Strategy::Independent,
        tcam_size,
        retrieval: RetrievalMode::PerUnitTable,
        units,
    })
}

/// Occurrence-based double reordering.
///
/// Conditions are visited from rarest to most frequent; each visit appends,
/// in id order, every unplaced path containing the condition. A path is thus
/// placed at its rarest condition, which this computes directly as a sort key.
/// Conditionless paths go last.
pub fn odr_order(paths: &PathSet) -> (Vec<ConditionId>, Vec<PathId>) {
    let columns = paths.index().by_descending_frequency();
    let mut rank = vec![0usize; columns.len()];
    for (pos, &c) in columns.iter().enumerate() {
        rank[c] = pos;
    }
    let mut rows: Vec<(usize, PathId)> = paths
        .paths()
        .iter()
        .map(|p| {
            // larger rank = rarer = earlier in the row order
            let rarest = p.cells.iter().map(|&(c, _)| rank[c] + 1).max().unwrap_or(0);
            (usize::MAX - rarest, p.id)
        })
        .collect();
    rows.sort_unstable();
    (columns, rows.into_iter().map(|r| r.1).collect())
}

pub fn map_odr(paths: &PathSet, tcam_size: usize) -> Result<Layout> {
    check_size(tcam_size)?;
    let (columns, rows) = odr_order(paths);
    Ok(Layout {
        strategy: Strategy::Odr,
        tcam_size,
        retrieval: RetrievalMode::FixedRow,
        units: vec![grid_unit(paths, columns, rows, tcam_size, true)],
    })
}

/// Frequency-sorted columns in strips of `S`; a strip keeps only rows with a
/// non-X cell in it (stable order) and needs `ceil(kept / S)` blocks.
pub fn map_fr(paths: &PathSet, tcam_size: usize) -> Result<Layout> {
    check_size(tcam_size)?;
    let s = tcam_size;
    let columns = paths.index().by_descending_frequency();
    let rows: Vec<PathId> = (0..paths.len()).collect();
    let cells = unit_cells(paths, &columns, &rows);
    let strips = (0..columns.len().div_ceil(s))
        .map(|k| {
            let cols = k * s..((k + 1) * s).min(columns.len());
            let kept: Vec<usize> = (0..rows.len())
                .filter(|&r| cells[r].iter().any(|(c, _)| cols.contains(c)))
                .collect();
            let blocks = vec![true; kept.len().div_ceil(s)];
            Strip {
                columns: cols,
                rows: kept,
                blocks,
            }
        })
        .collect();
    Ok(Layout {
        strategy: Strategy::Fr,
        tcam_size,
        retrieval: RetrievalMode::StripIntersection,
        units: vec![LayoutUnit {
            columns,
            rows,
            cells,
            strips,
        }],
    })
}

/// Paths that share one block: at most `S` members over at most `S` conditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// In insertion order.
    pub members: Vec<PathId>,
    /// Union of member conditions, ascending.
    pub conditions: Vec<ConditionId>,
}

/// Similarity-based path clustering.
///
/// The next member is the pool path that still fits and shares the most
/// conditions with the cluster, then the one giving the smallest union, then
/// the lowest id. An empty cluster is therefore seeded with the shortest path.
///
/// Paths sharing at least one condition sit in min-heaps by (shared count,
/// conditions the path would add), so the best fitting one is the smallest id
/// in the first non-empty fitting heap. Heap entries are invalidated lazily.
/// When none fits, the shortest unshared pool path is the answer if anything is.
pub fn spc_clusters(paths: &PathSet, tcam_size: usize) -> Result<Vec<Cluster>> {
    check_size(tcam_size)?;
    let s = tcam_size;
    if let Some(p) = paths.paths().iter().find(|p| p.len() > s) {
        return Err(Error::TcamTooSmall {
            path: p.id,
            length: p.len(),
            tcam_size: s,
        });
    }
    let n = paths.len();
    let mut inverted: Vec<Vec<PathId>> = vec![Vec::new(); paths.index().len()];
    for p in paths.paths() {
        for &(c, _) in &p.cells {
            inverted[c].push(p.id);
        }
    }
    let len = |q: PathId| paths.path(q).len();
    let mut pool: BTreeSet<(usize, PathId)> = paths.paths().iter().map(|p| (p.len(), p.id)).collect();
    let mut assigned = vec![false; n];
    let mut shared = vec![0usize; n];
    let mut in_union = vec![false; paths.index().len()];
    let max_len = paths.paths().iter().map(Path::len).max().unwrap_or(0);
    // heaps[k][e]: paths sharing k >= 1 conditions that would add e more
    let mut heaps: Vec<Vec<BinaryHeap<Reverse<PathId>>>> = vec![vec![BinaryHeap::new(); max_len + 1]; max_len + 1];
    let mut clusters = Vec::new();

    while !pool.is_empty() {
        let mut members: Vec<PathId> = Vec::new();
        let mut union: Vec<ConditionId> = Vec::new();
        while members.len() < s {
            let room = s - union.len();
            let mut shared_pick = None;
            'search: for k in (1..=max_len).rev() {
                for heap in heaps[k].iter_mut().take(room + 1) {
                    while let Some(&Reverse(q)) = heap.peek() {
                        if !assigned[q] && shared[q] == k {
                            shared_pick = Some(q);
                            break 'search;
                        }
                        heap.pop();
                    }
                }
            }
            let pick = shared_pick.or_else(|| pool.first().filter(|&&(l, _)| l <= room).map(|&(_, q)| q));
            let Some(p) = pick else { break };
            assigned[p] = true;
            pool.remove(&(len(p), p));
            members.push(p);
            for &(c, _) in &paths.path(p).cells {
                if in_union[c] {
                    continue;
                }
                in_union[c] = true;
                union.push(c);
                inverted[c].retain(|&q| !assigned[q]);
                for &q in &inverted[c] {
                    shared[q] += 1;
                    let k = shared[q];
                    heaps[k][len(q) - k].push(Reverse(q));
                }
            }
        }
        for &c in &union {
            in_union[c] = false;
            for &q in &inverted[c] {
                shared[q] = 0;
            }
        }
        heaps.iter_mut().flatten().for_each(BinaryHeap::clear);
        if members.is_empty() {
            return Err(Error::Invariant("SPC produced an empty cluster".into()));
        }
        union.sort_unstable();
        clusters.push(Cluster {
            members,
            conditions: union,
        });
    }
    Ok(clusters)
}

pub fn map_spc(paths: &PathSet, tcam_size: usize) -> Result<Layout> {
    let clusters = spc_clusters(paths, tcam_size)?;
    let units = clusters
        .into_iter()
        .map(|cl| {
            let cells = unit_cells(paths, &cl.conditions, &cl.members);
            let width = cl.conditions.len();
            LayoutUnit {
                strips: vec![Strip {
                    columns: 0..width,
                    rows: (0..cl.members.len()).collect(),
                    blocks: vec![true],
                }],
                columns: cl.conditions,
                rows: cl.members,
                cells,
            }
        })
        .collect();
    Ok(Layout {
        strategy: Strategy::Spc,
        tcam_size,
        retrieval: RetrievalMode::PerUnitTable,
        units,
    })
}
