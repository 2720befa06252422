//! One `RunReport` row per (dataset, model, tolerance, strategy, S) cell.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camsim::CostReport;
use crate::error::{Error, Result};
use crate::mapping::Strategy;
use crate::pathspace::{layout_size, redundancy_from_counts, PathStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub model: String,
    pub num_trees: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub tcam_size: usize,
    /// Accuracy-loss tolerance as a fraction; empty for the unpruned model.
    pub tolerance: Option<f64>,
    /// Selected purity threshold when pruned.
    pub threshold: Option<f64>,
    pub path_count: usize,
    pub unique_condition_count: usize,
    pub avg_path_length: f64,
    pub redundancy: f64,
    /// Nominal unified size at one bit per cell, in units of 2^20 bytes.
    pub nominal_size_mb: f64,
    pub oob_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub tcam_count: Option<usize>,
    /// Naive unified count of the unpruned model at the same S, over `tcam_count`.
    pub factor_vs_unified: Option<f64>,
    /// Naive independent count of the unpruned model at the same S, over `tcam_count`.
    pub factor_vs_independent: Option<f64>,
    pub query_bits_total: Option<usize>,
    pub shared_query_bits: Option<usize>,
    pub condition_checks: Option<f64>,
    pub retrieval_ops: Option<usize>,
    /// Test instances whose CAM prediction differed from traversal, when checked.
    pub oracle_mismatches: Option<usize>,
    pub wall_ms: f64,
    pub error: Option<String>,
}

impl RunReport {
    /// A row with model-level fields filled from path statistics and everything else empty.
    pub fn new(dataset: &str, model: &str, strategy: Strategy, tcam_size: usize, stats: &PathStats) -> Self {
        let size = layout_size(stats.path_count, stats.unique_condition_count);
        Self {
            dataset: dataset.into(),
            model: model.into(),
            num_trees: 0,
            seed: 0,
            strategy,
            tcam_size,
            tolerance: None,
            threshold: None,
            path_count: stats.path_count,
            unique_condition_count: stats.unique_condition_count,
            avg_path_length: stats.avg_path_length,
            redundancy: redundancy_from_counts(stats.avg_path_length, stats.unique_condition_count),
            nominal_size_mb: size.nominal_mib(),
            oob_accuracy: None,
            test_accuracy: None,
            tcam_count: None,
            factor_vs_unified: None,
            factor_vs_independent: None,
            query_bits_total: None,
            shared_query_bits: None,
            condition_checks: None,
            retrieval_ops: None,
            oracle_mismatches: None,
            wall_ms: 0.0,
            error: None,
        }
    }

    /// Naive unified row computed from counts alone, as in a model-size table.
    pub fn from_counts(
        dataset: &str,
        path_count: usize,
        avg_path_length: f64,
        unique: usize,
        tcam_size: usize,
    ) -> Self {
        let stats = PathStats {
            path_count,
            unique_condition_count: unique,
            avg_path_length,
            max_path_length: 0,
        };
        let mut row = Self::new(dataset, "counts", Strategy::Unified, tcam_size, &stats);
        row.tcam_count = (tcam_size > 0).then(|| unique.div_ceil(tcam_size) * path_count.div_ceil(tcam_size));
        row.factor_vs_unified = row.tcam_count.map(|_| 1.0);
        row
    }

    pub fn set_costs(&mut self, cost: &CostReport) {
        self.tcam_count = Some(cost.tcam_count);
        self.query_bits_total = Some(cost.query_bits_total);
        self.shared_query_bits = Some(cost.shared_query_bits);
        self.condition_checks = Some(cost.condition_checks);
        self.retrieval_ops = Some(cost.retrieval_ops);
    }

    /// Fills both improvement factors from the baseline counts.
    pub fn set_baselines(&mut self, unified: Option<usize>, independent: Option<usize>) {
        let factor = |base: Option<usize>| match (base, self.tcam_count) {
            (Some(b), Some(c)) if c > 0 => Some(b as f64 / c as f64),
            _ => None,
        };
        self.factor_vs_unified = factor(unified);
        self.factor_vs_independent = factor(independent);
    }
}

pub fn write_report_csv(rows: &[RunReport], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<Vec<RunReport>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Writes `rows` as CSV or JSON, picked by the file extension (`.json` or anything else).
pub fn write_report(rows: &[RunReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::to_writer_pretty(&mut out, rows)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    } else {
        write_report_csv(rows, &mut out)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Pivot of block counts: one line per (dataset, model, tolerance, S), one column per strategy.
pub fn summarize(rows: &[RunReport]) -> String {
    let mut strategies: Vec<Strategy> = rows.iter().map(|r| r.strategy).collect();
    strategies.sort();
    strategies.dedup();
    let mut keys: Vec<(String, String, String, usize)> = Vec::new();
    for r in rows {
        let key = (
            r.dataset.clone(),
            r.model.clone(),
            tolerance_label(r.tolerance),
            r.tcam_size,
        );
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = format!("{:<18} {:<14} {:>6} {:>5}", "dataset", "model", "tol", "S");
    for s in &strategies {
        let _ = write!(out, " {:>12}", s.name());
    }
    out.push('\n');
    for (dataset, model, tol, size) in keys {
        let _ = write!(out, "{dataset:<18} {model:<14} {tol:>6} {size:>5}");
        for &s in &strategies {
            let cell = rows
                .iter()
                .find(|r| {
                    r.dataset == dataset
                        && r.model == model
                        && tolerance_label(r.tolerance) == tol
                        && r.tcam_size == size
                        && r.strategy == s
                })
                .map(|r| match (r.tcam_count, &r.error) {
                    (Some(c), _) => c.to_string(),
                    (None, Some(_)) => "error".into(),
                    (None, None) => "-".into(),
                })
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, " {cell:>12}");
        }
        out.push('\n');
    }
    out
}

fn tolerance_label(t: Option<f64>) -> String {
    t.map_or_else(|| "none".into(), |t| format!("{:.1}%", t * 100.0))
}
