//! Cross-product experiment runner driven by a TOML config.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::RunReport;
use crate::camsim::{cost_report, CamSimulator};
use crate::datasets::Profile;
use crate::ensemble::{oob_accuracy, train_forest, Dataset, Ensemble, TrainParams};
use crate::error::{Error, Result};
use crate::mapping::{map, Layout, Strategy};
use crate::pathspace::{extract_paths, PathSet};
use crate::pruning::purity_threshold_prune;

pub const DEFAULT_SPLIT_SEED: u64 = 42;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

/// A dataset entry: either a CSV path or a synthetic profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub profile: Option<Profile>,
    /// Instance count for profiles; defaults to the profile's desk size.
    #[serde(default)]
    pub size: Option<usize>,
}

impl DatasetSpec {
    /// Loads the dataset; relative CSV paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match (&self.path, self.profile) {
            (Some(p), None) => Dataset::from_csv_path(base.join(p)),
            (None, Some(profile)) => profile.generate(self.size.unwrap_or(profile.desk_size()), DEFAULT_SPLIT_SEED),
            _ => Err(Error::Config(format!(
                "dataset {:?} needs exactly one of `path` and `profile`",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub datasets: Vec<DatasetSpec>,
    pub strategies: Vec<Strategy>,
    pub tcam_sizes: Vec<usize>,
    #[serde(default = "default_trees")]
    pub num_trees: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Accuracy-loss tolerances as fractions; each adds a pruned model per forest.
    #[serde(default)]
    pub tolerances: Vec<f64>,
    /// Also report the unpruned forest.
    #[serde(default = "yes")]
    pub include_unpruned: bool,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    /// Replays the test split through every layout and counts disagreements.
    #[serde(default)]
    pub check_oracle: bool,
}

fn default_trees() -> Vec<usize> {
    vec![100]
}
fn default_seeds() -> Vec<u64> {
    vec![DEFAULT_SPLIT_SEED]
}
fn yes() -> bool {
    true
}
fn default_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}
fn default_split_seed() -> u64 {
    DEFAULT_SPLIT_SEED
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Err(Error::Config(format!("`{what}` must not be empty")));
        if self.datasets.is_empty() {
            return empty("datasets");
        }
        if self.strategies.is_empty() {
            return empty("strategies");
        }
        if self.tcam_sizes.is_empty() {
            return empty("tcam_sizes");
        }
        if self.num_trees.is_empty() {
            return empty("num_trees");
        }
        if self.seeds.is_empty() {
            return empty("seeds");
        }
        if !self.include_unpruned && self.tolerances.is_empty() {
            return Err(Error::Config(
                "no models: give tolerances or keep include_unpruned".into(),
            ));
        }
        if let Some(t) = self.tolerances.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::Config(format!("tolerance {t} outside [0, 1)")));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Rows the sweep will produce.
    pub fn cell_count(&self) -> usize {
        self.datasets.len()
            * self.num_trees.len()
            * self.seeds.len()
            * (self.tolerances.len() + usize::from(self.include_unpruned))
            * self.strategies.len()
            * self.tcam_sizes.len()
    }
}

struct ForestCell {
    dataset: usize,
    num_trees: usize,
    seed: u64,
}

/// Runs every cell. Rows come back in cross-product order (dataset, trees,
/// seed, tolerance, strategy, S) regardless of scheduling; a failing cell
/// keeps its row with `error` set.
pub fn run_sweep(config: &SweepConfig, base: &Path) -> Result<Vec<RunReport>> {
    config.validate()?;
    let splits: Vec<Result<(Dataset, Dataset)>> = config
        .datasets
        .iter()
        .map(|d| d.load(base)?.split(config.train_fraction, config.split_seed))
        .collect();
    let forests: Vec<ForestCell> = (0..config.datasets.len())
        .flat_map(|dataset| {
            config.num_trees.iter().flat_map(move |&num_trees| {
                config.seeds.iter().map(move |&seed| ForestCell {
                    dataset,
                    num_trees,
                    seed,
                })
            })
        })
        .collect();
    let rows = forests
        .par_iter()
        .map(|cell| forest_rows(config, cell, &splits[cell.dataset]))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(rows)
}

fn forest_rows(config: &SweepConfig, cell: &ForestCell, split: &Result<(Dataset, Dataset)>) -> Vec<RunReport> {
    let name = &config.datasets[cell.dataset].name;
    let model = format!("rf{}-s{}", cell.num_trees, cell.seed);
    let mut tolerances: Vec<Option<f64>> = Vec::new();
    if config.include_unpruned {
        tolerances.push(None);
    }
    tolerances.extend(config.tolerances.iter().map(|&t| Some(t)));

    let error_rows = |msg: String| -> Vec<RunReport> {
        let mut out = Vec::new();
        for &tol in &tolerances {
            for &strategy in &config.strategies {
                for &s in &config.tcam_sizes {
                    let mut row = RunReport::new(name, &model, strategy, s, &Default::default());
                    row.num_trees = cell.num_trees;
                    row.seed = cell.seed;
                    row.tolerance = tol;
                    row.error = Some(msg.clone());
                    out.push(row);
                }
            }
        }
        out
    };

    let (train, test) = match split {
        Ok(pair) => pair,
        Err(e) => return error_rows(e.to_string()),
    };
    let forest = match train_forest(train, &TrainParams::new(cell.num_trees, cell.seed)) {
        Ok(f) => f,
        Err(e) => return error_rows(e.to_string()),
    };
    log::info!("{name} {model}: trained {} nodes", forest.node_count());
    let base_paths = extract_paths(&forest);
    let baseline = |strategy: Strategy, s: usize| map(&base_paths, strategy, s).ok().map(|l| l.total_tcams());
    let baselines: Vec<(Option<usize>, Option<usize>)> = config
        .tcam_sizes
        .iter()
        .map(|&s| (baseline(Strategy::Unified, s), baseline(Strategy::Independent, s)))
        .collect();

    let mut rows = Vec::new();
    for &tol in &tolerances {
        let started = Instant::now();
        let model_result: Result<(Ensemble, Option<f64>, f64)> = match tol {
            None => oob_accuracy(&forest, train).map(|oob| (forest.clone(), None, oob)),
            Some(t) => purity_threshold_prune(&forest, train, t).map(|r| (r.pruned, Some(r.threshold), r.oob_after)),
        };
        let (ensemble, threshold, oob) = match model_result {
            Ok(m) => m,
            Err(e) => {
                let msg = e.to_string();
                for mut row in error_rows(msg) {
                    if row.tolerance == tol {
                        row.wall_ms = ms(started);
                        rows.push(row);
                    }
                }
                continue;
            }
        };
        let prep_ms = ms(started);
        let paths = if tol.is_none() {
            base_paths.clone()
        } else {
            extract_paths(&ensemble)
        };
        let test_accuracy = ensemble.accuracy(test).ok();
        for &strategy in &config.strategies {
            for (si, &s) in config.tcam_sizes.iter().enumerate() {
                let started = Instant::now();
                let mut row = RunReport::new(name, &model, strategy, s, &paths.stats());
                row.num_trees = cell.num_trees;
                row.seed = cell.seed;
                row.tolerance = tol;
                row.threshold = threshold;
                row.oob_accuracy = Some(oob);
                row.test_accuracy = test_accuracy;
                match map_cell(&paths, &ensemble, test, strategy, s, config.check_oracle) {
                    Ok((layout, mismatches)) => {
                        row.set_costs(&cost_report(&layout, &paths));
                        row.oracle_mismatches = mismatches;
                        let (u, i) = baselines[si];
                        row.set_baselines(u, i);
                    }
                    Err(e) => {
                        log::warn!("{name} {model} {strategy} S={s}: {e}");
                        row.error = Some(e.to_string());
                    }
                }
                row.wall_ms = prep_ms + ms(started);
                log::info!(
                    "{name} {model} tol={tol:?} {strategy} S={s}: {:?} blocks in {:.0} ms",
                    row.tcam_count,
                    row.wall_ms
                );
                rows.push(row);
            }
        }
    }
    rows
}

fn map_cell(
    paths: &PathSet,
    ensemble: &Ensemble,
    test: &Dataset,
    strategy: Strategy,
    s: usize,
    check_oracle: bool,
) -> Result<(Layout, Option<usize>)> {
    let layout = map(paths, strategy, s)?;
    if !check_oracle {
        return Ok((layout, None));
    }
    let sim = CamSimulator::new(&layout, paths)?;
    let rows: Vec<&[f64]> = test.rows().collect();
    let mismatches = rows
        .par_iter()
        .map(|x| Ok(usize::from(sim.predict(x)? != ensemble.predict(x)?)))
        .sum::<Result<usize>>()?;
    Ok((layout, Some(mismatches)))
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
