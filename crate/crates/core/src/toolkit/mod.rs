//! Persistence, reporting and experiment sweeps.

pub mod format;
pub mod report;
pub mod sweep;

pub use format::{load_ensemble, load_layout, save_ensemble, save_layout, EnsembleDocument, SplitInfo};
pub use report::{write_report, RunReport};
pub use sweep::{run_sweep, SweepConfig};
