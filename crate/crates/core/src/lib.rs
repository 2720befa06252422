//! Tree-ensemble inference on ternary CAM: bagged forest training, purity
//! threshold pruning, five CAM placement strategies and a behavioral CAM
//! simulator that checks every layout against reference traversal.

pub mod camsim;
pub mod datasets;
pub mod ensemble;
pub mod error;
pub mod mapping;
pub mod pathspace;
pub mod pruning;
pub mod toolkit;

pub use error::{Error, Result};
