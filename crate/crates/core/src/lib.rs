//! Robust clustering by the trimmed determinant criterion: among all
//! configurations of `r` retained observations split into `g` clusters,
//! find one minimizing the determinant of the pooled within-groups SSP
//! matrix.

pub mod breakdown;
pub mod combinatorics;
pub mod config;
pub mod datagen;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod select;
pub mod solver;
pub mod stats;

pub use config::{Configuration, Cost, Dataset, PooledStats};
pub use error::{Result, TdcError};
pub use solver::{multistart, InitMethod, SolveReport, SolverSettings};
