//! Experiment orchestration on top of `dtifl-core`: federated-vs-bagging
//! comparisons, the IID-ness / quantity / data-addition grids, and their CSV
//! reports.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::{DataSource, ExperimentConfig, Strategy};
pub use error::{BenchError, BenchResult};
pub use experiments::{
    cell_seed, run_addition_grid, run_comparison, run_grid, run_iidness_grid, run_quantity_grid,
    PartitionPlan,
};
pub use report::{pct_difference, ComparisonRow, GridReport};
