//! Experiment driver: JSON run configs, subcommands and their artifacts.
//!
//! Output layout (all under the config's `output_dir`):
//!
//! - `toy`: `<strategy>_history.csv`, `summary.json`, `manifest.json`
//! - `train`: `seed_<s>/history.csv`, `seed_<s>/manifest.json`,
//!   `aggregate.json`, `manifest.json`
//! - `hpo`: `sweep.csv`, `final/history.csv`, `manifest.json`

pub mod artifacts;
pub mod commands;
pub mod config;

pub use commands::{cmd_account, cmd_hpo, cmd_toy, cmd_train, grid_listing};
pub use config::RunConfig;
