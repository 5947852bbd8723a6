//! Configuration text, unit handling and result files.

pub mod config;
pub mod output;
pub mod units;

pub use config::{export_config, parse_config, ParsedConfig};
pub use output::{read_csv, write_outputs, RunInfo, RunManifest};
