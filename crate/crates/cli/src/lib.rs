//! Configuration, scenario execution and report emission for `kmflow`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod scenario;

pub use config::{parse_config, parse_config_str, RunConfig, Scenario};
pub use error::{CliError, Result};
pub use scenario::{execute, Execution, RunReport, Status};
