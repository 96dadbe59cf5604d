//! Configuration, output files and the command layer behind the binary.

mod commands;
mod config;
mod output;

pub use commands::{
    analytic_model, cmd_analytic, cmd_compare, cmd_returns, cmd_sheets, cmd_spacings, cmd_spectrum, RunContext, Summary,
};
pub use config::{eval_expression, AnalyticSpec, Number, Reference, RunConfig, CONFIG_VERSION};
pub use output::{fmt_g17, sha256_hex, Cache, CacheStatus, Table};
