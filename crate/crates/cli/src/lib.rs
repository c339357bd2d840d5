//! Command-line pipeline for switching-system identification: simulate a
//! configured system, identify its modes, recover the switching surfaces and
//! evaluate the result.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{cmd_evaluate, cmd_fit_surface, cmd_identify, cmd_simulate, Metrics};
pub use config::{Config, LoadedConfig, Overrides};
pub use error::{CliError, Result};
