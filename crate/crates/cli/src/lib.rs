//! Library side of the `hvox` command-line tool: run configs, the `HVX1`
//! array format, manifests, benchmark presets and the verb implementations.

pub mod arrayfile;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod presets;

pub use arrayfile::{read_array, write_array, Array, ArrayData};
pub use commands::{Direction, Inputs, Method};
pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
pub use manifest::Manifest;
