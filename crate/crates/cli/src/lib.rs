//! Command-line front end for `hetid`: CSV ingestion, the `simulate`,
//! `audit`, `estimate` and `sweep` subcommands, and deterministic JSON reports.

pub mod app;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod report;

pub use app::{run, run_cli, sidecar_path};
pub use config::{Action, FileConfig, Flags, Preset, RunConfig};
pub use csv_io::{load_csv, read_csv, write_csv, write_csv_to, LoadOptions};
pub use error::CliError;
