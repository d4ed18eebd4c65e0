//! Monte Carlo experiments that set simulation output against the modulus,
//! speed and law statements, plus their configuration and CSV output.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{EpsGrid, ExperimentConfig, Mode, TGrid};
pub use experiments::{
    aggregate, run, run_global_modulus, run_law_check, run_local_modulus, run_nv_check, run_rho_origin,
};
pub use output::{to_csv, write_results, ResultRow, HEADER};
