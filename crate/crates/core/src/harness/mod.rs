//! Closed-loop experiments: configuration, simulation, cost, sweeps and
//! CSV/TOML plumbing.

mod builtin;
mod config;
mod cost;
mod io;
mod run;
mod sweep;

use std::path::Path;

use thiserror::Error;

use crate::controller::ControllerError;
use crate::hankel::HankelError;

pub use builtin::{builtin_config, builtin_names};
pub use config::{
    config_to_string, load_config, parse_config, save_config, ControllerConfig, CostConfig,
    ExcitationConfig, ExperimentConfig, LtiSettings, NlSettings, NoiseConfig, Perturbation,
    PlantConfig, SetpointChange, SolverConfig,
};
pub use cost::{
    closed_loop_cost, cost_from_outputs, CONVERGENCE_BAND, CONVERGENCE_STEPS, GOOD_COST,
};
pub use io::{csv_header, export_csv, import_csv, read_csv, write_csv, IoData};
pub use run::{
    lti_plant, run_experiment, InfeasibilityEvent, Phase, RunSummary, SimulationLog, StepRecord,
};
pub use sweep::{
    apply_parameter, sweep, write_sweep_csv, write_sweep_summary, SweepParam, SweepPoint,
    SweepResult, SweepRow,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("CSV error: {0}")]
    Csv(String),
    #[error("cost window [{t_start}, {t_end}] not covered by {len} records")]
    CostWindow {
        t_start: usize,
        t_end: usize,
        len: usize,
    },
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<HankelError> for HarnessError {
    fn from(e: HankelError) -> Self {
        HarnessError::Controller(ControllerError::Data(e))
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(pos) => HarnessError::Csv(format!("line {}: {e}", pos.line())),
            None => HarnessError::Csv(e.to_string()),
        }
    }
}
