//! Config-driven runs: problem registry, references, error metrics and
//! report artifacts.

pub mod burgers;
pub mod config;
pub mod metrics;
pub mod reference;
pub mod registry;
mod run;

pub use config::{Mode, Run, RunConfig};
pub use run::{
    check_grad, execute, predict, run_config, thread_cap, training_batch, write_artifacts, GradCheck, MetaError,
    Outcome, ParamError, Report, Solution,
};
