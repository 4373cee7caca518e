//! Round lifecycle, configuration, evaluation plumbing and experiment recipes.

mod config;
mod evaluate;
mod experiment;
mod export;
mod lifecycle;

pub use config::{CodeCarry, Mode, RunConfig, Source};
pub use evaluate::score_cases;
pub use experiment::{arms, interval_slices, run_experiment, Arm, ArmResult, ExperimentReport, Recipe};
pub use export::{dominant_category, export_metapatch_table};
pub use lifecycle::{
    load_device_codes, load_source, plan, prepare, prepare_with, run_lifecycle, run_lifecycle_with, run_prepared,
    DevicePhaseStats, Prepared, RoundReport, RunOptions, RunOutcome, Stage, CHECKPOINT_DIR, STATE_DIR,
};
