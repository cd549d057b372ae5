//! Experiment harness: environment naming, the training loop, multi-seed
//! runs, learning-curve output and run comparison.

mod compare;
mod config;
mod env_spec;
mod plot;
mod run;
mod train;

pub use compare::{compare_runs, Comparison, PairTest, RunRow, THRESHOLD_FRACTION};
pub use config::{DiagnosticsConfig, ExperimentConfig, ReplayConfig};
pub use env_spec::{EnvKind, EnvSpec};
pub use plot::{emit_learning_curves, learning_curves, load_run_logs, CurveSet};
pub use run::{
    evaluate_checkpoint, oracle_dump, oracle_start_value, run_experiment, seed_dir, v_vs_q,
    write_oracle_dump, ExperimentSummary, OracleDump, SeedSummary, AGENT_FILE, CONFIG_FILE,
    LOG_FILE, SUMMARY_FILE,
};
pub use train::{train_run, RecordKind, RunObserver, RunOutcome, RunRecord, TrainOptions};
