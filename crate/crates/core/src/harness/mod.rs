//! The operational shell: configuration, transition budgets, metrics files
//! and run directories.

pub mod budget;
pub mod config;
pub mod metrics;
pub mod run;

pub use budget::{baseline_transitions, fbts_transitions, match_baseline, CountingMdp};
pub use config::{Algorithm, ExperimentConfig};
pub use metrics::{MetricsRow, TimingRow, METRICS_HEADER};
pub use run::{
    default_out_dir, diagnose_run, load_verified_checkpoint, resume_experiment, run_experiment, run_sweep,
    Diagnosis, RunManifest, OUT_DIR_ENV,
};
