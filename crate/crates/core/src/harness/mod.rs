//! Experiment configuration, system generation, baselines, seeded runs and
//! CSV reporting.

mod compare;
mod config;
mod policy;
mod run;
mod system;

pub use compare::{compare_report, load_run, ComparisonRow, ComparisonTable, RunArtifacts, Stat};
pub use config::{
    component_rng, component_seed, EvaluationConfig, ExperimentConfig, Preset, SeedStream, SystemConfig,
};
pub use policy::{baseline_policy, greedy_aoi, random_feasible, BaselineKind};
pub use run::{
    final_average, metrics_line, nec, rollout, run_experiment, run_id, trajectory_header, Evaluation, RunOutcome,
    SummaryRow, FINAL_WINDOW, METRICS_HEADER, NEC_BAND, NEC_WINDOW, SUMMARY_HEADER, TIMING_HEADER,
};
pub use system::{generate_system, GeneratedSystem, SystemSnapshot};
