//! Scoring, experiment configuration, the end-to-end pipeline and CSV reports.

mod config;
mod metrics;
mod report;
mod runner;

pub use config::ExperimentConfig;
pub use metrics::{
    evaluate_policy, normalized_score, rollout_mse, rollout_mse_from, MseOptions, NextStateModel,
    OracleModel, ScoreAnchors, ANCHOR_EPISODES, ANCHOR_SEED,
};
pub use report::{aggregate, write_report, ReportRow};
pub use runner::{
    anchors_for, compare_mode, dara_stage, derive_seed, dynamics_stage, evaluate_stage,
    generate_datasets, mse_options, policy_stage, run_experiment, run_id, seed_dir, streams,
    write_config_echo, MetricLog, MetricRow, RunReport, SeedSummary, METRICS_HEADER,
};
