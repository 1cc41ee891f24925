//! Configuration, schedules, the joint training step, evaluation and the
//! experiment runner.

mod config;
mod schedule;
mod trainer;

pub use config::{DataConfig, Shift, TrainConfig};
pub use schedule::{lambda_d_schedule, lambda_m_schedule};
pub use trainer::{
    build_objective, eval_points, evaluate, load_domains, parse_metrics_csv, run_experiment,
    run_experiment_on, stream, train_run, train_step, MetricsRecord, RunOutcome, StepLosses,
    StepRngs, TrainedRun, CONFIG_FILE, METRICS_FILE, METRICS_HEADER, PARAMS_FILE,
};
