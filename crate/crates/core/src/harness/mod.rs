//! Experiment configuration, training, evaluation and export.

mod config;
mod metrics;
mod pipeline;
mod suite;
mod train;

pub use config::{ActiveSettings, DataSettings, EvalSettings, ExperimentConfig};
pub use metrics::{summarize, summarize_by, MetricRow, MetricsRecord, Summary};
pub use pipeline::*;
pub use suite::{
    budget_config, default_seeds, run_suite, suite_config, suite_dir, suite_world, thread_count, Budget, SuiteOptions,
    SuiteResult, ACTIVE_QUERIES, NOISE_CTX_LENS, NOISE_RATES, SUITES, THREADS_ENV,
};
pub use train::{
    accuracy_from_predictions, eval_reward_accuracy, score_prediction, split_by_target, train_model, AccuracyReport,
    TrainReport, TrainSettings,
};
