//! Experiment harness: configuration, persistence and pipeline commands.

mod commands;
mod config;
pub mod io;
mod pipeline;

pub use commands::{
    cmd_benchmark, cmd_evaluate, cmd_generate, cmd_stratify, cmd_train_experts, cmd_train_gate,
    csv_bytes, load_dataset, load_experts, load_results, load_trained, parse_csv, results_bytes,
    save_dataset, summarize, BenchmarkOutcome, RunContext, RunLayout, StratificationRow,
    SummaryRow,
};
pub use config::{
    BaselineConfig, ExperimentConfig, GateConfig, MetricsConfig, RatersConfig, TrainingConfig,
};
pub use pipeline::{
    evaluate, generate, predict_split, run_seed, train_baselines, train_experts, train_gate_stage,
    train_models, Method, MethodReport, Prediction, ResultRow, TrainedModels, EVAL_SPLITS,
};
