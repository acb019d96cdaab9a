//! Teacher training, distillation, strategy application and reporting.

mod config;
mod experiment;
mod report;
mod train;

pub use config::{ExperimentConfig, Strategy};
pub use experiment::{
    cell_dir_name, run_cell, run_experiment, CellFailure, CellOutcome, CellResult, RunResults,
    BASELINE_LABEL, TEACHER_LABEL,
};
pub use report::{
    aggregate, read_results_csv, results_to_csv, CellStats, Summary, SummaryRow, RESULTS_HEADER,
};
pub use train::{argmax, evaluate, evaluate_distill, train_model, Evaluation, Objective, TrainSettings};
