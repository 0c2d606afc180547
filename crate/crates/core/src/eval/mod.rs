//! Metrics and the repeated-split experiment protocol.

mod ablation;
mod aggregate;
mod experiment;
mod metrics;

pub use ablation::{ablation_to_csv, run_ablation, AblationPlan, AblationRow, ABLATION_HEADER};
pub use aggregate::{
    aggregate, aggregate_to_csv, format_change, relative_change_pct, render_report, AggregateRow, GroupKey,
    Summary, AGGREGATE_HEADER,
};
pub use experiment::{
    cell_eval_seed, cell_split_seed, cell_splits, evaluate_splits, records_from_csv, records_to_csv, run_experiment, sort_records, split_seed,
    ExperimentDataset, ExperimentPlan, ExperimentRecord, SplitMetrics, TrainingMode, RESULTS_HEADER,
};
pub use metrics::{accuracy, coverage, f1_micro, inefficiency};
