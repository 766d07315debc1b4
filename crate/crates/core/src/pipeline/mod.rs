//! Randomised hyperparameter search with device-level cross-validation,
//! resolution sweeps and held-out evaluation.

mod config;
mod cv;
mod experiment;
mod report;
mod search;

pub use config::{SearchConfig, SearchSpace, SplitConfig, ToolkitConfig};
pub use cv::{device_folds, row_folds};
pub use experiment::{
    build_features, classification_experiment, device_labels, evaluate_model, fit_final, fit_seed, full_experiment,
    majority_baseline, prepare, prepare_manifest, regression_experiment, run_classification_experiment,
    run_regression_experiment, search_seed, tune, Evaluation, Prepared, Stage,
};
pub use report::{
    params_text, Baseline, DatasetSummary, ExperimentReport, LearnerResult, RegressionResults, ResolutionResult,
    REPORT_FORMAT, REPORT_VERSION,
};
pub use search::{cross_validate, random_search, sample_candidates, CvData, SearchOutcome};
