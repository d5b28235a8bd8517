//! Two-phase experiment protocol: style model, then classifier, evaluated
//! leave-one-domain-out and averaged over runs.

mod classifier;
mod config;
mod experiment;
mod results;
mod train;

pub use classifier::{Classifier, ROTATIONS};
pub use config::{Augmentation, ClassifierArch, ClassifierConfig, DatasetSource, ExperimentConfig, Method};
pub use experiment::{
    average_runs, pooled_std, run_experiment, sweep, target_averaged_runs, ResultRow, RunOutcome, StyleCache,
    SweepCell, SweepTable,
};
pub use results::{emit_results, read_results, sidecar_path, CSV_HEADER};
pub use train::{select_model, train_classifier, TrainedClassifier};
