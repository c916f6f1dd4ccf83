//! Configuration, the training loop, checkpoints and experiment drivers.

pub mod config;
pub mod experiments;
pub mod run;
pub mod source;

pub use config::{ClusterParams, Dataset, GlyphParams, TrainConfig};
pub use experiments::{
    cluster_bayes_accuracy, evaluate_views, export_tasks, gradient_suite, run_toy_experiment, run_versatility_sweep, toy_kl_rows,
    GradCheck, SweepCell, ToyExperiment, ToyRow, ViewScore,
};
pub use run::{default_network, inference_for, init_model, train, Checkpoint, MetricsRow, TrainOutcome, METRICS_HEADER};
pub use source::{Split, TaskSource};
