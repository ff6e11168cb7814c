//! Training, evaluation and command-line tooling for `trunet-core` models.

pub mod cli;
pub mod evaluate;
pub mod gradcheck;
pub mod gridsearch;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod train;

pub use evaluate::{evaluate_model, predict_windows, Cells, Climatology, Inference};
pub use gridsearch::{grid_search, Grid, Trial};
pub use metrics::{evaluate, scatter_stats, xcf, EvalReport, Metrics, ScatterBin, Xcf};
pub use optim::{Optimizer, OptimizerConfig, OptimizerVariant};
pub use pipeline::{prepare, read_dataset, write_dataset, DataPlan, Prepared};
pub use train::{train, TrainConfig, TrainError, TrainLog};
