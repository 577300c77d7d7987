//! Data files, run configuration, the command implementations behind the
//! `tgp` binary, cross-validation and synthetic datasets.

pub mod commands;
pub mod config;
pub mod cv;
pub mod data;
pub mod synthetic;

pub use commands::{
    cmd_cv, cmd_fit, cmd_predict, fit, FitReport, FittedModel, PredictRequest, QuerySource,
};
pub use config::FitConfig;
pub use cv::{cross_validate, CvReport};
pub use data::{load_csv, Dataset, ScaleInfo};
