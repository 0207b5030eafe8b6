//! Command-line front end: corpus generation, training, prediction and
//! evaluation on top of the model, data and metrics crates.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod predict;
pub mod train;
pub mod validate;

pub use config::RunConfig;
pub use predict::Predictor;
pub use train::{TrainSummary, Trainer};
