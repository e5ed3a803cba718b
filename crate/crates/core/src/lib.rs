//! Camera-trap bird monitoring: domain types, dataset preparation, detection
//! and classification metrics, field-trial evaluation and training profiles.

pub mod annotations;
pub mod domain;
pub mod harness;
pub mod metrics;
pub mod train_config;
