//! Runtime side of trapline: camera transmissions in, remote detection,
//! persistence, alerts and species counts out.

pub mod alerts;
pub mod config;
pub mod inference;
pub mod ingest;
pub mod pipeline;
pub mod store;
