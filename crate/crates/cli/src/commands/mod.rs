pub mod config;
pub mod eval;
pub mod prepare;
pub mod report;
pub mod serve;
