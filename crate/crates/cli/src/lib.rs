//! Command-line front end: configuration, the batch pipeline run, the review
//! queue commands and the read-only export server.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod serve;
