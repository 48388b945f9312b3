//! Library surface of the experiment CLI, exposed so integration tests can
//! drive the pipelines in-process and compare artifacts byte for byte.

pub mod config;
pub mod pipeline;
pub mod plotdata;
pub mod report;
