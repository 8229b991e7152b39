//! Station retrieval, the HTTP service, session persistence and the CLI
//! built around `recombot-core`.

pub mod cli;
pub mod config;
pub mod extractor;
pub mod fixture;
pub mod gateway;
pub mod ocm;
pub mod pipeline;
pub mod service;
pub mod session;
