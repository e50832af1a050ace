//! HTTP service and command line for the terrain navigation pipeline.

pub mod api;
pub mod cli;
pub mod error;
pub mod persist;
pub mod session;
