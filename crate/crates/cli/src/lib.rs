//! Command-line front end and HTTP service for `strategist-core`.

pub mod args;
pub mod commands;
pub mod server;
