//! Command-line front end and HTTP service for methodforge.

pub mod api;
pub mod cli;
