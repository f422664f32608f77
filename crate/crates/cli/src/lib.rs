//! Command line front end and JSON HTTP service.

pub mod commands;
pub mod http;
