//! Command-line tools, session persistence and the HTTP session service.

pub mod commands;
pub mod exit;
pub mod service;
pub mod store;
