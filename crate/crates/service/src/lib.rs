//! HTTP game service and command-line tools for the scent-description engine.

pub mod api;
pub mod backends;
pub mod cli;
pub mod config;

pub use api::{router, AppState};
pub use config::ServiceConfig;
