//! HTTP service for live search sessions, with event-log persistence.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod state;
pub mod store;

pub use api::router;
pub use config::ServiceConfig;
pub use error::ServiceError;
pub use state::AppState;
