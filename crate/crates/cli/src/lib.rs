//! HTTP JSON service over a trained riskxai model and its reference cohort.

pub mod envelope;
pub mod service;
pub mod snapshot;

pub use envelope::{error_envelope, ApiError};
pub use service::{router, serve, App, ServiceConfig};
pub use snapshot::Snapshot;
