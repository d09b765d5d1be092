//! HTTP API, command line and on-disk document cache around
//! [`datadoc_core`].

pub mod api;
pub mod cache;
pub mod cli;
pub mod config;
pub mod service;

pub use config::ServiceConfig;
pub use service::{AnalyzeRequest, AnalyzeResponse, DocumentResponse, Service, ServiceError};
