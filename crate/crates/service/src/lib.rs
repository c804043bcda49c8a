//! Operational surface for round-by-round ballot-polling audits: journaled
//! sessions, the HTTP API and the command line.

pub mod api;
pub mod cli;
pub mod error;
pub mod session;

pub use error::{Result, ServiceError};
pub use session::{Session, SessionDocument, SCHEMA_VERSION};
