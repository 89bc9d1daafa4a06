//! Multi-attribute document supervision for document-based zero-shot image
//! classification.

pub mod aggregate;
pub mod autodiff;
pub mod collect;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod imageenc;
pub mod nn;
pub mod objective;
pub mod profile;
pub mod textenc;

pub use error::{MadsError, Result};
