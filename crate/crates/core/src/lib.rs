//! Two-source morphological re-inflection with transformer variants that
//! differ in how morphosyntactic tags are embedded and positioned.

pub mod corpus;
pub mod encoding;
pub mod eval;
mod error;
pub mod model;
pub mod train;

pub use error::{Error, Result};
