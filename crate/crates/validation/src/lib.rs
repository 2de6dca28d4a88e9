//! Acceptance checks for the sketchloop engine and service.
//!
//! Each check measures one property against a fixed bound and reports the
//! measured value. The `acceptance` test target runs them all.

pub mod checks;
pub mod fixtures;

pub use checks::{all, Check};
