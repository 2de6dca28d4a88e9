//! HTTP API and command-line driver for sketchloop.

pub mod api;
pub mod backend;
pub mod cli;
pub mod error;
pub mod store;
