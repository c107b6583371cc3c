//! Command-line tools and file formats for mixture disease course mapping.
//!
//! The estimation code lives in `mixcourse-core`; this crate adds CSV and
//! JSON persistence, the `mixcourse` commands and replicate studies run in
//! parallel.

pub mod commands;
pub mod error;
pub mod io;
pub mod study;

pub use error::{CliError, CliResult};
