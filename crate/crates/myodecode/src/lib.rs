//! File formats, configuration and the command-line front end for
//! [`myodecode_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod threads;

pub use error::{Error, Result};
pub use myodecode_core as core;
