//! Command implementations behind the `vdmfpca` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
