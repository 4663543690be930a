//! Command implementations behind the `openworld` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod system;
