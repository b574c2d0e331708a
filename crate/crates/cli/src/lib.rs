//! Library surface of the CLI so the command implementations are callable
//! from integration tests without spawning processes.

pub mod commands;
pub mod config;
