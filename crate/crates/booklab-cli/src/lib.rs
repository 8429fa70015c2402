//! Command-line front end for booklab.

pub mod commands;
pub mod config;
