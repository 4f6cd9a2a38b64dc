//! Library side of the `koopman-hjb` command-line tool, split out so the
//! integration tests can read its artifact formats.

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;
