//! Threads, files and the command line on top of `rlforge-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod collector;
pub mod config;
pub mod envs;
pub mod logger;
pub mod trainer;
pub mod vector_env;
