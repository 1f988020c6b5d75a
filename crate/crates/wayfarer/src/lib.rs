//! File formats, command-line tools and the HTTP service built on
//! [`wayfarer_core`].

pub mod cli;
pub mod config;
pub mod fixtures;
pub mod io;
pub mod server;
pub mod sus;
