//! File formats, image decoding and the command line around `pvcnn-core`.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod curves;
pub mod imaging;
pub mod manifest;
