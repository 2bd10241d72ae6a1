//! Configuration, file formats, the `sim` command line and the serve-mode
//! WebSocket server around `compliant-core`.

pub mod commands;
pub mod config;
pub mod protocol;
pub mod records;
pub mod serve;
