//! Command-line front end and HTTP session service for `dashlab`.

pub mod commands;
pub mod server;
