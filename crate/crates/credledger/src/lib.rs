//! HTTP service and client for a CredLedger node.

pub mod client;
pub mod server;
