//! Command line and HTTP front ends of `cf-engine`, with the on-disk
//! session store they share.

pub mod cli;
pub mod models;
pub mod ops;
pub mod server;
pub mod store;
