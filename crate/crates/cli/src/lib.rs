//! Command line front end, annotation HTTP service and remote segmenter
//! client for the `preseg` library.

pub mod commands;
pub mod remote;
pub mod segserver;
pub mod service;
