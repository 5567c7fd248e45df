//! Online scoring runtime and load-testing tools: score cache, depth
//! controller, traffic shaper, HTTP service, and the benchmark harness.

pub mod bench;
pub mod cache;
pub mod cli;
pub mod engine;
pub mod pid;
pub mod server;
pub mod service;
pub mod shaper;
pub mod workload;
