//! Analytical latency models for priority-arbitrated NoCs under bursty
//! (GGeo) traffic, with a seeded cycle-accurate simulator as oracle.

pub mod analytic;
pub mod config;
pub mod error;
pub mod network;
pub mod report;
pub mod sim;
pub mod trace;
pub mod traffic;

pub use error::{ModelError, Result};
