//! Delay-aware cell association for heterogeneous cellular networks.

pub mod analytic;
pub mod cli;
pub mod geometry;
pub mod optimizer;
pub mod simulator;
pub mod units;
