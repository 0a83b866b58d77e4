//! Resilient multi-odometry state estimation.
//!
//! Redundant odometry streams are supervised by per-stream confidence checks,
//! fused with an IMU, and multiplexed into a single continuous state estimate
//! annotated with per-block quality bits. The quality bits drive a mobility
//! service selector that degrades the flight behavior gracefully.

// Negated comparisons are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod health;
pub mod mobility;
pub mod mux;
pub mod sim;
pub mod state;
pub mod streams;
