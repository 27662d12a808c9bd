//! Region-based adaptive visual servoing for a human-robot cooperative
//! manipulator, plus the DMP motion primitives and the simulator that ties
//! them together.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod kinematics;
pub mod regions;
pub mod rotation;
pub mod controller;
pub mod dmp;
pub mod runlog;
pub mod sim;
pub mod config;
pub mod protocol;
pub mod service;
pub mod plot;
