//! Threshold-driven placement of application functions on x86, ARM and FPGA.

pub mod experiment;
pub mod packer;
pub mod platform;
pub mod protocol;
pub mod scheduler;
pub mod sim;
pub mod threshold;
