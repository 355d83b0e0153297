//! Data generators and reference dynamics for the built-in experiments:
//! periodic Gaussian fields, bimodal SDE trajectories, and the multi-scale
//! Lorenz-96 system with closure-term extraction.

pub mod bimodal;
pub mod gauss;
pub mod lorenz96;
