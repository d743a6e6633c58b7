//! Reward smoothing for model-based reinforcement learning.

pub mod envs;
pub mod episodes;
pub mod kernels;
pub mod worldmodel;
pub mod planner;
pub mod theoremlab;
pub mod metrics;
pub mod harness;
