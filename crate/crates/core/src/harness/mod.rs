//! Experiment orchestration: configuration, the collect/train/evaluate loop,
//! sweeps, persistence and plotting.

mod config;
mod plot;
mod run;

use thiserror::Error;

pub use config::{seed_offset_from_env, ExperimentConfig, OfflineConfig, SmoothingConfig, SEED_OFFSET_VAR};
pub use plot::{plot, plot_dir, PlotArm};
pub use run::{
    parse_sweep_values, roll, run, sweep, sweep_config, ExperimentManifest, RollPolicy, RunOptions, RunSummary, SeedOutcome,
    SeedStatus,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{0}")]
    Input(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
        let context = context.into();
        move |source| HarnessError::Io { context, source }
    }

    /// Process exit code: 1 for usage and configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Input(_) => 1,
            _ => 3,
        }
    }
}

pub(crate) fn runtime<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> HarnessError + '_ {
    move |e| HarnessError::Runtime(format!("{context}: {e}"))
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub(crate) fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
