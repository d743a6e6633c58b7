//! Experiment configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, REGISTRY};
use crate::episodes::DEFAULT_SPARSE_THRESHOLD;
use crate::kernels::{Kernel, KernelError, Smoother};
use crate::planner::PlannerConfig;
use crate::worldmodel::ModelConfig;

use super::HarnessError;

pub const SEED_OFFSET_VAR: &str = "SMRL_SEED_OFFSET";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothingConfig {
    /// A struct variant so that stray parameters are rejected.
    None {},
    Gaussian {
        sigma: f64,
        /// Kernel half-width; `0` or absent means `ceil(4 sigma)`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        half_width: Option<usize>,
    },
    Uniform {
        delta: usize,
    },
    Ema {
        alpha: f64,
    },
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig::None {}
    }
}

impl SmoothingConfig {
    pub fn smoother(&self) -> Result<Smoother, KernelError> {
        Ok(match *self {
            SmoothingConfig::None {} => Smoother::None,
            SmoothingConfig::Gaussian { sigma, half_width } => Smoother::Kernel(Kernel::gaussian(sigma, half_width.unwrap_or(0))?),
            SmoothingConfig::Uniform { delta } => Smoother::Kernel(Kernel::uniform(delta)?),
            SmoothingConfig::Ema { alpha } => {
                Kernel::ema(alpha, 0)?;
                Smoother::Ema { alpha }
            }
        })
    }
}

/// Offline mode: train on a fixed dataset instead of interacting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineConfig {
    /// Training episodes collected by the noisy scripted policy.
    #[serde(default = "default_offline_episodes")]
    pub episodes: usize,
    /// Held-out episodes for the prediction-rate evaluation.
    #[serde(default = "default_offline_eval")]
    pub eval_episodes: usize,
    /// Seed of the dataset; shared by every training seed.
    #[serde(default)]
    pub data_seed: u64,
    /// Probability of replacing the scripted action by a random one.
    #[serde(default = "default_action_noise")]
    pub action_noise: f64,
    pub train_steps: u64,
}

fn default_offline_episodes() -> usize {
    200
}
fn default_offline_eval() -> usize {
    50
}
fn default_action_noise() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Arm name used in plot legends; defaults to the output directory name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub env_id: String,
    /// Episode length; the registry default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub total_env_steps: u64,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub oversample_p: f64,
    #[serde(default = "default_threshold")]
    pub sparse_threshold: f64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    /// Gradient steps per 1000 environment steps.
    #[serde(default = "default_train_ratio")]
    pub train_ratio: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    /// Ends a seed at the first evaluation that completes every subtask.
    #[serde(default)]
    pub stop_on_success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offline: Option<OfflineConfig>,
    pub out_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_threshold() -> f64 {
    DEFAULT_SPARSE_THRESHOLD
}
/// 16 gradient steps per 100-step episode.
fn default_train_ratio() -> u64 {
    160
}
fn default_eval_every() -> u64 {
    1000
}
fn default_eval_episodes() -> usize {
    1
}
fn default_capacity() -> usize {
    1_000_000
}

impl ExperimentConfig {
    pub fn new(env_id: &str, total_env_steps: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            name: None,
            env_id: env_id.to_string(),
            horizon: None,
            seeds: default_seeds(),
            total_env_steps,
            smoothing: SmoothingConfig::None {},
            oversample_p: 0.0,
            sparse_threshold: default_threshold(),
            model: ModelConfig::default(),
            planner: PlannerConfig::default(),
            train_ratio: default_train_ratio(),
            eval_every: default_eval_every(),
            eval_episodes: default_eval_episodes(),
            buffer_capacity: default_capacity(),
            stop_on_success: false,
            offline: None,
            out_dir: out_dir.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::Config(vec![format!("{path}: {}", e.inner())])
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn env_spec(&self, seed: u64) -> Result<EnvSpec, HarnessError> {
        let spec = EnvSpec::new(&self.env_id, seed).map_err(|e| HarnessError::Config(vec![format!("env_id: {e}")]))?;
        Ok(match self.horizon {
            Some(h) => spec.with_horizon(h),
            None => spec,
        })
    }

    pub fn arm_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.out_dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.env_id.clone())
        })
    }

    /// Every violated constraint as `key.path: reason`.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !REGISTRY.contains(&self.env_id.as_str()) {
            out.push(format!("env_id: unknown environment `{}` (known: {})", self.env_id, REGISTRY.join(", ")));
        } else if let Some(h) = self.horizon {
            let probe = self.env_spec(0).and_then(|s| crate::envs::make_env(&s).map_err(|e| HarnessError::Runtime(e.to_string())));
            if let Err(e) = probe {
                out.push(format!("horizon: {h} rejected: {e}"));
            }
        }
        if self.seeds.is_empty() {
            out.push("seeds: must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            out.push("seeds: duplicate seeds".into());
        }
        if let Err(e) = self.smoothing.smoother() {
            out.push(format!("smoothing: {e}"));
        }
        if !(0.0..=1.0).contains(&self.oversample_p) {
            out.push(format!("oversample_p: must lie in [0, 1], got {}", self.oversample_p));
        }
        if !(self.sparse_threshold.is_finite() && self.sparse_threshold > 0.0) {
            out.push(format!("sparse_threshold: must be positive, got {}", self.sparse_threshold));
        }
        for (field, reason) in self.model.problems() {
            out.push(format!("model.{field}: {reason}"));
        }
        for (field, reason) in self.planner.problems() {
            out.push(format!("planner.{field}: {reason}"));
        }
        if self.eval_every == 0 {
            out.push("eval_every: must be positive".into());
        }
        if self.eval_episodes == 0 {
            out.push("eval_episodes: must be positive".into());
        }
        if self.buffer_capacity == 0 {
            out.push("buffer_capacity: must be positive".into());
        }
        if let Some(off) = &self.offline {
            if off.episodes == 0 {
                out.push("offline.episodes: must be positive".into());
            }
            if off.eval_episodes == 0 {
                out.push("offline.eval_episodes: must be positive".into());
            }
            if !(0.0..=1.0).contains(&off.action_noise) {
                out.push(format!("offline.action_noise: must lie in [0, 1], got {}", off.action_noise));
            }
        }
        if self.out_dir.as_os_str().is_empty() {
            out.push("out_dir: must not be empty".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(problems))
        }
    }
}

/// Seed shift read from `SMRL_SEED_OFFSET`; absent means 0.
pub fn seed_offset_from_env() -> Result<u64, HarnessError> {
    match std::env::var(SEED_OFFSET_VAR) {
        Err(std::env::VarError::NotPresent) => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| HarnessError::Config(vec![format!("{SEED_OFFSET_VAR}: expected a non-negative integer, got `{v}`")])),
        Err(e) => Err(HarnessError::Config(vec![format!("{SEED_OFFSET_VAR}: {e}")])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(r#"{"env_id":"dense_reach","total_env_steps":10,"out_dir":"x"}"#).unwrap();
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.smoothing, SmoothingConfig::None {});
        assert_eq!(c.eval_every, 1000);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = ExperimentConfig::from_json(r#"{"env_id":"dense_reach","total_env_steps":10,"out_dir":"x","model":{"hiden_units":3}}"#)
            .unwrap_err();
        let HarnessError::Config(msgs) = err else { panic!() };
        assert!(msgs[0].starts_with("model"), "{msgs:?}");
        assert!(msgs[0].contains("hiden_units"));
    }

    #[test]
    fn smoothing_parameters_follow_kind() {
        let base = |s: &str| format!(r#"{{"env_id":"dense_reach","total_env_steps":1,"out_dir":"x","smoothing":{s}}}"#);
        assert!(ExperimentConfig::from_json(&base(r#"{"kind":"gaussian","sigma":2}"#)).is_ok());
        assert!(ExperimentConfig::from_json(&base(r#"{"kind":"none","sigma":2}"#)).is_err());
        assert!(ExperimentConfig::from_json(&base(r#"{"kind":"gaussian"}"#)).is_err());
        assert!(ExperimentConfig::from_json(&base(r#"{"kind":"uniform","delta":4}"#)).is_err());
        assert!(ExperimentConfig::from_json(&base(r#"{"kind":"ema","alpha":0.3,"delta":3}"#)).is_err());
        assert!(ExperimentConfig::from_json(&base(r#"{"kind":"box","width":3}"#)).is_err());
    }

    #[test]
    fn validation_is_exhaustive() {
        let mut c = ExperimentConfig::new("nowhere", 5, "x");
        c.seeds.clear();
        c.oversample_p = 2.0;
        c.model.batch = 0;
        c.planner.elites = 0;
        let msgs = c.problems();
        for key in ["env_id", "seeds", "oversample_p", "model.batch", "planner.elites"] {
            assert!(msgs.iter().any(|m| m.starts_with(key)), "{key} missing from {msgs:?}");
        }
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::new("two_stage_grid", 1234, "runs/a");
        c.smoothing = SmoothingConfig::Gaussian { sigma: 2.0, half_width: None };
        c.oversample_p = 0.5;
        c.model.learning_rate = 3e-4;
        c.name = Some("gauss".into());
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}
