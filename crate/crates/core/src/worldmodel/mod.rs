//! Deterministic latent world model: encoder, dynamics and reward head.
//!
//! All three parts are small dense networks trained with momentum SGD on
//! gradients from [`tape::Tape`]. The reward head only ever sees smoothed
//! rewards: [`TrainingBatch`] has no field for raw rewards.

pub mod checkpoint;
pub mod matrix;
pub mod tape;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::ActionSpace;
use crate::episodes::{Step, Window};
pub use matrix::Matrix;
use tape::{NodeId, Tape};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite loss or gradient on training batch {batch_id} (dyn_mse={dyn_mse}, rew_mse={rew_mse})")]
    NonFinite { batch_id: u64, dyn_mse: f64, rew_mse: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

fn default_hidden_layers() -> usize {
    2
}
fn default_hidden_units() -> usize {
    64
}
fn default_history_stack() -> usize {
    4
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    16
}
fn default_seq_len() -> usize {
    12
}
fn default_grad_clip() -> f64 {
    100.0
}
fn default_rollout_weight() -> f64 {
    0.5
}
fn default_reward_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent width; `None` uses the stacked observation width and starts the
    /// encoder at the identity map.
    #[serde(default)]
    pub latent_dim: Option<usize>,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_hidden_units")]
    pub hidden_units: usize,
    /// Number of most recent observations concatenated into the model input.
    #[serde(default = "default_history_stack")]
    pub history_stack: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    /// Reward targets are divided by this before the squared error; the head
    /// output is multiplied back, so predictions are in reward units.
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    /// Whether the encoder receives gradients. Off by default: without a
    /// reconstruction term a trained encoder can shrink the latent space.
    #[serde(default)]
    pub train_encoder: bool,
    /// Share of the reward loss computed on imagined latents; the rest uses
    /// encoded latents.
    #[serde(default = "default_rollout_weight")]
    pub reward_rollout_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            hidden_layers: default_hidden_layers(),
            hidden_units: default_hidden_units(),
            history_stack: default_history_stack(),
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            batch: default_batch(),
            seq_len: default_seq_len(),
            grad_clip: default_grad_clip(),
            reward_scale: default_reward_scale(),
            train_encoder: false,
            reward_rollout_weight: default_rollout_weight(),
        }
    }
}

impl ModelConfig {
    /// Every violated constraint, as `(field, reason)` pairs.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.latent_dim == Some(0) {
            out.push(("latent_dim", "must be positive".to_string()));
        }
        if self.hidden_layers < 1 {
            out.push(("hidden_layers", "must be at least 1".to_string()));
        }
        if self.hidden_units < 1 {
            out.push(("hidden_units", "must be at least 1".to_string()));
        }
        if self.history_stack < 1 {
            out.push(("history_stack", "must be at least 1".to_string()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            out.push(("learning_rate", format!("must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch < 1 {
            out.push(("batch", "must be at least 1".to_string()));
        }
        if self.seq_len < 1 {
            out.push(("seq_len", "must be at least 1".to_string()));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            out.push(("grad_clip", format!("must be positive, got {}", self.grad_clip)));
        }
        if !(0.0..=1.0).contains(&self.reward_rollout_weight) {
            out.push(("reward_rollout_weight", format!("must lie in [0, 1], got {}", self.reward_rollout_weight)));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            out.push(("reward_scale", format!("must be positive, got {}", self.reward_scale)));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.problems().into_iter().next() {
            Some((field, reason)) => Err(ModelError::InvalidConfig { field, reason }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossRecord {
    pub dyn_mse: f64,
    /// Mean squared error of the reward head in units of `reward_scale`.
    pub rew_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImaginedRollout {
    pub latents: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl ImaginedRollout {
    pub fn horizon(&self) -> usize {
        self.rewards.len()
    }
}

/// Writes the `stack` observations ending at `end` into `out`, oldest first,
/// zero-filling positions before the episode start.
pub fn stack_history(steps: &[Step], end: usize, stack: usize, out: &mut [f64]) {
    let obs_dim = out.len() / stack;
    for j in 0..stack {
        let back = stack - 1 - j;
        let slot = &mut out[j * obs_dim..(j + 1) * obs_dim];
        if back > end {
            slot.iter_mut().for_each(|x| *x = 0.0);
        } else {
            slot.copy_from_slice(&steps[end - back].obs);
        }
    }
}

/// Values of the stop-gradient nodes of the loss graph.
struct Frozen {
    targets: Matrix,
    imagined: Option<Matrix>,
}

/// A batch of equal-length windows laid out time-major for training.
///
/// Holds stacked observation histories, encoded actions and smoothed reward
/// targets. Raw rewards are deliberately not part of this type.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub id: u64,
    batch: usize,
    seq_len: usize,
    /// `(seq_len * batch) x (obs_dim * stack)`; row `k * batch + b`.
    histories: Matrix,
    /// `((seq_len - 1) * batch) x action_dim`; row `(k - 1) * batch + b` is the
    /// action that led to step `k`.
    actions: Matrix,
    /// `seq_len * batch` smoothed rewards.
    targets: Vec<f64>,
}

impl TrainingBatch {
    pub fn from_windows(id: u64, windows: &[Window], stack: usize, space: &ActionSpace) -> Result<Self, ModelError> {
        let first = windows.first().ok_or_else(|| ModelError::InvalidInput("empty batch".into()))?;
        let seq_len = first.len();
        let obs_dim = first.steps()[0].obs.len();
        let action_dim = space.encoded_dim();
        let batch = windows.len();
        if seq_len == 0 {
            return Err(ModelError::InvalidInput("zero-length window".into()));
        }
        let in_dim = obs_dim * stack;
        let mut histories = Matrix::zeros(seq_len * batch, in_dim);
        let mut actions = Matrix::zeros((seq_len - 1) * batch, action_dim);
        let mut targets = vec![0.0; seq_len * batch];
        for (b, w) in windows.iter().enumerate() {
            if w.len() != seq_len {
                return Err(ModelError::InvalidInput("windows differ in length".into()));
            }
            let all = w.episode().steps();
            if all.iter().any(|s| s.obs.len() != obs_dim) {
                return Err(ModelError::InvalidInput("observation width differs within batch".into()));
            }
            for k in 0..seq_len {
                let t = w.start() + k;
                stack_history(all, t, stack, histories.row_mut(k * batch + b));
                targets[k * batch + b] = all[t].reward_smoothed();
                if k > 0 {
                    let a = all[t].action.as_ref();
                    if let Some(a) = a {
                        if !space.contains(a) {
                            return Err(ModelError::InvalidInput(format!("action {a:?} outside {space:?}")));
                        }
                    }
                    space.encode_into(a, actions.row_mut((k - 1) * batch + b));
                }
            }
        }
        Ok(Self {
            id,
            batch,
            seq_len,
            histories,
            actions,
            targets,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn input_dim(&self) -> usize {
        self.histories.cols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.cols()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    config: ModelConfig,
    obs_dim: usize,
    action_dim: usize,
    latent_dim: usize,
    params: Vec<Matrix>,
    velocity: Vec<Matrix>,
    updates: u64,
}

/// Index ranges of each network inside the flat parameter list. Each layer
/// contributes a weight `in x out` followed by a bias `1 x out`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    encoder: (usize, usize),
    dynamics: (usize, usize),
    reward: (usize, usize),
}

impl WorldModel {
    pub fn new(config: ModelConfig, obs_dim: usize, action_dim: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if obs_dim == 0 || action_dim == 0 {
            return Err(ModelError::InvalidInput("obs_dim and action_dim must be positive".into()));
        }
        let in_dim = obs_dim * config.history_stack;
        let latent_dim = config.latent_dim.unwrap_or(in_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();

        if latent_dim == in_dim {
            params.push(Matrix::identity(in_dim));
        } else {
            params.push(glorot(&mut rng, in_dim, latent_dim));
        }
        params.push(Matrix::zeros(1, latent_dim));

        let h = config.hidden_units;
        for (input, output) in [(latent_dim + action_dim, latent_dim), (latent_dim, 1)] {
            let mut width = input;
            for _ in 0..config.hidden_layers {
                params.push(glorot(&mut rng, width, h));
                params.push(Matrix::zeros(1, h));
                width = h;
            }
            params.push(Matrix::zeros(h, output));
            params.push(Matrix::zeros(1, output));
        }
        let velocity = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Ok(Self {
            config,
            obs_dim,
            action_dim,
            latent_dim,
            params,
            velocity,
            updates: 0,
        })
    }

    fn layout(&self) -> Layout {
        let per_net = 2 * (self.config.hidden_layers + 1);
        Layout {
            encoder: (0, 2),
            dynamics: (2, 2 + per_net),
            reward: (2 + per_net, 2 + 2 * per_net),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim * self.config.history_stack
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data().len()).sum()
    }

    /// Indices of parameter tensors that receive gradients.
    pub fn trainable(&self) -> std::ops::Range<usize> {
        if self.config.train_encoder {
            0..self.params.len()
        } else {
            2..self.params.len()
        }
    }

    /// Replaces every parameter with a uniform draw in `[-scale, scale]`.
    /// Used by gradient checks, where zero-initialized output layers would
    /// hide the hidden-layer gradients.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            p.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-scale..=scale));
        }
    }

    fn mlp(&self, range: (usize, usize), mut x: Matrix) -> Matrix {
        let layers = (range.1 - range.0) / 2;
        for l in 0..layers {
            let w = &self.params[range.0 + 2 * l];
            let b = &self.params[range.0 + 2 * l + 1];
            x = x.matmul(w);
            x.add_row(b.data());
            if l + 1 < layers {
                x.map_inplace(f64::tanh);
            }
        }
        x
    }

    fn mlp_tape(tape: &mut Tape, ids: &[NodeId], x: NodeId) -> NodeId {
        let layers = ids.len() / 2;
        let mut h = x;
        for l in 0..layers {
            h = tape.affine(h, ids[2 * l], ids[2 * l + 1]);
            if l + 1 < layers {
                h = tape.tanh(h);
            }
        }
        h
    }

    pub fn encode_batch(&self, histories: &Matrix) -> Result<Matrix, ModelError> {
        if histories.cols() != self.input_dim() {
            return Err(ModelError::InvalidInput(format!(
                "history width {} != {} (obs_dim {} x stack {})",
                histories.cols(),
                self.input_dim(),
                self.obs_dim,
                self.config.history_stack
            )));
        }
        Ok(self.mlp(self.layout().encoder, histories.clone()))
    }

    pub fn encode(&self, history: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.encode_batch(&Matrix::from_vec(1, history.len(), history.to_vec()))?.into_vec())
    }

    /// Next latents for a batch; `z` is `n x latent_dim`, `a` is `n x action_dim`.
    pub fn predict_dynamics_batch(&self, z: &Matrix, a: &Matrix) -> Result<Matrix, ModelError> {
        if z.cols() != self.latent_dim || a.cols() != self.action_dim || z.rows() != a.rows() {
            return Err(ModelError::InvalidInput(format!(
                "dynamics input shapes {:?} and {:?}, expected n x {} and n x {}",
                z.shape(),
                a.shape(),
                self.latent_dim,
                self.action_dim
            )));
        }
        Ok(self.mlp(self.layout().dynamics, z.hcat(a)))
    }

    pub fn predict_dynamics(&self, z: &[f64], a: &[f64]) -> Result<Vec<f64>, ModelError> {
        let z = Matrix::from_vec(1, z.len(), z.to_vec());
        let a = Matrix::from_vec(1, a.len(), a.to_vec());
        Ok(self.predict_dynamics_batch(&z, &a)?.into_vec())
    }

    /// Predicted rewards, in reward units, for each latent row.
    pub fn predict_reward_batch(&self, z: &Matrix) -> Result<Vec<f64>, ModelError> {
        if z.cols() != self.latent_dim {
            return Err(ModelError::InvalidInput(format!("latent width {} != {}", z.cols(), self.latent_dim)));
        }
        let scale = self.config.reward_scale;
        Ok(self.mlp(self.layout().reward, z.clone()).into_vec().into_iter().map(|r| r * scale).collect())
    }

    pub fn predict_reward(&self, z: &[f64]) -> Result<f64, ModelError> {
        Ok(self.predict_reward_batch(&Matrix::from_vec(1, z.len(), z.to_vec()))?[0])
    }

    /// Rolls the dynamics forward from `z0` under `actions`; reward `k` is the
    /// head's output at latent `k`, the state reached by action `k`.
    pub fn imagine(&self, z0: &[f64], actions: &[Vec<f64>]) -> Result<ImaginedRollout, ModelError> {
        if actions.is_empty() {
            return Err(ModelError::InvalidInput("imagination horizon must be at least 1".into()));
        }
        let mut z = z0.to_vec();
        let mut latents = Vec::with_capacity(actions.len());
        let mut rewards = Vec::with_capacity(actions.len());
        for a in actions {
            z = self.predict_dynamics(&z, a)?;
            rewards.push(self.predict_reward(&z)?);
            latents.push(z.clone());
        }
        Ok(ImaginedRollout { latents, rewards })
    }

    fn check_batch(&self, batch: &TrainingBatch) -> Result<(), ModelError> {
        if batch.input_dim() != self.input_dim() || batch.action_dim() != self.action_dim {
            return Err(ModelError::InvalidInput(format!(
                "batch shapes (history {}, action {}) do not match model ({}, {})",
                batch.input_dim(),
                batch.action_dim(),
                self.input_dim(),
                self.action_dim
            )));
        }
        Ok(())
    }

    /// Builds the loss graph and returns the tape, its root and the loss
    /// record. `frozen` overrides the values of the stop-gradient nodes.
    fn build_loss(&self, batch: &TrainingBatch, frozen: Option<&Frozen>) -> (Tape, NodeId, LossRecord, Frozen) {
        let lay = self.layout();
        let n = batch.batch;
        let steps = batch.seq_len;
        let scale = self.config.reward_scale;
        let mut tape = Tape::new();
        let trainable = self.trainable();
        let ids: Vec<NodeId> = self
            .params
            .iter()
            .enumerate()
            .map(|(k, p)| {
                if trainable.contains(&k) {
                    tape.param(k, p.clone())
                } else {
                    tape.input(p.clone())
                }
            })
            .collect();

        let targets_z = match frozen {
            Some(f) => f.targets.clone(),
            None => self.mlp(lay.encoder, batch.histories.clone()),
        };
        let z_all = if self.config.train_encoder {
            let h = tape.input(batch.histories.clone());
            Self::mlp_tape(&mut tape, &ids[lay.encoder.0..lay.encoder.1], h)
        } else {
            tape.input(targets_z.clone())
        };

        let scaled: Vec<f64> = batch.targets.iter().map(|r| r / scale).collect();
        let r_direct = Self::mlp_tape(&mut tape, &ids[lay.reward.0..lay.reward.1], z_all);
        let direct = tape.mse_const(r_direct, Matrix::from_vec(steps * n, 1, scaled.clone()));

        let mut z_hat = tape.rows(z_all, 0, n);
        let mut dyn_terms = Vec::new();
        let mut rolled = Vec::new();
        for k in 1..steps {
            let a = tape.input(batch.actions.row_block((k - 1) * n, n));
            let x = tape.hcat(z_hat, a);
            z_hat = Self::mlp_tape(&mut tape, &ids[lay.dynamics.0..lay.dynamics.1], x);
            dyn_terms.push(tape.mse_const(z_hat, targets_z.row_block(k * n, n)));
            rolled.push(z_hat);
        }

        let (root, record, imagined) = if rolled.is_empty() {
            let rec = LossRecord {
                dyn_mse: 0.0,
                rew_mse: tape.scalar(direct),
            };
            (tape.weighted_sum(vec![(direct, 1.0)]), rec, None)
        } else {
            let stacked = tape.vstack(rolled);
            // the reward head sees imagined latents without pulling the dynamics towards them
            let imagined = match frozen.and_then(|f| f.imagined.as_ref()) {
                Some(m) => m.clone(),
                None => tape.value(stacked).clone(),
            };
            let stacked = tape.input(imagined.clone());
            let r_roll = Self::mlp_tape(&mut tape, &ids[lay.reward.0..lay.reward.1], stacked);
            let roll = tape.mse_const(r_roll, Matrix::from_vec((steps - 1) * n, 1, scaled[n..].to_vec()));
            let w = 1.0 / dyn_terms.len() as f64;
            let dyn_node = tape.weighted_sum(dyn_terms.iter().map(|&d| (d, w)).collect());
            let w_roll = self.config.reward_rollout_weight;
            let rew_node = tape.weighted_sum(vec![(direct, 1.0 - w_roll), (roll, w_roll)]);
            let rec = LossRecord {
                dyn_mse: tape.scalar(dyn_node),
                rew_mse: tape.scalar(rew_node),
            };
            (tape.weighted_sum(vec![(dyn_node, 1.0), (rew_node, 1.0)]), rec, Some(imagined))
        };
        let frozen = Frozen {
            targets: targets_z,
            imagined,
        };
        (tape, root, record, frozen)
    }

    pub fn loss(&self, batch: &TrainingBatch) -> Result<LossRecord, ModelError> {
        self.check_batch(batch)?;
        Ok(self.build_loss(batch, None).2)
    }

    /// Loss and the gradient of `dyn_mse + rew_mse` for every parameter
    /// tensor (zeros for frozen tensors).
    pub fn gradients(&self, batch: &TrainingBatch) -> Result<(LossRecord, Vec<Matrix>), ModelError> {
        self.check_batch(batch)?;
        let (tape, root, record, _) = self.build_loss(batch, None);
        let grads = tape
            .backward(root, self.params.len())
            .into_iter()
            .zip(&self.params)
            .map(|(g, p)| g.unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
            .collect();
        Ok((record, grads))
    }

    /// One clipped momentum-SGD step. Returns the losses before the update.
    /// On a non-finite loss or gradient the parameters are left untouched.
    pub fn train_step(&mut self, batch: &TrainingBatch) -> Result<LossRecord, ModelError> {
        let (record, mut grads) = self.gradients(batch)?;
        let norm_sq: f64 = grads.iter().map(Matrix::sum_squares).sum();
        if !(record.dyn_mse.is_finite() && record.rew_mse.is_finite() && norm_sq.is_finite()) {
            return Err(ModelError::NonFinite {
                batch_id: batch.id,
                dyn_mse: record.dyn_mse,
                rew_mse: record.rew_mse,
            });
        }
        let norm = norm_sq.sqrt();
        if norm > self.config.grad_clip {
            let c = self.config.grad_clip / norm;
            grads.iter_mut().for_each(|g| g.scale(c));
        }
        let lr = self.config.learning_rate;
        let mu = self.config.momentum;
        for k in self.trainable() {
            let v = self.velocity[k].data_mut();
            for (vi, gi) in v.iter_mut().zip(grads[k].data()) {
                *vi = mu * *vi + gi;
            }
            for (p, vi) in self.params[k].data_mut().iter_mut().zip(self.velocity[k].data()) {
                *p -= lr * vi;
            }
        }
        self.updates += 1;
        if !self.params.iter().all(Matrix::is_finite) {
            return Err(ModelError::NonFinite {
                batch_id: batch.id,
                dyn_mse: record.dyn_mse,
                rew_mse: record.rew_mse,
            });
        }
        Ok(record)
    }

    /// Largest relative difference between analytic gradients and central
    /// finite differences over all trainable parameters. The relative error
    /// is `|a - f| / max(|a|, |f|, floor)`. Stop-gradient values (latent
    /// targets and imagined latents fed to the reward head) are held at their
    /// unperturbed values.
    pub fn finite_difference_check(&self, batch: &TrainingBatch, eps: f64, floor: f64) -> Result<f64, ModelError> {
        let (_, grads) = self.gradients(batch)?;
        let frozen = self.build_loss(batch, None).3;
        let total = |m: &WorldModel| -> Result<f64, ModelError> {
            let l = m.build_loss(batch, Some(&frozen)).2;
            Ok(l.dyn_mse + l.rew_mse)
        };
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for k in self.trainable() {
            for i in 0..self.params[k].data().len() {
                let orig = self.params[k].data()[i];
                probe.params[k].data_mut()[i] = orig + eps;
                let fp = total(&probe)?;
                probe.params[k].data_mut()[i] = orig - eps;
                let fm = total(&probe)?;
                probe.params[k].data_mut()[i] = orig;
                let fd = (fp - fm) / (2.0 * eps);
                let an = grads[k].data()[i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(floor);
                worst = worst.max(rel);
            }
        }
        Ok(worst)
    }

    pub(crate) fn velocity(&self) -> &[Matrix] {
        &self.velocity
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        obs_dim: usize,
        action_dim: usize,
        params: Vec<Matrix>,
        velocity: Vec<Matrix>,
        updates: u64,
    ) -> Result<Self, ModelError> {
        let template = Self::new(config.clone(), obs_dim, action_dim, 0)?;
        let shapes_ok = |ms: &[Matrix]| {
            ms.len() == template.params.len() && ms.iter().zip(&template.params).all(|(a, b)| a.shape() == b.shape())
        };
        if !shapes_ok(&params) || !shapes_ok(&velocity) {
            return Err(ModelError::Checkpoint("tensor shapes do not match the config".into()));
        }
        Ok(Self {
            params,
            velocity,
            updates,
            ..template
        })
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect())
}
