//! Episode storage, collection-time reward smoothing and replay sampling.

use std::cell::Cell;
use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{Action, StepResult};
use crate::kernels::{KernelError, RewardSequence, Smoother};

pub const DEFAULT_SPARSE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("insufficient data: no stored episode has {seq_len} steps")]
    InsufficientData { seq_len: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("episode log: {0}")]
    Io(#[from] std::io::Error),
    #[error("episode log line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

thread_local! {
    static RAW_READS: Cell<u64> = const { Cell::new(0) };
}

/// Number of raw-reward reads made through [`Step::reward_raw`] on this thread.
///
/// Training code only touches smoothed rewards; tests compare this counter
/// before and after a training step.
pub fn raw_reward_reads() -> u64 {
    RAW_READS.with(|c| c.get())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    /// `None` on the reset step, which precedes any action.
    pub action: Option<Action>,
    reward_raw: f64,
    reward_smoothed: f64,
    pub done: bool,
}

impl Step {
    pub fn reward_raw(&self) -> f64 {
        RAW_READS.with(|c| c.set(c.get() + 1));
        self.reward_raw
    }

    pub fn reward_smoothed(&self) -> f64 {
        self.reward_smoothed
    }
}

/// One rollout. Index 0 holds the reset observation with zero reward; index
/// `k` holds the observation, action and reward of the `k`-th transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub env_id: String,
    pub seed: u64,
    steps: Vec<Step>,
    sparse_mask: Vec<bool>,
    finalized: bool,
    subtasks_done: usize,
}

impl Episode {
    pub fn begin(env_id: &str, seed: u64, initial_obs: Vec<f64>) -> Self {
        Self {
            env_id: env_id.to_string(),
            seed,
            steps: vec![Step {
                obs: initial_obs,
                action: None,
                reward_raw: 0.0,
                reward_smoothed: 0.0,
                done: false,
            }],
            sparse_mask: vec![false],
            finalized: false,
            subtasks_done: 0,
        }
    }

    /// An episode with no steps at all; only useful to exercise validation.
    pub fn empty(env_id: &str, seed: u64) -> Self {
        Self {
            env_id: env_id.to_string(),
            seed,
            steps: vec![],
            sparse_mask: vec![],
            finalized: false,
            subtasks_done: 0,
        }
    }

    /// Builds a finished, unfinalized episode from raw arrays.
    pub fn from_parts(
        env_id: &str,
        seed: u64,
        obs: Vec<Vec<f64>>,
        actions: Vec<Option<Action>>,
        rewards: Vec<f64>,
    ) -> Result<Self, EpisodeError> {
        if obs.len() != actions.len() || obs.len() != rewards.len() {
            return Err(EpisodeError::InvalidInput(format!(
                "array lengths differ: obs {}, action {}, reward {}",
                obs.len(),
                actions.len(),
                rewards.len()
            )));
        }
        let n = obs.len();
        let steps = obs
            .into_iter()
            .zip(actions)
            .zip(rewards)
            .enumerate()
            .map(|(k, ((obs, action), r))| Step {
                obs,
                action,
                reward_raw: r,
                reward_smoothed: r,
                done: k + 1 == n,
            })
            .collect();
        Ok(Self {
            env_id: env_id.to_string(),
            seed,
            steps,
            sparse_mask: vec![false; n],
            finalized: false,
            subtasks_done: 0,
        })
    }

    /// Appends one transition. Fails once the episode is done.
    pub fn record(&mut self, action: Action, result: StepResult) -> Result<(), EpisodeError> {
        if self.is_complete() || self.finalized {
            return Err(EpisodeError::InvalidState("episode already complete".into()));
        }
        self.subtasks_done = result.info.subtasks_done;
        self.steps.push(Step {
            obs: result.obs,
            action: Some(action),
            reward_raw: result.reward,
            reward_smoothed: result.reward,
            done: result.done,
        });
        self.sparse_mask.push(false);
        Ok(())
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.steps.last().is_some_and(|s| s.done)
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn sparse_mask(&self) -> &[bool] {
        &self.sparse_mask
    }

    pub fn subtasks_done(&self) -> usize {
        self.subtasks_done
    }

    pub fn set_subtasks_done(&mut self, n: usize) {
        self.subtasks_done = n;
    }

    pub fn rewards_raw(&self) -> Vec<f64> {
        self.steps.iter().map(Step::reward_raw).collect()
    }

    pub fn rewards_smoothed(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward_smoothed).collect()
    }

    /// Undiscounted sum of raw rewards.
    pub fn raw_return(&self) -> f64 {
        self.steps.iter().map(Step::reward_raw).sum()
    }
}

/// Fills `reward_smoothed` from the raw rewards. Raw rewards are kept as-is.
pub fn finalize_episode(mut episode: Episode, smoother: &Smoother) -> Result<Episode, EpisodeError> {
    if episode.is_empty() {
        return Err(EpisodeError::InvalidInput("empty episode".into()));
    }
    if !episode.is_complete() {
        return Err(EpisodeError::InvalidState(
            "episode has not reached a terminal state or the horizon".into(),
        ));
    }
    if episode.steps[..episode.len() - 1].iter().any(|s| s.done) {
        return Err(EpisodeError::InvalidInput("only the last step may be done".into()));
    }
    let raw = RewardSequence::undiscounted(episode.steps.iter().map(|s| s.reward_raw).collect())?;
    let smoothed = smoother.apply(&raw)?;
    for (step, r) in episode.steps.iter_mut().zip(smoothed) {
        step.reward_smoothed = r;
    }
    episode.finalized = true;
    Ok(episode)
}

/// A contiguous slice of one stored episode. Holds its episode alive, so a
/// batch stays valid regardless of later pushes and evictions.
#[derive(Debug, Clone)]
pub struct Window {
    episode: Arc<Episode>,
    start: usize,
    len: usize,
}

impl Window {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn steps(&self) -> &[Step] {
        &self.episode.steps[self.start..self.start + self.len]
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn contains_sparse(&self) -> bool {
        self.episode.sparse_mask[self.start..self.start + self.len].iter().any(|&b| b)
    }

    /// Identifies the window by episode identity and start index.
    pub fn key(&self) -> (usize, usize) {
        (Arc::as_ptr(&self.episode) as usize, self.start)
    }
}

/// Immutable view of the buffer contents at one point in time.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    episodes: Vec<Arc<Episode>>,
}

struct WindowIndex {
    /// Cumulative window counts per episode.
    all: Vec<usize>,
    /// Cumulative sparse-window counts and the sparse window starts per episode.
    sparse_cum: Vec<usize>,
    sparse_starts: Vec<Vec<usize>>,
}

impl Snapshot {
    pub fn episodes(&self) -> &[Arc<Episode>] {
        &self.episodes
    }

    fn index(&self, seq_len: usize, with_sparse: bool) -> WindowIndex {
        let mut all = Vec::with_capacity(self.episodes.len());
        let mut sparse_cum = Vec::new();
        let mut sparse_starts = Vec::new();
        let mut total = 0;
        let mut sparse_total = 0;
        for ep in &self.episodes {
            let n = (ep.len() + 1).saturating_sub(seq_len);
            total += n;
            all.push(total);
            if with_sparse {
                let mut starts = Vec::new();
                if n > 0 {
                    // prefix count of sparse flags so each window is O(1)
                    let mut prefix = vec![0usize; ep.len() + 1];
                    for (k, &b) in ep.sparse_mask.iter().enumerate() {
                        prefix[k + 1] = prefix[k] + usize::from(b);
                    }
                    starts.extend((0..n).filter(|&s| prefix[s + seq_len] > prefix[s]));
                }
                sparse_total += starts.len();
                sparse_cum.push(sparse_total);
                sparse_starts.push(starts);
            }
        }
        WindowIndex {
            all,
            sparse_cum,
            sparse_starts,
        }
    }

    fn locate(cum: &[usize], u: usize) -> (usize, usize) {
        let e = cum.partition_point(|&c| c <= u);
        let before = if e == 0 { 0 } else { cum[e - 1] };
        (e, u - before)
    }

    fn window(&self, episode: usize, start: usize, seq_len: usize) -> Window {
        Window {
            episode: Arc::clone(&self.episodes[episode]),
            start,
            len: seq_len,
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        batch: usize,
        seq_len: usize,
    ) -> Result<Vec<Window>, EpisodeError> {
        self.sample_oversampled(rng, batch, seq_len, 0.0)
    }

    pub fn sample_oversampled<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        batch: usize,
        seq_len: usize,
        p: f64,
    ) -> Result<Vec<Window>, EpisodeError> {
        if seq_len == 0 {
            return Err(EpisodeError::InvalidInput("seq_len must be positive".into()));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(EpisodeError::InvalidInput(format!("oversampling probability {p} outside [0, 1]")));
        }
        let idx = self.index(seq_len, p > 0.0);
        let total = idx.all.last().copied().unwrap_or(0);
        if total == 0 {
            return Err(EpisodeError::InsufficientData { seq_len });
        }
        let sparse_total = idx.sparse_cum.last().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let use_sparse = p > 0.0 && rng.random_bool(p) && sparse_total > 0;
            if use_sparse {
                let (e, k) = Self::locate(&idx.sparse_cum, rng.random_range(0..sparse_total));
                out.push(self.window(e, idx.sparse_starts[e][k], seq_len));
            } else {
                let (e, s) = Self::locate(&idx.all, rng.random_range(0..total));
                out.push(self.window(e, s, seq_len));
            }
        }
        Ok(out)
    }
}

/// Step-bounded FIFO of finalized episodes with a seeded sampler.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    episodes: VecDeque<Arc<Episode>>,
    capacity: usize,
    total_steps: usize,
    rng: ChaCha8Rng,
    sparse_threshold: f64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64, sparse_threshold: f64) -> Result<Self, EpisodeError> {
        if capacity == 0 {
            return Err(EpisodeError::InvalidInput("capacity must be positive".into()));
        }
        if !(sparse_threshold.is_finite() && sparse_threshold >= 0.0) {
            return Err(EpisodeError::InvalidInput(format!("sparse_threshold {sparse_threshold}")));
        }
        Ok(Self {
            episodes: VecDeque::new(),
            capacity,
            total_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sparse_threshold,
        })
    }

    pub fn push(&mut self, mut episode: Episode) -> Result<(), EpisodeError> {
        if !episode.finalized {
            return Err(EpisodeError::InvalidState("episode must be finalized before push".into()));
        }
        if episode.len() > self.capacity {
            return Err(EpisodeError::InvalidInput(format!(
                "episode of {} steps exceeds buffer capacity {}",
                episode.len(),
                self.capacity
            )));
        }
        let threshold = self.sparse_threshold;
        episode.sparse_mask = episode.steps.iter().map(|s| s.reward_raw.abs() >= threshold).collect();
        self.total_steps += episode.len();
        self.episodes.push_back(Arc::new(episode));
        while self.total_steps > self.capacity {
            let old = self.episodes.pop_front().expect("non-empty while over capacity");
            self.total_steps -= old.len();
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            episodes: self.episodes.iter().cloned().collect(),
        }
    }

    pub fn sample_uniform(&mut self, batch: usize, seq_len: usize) -> Result<Vec<Window>, EpisodeError> {
        let snap = self.snapshot();
        snap.sample_uniform(&mut self.rng, batch, seq_len)
    }

    pub fn sample_oversampled(&mut self, batch: usize, seq_len: usize, p: f64) -> Result<Vec<Window>, EpisodeError> {
        let snap = self.snapshot();
        snap.sample_oversampled(&mut self.rng, batch, seq_len, p)
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sparse_threshold(&self) -> f64 {
        self.sparse_threshold
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter().map(|e| e.as_ref())
    }

    pub fn rng_state(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_rng_state(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }
}

/// One line of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub env_id: String,
    pub seed: u64,
    pub obs: Vec<Vec<f64>>,
    pub action: Vec<Option<Action>>,
    pub reward_raw: Vec<f64>,
    pub reward_smoothed: Vec<f64>,
    #[serde(default)]
    pub subtasks_done: usize,
}

impl From<&Episode> for EpisodeRecord {
    fn from(ep: &Episode) -> Self {
        Self {
            env_id: ep.env_id.clone(),
            seed: ep.seed,
            obs: ep.steps.iter().map(|s| s.obs.clone()).collect(),
            action: ep.steps.iter().map(|s| s.action.clone()).collect(),
            reward_raw: ep.steps.iter().map(|s| s.reward_raw).collect(),
            reward_smoothed: ep.rewards_smoothed(),
            subtasks_done: ep.subtasks_done,
        }
    }
}

impl EpisodeRecord {
    /// Rebuilds a finalized episode, keeping the logged smoothed rewards.
    pub fn into_episode(self) -> Result<Episode, EpisodeError> {
        if self.reward_smoothed.len() != self.reward_raw.len() {
            return Err(EpisodeError::InvalidInput("reward arrays differ in length".into()));
        }
        let mut ep = Episode::from_parts(&self.env_id, self.seed, self.obs, self.action, self.reward_raw)?;
        if ep.is_empty() {
            return Err(EpisodeError::InvalidInput("empty episode".into()));
        }
        for (s, r) in ep.steps.iter_mut().zip(self.reward_smoothed) {
            s.reward_smoothed = r;
        }
        ep.subtasks_done = self.subtasks_done;
        ep.finalized = true;
        Ok(ep)
    }
}

pub fn write_episode<W: Write>(out: &mut W, episode: &Episode) -> Result<(), EpisodeError> {
    let line = serde_json::to_string(&EpisodeRecord::from(episode)).map_err(|e| EpisodeError::Json { line: 0, source: e })?;
    writeln!(out, "{line}")?;
    Ok(())
}

pub fn read_episodes<R: BufRead>(input: R) -> Result<Vec<Episode>, EpisodeError> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord = serde_json::from_str(&line).map_err(|e| EpisodeError::Json { line: k + 1, source: e })?;
        out.push(rec.into_episode()?);
    }
    Ok(out)
}
