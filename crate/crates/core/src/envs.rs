//! Seedable toy environments.
//!
//! Each environment produces low-dimensional real observations and is
//! reproducible bit-for-bit from its seed. The sparse environments only pay
//! sparse rewards inside the interior window `[INTERIOR_MARGIN, horizon -
//! INTERIOR_MARGIN]`; outside it the rewarding mechanism is closed and the
//! current step index is part of every observation so the gate is visible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance, in steps, that sparse events keep from both episode ends.
pub const INTERIOR_MARGIN: usize = 12;

/// Magnitude of a completed subtask.
pub const SPARSE_REWARD: f64 = 300.0;

pub const REGISTRY: [&str; 4] = ["two_stage_grid", "ambiguous_delay", "stochastic_bonus", "dense_reach"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid action {action:?} for action space {space:?}")]
    InvalidAction { action: Action, space: ActionSpace },
    #[error("step called after the episode finished; call reset first")]
    EpisodeFinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete(usize),
    Box { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Width of the vector fed to the world model (one-hot for discrete).
    pub fn encoded_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Box { dim, .. } => *dim,
        }
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) => a < n,
            (ActionSpace::Box { dim, low, high }, Action::Continuous(v)) => {
                v.len() == *dim && v.iter().all(|x| x.is_finite() && *x >= *low && *x <= *high)
            }
            _ => false,
        }
    }

    /// Writes the model encoding of `action` into `out`; `None` encodes as zeros.
    pub fn encode_into(&self, action: Option<&Action>, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        match (self, action) {
            (ActionSpace::Discrete(_), Some(Action::Discrete(a))) => out[*a] = 1.0,
            (ActionSpace::Box { .. }, Some(Action::Continuous(v))) => out.copy_from_slice(v),
            _ => {}
        }
    }

    pub fn encode(&self, action: Option<&Action>) -> Vec<f64> {
        let mut out = vec![0.0; self.encoded_dim()];
        self.encode_into(action, &mut out);
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            ActionSpace::Discrete(n) => Action::Discrete(rng.random_range(0..*n)),
            ActionSpace::Box { dim, low, high } => {
                Action::Continuous((0..*dim).map(|_| rng.random_range(*low..=*high)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub seed: u64,
}

impl EnvSpec {
    /// Registry defaults for `id`.
    pub fn new(id: &str, seed: u64) -> Result<Self, EnvError> {
        let (obs_dim, action_space, horizon) = match id {
            "two_stage_grid" => (GRID_OBS_DIM, ActionSpace::Discrete(5), 100),
            "ambiguous_delay" => (3, ActionSpace::Discrete(3), 80),
            "stochastic_bonus" => (2, ActionSpace::Discrete(2), 60),
            "dense_reach" => (
                6,
                ActionSpace::Box {
                    dim: 2,
                    low: -1.0,
                    high: 1.0,
                },
                50,
            ),
            other => return Err(EnvError::UnknownEnv(other.to_string())),
        };
        Ok(Self {
            id: id.to_string(),
            obs_dim,
            action_space,
            horizon,
            seed,
        })
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Subtasks completed so far in this episode.
    pub subtasks_done: usize,
    /// Step index of a hidden causal event (contact, button press) that
    /// happened on this step. Diagnostics only; never part of `obs`.
    pub event_time_true: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Restarts the episode with a fresh seed and returns the first observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;

    /// Privileged policy that completes every subtask; used as a test oracle
    /// and for offline data collection.
    fn scripted_action(&self) -> Action;

    /// Number of subtasks the environment offers per episode.
    fn subtask_count(&self) -> usize;
}

/// Builds a registered environment in its post-reset state.
pub fn make_env(spec: &EnvSpec) -> Result<Box<dyn Env>, EnvError> {
    let defaults = EnvSpec::new(&spec.id, spec.seed)?;
    if spec.obs_dim != defaults.obs_dim || spec.action_space != defaults.action_space {
        return Err(EnvError::InvalidParameter {
            name: "spec",
            reason: format!("obs_dim/action_space do not match the registry entry for `{}`", spec.id),
        });
    }
    let min_horizon = min_horizon(&spec.id);
    if spec.horizon < min_horizon || spec.horizon > 200 {
        return Err(EnvError::InvalidParameter {
            name: "horizon",
            reason: format!("`{}` needs a horizon in [{min_horizon}, 200], got {}", spec.id, spec.horizon),
        });
    }
    let mut env: Box<dyn Env> = match spec.id.as_str() {
        "two_stage_grid" => Box::new(TwoStageGrid::new(spec.clone())),
        "ambiguous_delay" => Box::new(AmbiguousDelay::new(spec.clone())),
        "stochastic_bonus" => Box::new(StochasticBonus::new(spec.clone())),
        "dense_reach" => Box::new(DenseReach::new(spec.clone())),
        other => return Err(EnvError::UnknownEnv(other.to_string())),
    };
    env.reset(spec.seed);
    Ok(env)
}

fn min_horizon(id: &str) -> usize {
    match id {
        "dense_reach" => 1,
        // room for the fastest completion plus the trailing margin
        _ => 3 * INTERIOR_MARGIN,
    }
}

fn discrete_index(spec: &EnvSpec, action: &Action) -> Result<usize, EnvError> {
    match action {
        Action::Discrete(a) if spec.action_space.contains(action) => Ok(*a),
        _ => Err(EnvError::InvalidAction {
            action: action.clone(),
            space: spec.action_space.clone(),
        }),
    }
}

/// True when a sparse payout at episode index `t` keeps the interior margin.
fn payout_allowed(t: usize, horizon: usize) -> bool {
    t >= INTERIOR_MARGIN && t + INTERIOR_MARGIN <= horizon
}

// ---------------------------------------------------------------------------
// two_stage_grid

const GRID: i32 = 7;
const GRID_OBS_DIM: usize = 6;
const BLOCK_ROW: i32 = 3;
const BLOCK_START: i32 = 2;
const BIN_X: i32 = 5;
const BUTTON: (i32, i32) = (0, 6);
/// Hidden delay between pressing the button and its payout.
pub const BUTTON_DELAY: (usize, usize) = (1, 3);

/// 7x7 grid with two ordered subtasks.
///
/// The block rides a rail along row 3; walking into it from the side pushes
/// it one cell. Pushing it into the bin at `(5, 3)` pays +300. Afterwards
/// stepping on the button at `(0, 6)` arms a hidden timer and +300 is paid
/// 1 to 3 steps later. The button state is not observed. While the block is
/// out of the bin a dense term `-0.025 * cells_to_bin` (at most 0.1 in size)
/// rewards progress.
///
/// The agent starts in column 0 on one of the three rows around the rail.
///
/// Observation: `[ax, ay, bx, by, block_in_bin, t / horizon]`, positions
/// scaled to `[0, 1]`. Actions: 0 stay, 1 up, 2 down, 3 left, 4 right.
pub struct TwoStageGrid {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    t: usize,
    agent: (i32, i32),
    block_x: i32,
    in_bin: bool,
    pressed_at: Option<usize>,
    pending_delay: usize,
    paid: bool,
    done: bool,
}

impl TwoStageGrid {
    fn new(spec: EnvSpec) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            spec,
            t: 0,
            agent: (0, 0),
            block_x: BLOCK_START,
            in_bin: false,
            pressed_at: None,
            pending_delay: 0,
            paid: false,
            done: false,
        }
    }

    fn obs(&self) -> Vec<f64> {
        let s = (GRID - 1) as f64;
        let (bx, by) = if self.in_bin { (BIN_X, BLOCK_ROW) } else { (self.block_x, BLOCK_ROW) };
        vec![
            self.agent.0 as f64 / s,
            self.agent.1 as f64 / s,
            bx as f64 / s,
            by as f64 / s,
            if self.in_bin { 1.0 } else { 0.0 },
            self.t as f64 / self.spec.horizon as f64,
        ]
    }

    fn subtasks(&self) -> usize {
        usize::from(self.in_bin) + usize::from(self.paid)
    }

    /// Whether a press at `t` is guaranteed to pay out inside the interior.
    fn button_open(&self, t: usize) -> bool {
        t >= INTERIOR_MARGIN && payout_allowed(t + BUTTON_DELAY.1, self.spec.horizon)
    }
}

impl Env for TwoStageGrid {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.agent = (0, self.rng.random_range(BLOCK_ROW - 1..=BLOCK_ROW + 1));
        self.block_x = BLOCK_START;
        self.in_bin = false;
        self.pressed_at = None;
        self.pending_delay = self.rng.random_range(BUTTON_DELAY.0..=BUTTON_DELAY.1);
        self.paid = false;
        self.done = false;
        self.obs()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let a = discrete_index(&self.spec, action)?;
        self.t += 1;
        let t = self.t;
        let mut reward = 0.0;
        let mut event = None;

        let (dx, dy) = match a {
            1 => (0, 1),
            2 => (0, -1),
            3 => (-1, 0),
            4 => (1, 0),
            _ => (0, 0),
        };
        let target = (self.agent.0 + dx, self.agent.1 + dy);
        let inside = (0..GRID).contains(&target.0) && (0..GRID).contains(&target.1);
        if inside {
            let hits_block = !self.in_bin && target == (self.block_x, BLOCK_ROW);
            if !hits_block {
                self.agent = target;
            } else if dy == 0 {
                let next = self.block_x + dx;
                let lid_open = payout_allowed(t, self.spec.horizon);
                let free = if next == BIN_X { lid_open } else { (1..BIN_X).contains(&next) };
                if free {
                    self.block_x = next;
                    self.agent = target;
                    if next == BIN_X {
                        self.in_bin = true;
                        reward += SPARSE_REWARD;
                    }
                }
            }
        }

        if self.in_bin && !self.paid && self.pressed_at.is_none() && self.agent == BUTTON && self.button_open(t) {
            self.pressed_at = Some(t);
            event = Some(t);
        }
        if let Some(p) = self.pressed_at {
            if !self.paid && t == p + self.pending_delay {
                self.paid = true;
                reward += SPARSE_REWARD;
            }
        }
        if !self.in_bin {
            reward -= 0.025 * (BIN_X - self.block_x) as f64;
        }

        self.done = t >= self.spec.horizon;
        Ok(StepResult {
            obs: self.obs(),
            reward,
            done: self.done,
            info: StepInfo {
                subtasks_done: self.subtasks(),
                event_time_true: event,
            },
        })
    }

    fn scripted_action(&self) -> Action {
        let (ax, ay) = self.agent;
        let a = if !self.in_bin {
            if ax < self.block_x - 1 && ay == BLOCK_ROW {
                4
            } else if ax >= self.block_x && ay == BLOCK_ROW {
                // went past the block; step off the rail row
                1
            } else if ay != BLOCK_ROW {
                if ax >= self.block_x {
                    3
                } else if ay < BLOCK_ROW {
                    1
                } else {
                    2
                }
            } else if self.t + 1 < INTERIOR_MARGIN && self.block_x + 1 == BIN_X {
                // lid still closed
                0
            } else {
                4
            }
        } else if self.pressed_at.is_none() {
            if ax != BUTTON.0 {
                if ax < BUTTON.0 {
                    4
                } else {
                    3
                }
            } else if ay < BUTTON.1 {
                1
            } else {
                0
            }
        } else {
            0
        };
        Action::Discrete(a)
    }

    fn subtask_count(&self) -> usize {
        2
    }
}

// ---------------------------------------------------------------------------
// ambiguous_delay

const TRACK: i32 = 24;
const TRACK_BLOCK: i32 = 8;
const TRACK_BIN: i32 = 18;
pub const PAYOUT_DELAY: (usize, usize) = (1, 4);

/// 1-D push task with a hidden payout delay.
///
/// The agent walks a 24-cell track and pushes a block from cell 8 into the
/// bin at cell 18. Contact with the bin latches internally; +300 is paid `d`
/// steps later with `d` drawn uniformly from `1..=4` per episode. The latch
/// and `d` are never observed.
///
/// Observation: `[agent_x, block_x, t / horizon]` scaled to `[0, 1]`.
/// Actions: 0 stay, 1 left, 2 right.
pub struct AmbiguousDelay {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    t: usize,
    agent: i32,
    block: i32,
    delay: usize,
    contact_at: Option<usize>,
    paid: bool,
    done: bool,
}

impl AmbiguousDelay {
    fn new(spec: EnvSpec) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            spec,
            t: 0,
            agent: 0,
            block: TRACK_BLOCK,
            delay: 1,
            contact_at: None,
            paid: false,
            done: false,
        }
    }

    fn obs(&self) -> Vec<f64> {
        let s = (TRACK - 1) as f64;
        vec![
            self.agent as f64 / s,
            self.block as f64 / s,
            self.t as f64 / self.spec.horizon as f64,
        ]
    }

    /// Hidden payout delay of the current episode.
    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Overrides the hidden delay; used to show observations do not depend on it.
    pub fn set_delay(&mut self, delay: usize) {
        self.delay = delay;
    }
}

impl Env for AmbiguousDelay {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.agent = self.rng.random_range(0..3);
        self.block = TRACK_BLOCK;
        self.delay = self.rng.random_range(PAYOUT_DELAY.0..=PAYOUT_DELAY.1);
        self.contact_at = None;
        self.paid = false;
        self.done = false;
        self.obs()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let a = discrete_index(&self.spec, action)?;
        self.t += 1;
        let t = self.t;
        let mut event = None;
        let mut reward = 0.0;
        match a {
            1 => self.agent = (self.agent - 1).max(0),
            2 => {
                let target = self.agent + 1;
                if target == self.block {
                    let next = self.block + 1;
                    let lid_open = t + PAYOUT_DELAY.0 >= INTERIOR_MARGIN
                        && payout_allowed(t + PAYOUT_DELAY.1, self.spec.horizon);
                    let movable = if next == TRACK_BIN { lid_open } else { next < TRACK_BIN };
                    if movable {
                        self.block = next;
                        self.agent = target;
                        if next == TRACK_BIN {
                            self.contact_at = Some(t);
                            event = Some(t);
                        }
                    }
                } else if target < TRACK && target != self.block {
                    self.agent = target;
                }
            }
            _ => {}
        }
        if let Some(c) = self.contact_at {
            if !self.paid && t == c + self.delay {
                self.paid = true;
                reward = SPARSE_REWARD;
            }
        }
        self.done = t >= self.spec.horizon;
        Ok(StepResult {
            obs: self.obs(),
            reward,
            done: self.done,
            info: StepInfo {
                subtasks_done: usize::from(self.paid),
                event_time_true: event,
            },
        })
    }

    fn scripted_action(&self) -> Action {
        Action::Discrete(if self.contact_at.is_none() { 2 } else { 0 })
    }

    fn subtask_count(&self) -> usize {
        1
    }
}

// ---------------------------------------------------------------------------
// stochastic_bonus

const CHAIN: i32 = 20;
pub const BONUS_VALUES: [f64; 3] = [150.0, 300.0, 450.0];

/// Chain of 20 states; reaching the last state pays a bonus drawn uniformly
/// from {150, 300, 450} once per episode.
///
/// Observation: `[position / 19, t / horizon]`. Actions: 0 left, 1 right.
pub struct StochasticBonus {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    t: usize,
    pos: i32,
    paid: bool,
    done: bool,
}

impl StochasticBonus {
    fn new(spec: EnvSpec) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            spec,
            t: 0,
            pos: 0,
            paid: false,
            done: false,
        }
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.pos as f64 / (CHAIN - 1) as f64, self.t as f64 / self.spec.horizon as f64]
    }
}

impl Env for StochasticBonus {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.pos = 0;
        self.paid = false;
        self.done = false;
        self.obs()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let a = discrete_index(&self.spec, action)?;
        self.t += 1;
        let t = self.t;
        let open = payout_allowed(t, self.spec.horizon);
        let next = if a == 0 { self.pos - 1 } else { self.pos + 1 };
        // the goal cell is closed outside the interior window
        if (0..CHAIN - 1).contains(&next) || (next == CHAIN - 1 && (open || self.paid)) {
            self.pos = next;
        }
        let mut reward = 0.0;
        let mut event = None;
        if self.pos == CHAIN - 1 && !self.paid {
            self.paid = true;
            reward = BONUS_VALUES[self.rng.random_range(0..BONUS_VALUES.len())];
            event = Some(t);
        }
        self.done = t >= self.spec.horizon;
        Ok(StepResult {
            obs: self.obs(),
            reward,
            done: self.done,
            info: StepInfo {
                subtasks_done: usize::from(self.paid),
                event_time_true: event,
            },
        })
    }

    fn scripted_action(&self) -> Action {
        Action::Discrete(1)
    }

    fn subtask_count(&self) -> usize {
        1
    }
}

// ---------------------------------------------------------------------------
// dense_reach

/// Damped 2-D point mass in `[-1, 1]^2`; reward is minus the distance to a
/// goal drawn per episode.
///
/// Observation: `[px, py, vx, vy, gx, gy]`. Action: acceleration in `[-1, 1]^2`.
pub struct DenseReach {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    t: usize,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    done: bool,
}

impl DenseReach {
    fn new(spec: EnvSpec) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            spec,
            t: 0,
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            done: false,
        }
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.goal[0], self.goal[1]]
    }

    fn distance(&self) -> f64 {
        ((self.pos[0] - self.goal[0]).powi(2) + (self.pos[1] - self.goal[1]).powi(2)).sqrt()
    }
}

impl Env for DenseReach {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        for k in 0..2 {
            self.pos[k] = self.rng.random_range(-0.9..0.9);
            self.goal[k] = self.rng.random_range(-0.8..0.8);
        }
        self.vel = [0.0; 2];
        self.done = false;
        self.obs()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let a = match action {
            Action::Continuous(v) if self.spec.action_space.contains(action) => [v[0], v[1]],
            _ => {
                return Err(EnvError::InvalidAction {
                    action: action.clone(),
                    space: self.spec.action_space.clone(),
                })
            }
        };
        self.t += 1;
        for k in 0..2 {
            self.vel[k] = 0.8 * self.vel[k] + 0.2 * a[k];
            self.pos[k] += 0.15 * self.vel[k];
            if !(-1.0..=1.0).contains(&self.pos[k]) {
                self.pos[k] = self.pos[k].clamp(-1.0, 1.0);
                self.vel[k] = 0.0;
            }
        }
        self.done = self.t >= self.spec.horizon;
        Ok(StepResult {
            obs: self.obs(),
            reward: -self.distance(),
            done: self.done,
            info: StepInfo::default(),
        })
    }

    fn scripted_action(&self) -> Action {
        let a = (0..2)
            .map(|k| (4.0 * (self.goal[k] - self.pos[k]) - 2.0 * self.vel[k]).clamp(-1.0, 1.0))
            .collect();
        Action::Continuous(a)
    }

    fn subtask_count(&self) -> usize {
        0
    }
}
