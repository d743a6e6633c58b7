//! Cross-entropy-method planning in the learned latent space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{Action, ActionSpace};
use crate::worldmodel::{Matrix, WorldModel};

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("model error: {0}")]
    Model(String),
}

/// What the planner needs from a model: batched latent transitions and
/// rewards, plus the encoder for the receding-horizon loop.
pub trait LatentModel {
    fn latent_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn encode(&self, history: &[f64]) -> Result<Vec<f64>, PlannerError>;
    fn step_batch(&self, z: &Matrix, a: &Matrix) -> Matrix;
    fn reward_batch(&self, z: &Matrix) -> Vec<f64>;
}

impl LatentModel for WorldModel {
    fn latent_dim(&self) -> usize {
        WorldModel::latent_dim(self)
    }

    fn action_dim(&self) -> usize {
        WorldModel::action_dim(self)
    }

    fn encode(&self, history: &[f64]) -> Result<Vec<f64>, PlannerError> {
        WorldModel::encode(self, history).map_err(|e| PlannerError::Model(e.to_string()))
    }

    fn step_batch(&self, z: &Matrix, a: &Matrix) -> Matrix {
        self.predict_dynamics_batch(z, a).expect("planner keeps shapes consistent")
    }

    fn reward_batch(&self, z: &Matrix) -> Vec<f64> {
        self.predict_reward_batch(z).expect("planner keeps shapes consistent")
    }
}

fn default_horizon() -> usize {
    12
}
fn default_population() -> usize {
    64
}
fn default_elites() -> usize {
    8
}
fn default_iterations() -> usize {
    4
}
fn default_gamma() -> f64 {
    0.99
}
fn default_noise_floor() -> f64 {
    0.05
}
fn default_init_std() -> f64 {
    0.5
}
fn default_epsilon_start() -> f64 {
    1.0
}
fn default_epsilon_end() -> f64 {
    0.05
}
fn default_epsilon_fraction() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_elites")]
    pub elites: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Minimum standard deviation (continuous actions) or uniform mixing
    /// weight (discrete actions) of the refit proposal.
    #[serde(default = "default_noise_floor")]
    pub action_noise_floor: f64,
    /// Initial standard deviation of the Gaussian proposal.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epsilon_start")]
    pub epsilon_start: f64,
    #[serde(default = "default_epsilon_end")]
    pub epsilon_end: f64,
    /// Fraction of the training budget over which epsilon is annealed.
    #[serde(default = "default_epsilon_fraction")]
    pub epsilon_fraction: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            population: default_population(),
            elites: default_elites(),
            iterations: default_iterations(),
            gamma: default_gamma(),
            action_noise_floor: default_noise_floor(),
            init_std: default_init_std(),
            seed: 0,
            epsilon_start: default_epsilon_start(),
            epsilon_end: default_epsilon_end(),
            epsilon_fraction: default_epsilon_fraction(),
        }
    }
}

impl PlannerConfig {
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.horizon < 1 {
            out.push(("horizon", "must be at least 1".to_string()));
        }
        if self.elites < 1 {
            out.push(("elites", "must be at least 1".to_string()));
        }
        if self.elites >= self.population {
            out.push((
                "elites",
                format!("must be smaller than population ({} >= {})", self.elites, self.population),
            ));
        }
        if self.iterations < 1 {
            out.push(("iterations", "must be at least 1".to_string()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            out.push(("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.action_noise_floor.is_finite() && self.action_noise_floor > 0.0) {
            out.push(("action_noise_floor", format!("must be positive, got {}", self.action_noise_floor)));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            out.push(("init_std", format!("must be positive, got {}", self.init_std)));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("epsilon_fraction", self.epsilon_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push((name, format!("must lie in [0, 1], got {v}")));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        match self.problems().into_iter().next() {
            Some((name, reason)) => Err(PlannerError::InvalidParameter { name, reason }),
            None => Ok(()),
        }
    }

    /// Linear anneal from `epsilon_start` to `epsilon_end` over the first
    /// `epsilon_fraction` of `total` steps.
    pub fn epsilon_at(&self, step: u64, total: u64) -> f64 {
        let span = self.epsilon_fraction * total as f64;
        if span <= 0.0 || step as f64 >= span {
            return self.epsilon_end;
        }
        let frac = step as f64 / span;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Sampling distribution over action sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    Gaussian { mean: Vec<Vec<f64>>, std: Vec<Vec<f64>> },
    Categorical { probs: Vec<Vec<f64>> },
}

impl Proposal {
    pub fn initial(space: &ActionSpace, config: &PlannerConfig) -> Self {
        let h = config.horizon;
        match space {
            ActionSpace::Discrete(n) => Proposal::Categorical {
                probs: vec![vec![1.0 / *n as f64; *n]; h],
            },
            ActionSpace::Box { dim, low, high } => Proposal::Gaussian {
                mean: vec![vec![0.5 * (low + high); *dim]; h],
                std: vec![vec![config.init_std; *dim]; h],
            },
        }
    }

    /// Drops the first step and appends a fresh initial step.
    pub fn shifted(&self, space: &ActionSpace, config: &PlannerConfig) -> Self {
        let fresh = Self::initial(space, config);
        match (self, fresh) {
            (Proposal::Gaussian { mean, std }, Proposal::Gaussian { mean: fm, std: fs }) => {
                let mut mean: Vec<_> = mean[1..].to_vec();
                let mut std: Vec<_> = std.iter().skip(1).map(|s| s.iter().map(|_| config.init_std).collect()).collect();
                mean.push(fm[0].clone());
                std.push(fs[0].clone());
                Proposal::Gaussian { mean, std }
            }
            (Proposal::Categorical { probs }, Proposal::Categorical { probs: fp }) => {
                let mut probs: Vec<_> = probs[1..].to_vec();
                probs.push(fp[0].clone());
                Proposal::Categorical { probs }
            }
            (_, fresh) => fresh,
        }
    }

    fn horizon(&self) -> usize {
        match self {
            Proposal::Gaussian { mean, .. } => mean.len(),
            Proposal::Categorical { probs } => probs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub actions: Vec<Action>,
    /// Model encoding of `actions` (one-hot for discrete spaces).
    pub encoded: Vec<Vec<f64>>,
    /// Discounted predicted return `sum_tau gamma^tau r_tau`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// Candidate sequences in model encoding, `population x horizon`.
    pub candidates: Vec<Vec<Vec<f64>>>,
    pub scores: Vec<f64>,
    /// Candidate indices of the elites, best first.
    pub elites: Vec<usize>,
    /// Best score seen so far, including this iteration.
    pub best_so_far: f64,
}

/// Discounted predicted returns of `candidates` (each `horizon x action_dim`).
pub fn score_sequences<M: LatentModel + ?Sized>(
    model: &M,
    z0: &[f64],
    candidates: &[Vec<Vec<f64>>],
    gamma: f64,
) -> Vec<f64> {
    let n = candidates.len();
    if n == 0 {
        return vec![];
    }
    let h = candidates[0].len();
    let ld = model.latent_dim();
    let ad = model.action_dim();
    let mut z = Matrix::zeros(n, ld);
    for r in 0..n {
        z.row_mut(r).copy_from_slice(z0);
    }
    let mut scores = vec![0.0; n];
    let mut discount = 1.0;
    let mut a = Matrix::zeros(n, ad);
    for tau in 0..h {
        for (r, c) in candidates.iter().enumerate() {
            a.row_mut(r).copy_from_slice(&c[tau]);
        }
        z = model.step_batch(&z, &a);
        let rewards = model.reward_batch(&z);
        for (s, r) in scores.iter_mut().zip(rewards) {
            *s += discount * r;
        }
        discount *= gamma;
    }
    scores
}

fn sample_candidate(proposal: &Proposal, space: &ActionSpace, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    match (proposal, space) {
        (Proposal::Gaussian { mean, std }, ActionSpace::Box { low, high, .. }) => mean
            .iter()
            .zip(std)
            .map(|(m, s)| {
                m.iter()
                    .zip(s)
                    .map(|(mu, sd)| {
                        let eps: f64 = StandardNormal.sample(rng);
                        (mu + sd * eps).clamp(*low, *high)
                    })
                    .collect()
            })
            .collect(),
        (Proposal::Categorical { probs }, ActionSpace::Discrete(n)) => probs
            .iter()
            .map(|p| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (k, pk) in p.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                one_hot(*n, pick)
            })
            .collect(),
        _ => unreachable!("proposal kind follows the action space"),
    }
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// The proposal's central sequence: the mean, or the per-step mode (lowest
/// index on ties).
fn central_candidate(proposal: &Proposal) -> Vec<Vec<f64>> {
    match proposal {
        Proposal::Gaussian { mean, .. } => mean.clone(),
        Proposal::Categorical { probs } => probs
            .iter()
            .map(|p| {
                let mut best = 0;
                for (k, &pk) in p.iter().enumerate() {
                    if pk > p[best] {
                        best = k;
                    }
                }
                one_hot(p.len(), best)
            })
            .collect(),
    }
}

fn refit(proposal: &Proposal, elites: &[&Vec<Vec<f64>>], floor: f64) -> Proposal {
    let k = elites.len() as f64;
    match proposal {
        Proposal::Gaussian { mean, .. } => {
            let h = mean.len();
            let d = mean[0].len();
            let mut new_mean = vec![vec![0.0; d]; h];
            let mut new_std = vec![vec![0.0; d]; h];
            for t in 0..h {
                for j in 0..d {
                    let m = elites.iter().map(|e| e[t][j]).sum::<f64>() / k;
                    let var = elites.iter().map(|e| (e[t][j] - m).powi(2)).sum::<f64>() / k;
                    new_mean[t][j] = m;
                    new_std[t][j] = var.sqrt().max(floor);
                }
            }
            Proposal::Gaussian {
                mean: new_mean,
                std: new_std,
            }
        }
        Proposal::Categorical { probs } => {
            let mix = floor.min(1.0);
            let new = probs
                .iter()
                .enumerate()
                .map(|(t, p)| {
                    let n = p.len() as f64;
                    (0..p.len())
                        .map(|a| {
                            let freq = elites.iter().map(|e| e[t][a]).sum::<f64>() / k;
                            (1.0 - mix) * freq + mix / n
                        })
                        .collect()
                })
                .collect();
            Proposal::Categorical { probs: new }
        }
    }
}

fn decode(space: &ActionSpace, encoded: &[f64]) -> Action {
    match space {
        ActionSpace::Discrete(_) => {
            Action::Discrete(encoded.iter().position(|&x| x == 1.0).expect("one-hot candidate"))
        }
        ActionSpace::Box { .. } => Action::Continuous(encoded.to_vec()),
    }
}

/// Runs CEM from `proposal`. Candidate 0 of every iteration is the current
/// central sequence; the best candidate seen in any iteration is returned,
/// with ties going to the earliest one. Returns the plan, the final proposal
/// and, when `trace` is set, per-iteration details.
pub fn cem_plan_with<M: LatentModel + ?Sized>(
    model: &M,
    z0: &[f64],
    space: &ActionSpace,
    config: &PlannerConfig,
    proposal: Proposal,
    rng: &mut ChaCha8Rng,
    mut trace: Option<&mut Vec<IterationTrace>>,
) -> Result<(Plan, Proposal), PlannerError> {
    config.validate()?;
    if z0.len() != model.latent_dim() || space.encoded_dim() != model.action_dim() {
        return Err(PlannerError::Model(format!(
            "z0 width {} / action width {} do not match model ({}, {})",
            z0.len(),
            space.encoded_dim(),
            model.latent_dim(),
            model.action_dim()
        )));
    }
    if proposal.horizon() != config.horizon {
        return Err(PlannerError::InvalidParameter {
            name: "horizon",
            reason: "proposal horizon differs from config".into(),
        });
    }
    let mut proposal = proposal;
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..config.iterations {
        let mut candidates = Vec::with_capacity(config.population);
        candidates.push(central_candidate(&proposal));
        while candidates.len() < config.population {
            candidates.push(sample_candidate(&proposal, space, rng));
        }
        let scores = score_sequences(model, z0, &candidates, config.gamma);
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        // stable: equal scores keep index order
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let top = order[0];
        if best.as_ref().is_none_or(|(s, _)| scores[top] > *s) {
            best = Some((scores[top], candidates[top].clone()));
        }
        let elite_idx: Vec<usize> = order[..config.elites].to_vec();
        let elites: Vec<&Vec<Vec<f64>>> = elite_idx.iter().map(|&i| &candidates[i]).collect();
        proposal = refit(&proposal, &elites, config.action_noise_floor);
        if let Some(t) = trace.as_deref_mut() {
            t.push(IterationTrace {
                best_so_far: best.as_ref().map(|b| b.0).unwrap_or(f64::NEG_INFINITY),
                candidates,
                scores,
                elites: elite_idx,
            });
        }
    }
    let (score, encoded) = best.expect("at least one iteration");
    let actions = encoded.iter().map(|a| decode(space, a)).collect();
    Ok((Plan { actions, encoded, score }, proposal))
}

/// CEM from the initial proposal with a generator seeded from `config.seed`.
pub fn cem_plan<M: LatentModel + ?Sized>(
    model: &M,
    z0: &[f64],
    space: &ActionSpace,
    config: &PlannerConfig,
) -> Result<Plan, PlannerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let proposal = Proposal::initial(space, config);
    Ok(cem_plan_with(model, z0, space, config, proposal, &mut rng, None)?.0)
}

/// Receding-horizon controller with epsilon-greedy exploration and a warm
/// started proposal.
#[derive(Debug, Clone)]
pub struct Agent {
    config: PlannerConfig,
    space: ActionSpace,
    rng: ChaCha8Rng,
    warm: Option<Proposal>,
}

impl Agent {
    pub fn new(config: PlannerConfig, space: ActionSpace, seed: u64) -> Result<Self, PlannerError> {
        config.validate()?;
        Ok(Self {
            config,
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
            warm: None,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Forgets the warm start; call at every episode start.
    pub fn begin_episode(&mut self) {
        self.warm = None;
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    /// Encodes `history`, plans, and returns the first planned action. With
    /// probability `epsilon` a uniformly random action is returned instead
    /// and no planning happens.
    pub fn act<M: LatentModel + ?Sized>(&mut self, model: &M, history: &[f64], epsilon: f64) -> Result<Action, PlannerError> {
        if epsilon > 0.0 && self.rng.random_bool(epsilon.min(1.0)) {
            if let Some(w) = self.warm.take() {
                self.warm = Some(w.shifted(&self.space, &self.config));
            }
            return Ok(self.space.sample(&mut self.rng));
        }
        let z0 = model.encode(history)?;
        let start = match self.warm.take() {
            Some(w) => w,
            None => Proposal::initial(&self.space, &self.config),
        };
        let (plan, fitted) = cem_plan_with(model, &z0, &self.space, &self.config, start, &mut self.rng, None)?;
        self.warm = Some(fitted.shifted(&self.space, &self.config));
        Ok(plan.actions.into_iter().next().expect("horizon >= 1"))
    }
}
