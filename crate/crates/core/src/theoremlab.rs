//! Numerical checks of the smoothing theorems: the potential-shaping form of
//! causal smoothing, discounted-return invariance, and preservation of the
//! optimal policy set on small tabular MDPs.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::kernels::{discounted_sum, Kernel, KernelError, RewardSequence, Smoother};

/// Largest number of action sequences enumerated exactly.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;

/// Relative tolerance for two returns to count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TheoremError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("search space of {size} action sequences exceeds the budget of {budget}")]
    BudgetExceeded { size: f64, budget: u64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
    #[error("report encoding: {0}")]
    Json(#[from] serde_json::Error),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> TheoremError {
    TheoremError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialTrace {
    /// `phi[t]` for `t in 0..=T`.
    pub phi: Vec<f64>,
    /// `(r_t + gamma * phi[t + 1] - phi[t]) - r~_t` for `t in 0..T`.
    pub residuals: Vec<f64>,
}

impl PotentialTrace {
    /// Largest residual over `t in [from, T - 1]`.
    pub fn max_residual_from(&self, from: usize) -> f64 {
        self.residuals.iter().skip(from).fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Potential of a causal kernel,
/// `phi_t = -sum_{i=-L}^{-1} g^i R_{t+i} + sum_{i=-L}^{0} g^i R_{t+i} sum_{j=i+1}^{0} f_j`,
/// with rewards before the episode taken as zero. Residuals compare the
/// shaped reward against [`crate::kernels::smooth_discounted`] with the same
/// kernel; they vanish for `t >= L`.
pub fn compute_potential(rewards: &RewardSequence, kernel: &Kernel) -> Result<PotentialTrace, TheoremError> {
    if !kernel.is_causal() {
        return Err(invalid("kernel", "potential is defined for causal kernels only"));
    }
    let gamma = rewards.gamma();
    if gamma <= 0.0 {
        return Err(invalid("gamma", "the potential uses negative powers of gamma; gamma must be > 0"));
    }
    let r = rewards.values();
    let last = rewards.last_index();
    let l = kernel.half_width() as isize;
    // suffix[i + L] = sum_{j=i+1}^{0} f_j
    let mut suffix = vec![0.0; (l + 1) as usize];
    for i in (-l..0).rev() {
        suffix[(i + l) as usize] = suffix[(i + 1 + l) as usize] + kernel.weight(i + 1);
    }
    let at = |t: isize| if t < 0 { 0.0 } else { r[t as usize] };
    let phi: Vec<f64> = (0..=last as isize)
        .map(|t| {
            let mut p = 0.0;
            for i in -l..=0 {
                let g = gamma.powi(i as i32);
                let ri = at(t + i);
                if i < 0 {
                    p -= g * ri;
                }
                p += g * ri * suffix[(i + l) as usize];
            }
            p
        })
        .collect();
    let smoothed = crate::kernels::smooth_discounted(rewards, kernel)?;
    let residuals = (0..last).map(|t| (r[t] + gamma * phi[t + 1] - phi[t]) - smoothed[t]).collect();
    Ok(PotentialTrace { phi, residuals })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnCheck {
    pub abs_err: f64,
    /// `abs_err / |sum_t gamma^t r_t|`; infinite when the raw return is zero
    /// and the smoothed one is not.
    pub rel_err: f64,
}

pub fn check_return_invariance(rewards: &RewardSequence, kernel: &Kernel) -> Result<ReturnCheck, TheoremError> {
    let smoothed = crate::kernels::smooth_discounted(rewards, kernel)?;
    let raw = rewards.discounted_return();
    let smooth = discounted_sum(&smoothed, rewards.gamma());
    let abs_err = (smooth - raw).abs();
    let rel_err = if abs_err == 0.0 { 0.0 } else { abs_err / raw.abs() };
    Ok(ReturnCheck { abs_err, rel_err })
}

/// Finite MDP with tabular transitions and rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transitions[s][a][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]`, paid for taking `a` in `s`.
    pub rewards: Vec<Vec<f64>>,
    pub horizon: usize,
    pub gamma: f64,
    pub initial_state: usize,
    /// Steps `[lo, hi]` at which rewards are paid; rewards outside are zero.
    /// `None` pays at every step.
    #[serde(default)]
    pub reward_window: Option<(usize, usize)>,
}

impl TabularMDP {
    pub fn validate(&self) -> Result<(), TheoremError> {
        if self.n_states == 0 || self.n_actions == 0 || self.horizon == 0 {
            return Err(invalid("mdp", "states, actions and horizon must be positive"));
        }
        if self.initial_state >= self.n_states {
            return Err(invalid("initial_state", "out of range"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid("gamma", format!("must lie in [0, 1], got {}", self.gamma)));
        }
        if self.transitions.len() != self.n_states || self.rewards.len() != self.n_states {
            return Err(invalid("mdp", "table sizes do not match n_states"));
        }
        for s in 0..self.n_states {
            if self.transitions[s].len() != self.n_actions || self.rewards[s].len() != self.n_actions {
                return Err(invalid("mdp", "table sizes do not match n_actions"));
            }
            for a in 0..self.n_actions {
                let row = &self.transitions[s][a];
                if row.len() != self.n_states || row.iter().any(|p| !(*p >= 0.0)) {
                    return Err(invalid("transitions", format!("row [{s}][{a}] is not a distribution")));
                }
                if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(invalid("transitions", format!("row [{s}][{a}] does not sum to 1")));
                }
                if !self.rewards[s][a].is_finite() {
                    return Err(invalid("rewards", format!("entry [{s}][{a}] is not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        self.transitions.iter().flatten().all(|row| row.iter().any(|&p| p == 1.0))
    }

    fn next_deterministic(&self, s: usize, a: usize) -> usize {
        self.transitions[s][a].iter().position(|&p| p == 1.0).expect("deterministic row")
    }

    fn reward_at(&self, t: usize, s: usize, a: usize) -> f64 {
        match self.reward_window {
            Some((lo, hi)) if t < lo || t > hi => 0.0,
            _ => self.rewards[s][a],
        }
    }

    /// Reward sequence of the trajectory produced by an action sequence.
    pub fn trajectory_rewards(&self, actions: &[usize]) -> Vec<f64> {
        let mut s = self.initial_state;
        actions
            .iter()
            .enumerate()
            .map(|(t, &a)| {
                let r = self.reward_at(t, s, a);
                s = self.next_deterministic(s, a);
                r
            })
            .collect()
    }

    /// Random deterministic MDP whose rewards are sparse and only paid inside
    /// `[margin, horizon - 1 - margin]`.
    pub fn random_deterministic(
        rng: &mut ChaCha8Rng,
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        gamma: f64,
        margin: usize,
    ) -> Self {
        let transitions = (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| {
                        let mut row = vec![0.0; n_states];
                        row[rng.random_range(0..n_states)] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        let rewards = (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| if rng.random_bool(0.3) { rng.random_range(1.0..10.0) } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            horizon,
            gamma,
            initial_state: 0,
            reward_window: Some((margin, horizon - 1 - margin)),
        }
    }

    /// Random MDP with dense stochastic transitions.
    pub fn random_stochastic(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, horizon: usize, gamma: f64, margin: usize) -> Self {
        let mut mdp = Self::random_deterministic(rng, n_states, n_actions, horizon, gamma, margin);
        for row in mdp.transitions.iter_mut().flatten() {
            let w: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            *row = w.iter().map(|x| x / total).collect();
            // renormalize so the row sums to one within rounding
            let s: f64 = row.iter().sum();
            let last = row.len() - 1;
            row[last] += 1.0 - s;
        }
        mdp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySets {
    /// Optimal action sequences under raw returns.
    pub raw: BTreeSet<Vec<usize>>,
    /// Optimal action sequences under smoothed returns.
    pub smoothed: BTreeSet<Vec<usize>>,
    pub raw_best: f64,
    pub smoothed_best: f64,
    pub evaluated: u64,
}

impl PolicySets {
    pub fn agree(&self) -> bool {
        self.raw == self.smoothed
    }
}

fn argmax_set(values: &[(Vec<usize>, f64)]) -> (BTreeSet<Vec<usize>>, f64) {
    let best = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOLERANCE * best.abs().max(1.0);
    let set = values.iter().filter(|v| v.1 >= best - tol).map(|v| v.0.clone()).collect();
    (set, best)
}

/// Exhaustive search over action sequences of a deterministic MDP.
///
/// With deterministic transitions every time-indexed deterministic policy
/// induces one trajectory, fixed by its action sequence, so optimal policies
/// are compared through the optimal action sequences they produce. Smoothed
/// returns apply [`Smoother::apply_discounted`] to each trajectory.
pub fn enumerate_optimal_policies(mdp: &TabularMDP, smoother: &Smoother) -> Result<PolicySets, TheoremError> {
    mdp.validate()?;
    if !mdp.is_deterministic() {
        return Err(invalid("transitions", "exact enumeration needs deterministic transitions"));
    }
    let size = (mdp.n_actions as f64).powi(mdp.horizon as i32);
    if size > ENUMERATION_BUDGET as f64 {
        return Err(TheoremError::BudgetExceeded {
            size,
            budget: ENUMERATION_BUDGET,
        });
    }
    let count = size as u64;
    let mut raw = Vec::with_capacity(count as usize);
    let mut smoothed = Vec::with_capacity(count as usize);
    let mut actions = vec![0usize; mdp.horizon];
    for code in 0..count {
        let mut c = code;
        for slot in actions.iter_mut().rev() {
            *slot = (c % mdp.n_actions as u64) as usize;
            c /= mdp.n_actions as u64;
        }
        let rewards = mdp.trajectory_rewards(&actions);
        let seq = RewardSequence::new(rewards, mdp.gamma)?;
        raw.push((actions.clone(), seq.discounted_return()));
        let s = smoother.apply_discounted(&seq)?;
        smoothed.push((actions.clone(), discounted_sum(&s, mdp.gamma)));
    }
    let (raw_set, raw_best) = argmax_set(&raw);
    let (smoothed_set, smoothed_best) = argmax_set(&smoothed);
    Ok(PolicySets {
        raw: raw_set,
        smoothed: smoothed_set,
        raw_best,
        smoothed_best,
        evaluated: count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCheck {
    pub raw_mean: f64,
    pub smoothed_mean: f64,
    /// Standard error of the per-trajectory difference.
    pub std_err: f64,
    pub trajectories: usize,
    /// `|smoothed_mean - raw_mean| <= 3 * std_err` (or both exactly equal).
    pub pass: bool,
}

/// Compares expected raw and smoothed discounted returns of a time-indexed
/// policy `policy[t][s]` on a stochastic MDP by sampling trajectories.
pub fn monte_carlo_return_check(
    mdp: &TabularMDP,
    policy: &[Vec<usize>],
    smoother: &Smoother,
    trajectories: usize,
    seed: u64,
) -> Result<MonteCarloCheck, TheoremError> {
    mdp.validate()?;
    if trajectories < 2 {
        return Err(invalid("trajectories", "need at least two samples"));
    }
    if policy.len() != mdp.horizon || policy.iter().any(|p| p.len() != mdp.n_states || p.iter().any(|&a| a >= mdp.n_actions)) {
        return Err(invalid("policy", "must give an action for every step and state"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw_sum = 0.0;
    let mut smooth_sum = 0.0;
    let mut diffs = Vec::with_capacity(trajectories);
    for _ in 0..trajectories {
        let mut s = mdp.initial_state;
        let mut rewards = Vec::with_capacity(mdp.horizon);
        for (t, step_policy) in policy.iter().enumerate() {
            let a = step_policy[s];
            rewards.push(mdp.reward_at(t, s, a));
            let u: f64 = rng.random();
            let row = &mdp.transitions[s][a];
            let mut acc = 0.0;
            let mut next = row.len() - 1;
            for (k, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = k;
                    break;
                }
            }
            s = next;
        }
        let seq = RewardSequence::new(rewards, mdp.gamma)?;
        let raw = seq.discounted_return();
        let sm = discounted_sum(&smoother.apply_discounted(&seq)?, mdp.gamma);
        raw_sum += raw;
        smooth_sum += sm;
        diffs.push(sm - raw);
    }
    let n = trajectories as f64;
    let mean_diff = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (n - 1.0);
    let std_err = (var / n).sqrt();
    let raw_mean = raw_sum / n;
    let smoothed_mean = smooth_sum / n;
    let gap = (smoothed_mean - raw_mean).abs();
    let pass = gap <= 3.0 * std_err || gap <= 1e-9 * raw_mean.abs().max(1.0);
    Ok(MonteCarloCheck {
        raw_mean,
        smoothed_mean,
        std_err,
        trajectories,
        pass,
    })
}

/// Two-action MDP contrasting a reward at the first step with a slightly
/// larger (after discounting) reward at step 3. Raw returns prefer the
/// later reward; boundary clipping inflates the first-step reward once
/// smoothed, which can flip the optimum.
pub fn boundary_probe_mdp(gamma: f64) -> TabularMDP {
    // 0 -a0-> 1 pays 1 at t = 0; 0 -a1-> 2 -> 3 -> 4 -> 1 pays b at t = 3.
    // State 1 absorbs.
    let n = 5;
    let mut transitions = vec![vec![vec![0.0; n]; 2]; n];
    let mut rewards = vec![vec![0.0; 2]; n];
    transitions[0][0][1] = 1.0;
    transitions[0][1][2] = 1.0;
    rewards[0][0] = 1.0;
    for a in 0..2 {
        transitions[1][a][1] = 1.0;
        transitions[2][a][3] = 1.0;
        transitions[3][a][4] = 1.0;
        transitions[4][a][1] = 1.0;
        rewards[4][a] = 1.02 / gamma.powi(3);
    }
    TabularMDP {
        n_states: n,
        n_actions: 2,
        transitions,
        rewards,
        horizon: 8,
        gamma,
        initial_state: 0,
        reward_window: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub check: String,
    pub params: serde_json::Value,
    pub max_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub entries: Vec<CheckEntry>,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

pub const NORMALIZATION_SIGMAS: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 5.0];
pub const NORMALIZATION_DELTAS: [usize; 5] = [1, 3, 5, 9, 15];
pub const NORMALIZATION_ALPHAS: [f64; 5] = [0.0, 0.3, 0.33, 0.45, 0.5];

/// Largest `|sum f - 1|` over the standard kernel grid.
pub fn normalization_suite() -> Result<Vec<CheckEntry>, TheoremError> {
    let mut out = Vec::new();
    for sigma in NORMALIZATION_SIGMAS {
        let k = Kernel::gaussian(sigma, 0)?;
        out.push(norm_entry(json!({"kind": "gaussian", "sigma": sigma, "half_width": k.half_width()}), &k));
    }
    for delta in NORMALIZATION_DELTAS {
        let k = Kernel::uniform(delta)?;
        out.push(norm_entry(json!({"kind": "uniform", "delta": delta}), &k));
    }
    for alpha in NORMALIZATION_ALPHAS {
        let k = Kernel::ema(alpha, 0)?;
        out.push(norm_entry(json!({"kind": "ema", "alpha": alpha, "half_width": k.half_width()}), &k));
    }
    Ok(out)
}

fn norm_entry(params: serde_json::Value, k: &Kernel) -> CheckEntry {
    let err = (k.weight_sum() - 1.0).abs();
    CheckEntry {
        check: "kernel_normalization".into(),
        params,
        max_err: err,
        pass: err < 1e-12 && k.weights().iter().all(|&w| w >= 0.0),
    }
}

/// Kernels used by the invariance and policy suites, all with half-width `l`.
pub fn suite_kernels(l: usize) -> Result<Vec<(String, Kernel)>, TheoremError> {
    Ok(vec![
        (format!("gaussian(sigma={},L={l})", l as f64 / 2.0), Kernel::gaussian(l as f64 / 2.0, l)?),
        (format!("uniform(delta={})", 2 * l + 1), Kernel::uniform(2 * l + 1)?),
        (format!("ema(alpha=0.5,L={l})"), Kernel::ema(0.5, l)?),
    ])
}

/// Random sequence of length `len` with zeros in the first and last `l`
/// slots and standard-normal values elsewhere.
pub fn interior_sequence(rng: &mut ChaCha8Rng, len: usize, l: usize) -> Vec<f64> {
    (0..len)
        .map(|t| {
            if t < l || t + l >= len {
                0.0
            } else {
                StandardNormal.sample(rng)
            }
        })
        .collect()
}

pub fn return_invariance_suite(seed: u64, sequences: usize) -> Result<Vec<CheckEntry>, TheoremError> {
    let len = 65;
    let l = 6;
    let mut out = Vec::new();
    for (name, kernel) in suite_kernels(l)? {
        for gamma in [0.9, 0.99, 1.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst: f64 = 0.0;
            for _ in 0..sequences {
                let seq = RewardSequence::new(interior_sequence(&mut rng, len, l), gamma)?;
                worst = worst.max(check_return_invariance(&seq, &kernel)?.rel_err);
            }
            out.push(CheckEntry {
                check: "return_invariance".into(),
                params: json!({"kernel": name, "gamma": gamma, "sequences": sequences, "T": len - 1}),
                max_err: worst,
                pass: worst < 1e-9,
            });
        }
    }
    Ok(out)
}

pub fn potential_suite(seed: u64, sequences: usize) -> Result<Vec<CheckEntry>, TheoremError> {
    let len = 65;
    let l = 12;
    let mut out = Vec::new();
    for alpha in [0.3, 0.5] {
        let kernel = Kernel::ema(alpha, l)?;
        for gamma in [0.9, 0.99] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst: f64 = 0.0;
            for _ in 0..sequences {
                let values: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
                let seq = RewardSequence::new(values, gamma)?;
                worst = worst.max(compute_potential(&seq, &kernel)?.max_residual_from(l));
            }
            out.push(CheckEntry {
                check: "potential_identity".into(),
                params: json!({"alpha": alpha, "half_width": l, "gamma": gamma, "sequences": sequences, "T": len - 1}),
                max_err: worst,
                pass: worst < 1e-9,
            });
        }
    }
    Ok(out)
}

/// Optimal-set agreement on random deterministic MDPs with interior rewards.
/// One entry per kernel; `max_err` counts disagreeing MDPs.
pub fn policy_suite(seed: u64, mdps: usize) -> Result<Vec<CheckEntry>, TheoremError> {
    let l = 2;
    let horizon = 8;
    let mut out = Vec::new();
    let kernels = vec![
        ("gaussian(sigma=1,L=2)".to_string(), Kernel::gaussian(1.0, l)?),
        ("uniform(delta=5)".to_string(), Kernel::uniform(5)?),
        ("ema(alpha=0.5,L=2)".to_string(), Kernel::ema(0.5, l)?),
    ];
    for (name, kernel) in kernels {
        let smoother = Smoother::Kernel(kernel);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agreements = 0;
        for _ in 0..mdps {
            let n_states = rng.random_range(2..=5);
            let n_actions = rng.random_range(2..=3);
            let gamma = [0.9, 0.99, 1.0][rng.random_range(0..3)];
            let mdp = TabularMDP::random_deterministic(&mut rng, n_states, n_actions, horizon, gamma, l);
            if enumerate_optimal_policies(&mdp, &smoother)?.agree() {
                agreements += 1;
            }
        }
        out.push(CheckEntry {
            check: "optimal_policy_preservation".into(),
            params: json!({"kernel": name, "mdps": mdps, "agreements": agreements, "horizon": horizon}),
            max_err: (mdps - agreements) as f64,
            pass: agreements == mdps,
        });
    }
    Ok(out)
}

/// Measurements outside the interior; always reported as passing because
/// nothing is asserted about them.
pub fn boundary_probes() -> Result<Vec<CheckEntry>, TheoremError> {
    let mut out = Vec::new();
    let mut edge = vec![0.0; 20];
    edge[0] = 1.0;
    for (name, kernel) in suite_kernels(4)? {
        let seq = RewardSequence::new(edge.clone(), 0.9)?;
        let c = check_return_invariance(&seq, &kernel)?;
        out.push(CheckEntry {
            check: "boundary_return_error".into(),
            params: json!({"kernel": name, "gamma": 0.9, "reward_at": 0, "asserted": false}),
            max_err: c.rel_err,
            pass: true,
        });
    }
    let mdp = boundary_probe_mdp(0.9);
    let sets = enumerate_optimal_policies(&mdp, &Smoother::Kernel(Kernel::gaussian(1.0, 2)?))?;
    out.push(CheckEntry {
        check: "boundary_policy_divergence".into(),
        params: json!({
            "kernel": "gaussian(sigma=1,L=2)",
            "diverged": !sets.agree(),
            "raw_best": sets.raw_best,
            "smoothed_best": sets.smoothed_best,
            "asserted": false
        }),
        max_err: (sets.smoothed_best - sets.raw_best).abs(),
        pass: true,
    });
    Ok(out)
}

/// Runs every suite with its standard grid, optionally writing the JSON
/// report to `path`.
pub fn verify_all(path: Option<&Path>) -> Result<VerificationReport, TheoremError> {
    let mut entries = normalization_suite()?;
    entries.extend(return_invariance_suite(2024, 200)?);
    entries.extend(potential_suite(7, 50)?);
    entries.extend(policy_suite(11, 20)?);
    entries.extend(boundary_probes()?);
    let report = VerificationReport { entries };
    if let Some(p) = path {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, serde_json::to_vec_pretty(&report.entries)?)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rewards_zero_potential() {
        let seq = RewardSequence::new(vec![0.0; 30], 0.9).unwrap();
        let tr = compute_potential(&seq, &Kernel::ema(0.5, 5).unwrap()).unwrap();
        assert!(tr.phi.iter().all(|&p| p == 0.0));
        assert!(tr.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn identity_kernel_has_zero_potential() {
        let seq = RewardSequence::new(vec![1.0, -2.0, 3.5, 0.25], 0.9).unwrap();
        let tr = compute_potential(&seq, &Kernel::identity()).unwrap();
        assert!(tr.phi.iter().all(|&p| p == 0.0));
        assert!(tr.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn potential_rejects_noncausal_and_zero_gamma() {
        let seq = RewardSequence::new(vec![1.0; 10], 0.9).unwrap();
        assert!(compute_potential(&seq, &Kernel::gaussian(1.0, 2).unwrap()).is_err());
        let seq0 = RewardSequence::new(vec![1.0; 10], 0.0).unwrap();
        assert!(compute_potential(&seq0, &Kernel::ema(0.5, 2).unwrap()).is_err());
    }

    #[test]
    fn potential_identity_holds_on_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for alpha in [0.3, 0.5] {
            for gamma in [0.9, 0.99] {
                let k = Kernel::ema(alpha, 10).unwrap();
                for _ in 0..50 {
                    let v: Vec<f64> = (0..65).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let tr = compute_potential(&RewardSequence::new(v, gamma).unwrap(), &k).unwrap();
                    assert!(tr.max_residual_from(10) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn uniform_gamma_one_is_exact() {
        let mut v = vec![0.0; 20];
        v[5] = 3.0;
        v[9] = -1.0;
        v[12] = 0.5;
        let c = check_return_invariance(&RewardSequence::new(v, 1.0).unwrap(), &Kernel::uniform(3).unwrap()).unwrap();
        assert!(c.abs_err < 1e-12);
    }

    #[test]
    fn boundary_reward_is_reported() {
        let mut v = vec![0.0; 20];
        v[0] = 1.0;
        let c = check_return_invariance(&RewardSequence::new(v, 0.9).unwrap(), &Kernel::gaussian(1.0, 4).unwrap()).unwrap();
        assert!(c.rel_err > 0.0);
    }

    #[test]
    fn single_action_mdp_is_trivial() {
        let mdp = TabularMDP {
            n_states: 1,
            n_actions: 1,
            transitions: vec![vec![vec![1.0]]],
            rewards: vec![vec![1.0]],
            horizon: 8,
            gamma: 0.9,
            initial_state: 0,
            reward_window: Some((2, 5)),
        };
        let sets = enumerate_optimal_policies(&mdp, &Smoother::Kernel(Kernel::gaussian(1.0, 2).unwrap())).unwrap();
        assert_eq!(sets.raw.len(), 1);
        assert!(sets.agree());
    }

    #[test]
    fn budget_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mdp = TabularMDP::random_deterministic(&mut rng, 3, 3, 16, 0.9, 2);
        assert!(matches!(
            enumerate_optimal_policies(&mdp, &Smoother::None),
            Err(TheoremError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn random_mdps_agree_for_all_kernels() {
        for e in policy_suite(3, 20).unwrap() {
            assert!(e.pass, "{e:?}");
        }
    }

    #[test]
    fn boundary_probe_diverges() {
        let mdp = boundary_probe_mdp(0.9);
        let sets = enumerate_optimal_policies(&mdp, &Smoother::Kernel(Kernel::gaussian(1.0, 2).unwrap())).unwrap();
        assert!(!sets.agree(), "{sets:?}");
    }

    #[test]
    fn monte_carlo_mode_agrees_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMDP::random_stochastic(&mut rng, 4, 2, 10, 0.95, 3);
        let policy: Vec<Vec<usize>> = (0..10).map(|t| (0..4).map(|s| (t + s) % 2).collect()).collect();
        let mc = monte_carlo_return_check(&mdp, &policy, &Smoother::Kernel(Kernel::gaussian(1.0, 3).unwrap()), 10_000, 1).unwrap();
        assert!(mc.pass, "{mc:?}");
    }

    #[test]
    fn invalid_mdp_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mdp = TabularMDP::random_deterministic(&mut rng, 3, 2, 8, 0.9, 2);
        mdp.transitions[0][0][0] += 0.5;
        assert!(mdp.validate().is_err());
    }
}
