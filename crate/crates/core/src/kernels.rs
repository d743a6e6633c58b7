//! Temporal smoothing kernels and their application to per-episode reward
//! sequences.
//!
//! A [`Kernel`] is a finite filter `f[-L..=L]` whose weights sum to one.
//! [`smooth`] applies it with nearest-edge index clipping, which keeps the
//! total reward of any sequence whose nonzero entries sit at least `L` steps
//! away from both ends. [`smooth_discounted`] additionally rescales each tap by
//! `gamma^offset` so that the *discounted* return is preserved under the same
//! support condition. [`ema_stream`] is the causal recurrence used by the
//! training pipeline when EMA smoothing is selected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weight-sum tolerance every constructor guarantees.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Truncation point for the automatic EMA half-width.
const EMA_AUTO_TAIL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("reward sequence is empty")]
    Empty,
    #[error("reward at index {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> KernelError {
    KernelError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Uniform,
    Ema,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelParams {
    Sigma(f64),
    Delta(usize),
    Alpha(f64),
    None,
}

/// A normalized, finite smoothing filter indexed by offset `i` in `[-L, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    kind: KernelKind,
    half_width: usize,
    /// `weights[i + L]` is the tap at offset `i`.
    weights: Vec<f64>,
    params: KernelParams,
}

impl Kernel {
    /// Gaussian kernel `f_i = k * exp(-i^2 / (2 sigma^2))`.
    ///
    /// `half_width == 0` selects `ceil(4 * sigma)`.
    pub fn gaussian(sigma: f64, half_width: usize) -> Result<Self, KernelError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("must be a positive finite real, got {sigma}")));
        }
        let half_width = if half_width == 0 {
            (4.0 * sigma).ceil() as usize
        } else {
            half_width
        };
        let one_side: Vec<f64> = (0..=half_width)
            .map(|i| {
                let i = i as f64;
                (-(i * i) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total = one_side[0] + 2.0 * one_side[1..].iter().sum::<f64>();
        let mut weights = vec![0.0; 2 * half_width + 1];
        for (i, w) in one_side.iter().enumerate() {
            let w = w / total;
            weights[half_width + i] = w;
            weights[half_width - i] = w;
        }
        Ok(Self {
            kind: KernelKind::Gaussian,
            half_width,
            weights,
            params: KernelParams::Sigma(sigma),
        })
    }

    /// Box kernel of odd width `delta`, each tap exactly `1 / delta`.
    pub fn uniform(delta: usize) -> Result<Self, KernelError> {
        if delta == 0 || delta % 2 == 0 {
            return Err(invalid("delta", format!("must be an odd positive integer, got {delta}")));
        }
        Ok(Self {
            kind: KernelKind::Uniform,
            half_width: (delta - 1) / 2,
            weights: vec![1.0 / delta as f64; delta],
            params: KernelParams::Delta(delta),
        })
    }

    /// Causal kernel-form of the EMA recurrence.
    ///
    /// Offset `-k` gets `(1 - alpha) * alpha^k` for `k < L`; offset `-L` takes
    /// the remaining geometric tail `alpha^L`. `half_width == 0` picks the
    /// smallest `L` whose tail is below `1e-12`.
    pub fn ema(alpha: f64, half_width: usize) -> Result<Self, KernelError> {
        if !(alpha.is_finite() && (0.0..1.0).contains(&alpha)) {
            return Err(invalid("alpha", format!("must lie in [0, 1), got {alpha}")));
        }
        let half_width = if half_width > 0 {
            half_width
        } else if alpha == 0.0 {
            1
        } else {
            (EMA_AUTO_TAIL.ln() / alpha.ln()).ceil().max(1.0) as usize
        };
        let mut weights = vec![0.0; 2 * half_width + 1];
        let mut power = 1.0;
        for k in 0..half_width {
            weights[half_width - k] = (1.0 - alpha) * power;
            power *= alpha;
        }
        weights[0] = power;
        Ok(Self {
            kind: KernelKind::Ema,
            half_width,
            weights,
            params: KernelParams::Alpha(alpha),
        })
    }

    /// Arbitrary normalized kernel; `weights.len()` must be odd.
    pub fn custom(weights: Vec<f64>) -> Result<Self, KernelError> {
        if weights.len() % 2 == 0 {
            return Err(invalid("weights", "length must be odd (2L + 1)"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(invalid("weights", format!("must be finite and nonnegative, found {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() >= NORMALIZATION_TOL {
            return Err(invalid("weights", format!("must sum to 1, sum is {total}")));
        }
        Ok(Self {
            kind: KernelKind::Custom,
            half_width: weights.len() / 2,
            weights,
            params: KernelParams::None,
        })
    }

    /// The identity filter `f_0 = 1` with `L = 0`.
    pub fn identity() -> Self {
        Self {
            kind: KernelKind::Custom,
            half_width: 0,
            weights: vec![1.0],
            params: KernelParams::None,
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    /// All taps, ordered from offset `-L` to `+L`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Tap at signed offset `i`; zero outside `[-L, L]`.
    pub fn weight(&self, offset: isize) -> f64 {
        let idx = offset + self.half_width as isize;
        if idx < 0 {
            return 0.0;
        }
        self.weights.get(idx as usize).copied().unwrap_or(0.0)
    }

    /// Iterator over `(offset, weight)` pairs.
    pub fn taps(&self) -> impl Iterator<Item = (isize, f64)> + '_ {
        let l = self.half_width as isize;
        self.weights
            .iter()
            .enumerate()
            .map(move |(k, &w)| (k as isize - l, w))
    }

    /// True when no weight sits on a positive (future) offset.
    pub fn is_causal(&self) -> bool {
        self.weights[self.half_width + 1..].iter().all(|&w| w == 0.0)
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Per-episode rewards `r_0..=r_T` together with the discount used by the
/// discounted variants.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSequence {
    values: Vec<f64>,
    gamma: f64,
}

impl RewardSequence {
    pub fn new(values: Vec<f64>, gamma: f64) -> Result<Self, KernelError> {
        if values.is_empty() {
            return Err(KernelError::Empty);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(KernelError::NonFinite { index, value });
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(invalid("gamma", format!("must lie in [0, 1], got {gamma}")));
        }
        Ok(Self { values, gamma })
    }

    /// Undiscounted sequence (`gamma = 1`).
    pub fn undiscounted(values: Vec<f64>) -> Result<Self, KernelError> {
        Self::new(values, 1.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Index of the last step, `T`.
    pub fn last_index(&self) -> usize {
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sum_t gamma^t r_t`.
    pub fn discounted_return(&self) -> f64 {
        discounted_sum(&self.values, self.gamma)
    }
}

pub fn discounted_sum(values: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for v in values {
        total += discount * v;
        discount *= gamma;
    }
    total
}

#[inline]
fn clip_index(t: isize, last: isize) -> usize {
    t.clamp(0, last) as usize
}

/// `r~_t = sum_i f_i * r_clip(t + i, 0, T)`.
pub fn smooth(rewards: &RewardSequence, kernel: &Kernel) -> Vec<f64> {
    let r = rewards.values();
    let last = rewards.last_index() as isize;
    (0..=last)
        .map(|t| {
            kernel
                .taps()
                .map(|(i, w)| w * r[clip_index(t + i, last)])
                .sum()
        })
        .collect()
}

/// Discount-corrected smoothing,
/// `r~_t = sum_i gamma^clip(i, -t, T - t) * f_i * r_clip(t + i, 0, T)`.
///
/// `gamma == 0` is rejected for kernels with more than one tap because the
/// correction then needs `0^-k`.
pub fn smooth_discounted(rewards: &RewardSequence, kernel: &Kernel) -> Result<Vec<f64>, KernelError> {
    let gamma = rewards.gamma();
    if gamma == 0.0 && kernel.half_width() > 0 {
        return Err(invalid(
            "gamma",
            "discount-corrected smoothing needs gamma > 0 (negative powers of the discount)",
        ));
    }
    let r = rewards.values();
    let last = rewards.last_index() as isize;
    let l = kernel.half_width() as isize;
    // gamma^k for k in [-L, L], precomputed once.
    let powers: Vec<f64> = (-l..=l).map(|k| gamma.powi(k as i32)).collect();
    Ok((0..=last)
        .map(|t| {
            kernel
                .taps()
                .map(|(i, w)| {
                    // |clip(i, -t, T - t)| <= |i| <= L
                    let exponent = i.clamp(-t, last - t);
                    powers[(exponent + l) as usize] * w * r[clip_index(t + i, last)]
                })
                .sum()
        })
        .collect())
}

/// Forward EMA recurrence `r~_t = alpha * r~_{t-1} + (1 - alpha) * r_t`,
/// starting from `r~_{-1} = 0`.
pub fn ema_stream(rewards: &RewardSequence, alpha: f64) -> Result<Vec<f64>, KernelError> {
    if !(alpha.is_finite() && (0.0..1.0).contains(&alpha)) {
        return Err(invalid("alpha", format!("must lie in [0, 1), got {alpha}")));
    }
    let mut state = 0.0;
    Ok(rewards
        .values()
        .iter()
        .map(|&r| {
            state = alpha * state + (1.0 - alpha) * r;
            state
        })
        .collect())
}

/// Smoothing choice applied once per finished episode.
#[derive(Debug, Clone, PartialEq)]
pub enum Smoother {
    /// Rewards pass through untouched.
    None,
    /// Non-causal or causal kernel convolution with edge clipping.
    Kernel(Kernel),
    /// Streaming EMA recurrence.
    Ema { alpha: f64 },
}

impl Smoother {
    pub fn apply(&self, rewards: &RewardSequence) -> Result<Vec<f64>, KernelError> {
        match self {
            Smoother::None => Ok(rewards.values().to_vec()),
            Smoother::Kernel(k) => Ok(smooth(rewards, k)),
            Smoother::Ema { alpha } => ema_stream(rewards, *alpha),
        }
    }

    /// Discount-corrected variant used by the verification tools. EMA is
    /// routed through its kernel form with an automatic half-width.
    pub fn apply_discounted(&self, rewards: &RewardSequence) -> Result<Vec<f64>, KernelError> {
        match self {
            Smoother::None => Ok(rewards.values().to_vec()),
            Smoother::Kernel(k) => smooth_discounted(rewards, k),
            Smoother::Ema { alpha } => smooth_discounted(rewards, &Kernel::ema(*alpha, 0)?),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            Smoother::None => true,
            Smoother::Kernel(k) => k.half_width() == 0,
            Smoother::Ema { alpha } => *alpha == 0.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Smoother::None => "none".to_string(),
            Smoother::Kernel(k) => match k.params() {
                KernelParams::Sigma(s) => format!("gaussian(sigma={s})"),
                KernelParams::Delta(d) => format!("uniform(delta={d})"),
                KernelParams::Alpha(a) => format!("ema-kernel(alpha={a},L={})", k.half_width()),
                KernelParams::None => format!("custom(L={})", k.half_width()),
            },
            Smoother::Ema { alpha } => format!("ema(alpha={alpha})"),
        }
    }
}
