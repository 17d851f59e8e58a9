//! Threshold arms, UCB selection and the online streaming loop.
//!
//! Each arm is a candidate exit threshold. The first `k` samples play every
//! arm once, in threshold order. After that each sample is routed with the arm
//! maximizing
//!
//! ```text
//! Q~(a) + gamma * sqrt(ln t / N(a))
//! ```
//!
//! where `Q~` is the arm's mean reward mapped affinely from the static reward
//! range onto `[0, 1]` and `t` is the index of the round being played.

use crate::error::{Error, Result};
use crate::exit::{exit_layer, outcome_at, CostModel, ExitOutcome};
use crate::metrics::RunReport;
use crate::trace::{shuffled_indices, TraceStream};

/// Default exploration weight.
pub const DEFAULT_GAMMA: f64 = 1.0;

/// Strictly increasing thresholds in `(1/C, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSet {
    thresholds: Vec<f64>,
    num_classes: usize,
}

impl ArmSet {
    pub fn new(thresholds: Vec<f64>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        if thresholds.is_empty() {
            return Err(Error::invalid("arm set needs at least one threshold"));
        }
        let floor = 1.0 / num_classes as f64;
        if let Some(bad) = thresholds.iter().find(|&&a| !(a > floor && a <= 1.0)) {
            return Err(Error::invalid(format!(
                "threshold {bad} outside (1/{num_classes}, 1]"
            )));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("thresholds must be strictly increasing"));
        }
        Ok(ArmSet {
            thresholds,
            num_classes,
        })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn threshold(&self, arm: usize) -> f64 {
        self.thresholds[arm]
    }
}

/// `k` equally spaced thresholds above `1/C`, ending at exactly `1.0`.
///
/// `1/C` itself is left out: no max-probability can fall below it, so that
/// threshold would exit every sample at the first layer.
pub fn build_action_set(num_classes: usize, k: usize) -> Result<ArmSet> {
    if num_classes < 2 {
        return Err(Error::invalid(format!(
            "num_classes must be at least 2, got {num_classes}"
        )));
    }
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let floor = 1.0 / num_classes as f64;
    let thresholds = (1..=k)
        .map(|j| {
            if j == k {
                1.0
            } else {
                floor + (1.0 - floor) * j as f64 / k as f64
            }
        })
        .collect();
    ArmSet::new(thresholds, num_classes)
}

/// Upper confidence index of one arm at round `t`.
#[inline]
pub fn ucb_index(normalized_mean: f64, pulls: u64, t: u64, gamma: f64) -> f64 {
    normalized_mean + gamma * ((t as f64).ln() / pulls as f64).sqrt()
}

/// Per-arm statistics of the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    q_values: Vec<f64>,
    reward_sums: Vec<f64>,
    pull_counts: Vec<u64>,
    round: u64,
    gamma: f64,
    reward_lo: f64,
    reward_hi: f64,
}

impl BanditState {
    /// Fresh state: no pulls, `Q = 0`. `[reward_lo, reward_hi]` is the range
    /// mapped onto `[0, 1]` for the index, and the range `update` accepts.
    pub fn new(num_arms: usize, gamma: f64, reward_lo: f64, reward_hi: f64) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::invalid("need at least one arm"));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
        }
        if !(reward_lo.is_finite() && reward_hi.is_finite() && reward_lo < reward_hi) {
            return Err(Error::invalid(format!(
                "reward bounds [{reward_lo}, {reward_hi}] are empty"
            )));
        }
        Ok(BanditState {
            q_values: vec![0.0; num_arms],
            reward_sums: vec![0.0; num_arms],
            pull_counts: vec![0; num_arms],
            round: 0,
            gamma,
            reward_lo,
            reward_hi,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.q_values.len()
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q_values
    }

    pub fn pull_counts(&self) -> &[u64] {
        &self.pull_counts
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        (self.reward_lo, self.reward_hi)
    }

    /// Every arm has been played at least once.
    pub fn is_initialized(&self) -> bool {
        self.pull_counts.iter().all(|&n| n > 0)
    }

    /// `Q` mapped from `[reward_lo, reward_hi]` onto `[0, 1]`.
    pub fn normalized_q(&self, arm: usize) -> f64 {
        (self.q_values[arm] - self.reward_lo) / (self.reward_hi - self.reward_lo)
    }

    /// Arm with the highest UCB index for the next round; ties go to the lower
    /// threshold.
    pub fn select_arm(&self) -> Result<usize> {
        if !self.is_initialized() {
            return Err(Error::NotInitialized);
        }
        let t = self.round + 1;
        let mut best = (f64::NEG_INFINITY, 0);
        for arm in 0..self.num_arms() {
            let index = ucb_index(self.normalized_q(arm), self.pull_counts[arm], t, self.gamma);
            if index > best.0 {
                best = (index, arm);
            }
        }
        Ok(best.1)
    }

    /// Records a reward on `arm`; `Q` becomes the mean of all its rewards.
    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        if arm >= self.num_arms() {
            return Err(Error::ArmOutOfRange {
                index: arm,
                num_arms: self.num_arms(),
            });
        }
        const SLACK: f64 = 1e-9;
        if !(reward >= self.reward_lo - SLACK && reward <= self.reward_hi + SLACK) {
            return Err(Error::RewardOutOfBounds {
                reward,
                lo: self.reward_lo,
                hi: self.reward_hi,
            });
        }
        self.pull_counts[arm] += 1;
        self.reward_sums[arm] += reward;
        self.q_values[arm] = self.reward_sums[arm] / self.pull_counts[arm] as f64;
        self.round += 1;
        Ok(())
    }
}

/// One round of an online run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: u64,
    pub arm_index: usize,
    pub threshold: f64,
    /// Position of the served trace in the input stream (before any shuffle).
    pub trace_index: usize,
    pub outcome: ExitOutcome,
}

/// How arms are chosen during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Play every arm once, then follow the UCB index.
    Ucb { gamma: f64 },
    /// Always play the same arm.
    Fixed { arm: usize },
}

/// Runs the UCB learner over the stream.
///
/// With `shuffle_seed` the samples are served in a seed-determined random
/// order; otherwise in stream order.
pub fn run_stream(
    stream: &TraceStream,
    arms: &ArmSet,
    cost: &CostModel,
    gamma: f64,
    shuffle_seed: Option<u64>,
) -> Result<RunReport> {
    run_policy(stream, arms, cost, Policy::Ucb { gamma }, shuffle_seed)
}

/// Serves every trace once, strictly in sequence, choosing arms by `policy`.
pub fn run_policy(
    stream: &TraceStream,
    arms: &ArmSet,
    cost: &CostModel,
    policy: Policy,
    shuffle_seed: Option<u64>,
) -> Result<RunReport> {
    if stream.num_layers() != cost.num_layers() {
        return Err(Error::DimensionMismatch {
            expected: cost.num_layers(),
            found: stream.num_layers(),
        });
    }
    if stream.num_classes() != arms.num_classes() {
        return Err(Error::invalid(format!(
            "arm set built for {} classes, stream has {}",
            arms.num_classes(),
            stream.num_classes()
        )));
    }
    let k = arms.len();
    let gamma = match policy {
        Policy::Ucb { gamma } => {
            if stream.len() < k {
                return Err(Error::StreamTooShort {
                    len: stream.len(),
                    arms: k,
                });
            }
            gamma
        }
        Policy::Fixed { arm } => {
            if arm >= k {
                return Err(Error::ArmOutOfRange {
                    index: arm,
                    num_arms: k,
                });
            }
            0.0
        }
    };
    let (lo, hi) = cost.reward_bounds(stream.num_classes());
    let mut state = BanditState::new(k, gamma, lo, hi)?;

    let order: Vec<usize> = match shuffle_seed {
        Some(seed) => shuffled_indices(stream.len(), seed),
        None => (0..stream.len()).collect(),
    };
    let traces = stream.traces();
    let mut history = Vec::with_capacity(order.len());
    for (t, &trace_index) in order.iter().enumerate() {
        let arm = match policy {
            Policy::Ucb { .. } if t < k => t,
            Policy::Ucb { .. } => state.select_arm()?,
            Policy::Fixed { arm } => arm,
        };
        let threshold = arms.threshold(arm);
        let trace = &traces[trace_index];
        let outcome = outcome_at(trace, exit_layer(&trace.confidences, threshold), cost);
        state.update(arm, outcome.reward)?;
        history.push(RoundRecord {
            round: t as u64 + 1,
            arm_index: arm,
            threshold,
            trace_index,
            outcome,
        });
    }
    RunReport::assemble(stream, arms, cost, history, &state)
}
