//! Brute-force oracle, pseudo-regret, the UCB regret bound, speedup and
//! accuracy.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::bandit::{ArmSet, BanditState, RoundRecord};
use crate::error::{Error, Result};
use crate::exit::{exit_layer, outcome_at, CostModel};
use crate::trace::TraceStream;

/// Replay of a single fixed threshold over a whole stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSummary {
    pub threshold: f64,
    pub mean_reward: f64,
    /// `exit_histogram[i]` counts exits at layer `i + 1`.
    pub exit_histogram: Vec<u64>,
    /// Present when every trace carries predictions and a label.
    pub accuracy: Option<f64>,
}

impl ThresholdSummary {
    pub fn expected_exit_layer(&self) -> f64 {
        expected_layer(&self.exit_histogram)
    }

    pub fn speedup(&self) -> f64 {
        speedup_ratio(&self.exit_histogram).expect("histogram of a non-empty stream")
    }
}

/// Plays `threshold` on every trace of the stream.
pub fn evaluate_threshold(
    stream: &TraceStream,
    threshold: f64,
    cost: &CostModel,
) -> Result<ThresholdSummary> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if stream.num_layers() != cost.num_layers() {
        return Err(Error::DimensionMismatch {
            expected: cost.num_layers(),
            found: stream.num_layers(),
        });
    }
    let labeled = stream.is_labeled();
    let mut sum = 0.0;
    let mut correct = 0u64;
    let mut exit_histogram = vec![0u64; cost.num_layers()];
    for trace in stream.traces() {
        let out = outcome_at(trace, exit_layer(&trace.confidences, threshold), cost);
        sum += out.reward;
        exit_histogram[out.exit_layer - 1] += 1;
        if labeled && out.prediction == trace.label {
            correct += 1;
        }
    }
    let n = stream.len() as f64;
    Ok(ThresholdSummary {
        threshold,
        mean_reward: sum / n,
        exit_histogram,
        accuracy: labeled.then(|| correct as f64 / n),
    })
}

/// In-hindsight performance of every arm on a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTable {
    pub thresholds: Vec<f64>,
    pub per_arm_mean_reward: Vec<f64>,
    pub per_arm_exit_histogram: Vec<Vec<u64>>,
    pub per_arm_exit_probability: Vec<Vec<f64>>,
    pub per_arm_accuracy: Option<Vec<f64>>,
    pub best_arm_index: usize,
    pub gaps: Vec<f64>,
}

impl OracleTable {
    /// Assembles the table from per-arm replays; the best arm is the first
    /// one attaining the maximal mean.
    pub fn from_summaries(summaries: &[ThresholdSummary]) -> Result<Self> {
        if summaries.is_empty() {
            return Err(Error::invalid("oracle needs at least one arm"));
        }
        let means: Vec<f64> = summaries.iter().map(|s| s.mean_reward).collect();
        let mut best = 0;
        for (arm, &m) in means.iter().enumerate() {
            if m > means[best] {
                best = arm;
            }
        }
        let gaps = means.iter().map(|&m| means[best] - m).collect();
        let per_arm_exit_probability = summaries
            .iter()
            .map(|s| {
                let total: u64 = s.exit_histogram.iter().sum();
                s.exit_histogram
                    .iter()
                    .map(|&c| c as f64 / total as f64)
                    .collect()
            })
            .collect();
        Ok(OracleTable {
            thresholds: summaries.iter().map(|s| s.threshold).collect(),
            per_arm_mean_reward: means,
            per_arm_exit_histogram: summaries.iter().map(|s| s.exit_histogram.clone()).collect(),
            per_arm_exit_probability,
            per_arm_accuracy: summaries.iter().map(|s| s.accuracy).collect(),
            best_arm_index: best,
            gaps,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.thresholds.len()
    }

    pub fn best_threshold(&self) -> f64 {
        self.thresholds[self.best_arm_index]
    }

    pub fn best_mean_reward(&self) -> f64 {
        self.per_arm_mean_reward[self.best_arm_index]
    }

    pub fn expected_exit_layer(&self, arm: usize) -> f64 {
        expected_layer(&self.per_arm_exit_histogram[arm])
    }

    pub fn speedup(&self, arm: usize) -> f64 {
        speedup_ratio(&self.per_arm_exit_histogram[arm]).expect("non-empty histogram")
    }

    /// Smallest positive gap, if any arm is suboptimal.
    pub fn min_positive_gap(&self) -> Option<f64> {
        self.gaps
            .iter()
            .copied()
            .filter(|&g| g > 0.0)
            .min_by(f64::total_cmp)
    }
}

fn expected_layer(histogram: &[u64]) -> f64 {
    let total: u64 = histogram.iter().sum();
    let weighted: u64 = histogram
        .iter()
        .enumerate()
        .map(|(i, &n)| (i as u64 + 1) * n)
        .sum();
    weighted as f64 / total as f64
}

/// Replays every arm on every trace and averages the rewards.
pub fn oracle_mean_rewards(
    stream: &TraceStream,
    arms: &ArmSet,
    cost: &CostModel,
) -> Result<OracleTable> {
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let summaries = arms
        .thresholds()
        .par_iter()
        .map(|&a| evaluate_threshold(stream, a, cost))
        .collect::<Result<Vec<_>>>()?;
    OracleTable::from_summaries(&summaries)
}

/// Partial sums of the oracle gap of each pulled arm.
///
/// # Panics
/// If a record's arm index is not in the table.
pub fn cumulative_regret(history: &[RoundRecord], oracle: &OracleTable) -> Vec<f64> {
    history
        .iter()
        .scan(0.0, |acc, rec| {
            *acc += oracle.gaps[rec.arm_index];
            Some(*acc)
        })
        .collect()
}

/// Partial sums of `r(best arm, x_t) - r(pulled arm, x_t)` on the served
/// samples. Noisy and possibly negative.
pub fn realized_regret(
    history: &[RoundRecord],
    stream: &TraceStream,
    cost: &CostModel,
    oracle: &OracleTable,
) -> Vec<f64> {
    let best = oracle.best_threshold();
    let traces = stream.traces();
    history
        .iter()
        .scan(0.0, |acc, rec| {
            let trace = &traces[rec.trace_index];
            let r_best = outcome_at(trace, exit_layer(&trace.confidences, best), cost).reward;
            *acc += r_best - rec.outcome.reward;
            Some(*acc)
        })
        .collect()
}

/// UCB regret bound after `n` rounds:
///
/// ```text
/// 4 * gamma * sum ln(n) / gap  +  (pi^2/3 + 1) * sum gap
/// ```
///
/// summed over arms with a positive gap. Meaningful for `gamma > 1`.
pub fn regret_bound(gamma: f64, gaps: &[f64], n: u64) -> f64 {
    bound_at_log(gamma, gaps, (n as f64).ln())
}

fn bound_at_log(gamma: f64, gaps: &[f64], ln_n: f64) -> f64 {
    let constant = PI * PI / 3.0 + 1.0;
    gaps.iter()
        .filter(|&&g| g > 0.0)
        .map(|&g| 4.0 * gamma * ln_n / g + constant * g)
        .sum()
}

/// `(sum L * n_i) / (sum i * n_i)` for per-layer exit counts, `L` being the
/// number of entries.
pub fn speedup_ratio(exit_counts: &[u64]) -> Result<f64> {
    let layers = exit_counts.len() as u64;
    let total: u64 = exit_counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("speedup of an empty exit histogram"));
    }
    let depth: u64 = exit_counts
        .iter()
        .enumerate()
        .map(|(i, &n)| (i as u64 + 1) * n)
        .sum();
    Ok((layers * total) as f64 / depth as f64)
}

/// Fraction of rounds whose exit prediction equals the served trace's label.
/// `None` unless every trace has predictions and a label.
pub fn accuracy_report(history: &[RoundRecord], stream: &TraceStream) -> Option<f64> {
    if history.is_empty() || !stream.is_labeled() {
        return None;
    }
    let traces = stream.traces();
    let correct = history
        .iter()
        .filter(|rec| {
            let t = &traces[rec.trace_index];
            rec.outcome.prediction.is_some() && rec.outcome.prediction == t.label
        })
        .count();
    Some(correct as f64 / history.len() as f64)
}

/// Everything measured about one online run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub thresholds: Vec<f64>,
    pub num_layers: usize,
    pub history: Vec<RoundRecord>,
    pub oracle: OracleTable,
    pub cumulative_regret: Vec<f64>,
    pub realized_regret: Vec<f64>,
    pub speedup: f64,
    pub accuracy: Option<f64>,
    pub per_arm_pulls: Vec<u64>,
    pub q_values: Vec<f64>,
}

impl RunReport {
    pub(crate) fn assemble(
        stream: &TraceStream,
        arms: &ArmSet,
        cost: &CostModel,
        history: Vec<RoundRecord>,
        state: &BanditState,
    ) -> Result<Self> {
        let oracle = oracle_mean_rewards(stream, arms, cost)?;
        let cumulative = cumulative_regret(&history, &oracle);
        let realized = realized_regret(&history, stream, cost, &oracle);
        let mut exits = vec![0u64; cost.num_layers()];
        for rec in &history {
            exits[rec.outcome.exit_layer - 1] += 1;
        }
        Ok(RunReport {
            thresholds: arms.thresholds().to_vec(),
            num_layers: cost.num_layers(),
            speedup: speedup_ratio(&exits)?,
            accuracy: accuracy_report(&history, stream),
            per_arm_pulls: state.pull_counts().to_vec(),
            q_values: state.q_values().to_vec(),
            cumulative_regret: cumulative,
            realized_regret: realized,
            oracle,
            history,
        })
    }

    pub fn rounds(&self) -> usize {
        self.history.len()
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    pub fn final_realized_regret(&self) -> f64 {
        self.realized_regret.last().copied().unwrap_or(0.0)
    }

    /// Arm with the most pulls; ties go to the lower threshold.
    pub fn most_pulled_arm(&self) -> usize {
        let mut best = 0;
        for (arm, &n) in self.per_arm_pulls.iter().enumerate() {
            if n > self.per_arm_pulls[best] {
                best = arm;
            }
        }
        best
    }

    /// Share of the last `window` rounds that played `arm`.
    pub fn pull_fraction(&self, arm: usize, window: usize) -> f64 {
        let window = window.min(self.history.len());
        let tail = &self.history[self.history.len() - window..];
        tail.iter().filter(|r| r.arm_index == arm).count() as f64 / window as f64
    }

    pub fn mean_reward(&self) -> f64 {
        self.history.iter().map(|r| r.outcome.reward).sum::<f64>() / self.history.len() as f64
    }

    pub fn exit_histogram(&self) -> Vec<u64> {
        let mut exits = vec![0u64; self.num_layers];
        for rec in &self.history {
            exits[rec.outcome.exit_layer - 1] += 1;
        }
        exits
    }
}
