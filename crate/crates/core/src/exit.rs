//! Exit rule, latency cost and per-sample reward.
//!
//! A sample runs layer by layer and leaves at the first intermediate layer
//! whose confidence reaches the threshold; otherwise the final layer infers it.
//! Exiting at layer `i` earns
//!
//! ```text
//! r = (C_i - C_1) - mu * o_i,    o_i = lambda * i
//! ```
//!
//! i.e. the confidence gained since the first exit, less the weighted latency.

use crate::error::{Error, Result};
use crate::trace::ConfidenceTrace;

/// Default trade-off weight between confidence gain and latency.
pub const DEFAULT_MU: f64 = 0.5;

/// Linear per-layer latency cost and the accuracy/latency trade-off weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    num_layers: usize,
    lambda_per_layer: f64,
    mu: f64,
}

impl CostModel {
    /// `mu` must lie in `[0, 1/o_L]` so that the weighted final-layer cost
    /// never exceeds one unit of confidence.
    pub fn new(num_layers: usize, lambda_per_layer: f64, mu: f64) -> Result<Self> {
        if num_layers < 2 {
            return Err(Error::invalid(format!(
                "num_layers must be at least 2, got {num_layers}"
            )));
        }
        if !(lambda_per_layer.is_finite() && lambda_per_layer > 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {lambda_per_layer}"
            )));
        }
        let final_cost = lambda_per_layer * num_layers as f64;
        if !(mu.is_finite() && mu >= 0.0 && mu * final_cost <= 1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "mu must lie in [0, {}], got {mu}",
                1.0 / final_cost
            )));
        }
        Ok(CostModel {
            num_layers,
            lambda_per_layer,
            mu,
        })
    }

    /// `lambda = 1/L` (so `o_L = 1`) and `mu = 0.5`.
    pub fn with_defaults(num_layers: usize) -> Result<Self> {
        Self::new(num_layers, 1.0 / num_layers as f64, DEFAULT_MU)
    }

    /// Same costs, different trade-off weight.
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::new(self.num_layers, self.lambda_per_layer, mu)
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn lambda_per_layer(&self) -> f64 {
        self.lambda_per_layer
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `o_layer = lambda * layer`, for `1 <= layer <= L`.
    pub fn latency_cost(&self, layer: usize) -> Result<f64> {
        if layer == 0 || layer > self.num_layers {
            return Err(Error::LayerOutOfRange {
                layer,
                num_layers: self.num_layers,
            });
        }
        Ok(self.cost_at(layer))
    }

    #[inline]
    fn cost_at(&self, layer: usize) -> f64 {
        self.lambda_per_layer * layer as f64
    }

    /// Tightest static reward range for traces with `num_classes` classes.
    ///
    /// The minimum is the largest confidence loss paid at the final layer. An
    /// exit at layer 1 always earns exactly `-mu * o_1`; a later exit can gain at
    /// most `1 - 1/C`, cheapest at layer 2. The maximum is the larger of the two.
    pub fn reward_bounds(&self, num_classes: usize) -> (f64, f64) {
        let span = 1.0 - 1.0 / num_classes as f64;
        let lo = -span - self.mu * self.cost_at(self.num_layers);
        let hi = f64::max(-self.mu * self.cost_at(1), span - self.mu * self.cost_at(2));
        (lo, hi)
    }
}

/// Result of running one trace against one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitOutcome {
    /// 1-based.
    pub exit_layer: usize,
    pub exit_confidence: f64,
    pub first_confidence: f64,
    pub reward: f64,
    pub latency_cost: f64,
    pub exited_early: bool,
    pub prediction: Option<usize>,
}

/// 1-based layer at which `confidences` exits under `threshold`.
#[inline]
pub fn exit_layer(confidences: &[f64], threshold: f64) -> usize {
    let last = confidences.len();
    confidences[..last - 1]
        .iter()
        .position(|&c| c >= threshold)
        .map_or(last, |i| i + 1)
}

/// Applies the exit rule to one trace.
pub fn evaluate_exit(
    trace: &ConfidenceTrace,
    threshold: f64,
    cost: &CostModel,
) -> Result<ExitOutcome> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if trace.num_layers() != cost.num_layers {
        return Err(Error::DimensionMismatch {
            expected: cost.num_layers,
            found: trace.num_layers(),
        });
    }
    Ok(outcome_at(
        trace,
        exit_layer(&trace.confidences, threshold),
        cost,
    ))
}

#[inline]
pub(crate) fn outcome_at(trace: &ConfidenceTrace, layer: usize, cost: &CostModel) -> ExitOutcome {
    let exit_confidence = trace.confidences[layer - 1];
    let first_confidence = trace.confidences[0];
    let latency_cost = cost.cost_at(layer);
    ExitOutcome {
        exit_layer: layer,
        exit_confidence,
        first_confidence,
        reward: (exit_confidence - first_confidence) - cost.mu * latency_cost,
        latency_cost,
        exited_early: layer < cost.num_layers,
        prediction: trace.predictions.as_ref().map(|p| p[layer - 1]),
    }
}
