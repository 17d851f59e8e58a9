//! Synthetic confidence traces with a domain-shift knob.
//!
//! Each layer's confidence is drawn independently as
//! `clamp(base_curve[i] - shift * shift_depression + noise_scale * z, 1/C, 1)`
//! with `z ~ N(0, 1)`. Shift models a target domain whose exit confidences are
//! depressed relative to the source.
//!
//! Traces are produced in fixed-size batches; batch `b` draws from its own
//! generator seeded with `seed ^ b`, so batches can be built in parallel and
//! the output does not depend on the thread count.

use rand::distr::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{ConfidenceTrace, Provenance, ProvenanceKind, TraceStream};

/// Traces per generator batch.
pub const BATCH_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelModel {
    #[default]
    None,
    /// One label per trace; the layer-`i` prediction equals it with
    /// probability `C_i`, otherwise a uniformly drawn wrong class.
    ConfidenceLinked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_layers: usize,
    pub num_classes: usize,
    /// Source-domain mean confidence per layer; non-decreasing, in `(1/C, 1]`.
    pub base_curve: Vec<f64>,
    pub noise_scale: f64,
    /// In `[0, 1]`; 0 is the source domain.
    pub shift: f64,
    /// Mean confidence drop at `shift = 1`.
    pub shift_depression: f64,
    pub label_model: LabelModel,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Twelve layers, two classes, a linear curve from 0.55 to 0.97.
    fn default() -> Self {
        let layers = 12;
        let base_curve = (0..layers)
            .map(|i| 0.55 + (0.97 - 0.55) * i as f64 / (layers - 1) as f64)
            .collect();
        SynthConfig {
            num_layers: layers,
            num_classes: 2,
            base_curve,
            noise_scale: 0.05,
            shift: 0.0,
            shift_depression: 0.1,
            label_model: LabelModel::None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SynthConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c < 2 {
            return Err(Error::invalid(format!("num_classes must be >= 2, got {c}")));
        }
        if self.num_layers < 2 {
            return Err(Error::invalid("num_layers must be >= 2"));
        }
        if self.base_curve.len() != self.num_layers {
            return Err(Error::invalid(format!(
                "base_curve has {} entries for {} layers",
                self.base_curve.len(),
                self.num_layers
            )));
        }
        let floor = 1.0 / c as f64;
        if let Some(v) = self.base_curve.iter().find(|&&v| !(v > floor && v <= 1.0)) {
            return Err(Error::invalid(format!(
                "base_curve value {v} outside (1/{c}, 1]"
            )));
        }
        if self.base_curve.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("base_curve must be non-decreasing"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid("noise_scale must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.shift) {
            return Err(Error::invalid(format!(
                "shift {} outside [0, 1]",
                self.shift
            )));
        }
        if !(self.shift_depression.is_finite() && self.shift_depression > 0.0) {
            return Err(Error::invalid("shift_depression must be positive"));
        }
        let drop = self.shift * self.shift_depression;
        if let Some(v) = self.base_curve.iter().find(|&&v| v - drop < floor) {
            return Err(Error::invalid(format!(
                "shifted mean {} falls below 1/{c}",
                v - drop
            )));
        }
        Ok(())
    }

    /// Mean confidence per layer after the shift.
    pub fn shifted_curve(&self) -> Vec<f64> {
        let drop = self.shift * self.shift_depression;
        self.base_curve.iter().map(|v| v - drop).collect()
    }
}

/// Draws `count` traces from the configured model.
pub fn generate_stream(config: &SynthConfig, count: usize) -> Result<TraceStream> {
    config.validate()?;
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    let means = config.shifted_curve();
    let batches = count.div_ceil(BATCH_SIZE);
    let traces: Vec<ConfidenceTrace> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let start = b * BATCH_SIZE;
            let end = (start + BATCH_SIZE).min(count);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ b as u64);
            (start..end)
                .map(|i| draw_trace(config, &means, i, &mut rng))
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    let provenance = Provenance::new(ProvenanceKind::Synthetic)
        .with("seed", config.seed)
        .with("shift", config.shift)
        .with("shift_depression", config.shift_depression)
        .with("noise_scale", config.noise_scale);
    TraceStream::new(traces, provenance)
}

fn draw_trace(
    config: &SynthConfig,
    means: &[f64],
    index: usize,
    rng: &mut ChaCha8Rng,
) -> ConfidenceTrace {
    let c = config.num_classes;
    let floor = 1.0 / c as f64;
    let confidences: Vec<f64> = means
        .iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            (m + config.noise_scale * z).clamp(floor, 1.0)
        })
        .collect();
    let (predictions, label) = match config.label_model {
        LabelModel::None => (None, None),
        LabelModel::ConfidenceLinked => {
            let label = rng.random_range(0..c);
            let wrong = Uniform::new(0, c - 1).expect("at least two classes");
            let preds = confidences
                .iter()
                .map(|&conf| {
                    if rng.random_bool(conf) {
                        label
                    } else {
                        // uniform over the other classes
                        let k = wrong.sample(rng);
                        if k >= label {
                            k + 1
                        } else {
                            k
                        }
                    }
                })
                .collect();
            (Some(preds), Some(label))
        }
    };
    ConfidenceTrace {
        id: format!("syn-{}-{index}", config.seed),
        num_classes: c,
        confidences,
        predictions,
        probs: None,
        label,
    }
}
