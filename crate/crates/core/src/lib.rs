//! Online threshold learning for early-exit inference.
//!
//! A multi-exit model attaches a classifier to every layer; a sample leaves at
//! the first layer whose max-probability confidence reaches a threshold. This
//! crate treats the candidate thresholds as bandit arms and learns the best one
//! on the fly from per-layer confidence traces, using only the confidence gained
//! relative to the first exit and a latency cost proportional to depth. No labels
//! are consumed by the learner.
//!
//! Modules:
//! - [`trace`]: confidence traces, validation, and the JSONL interchange format.
//! - [`exit`]: the exit rule, latency cost and reward.
//! - [`bandit`]: action sets, UCB selection and the streaming loop.
//! - [`metrics`]: brute-force oracle, pseudo-regret, the UCB regret bound,
//!   speedup and accuracy.
//! - [`synth`]: synthetic trace generator with a domain-shift knob.
//! - [`report`]: CSV export and re-import.
//! - [`cli`]: command implementations behind the `exitbandit` binary.

pub mod bandit;
pub mod cli;
pub mod error;
pub mod exit;
pub mod metrics;
pub mod report;
pub mod synth;
pub mod trace;

pub use bandit::{
    build_action_set, run_policy, run_stream, ucb_index, ArmSet, BanditState, Policy, RoundRecord,
};
pub use error::{Error, Result};
pub use exit::{evaluate_exit, CostModel, ExitOutcome};
pub use metrics::{
    accuracy_report, cumulative_regret, oracle_mean_rewards, realized_regret, regret_bound,
    speedup_ratio, OracleTable, RunReport,
};
pub use synth::{generate_stream, LabelModel, SynthConfig};
pub use trace::{
    parse_traces, shuffle_stream, write_traces, ConfidenceTrace, Provenance, ProvenanceKind,
    TraceStream,
};
