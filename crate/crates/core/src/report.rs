//! CSV export of runs, oracle tables, baselines and sweeps.
//!
//! Reals are written in shortest round-trip form, so re-reading a file gives
//! back the exact values. Per-run files end with a block of `#`-prefixed
//! `key,value` summary lines; CSV readers configured with `#` as the comment
//! character see only the per-round table.

use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, Writer};

use crate::error::{Error, Result};
use crate::metrics::{OracleTable, RunReport, ThresholdSummary};

pub const RUN_COLUMNS: [&str; 6] = [
    "round",
    "arm_index",
    "threshold",
    "exit_layer",
    "reward",
    "cumulative_regret",
];

fn real(x: f64) -> String {
    format!("{x}")
}

fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

/// Per-round table followed by the summary block.
pub fn write_run_csv<W: Write>(report: &RunReport, sink: W) -> Result<()> {
    let mut w = Writer::from_writer(sink);
    w.write_record(RUN_COLUMNS)?;
    for (rec, regret) in report.history.iter().zip(&report.cumulative_regret) {
        w.write_record([
            rec.round.to_string(),
            rec.arm_index.to_string(),
            real(rec.threshold),
            rec.outcome.exit_layer.to_string(),
            real(rec.outcome.reward),
            real(*regret),
        ])?;
    }
    w.flush()?;
    let mut sink = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let best = report.oracle.best_arm_index;
    let pulls: Vec<String> = report.per_arm_pulls.iter().map(u64::to_string).collect();
    let lines = [
        ("rounds", report.rounds().to_string()),
        ("mean_reward", real(report.mean_reward())),
        ("speedup", real(report.speedup)),
        ("accuracy", opt_real(report.accuracy)),
        ("final_regret", real(report.final_regret())),
        (
            "final_realized_regret",
            real(report.final_realized_regret()),
        ),
        ("most_pulled_arm", report.most_pulled_arm().to_string()),
        ("oracle_arm", best.to_string()),
        ("oracle_threshold", real(report.oracle.best_threshold())),
        ("per_arm_pulls", pulls.join(";")),
    ];
    writeln!(sink, "# summary")?;
    for (key, value) in lines {
        writeln!(sink, "# {key},{value}")?;
    }
    sink.flush()?;
    Ok(())
}

/// A fixed threshold measured against the oracle's best arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub summary: ThresholdSummary,
    /// Oracle-best mean minus this threshold's mean; may be negative when the
    /// threshold is outside the arm set and beats every arm.
    pub gap: f64,
}

impl Baseline {
    pub fn new(summary: ThresholdSummary, oracle: &OracleTable) -> Self {
        let gap = oracle.best_mean_reward() - summary.mean_reward;
        Baseline { summary, gap }
    }

    /// Pseudo-regret of always playing this threshold for `rounds` rounds.
    pub fn regret_after(&self, rounds: usize) -> f64 {
        self.gap * rounds as f64
    }
}

fn oracle_header(num_layers: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "kind",
        "arm_index",
        "threshold",
        "mean_reward",
        "gap",
        "is_best",
        "accuracy",
        "expected_exit_layer",
        "speedup",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((1..=num_layers).map(|i| format!("n_{i}")));
    cols
}

/// One row per arm, then one `fixed` row per baseline threshold.
pub fn write_oracle_csv<W: Write>(
    table: &OracleTable,
    baselines: &[Baseline],
    sink: W,
) -> Result<()> {
    let layers = table.per_arm_exit_histogram[0].len();
    let mut w = Writer::from_writer(sink);
    w.write_record(oracle_header(layers))?;
    for arm in 0..table.num_arms() {
        let mut row = vec![
            "arm".to_owned(),
            arm.to_string(),
            real(table.thresholds[arm]),
            real(table.per_arm_mean_reward[arm]),
            real(table.gaps[arm]),
            u8::from(arm == table.best_arm_index).to_string(),
            opt_real(table.per_arm_accuracy.as_ref().map(|a| a[arm])),
            real(table.expected_exit_layer(arm)),
            real(table.speedup(arm)),
        ];
        row.extend(table.per_arm_exit_histogram[arm].iter().map(u64::to_string));
        w.write_record(&row)?;
    }
    for b in baselines {
        let s = &b.summary;
        let mut row = vec![
            "fixed".to_owned(),
            String::new(),
            real(s.threshold),
            real(s.mean_reward),
            real(b.gap),
            "0".to_owned(),
            opt_real(s.accuracy),
            real(s.expected_exit_layer()),
            real(s.speedup()),
        ];
        row.extend(s.exit_histogram.iter().map(u64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn field<'a>(rec: &'a StringRecord, idx: usize, name: &str) -> Result<&'a str> {
    rec.get(idx)
        .ok_or_else(|| Error::Report(format!("missing column {name}")))
}

fn parse_num<T: std::str::FromStr>(text: &str, name: &str) -> Result<T> {
    text.parse()
        .map_err(|_| Error::Report(format!("bad {name} value `{text}`")))
}

fn parse_opt_real(text: &str, name: &str) -> Result<Option<f64>> {
    if text.is_empty() {
        Ok(None)
    } else {
        parse_num(text, name).map(Some)
    }
}

/// Reads back a file produced by [`write_oracle_csv`].
pub fn parse_oracle_csv<R: Read>(source: R) -> Result<(OracleTable, Vec<Baseline>)> {
    let mut reader = ReaderBuilder::new().comment(Some(b'#')).from_reader(source);
    let header = reader.headers()?.clone();
    let layers = header.iter().filter(|h| h.starts_with("n_")).count();
    if header.len() != 9 + layers || layers < 2 {
        return Err(Error::Report("unexpected oracle header".into()));
    }
    let mut summaries = Vec::new();
    let mut gaps = Vec::new();
    let mut best = None;
    let mut baselines = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let kind = field(&rec, 0, "kind")?;
        let threshold = parse_num(field(&rec, 2, "threshold")?, "threshold")?;
        let mean_reward = parse_num(field(&rec, 3, "mean_reward")?, "mean_reward")?;
        let gap: f64 = parse_num(field(&rec, 4, "gap")?, "gap")?;
        let accuracy = parse_opt_real(field(&rec, 6, "accuracy")?, "accuracy")?;
        let exit_histogram = (0..layers)
            .map(|i| parse_num(field(&rec, 9 + i, "n_i")?, "n_i"))
            .collect::<Result<Vec<u64>>>()?;
        let summary = ThresholdSummary {
            threshold,
            mean_reward,
            exit_histogram,
            accuracy,
        };
        match kind {
            "arm" => {
                let arm: usize = parse_num(field(&rec, 1, "arm_index")?, "arm_index")?;
                if arm != summaries.len() {
                    return Err(Error::Report(format!("arm rows out of order at {arm}")));
                }
                if field(&rec, 5, "is_best")? == "1" {
                    best = Some(arm);
                }
                summaries.push(summary);
                gaps.push(gap);
            }
            "fixed" => baselines.push(Baseline { summary, gap }),
            other => return Err(Error::Report(format!("unknown row kind `{other}`"))),
        }
    }
    let mut table = OracleTable::from_summaries(&summaries)?;
    table.best_arm_index = best.ok_or_else(|| Error::Report("no best arm marked".into()))?;
    table.gaps = gaps;
    Ok((table, baselines))
}

/// Per-run figures aggregated across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub rounds: usize,
    pub mean_reward: f64,
    pub accuracy: Option<f64>,
    pub speedup: f64,
    pub final_regret: f64,
    pub final_realized_regret: f64,
    pub most_pulled_arm: usize,
    pub most_pulled_threshold: f64,
    pub oracle_arm: usize,
    pub oracle_threshold: f64,
}

impl RunSummary {
    pub fn of(report: &RunReport, seed: u64) -> Self {
        let most = report.most_pulled_arm();
        RunSummary {
            seed,
            rounds: report.rounds(),
            mean_reward: report.mean_reward(),
            accuracy: report.accuracy,
            speedup: report.speedup,
            final_regret: report.final_regret(),
            final_realized_regret: report.final_realized_regret(),
            most_pulled_arm: most,
            most_pulled_threshold: report.thresholds[most],
            oracle_arm: report.oracle.best_arm_index,
            oracle_threshold: report.oracle.best_threshold(),
        }
    }
}

/// Median (mean of the two middle values for even counts).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Most frequent value; ties go to the smallest.
fn mode(values: impl Iterator<Item = usize>) -> usize {
    let mut counts = std::collections::BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0u32) += 1;
    }
    let mut best = (0, 0);
    for (v, c) in counts {
        if c > best.1 {
            best = (v, c);
        }
    }
    best.0
}

/// Cross-run aggregate: medians and sample deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub median_mean_reward: f64,
    pub median_accuracy: Option<f64>,
    pub median_speedup: f64,
    pub median_final_regret: f64,
    pub median_final_realized_regret: f64,
    pub std_mean_reward: f64,
    pub std_accuracy: Option<f64>,
    pub std_speedup: f64,
    pub std_final_regret: f64,
    pub std_final_realized_regret: f64,
    pub most_pulled_arm: usize,
}

impl Aggregate {
    pub fn of(runs: &[RunSummary]) -> Self {
        let col = |f: fn(&RunSummary) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        let acc: Option<Vec<f64>> = runs.iter().map(|r| r.accuracy).collect();
        Aggregate {
            median_mean_reward: median(&col(|r| r.mean_reward)),
            median_accuracy: acc.as_deref().map(median),
            median_speedup: median(&col(|r| r.speedup)),
            median_final_regret: median(&col(|r| r.final_regret)),
            median_final_realized_regret: median(&col(|r| r.final_realized_regret)),
            std_mean_reward: std_dev(&col(|r| r.mean_reward)),
            std_accuracy: acc.as_deref().map(std_dev),
            std_speedup: std_dev(&col(|r| r.speedup)),
            std_final_regret: std_dev(&col(|r| r.final_regret)),
            std_final_realized_regret: std_dev(&col(|r| r.final_realized_regret)),
            most_pulled_arm: mode(runs.iter().map(|r| r.most_pulled_arm)),
        }
    }
}

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "run",
    "seed",
    "rounds",
    "mean_reward",
    "accuracy",
    "speedup",
    "final_regret",
    "final_realized_regret",
    "most_pulled_arm",
    "most_pulled_threshold",
    "oracle_arm",
    "oracle_threshold",
];

/// One row per run, then `median` and `std` rows.
pub fn write_summary_csv<W: Write>(runs: &[RunSummary], sink: W) -> Result<()> {
    let mut w = Writer::from_writer(sink);
    w.write_record(SUMMARY_COLUMNS)?;
    for (i, r) in runs.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.seed.to_string(),
            r.rounds.to_string(),
            real(r.mean_reward),
            opt_real(r.accuracy),
            real(r.speedup),
            real(r.final_regret),
            real(r.final_realized_regret),
            r.most_pulled_arm.to_string(),
            real(r.most_pulled_threshold),
            r.oracle_arm.to_string(),
            real(r.oracle_threshold),
        ])?;
    }
    let agg = Aggregate::of(runs);
    let (oracle_arm, oracle_threshold) = runs
        .first()
        .map(|r| (r.oracle_arm.to_string(), real(r.oracle_threshold)))
        .unwrap_or_default();
    let most_threshold = runs
        .iter()
        .find(|r| r.most_pulled_arm == agg.most_pulled_arm)
        .map(|r| real(r.most_pulled_threshold))
        .unwrap_or_default();
    w.write_record([
        "median".to_owned(),
        String::new(),
        runs.first()
            .map(|r| r.rounds.to_string())
            .unwrap_or_default(),
        real(agg.median_mean_reward),
        opt_real(agg.median_accuracy),
        real(agg.median_speedup),
        real(agg.median_final_regret),
        real(agg.median_final_realized_regret),
        agg.most_pulled_arm.to_string(),
        most_threshold,
        oracle_arm,
        oracle_threshold,
    ])?;
    w.write_record([
        "std".to_owned(),
        String::new(),
        String::new(),
        real(agg.std_mean_reward),
        opt_real(agg.std_accuracy),
        real(agg.std_speedup),
        real(agg.std_final_regret),
        real(agg.std_final_realized_regret),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Fixed-threshold baselines with their pseudo-regret after `rounds` rounds.
pub fn write_baselines_csv<W: Write>(baselines: &[Baseline], rounds: usize, sink: W) -> Result<()> {
    let mut w = Writer::from_writer(sink);
    w.write_record([
        "threshold",
        "mean_reward",
        "gap",
        "final_regret",
        "speedup",
        "accuracy",
    ])?;
    for b in baselines {
        w.write_record([
            real(b.summary.threshold),
            real(b.summary.mean_reward),
            real(b.gap),
            real(b.regret_after(rounds)),
            real(b.summary.speedup()),
            opt_real(b.summary.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a trade-off sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mu: f64,
    pub oracle_arm: usize,
    pub oracle_threshold: f64,
    pub oracle_mean_reward: f64,
    pub oracle_expected_exit_layer: f64,
    pub oracle_speedup: f64,
    pub oracle_accuracy: Option<f64>,
    pub aggregate: Aggregate,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], sink: W) -> Result<()> {
    let mut w = Writer::from_writer(sink);
    w.write_record([
        "mu",
        "oracle_arm",
        "oracle_threshold",
        "oracle_mean_reward",
        "oracle_expected_exit_layer",
        "oracle_speedup",
        "oracle_accuracy",
        "median_speedup",
        "median_accuracy",
        "median_final_regret",
        "most_pulled_arm",
    ])?;
    for r in rows {
        w.write_record([
            real(r.mu),
            r.oracle_arm.to_string(),
            real(r.oracle_threshold),
            real(r.oracle_mean_reward),
            real(r.oracle_expected_exit_layer),
            real(r.oracle_speedup),
            opt_real(r.oracle_accuracy),
            real(r.aggregate.median_speedup),
            opt_real(r.aggregate.median_accuracy),
            real(r.aggregate.median_final_regret),
            r.aggregate.most_pulled_arm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
