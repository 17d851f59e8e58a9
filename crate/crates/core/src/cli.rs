//! Command implementations behind the `exitbandit` binary.
//!
//! Every command loads and validates its whole input, and finishes all
//! computation, before it creates the output directory or writes a file.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::bandit::{build_action_set, run_stream, ArmSet};
use crate::error::{Error, Result};
use crate::exit::CostModel;
use crate::metrics::{evaluate_threshold, oracle_mean_rewards, OracleTable, RunReport};
use crate::report::{
    write_baselines_csv, write_oracle_csv, write_run_csv, write_summary_csv, write_sweep_csv,
    Aggregate, Baseline, RunSummary, SweepRow,
};
use crate::synth::{generate_stream, SynthConfig};
use crate::trace::{read_trace_file, write_traces, TraceStream};

#[derive(Debug, Parser)]
#[command(
    name = "exitbandit",
    version,
    about = "Online confidence-threshold learning for early-exit inference"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the online learner (one run per seed) and write per-run reports.
    Run(RunArgs),
    /// Write the in-hindsight per-arm table for the stream.
    Oracle(RunArgs),
    /// Repeat `run` and `oracle` over a grid of trade-off weights.
    Sweep(SweepArgs),
    /// Generate a synthetic trace file.
    Generate(GenerateArgs),
    /// Check a trace file against the interchange format.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Trace file (JSONL).
    #[arg(long, required_unless_present = "synth", conflicts_with = "synth")]
    pub input: Option<PathBuf>,
    /// Generator config (JSON) to draw the stream from instead of a file.
    #[arg(long)]
    pub synth: Option<PathBuf>,
    /// Number of traces to draw with --synth.
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    /// Number of arms.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Exploration weight.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Trade-off weight between confidence gain and latency.
    #[arg(long, default_value_t = 0.5)]
    pub mu: f64,
    /// Per-layer cost, or `auto` for 1/L.
    #[arg(long, default_value = "auto", value_parser = parse_lambda)]
    pub lambda: Lambda,
    /// Base seed; run `r` uses `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of runs.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed thresholds to report as baselines, e.g. 0.5,0.8,0.9.
    #[arg(long, value_delimiter = ',')]
    pub fixed_thresholds: Vec<f64>,
    /// Reshuffle the stream for every run (default).
    #[arg(long, overrides_with = "no_shuffle", action = ArgAction::SetTrue)]
    pub shuffle: bool,
    /// Replay the stream in file order.
    #[arg(long = "no-shuffle", action = ArgAction::SetTrue)]
    pub no_shuffle: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Trade-off weights to sweep, e.g. 0.1,0.2,0.3.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub mu_grid: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Generator config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Output trace file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Auto,
    Fixed(f64),
}

fn parse_lambda(text: &str) -> std::result::Result<Lambda, String> {
    if text == "auto" {
        return Ok(Lambda::Auto);
    }
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(Lambda::Fixed(v)),
        _ => Err(format!(
            "expected `auto` or a positive number, got `{text}`"
        )),
    }
}

/// Where traces come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    File(PathBuf),
    Synthetic { config: PathBuf, count: usize },
}

/// Resolved settings shared by `run`, `oracle` and `sweep`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: InputSource,
    pub k: usize,
    pub gamma: f64,
    pub mu: f64,
    pub lambda: Lambda,
    pub seed: u64,
    pub runs: usize,
    pub out: PathBuf,
    pub fixed_thresholds: Vec<f64>,
    pub shuffle: bool,
}

impl RunConfig {
    pub fn new(input: InputSource, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            input,
            k: 10,
            gamma: 1.0,
            mu: 0.5,
            lambda: Lambda::Auto,
            seed: 0,
            runs: 1,
            out: out.into(),
            fixed_thresholds: Vec::new(),
            shuffle: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(Error::invalid("--runs must be at least 1"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(format!(
                "--gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if let Some(a) = self
            .fixed_thresholds
            .iter()
            .find(|&&a| !(a > 0.0 && a <= 1.0))
        {
            return Err(Error::invalid(format!(
                "fixed threshold {a} outside (0, 1]"
            )));
        }
        Ok(())
    }

    fn cost(&self, num_layers: usize, mu: f64) -> Result<CostModel> {
        let lambda = match self.lambda {
            Lambda::Auto => 1.0 / num_layers as f64,
            Lambda::Fixed(v) => v,
        };
        CostModel::new(num_layers, lambda, mu)
    }

    fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}

impl From<&RunArgs> for RunConfig {
    fn from(a: &RunArgs) -> Self {
        let input = match (&a.input, &a.synth) {
            (Some(path), _) => InputSource::File(path.clone()),
            (None, Some(config)) => InputSource::Synthetic {
                config: config.clone(),
                count: a.count,
            },
            (None, None) => unreachable!("clap requires --input or --synth"),
        };
        RunConfig {
            input,
            k: a.k,
            gamma: a.gamma,
            mu: a.mu,
            lambda: a.lambda,
            seed: a.seed,
            runs: a.runs,
            out: a.out.clone(),
            fixed_thresholds: a.fixed_thresholds.clone(),
            shuffle: !a.no_shuffle,
        }
    }
}

pub fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    SynthConfig::from_json(&fs::read_to_string(path)?)
}

pub fn load_stream(input: &InputSource) -> Result<TraceStream> {
    match input {
        InputSource::File(path) => read_trace_file(path),
        InputSource::Synthetic { config, count } => {
            generate_stream(&load_synth_config(config)?, *count)
        }
    }
}

struct Prepared {
    stream: TraceStream,
    arms: ArmSet,
    cost: CostModel,
}

fn prepare(config: &RunConfig, mu: f64) -> Result<Prepared> {
    config.validate()?;
    let stream = load_stream(&config.input)?;
    let arms = build_action_set(stream.num_classes(), config.k)?;
    let cost = config.cost(stream.num_layers(), mu)?;
    Ok(Prepared { stream, arms, cost })
}

fn runs_for(config: &RunConfig, p: &Prepared) -> Result<Vec<(u64, RunReport)>> {
    (0..config.runs)
        .into_par_iter()
        .map(|r| {
            let seed = config.run_seed(r);
            let shuffle = config.shuffle.then_some(seed);
            run_stream(&p.stream, &p.arms, &p.cost, config.gamma, shuffle).map(|rep| (seed, rep))
        })
        .collect()
}

fn baselines_for(config: &RunConfig, p: &Prepared, oracle: &OracleTable) -> Result<Vec<Baseline>> {
    config
        .fixed_thresholds
        .iter()
        .map(|&a| evaluate_threshold(&p.stream, a, &p.cost).map(|s| Baseline::new(s, oracle)))
        .collect()
}

fn create_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Output of [`cmd_run`], also written to disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summaries: Vec<RunSummary>,
    pub aggregate: Aggregate,
    pub oracle: OracleTable,
    pub baselines: Vec<Baseline>,
}

/// Writes `run_NNN.csv` per run, `summary.csv`, and `baselines.csv` when
/// fixed thresholds are requested.
pub fn cmd_run(config: &RunConfig) -> Result<RunOutcome> {
    let p = prepare(config, config.mu)?;
    let reports = runs_for(config, &p)?;
    let oracle = reports[0].1.oracle.clone();
    let baselines = baselines_for(config, &p, &oracle)?;
    let summaries: Vec<RunSummary> = reports
        .iter()
        .map(|(seed, rep)| RunSummary::of(rep, *seed))
        .collect();

    fs::create_dir_all(&config.out)?;
    for (i, (_, rep)) in reports.iter().enumerate() {
        let mut f = create_file(&config.out, &format!("run_{i:03}.csv"))?;
        write_run_csv(rep, &mut f)?;
        f.flush()?;
    }
    let mut f = create_file(&config.out, "summary.csv")?;
    write_summary_csv(&summaries, &mut f)?;
    f.flush()?;
    if !baselines.is_empty() {
        let mut f = create_file(&config.out, "baselines.csv")?;
        write_baselines_csv(&baselines, p.stream.len(), &mut f)?;
        f.flush()?;
    }
    Ok(RunOutcome {
        aggregate: Aggregate::of(&summaries),
        summaries,
        oracle,
        baselines,
    })
}

/// Writes `oracle.csv`: one row per arm plus one per fixed threshold.
pub fn cmd_oracle(config: &RunConfig) -> Result<(OracleTable, Vec<Baseline>)> {
    let p = prepare(config, config.mu)?;
    let oracle = oracle_mean_rewards(&p.stream, &p.arms, &p.cost)?;
    let baselines = baselines_for(config, &p, &oracle)?;
    fs::create_dir_all(&config.out)?;
    let mut f = create_file(&config.out, "oracle.csv")?;
    write_oracle_csv(&oracle, &baselines, &mut f)?;
    f.flush()?;
    Ok((oracle, baselines))
}

/// Writes `sweep.csv` with one row per trade-off weight.
pub fn cmd_sweep(config: &RunConfig, mu_grid: &[f64]) -> Result<Vec<SweepRow>> {
    if mu_grid.is_empty() {
        return Err(Error::invalid("--mu-grid needs at least one value"));
    }
    let base = prepare(config, 0.0)?;
    let costs = mu_grid
        .iter()
        .map(|&mu| base.cost.with_mu(mu))
        .collect::<Result<Vec<_>>>()?;
    let rows = costs
        .par_iter()
        .map(|cost| {
            let p = Prepared {
                stream: base.stream.clone(),
                arms: base.arms.clone(),
                cost: *cost,
            };
            let reports = runs_for(config, &p)?;
            let oracle = &reports[0].1.oracle;
            let best = oracle.best_arm_index;
            let summaries: Vec<RunSummary> = reports
                .iter()
                .map(|(seed, rep)| RunSummary::of(rep, *seed))
                .collect();
            Ok(SweepRow {
                mu: cost.mu(),
                oracle_arm: best,
                oracle_threshold: oracle.best_threshold(),
                oracle_mean_reward: oracle.best_mean_reward(),
                oracle_expected_exit_layer: oracle.expected_exit_layer(best),
                oracle_speedup: oracle.speedup(best),
                oracle_accuracy: oracle.per_arm_accuracy.as_ref().map(|a| a[best]),
                aggregate: Aggregate::of(&summaries),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&config.out)?;
    let mut f = create_file(&config.out, "sweep.csv")?;
    write_sweep_csv(&rows, &mut f)?;
    f.flush()?;
    Ok(rows)
}

/// Draws `count` traces and writes them to `out`.
pub fn cmd_generate(config: &Path, count: usize, out: &Path) -> Result<TraceStream> {
    let cfg = load_synth_config(config)?;
    let stream = generate_stream(&cfg, count)?;
    let mut f = BufWriter::new(File::create(out)?);
    write_traces(&stream, &mut f)?;
    f.flush()?;
    Ok(stream)
}

/// Parses and validates a trace file.
pub fn cmd_validate(input: &Path) -> Result<TraceStream> {
    read_trace_file(input)
}

/// Dispatches a parsed command line, printing a short result line.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => {
            let cfg = RunConfig::from(args);
            let out = cmd_run(&cfg)?;
            let agg = &out.aggregate;
            println!(
                "{} run(s): median speedup {:.4}, median final regret {:.4}, most pulled arm {} (oracle arm {})",
                out.summaries.len(),
                agg.median_speedup,
                agg.median_final_regret,
                agg.most_pulled_arm,
                out.oracle.best_arm_index
            );
        }
        Command::Oracle(args) => {
            let (table, _) = cmd_oracle(&RunConfig::from(args))?;
            println!(
                "oracle arm {} (threshold {}), mean reward {:.6}",
                table.best_arm_index,
                table.best_threshold(),
                table.best_mean_reward()
            );
        }
        Command::Sweep(args) => {
            let rows = cmd_sweep(&RunConfig::from(&args.run), &args.mu_grid)?;
            println!("swept {} value(s) of mu", rows.len());
        }
        Command::Generate(args) => {
            let s = cmd_generate(&args.config, args.count, &args.out)?;
            println!("wrote {} traces to {}", s.len(), args.out.display());
        }
        Command::Validate(args) => {
            let s = cmd_validate(&args.input)?;
            println!(
                "ok: {} traces, {} layers, {} classes, labeled: {}",
                s.len(),
                s.num_layers(),
                s.num_classes(),
                if s.is_labeled() { "yes" } else { "no" }
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_parsing() {
        assert_eq!(parse_lambda("auto"), Ok(Lambda::Auto));
        assert_eq!(parse_lambda("0.25"), Ok(Lambda::Fixed(0.25)));
        assert!(parse_lambda("0").is_err());
        assert!(parse_lambda("x").is_err());
    }

    #[test]
    fn shuffle_flags() {
        let parse = |extra: &[&str]| {
            let mut argv = vec!["exitbandit", "run", "--input", "x.jsonl", "--out", "o"];
            argv.extend_from_slice(extra);
            match Cli::try_parse_from(argv).unwrap().command {
                Command::Run(a) => RunConfig::from(&a).shuffle,
                _ => unreachable!(),
            }
        };
        assert!(parse(&[]));
        assert!(!parse(&["--no-shuffle"]));
        assert!(parse(&["--no-shuffle", "--shuffle"]));
    }

    #[test]
    fn input_sources_are_exclusive() {
        assert!(Cli::try_parse_from(["exitbandit", "run", "--out", "o"]).is_err());
        assert!(Cli::try_parse_from([
            "exitbandit",
            "run",
            "--input",
            "a",
            "--synth",
            "b",
            "--out",
            "o"
        ])
        .is_err());
    }

    #[test]
    fn fixed_threshold_list() {
        let cli = Cli::try_parse_from([
            "exitbandit",
            "oracle",
            "--input",
            "a",
            "--out",
            "o",
            "--fixed-thresholds",
            "0.5,0.8,0.9",
        ])
        .unwrap();
        match cli.command {
            Command::Oracle(a) => assert_eq!(a.fixed_thresholds, vec![0.5, 0.8, 0.9]),
            _ => unreachable!(),
        }
    }
}
