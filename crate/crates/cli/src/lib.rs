//! `hermit` command-line front end: argument parsing, the checkpoint
//! container, config handling and report output.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod report;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hermit_core::ingest::{self, IngestOptions};
use hermit_core::{HermitError, SnapshotSequence, SynthConfig};

pub use error::{exit, CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "hermit", version, about = "Hyperbolic temporal graph encoder for link and RTT prediction")]
pub struct Cli {
    /// Seed for every randomized step of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn traceroute JSON lines into a daily snapshot CSV.
    Ingest(IngestArgs),
    /// Generate a synthetic snapshot CSV.
    Synth(SynthArgs),
    /// Train the encoder and forests and save a checkpoint.
    Train(TrainArgs),
    /// Score the test split of a dataset.
    Evaluate(EvaluateArgs),
    /// Link probability and RTT for node pairs.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Glob of JSON-lines files; matches are read in sorted order.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub top_fraction: f64,
    /// Keep every day instead of the weekly sampling rule.
    #[arg(long)]
    pub no_weekly_sample: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub nodes: usize,
    #[arg(long, default_value_t = 60)]
    pub snapshots: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub attachment_m: usize,
    #[arg(long, default_value_t = 0.05)]
    pub churn: f64,
    #[arg(long, default_value_t = 10.0)]
    pub rtt_base_ms: f64,
    #[arg(long, default_value_t = 0.1)]
    pub rtt_noise_sigma: f64,
    #[arg(long, default_value_t = 8.0)]
    pub angular_locality: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON config; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-epoch training history as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub no_edge_features: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the JSON report; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with header `source,target`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Score against the state before this snapshot; defaults to the state
    /// after the last snapshot seen in training data.
    #[arg(long)]
    pub time_index: Option<usize>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => run_ingest(&a),
        Command::Synth(a) => run_synth(&a, cli.seed),
        Command::Train(a) => run_train(&a, cli.seed),
        Command::Evaluate(a) => run_evaluate(&a, cli.seed),
        Command::Predict(a) => run_predict(&a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_data(path: &Path) -> Result<(SnapshotSequence, String)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let seq = ingest::read_csv(bytes.as_slice())?;
    Ok((seq, config::sha256_hex(&bytes)))
}

fn run_ingest(a: &IngestArgs) -> Result<()> {
    let paths: Vec<PathBuf> = glob::glob(&a.input)
        .map_err(|e| CliError::Config(format!("bad --input pattern: {e}")))?
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| { let path = e.path().to_path_buf(); CliError::io(path, e.into()) })?;
    if paths.is_empty() {
        let missing = std::io::Error::new(std::io::ErrorKind::NotFound, "pattern matched no files");
        return Err(CliError::io(&a.input, missing));
    }
    let readers = paths
        .iter()
        .map(|p| File::open(p).map(BufReader::new).map_err(|e| CliError::io(p, e)))
        .collect::<Result<Vec<_>>>()?;
    let opts = IngestOptions { top_fraction: a.top_fraction, weekly_sampling: !a.no_weekly_sample };
    let summary = ingest::ingest(readers, opts)?;
    log::info!(
        "{} files: {} traces kept, {} malformed lines skipped, {} snapshots over {} nodes",
        paths.len(),
        summary.records_kept,
        summary.skipped_lines,
        summary.sequence.len(),
        summary.sequence.num_nodes
    );
    let mut w = create(&a.output)?;
    ingest::write_csv(&summary.sequence, &mut w)?;
    w.flush().map_err(|e| CliError::io(&a.output, e))
}

fn run_synth(a: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let cfg = SynthConfig {
        n_nodes: a.nodes,
        n_snapshots: a.snapshots,
        attachment_m: a.attachment_m,
        edge_churn_prob: a.churn,
        rtt_base_ms: a.rtt_base_ms,
        rtt_noise_sigma: a.rtt_noise_sigma,
        angular_locality: a.angular_locality,
        seed: seed.unwrap_or(SynthConfig::default().seed),
    };
    let seq = hermit_core::generate(&cfg)?;
    let mut w = create(&a.out)?;
    ingest::write_csv(&seq, &mut w)?;
    w.flush().map_err(|e| CliError::io(&a.out, e))
}

fn run_train(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let overrides =
        config::Overrides { seed, max_epochs: a.max_epochs, n_trees: a.trees, no_edge_features: a.no_edge_features };
    let cfg = overrides.apply(config::load(a.config.as_deref())?);
    let (seq, _) = read_data(&a.data)?;
    let model = hermit_core::fit(&seq, &cfg)?;
    log::info!(
        "best epoch {} of {}",
        model.train_history.best_epoch,
        model.train_history.epochs.len()
    );
    checkpoint::save(&model, &a.out)?;
    if let Some(h) = &a.history {
        write_file(h, model.train_history.to_csv().as_bytes())?;
    }
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs, seed: Option<u64>) -> Result<()> {
    let mut model = checkpoint::load(&a.model)?;
    if let Some(s) = seed {
        // Only the evaluation negative stream reads this seed after training.
        model.encoder.config.seed = s;
    }
    let (seq, data_sha256) = read_data(&a.data)?;
    let metrics = hermit_core::evaluate(&model, &seq)?;
    let report = report::Report { metrics, config_sha256: config::config_hash(&model.config), data_sha256 };
    eprint!("{}", report.table());
    match &a.report {
        Some(p) => write_file(p, report.to_json().as_bytes()),
        None => {
            print!("{}", report.to_json());
            Ok(())
        }
    }
}

/// One scored row of `predict` output; `error` is set instead of the numbers
/// when the row could not be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictRow {
    pub source: String,
    pub target: String,
    pub result: std::result::Result<hermit_core::PairPrediction, String>,
}

impl PredictRow {
    fn to_csv_line(&self) -> String {
        match &self.result {
            Ok(p) => format!("{},{},{:.17e},{:.17e},\n", self.source, self.target, p.prob, p.rtt_ms),
            Err(e) => format!("{},{},,,{}\n", self.source, self.target, e.replace([',', '\n'], ";")),
        }
    }
}

/// Scores every row of a `source,target` CSV; bad rows carry an error message.
pub fn predict_pairs(model: &hermit_core::HermitModel, pairs_csv: &[u8], time_index: usize) -> Result<Vec<PredictRow>> {
    model.state_before(time_index)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(pairs_csv);
    let header = rdr.headers().map_err(|e| HermitError::Schema(e.to_string()))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got.get(..2) != Some(&["source", "target"][..]) {
        return Err(HermitError::Schema(format!("pairs header must start with `source,target`, got `{}`", got.join(","))).into());
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| HermitError::Schema(e.to_string()))?;
        let source = rec.get(0).unwrap_or("").trim().to_string();
        let target = rec.get(1).unwrap_or("").trim().to_string();
        let result = match (source.parse::<usize>(), target.parse::<usize>()) {
            (Ok(u), Ok(v)) => model.predict_pair(u, v, time_index).map_err(|e| e.to_string()),
            _ => Err("node ids must be non-negative integers".to_string()),
        };
        out.push(PredictRow { source, target, result });
    }
    Ok(out)
}

fn run_predict(a: &PredictArgs) -> Result<()> {
    let model = checkpoint::load(&a.model)?;
    let pairs = std::fs::read(&a.pairs).map_err(|e| CliError::io(&a.pairs, e))?;
    let time_index = a.time_index.unwrap_or(model.hidden_states.len() - 1);
    let rows = predict_pairs(&model, &pairs, time_index)?;
    let mut text = String::from("source,target,prob,rtt_ms,error\n");
    rows.iter().for_each(|r| text.push_str(&r.to_csv_line()));
    match &a.out {
        Some(p) => write_file(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    if failed > 0 {
        return Err(CliError::Partial { failed, total: rows.len() });
    }
    Ok(())
}
