//! The `boss` command line: argument parsing, run configuration and the
//! six subcommands.
//!
//! Exit codes: 0 success, 2 input or contract error, 3 I/O error,
//! 4 numerical failure.

pub mod io;

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::BossError;
use crate::hmm::{self, BossModel};
use crate::infobound::{
    ba_gap, ba_lower_bound, check_upper_bound, mutual_information, nats_to_bits, DiscreteChannel,
    DiscreteDistribution,
};
use crate::relevance::DEFAULT_HIDDEN_WIDTH;
use crate::score::{aggregate_repeated, AggregateReport, DEFAULT_POWER};
use crate::synth::{
    evaluate_accuracy, generate_dataset, majority_rate, oracle_accuracy, AccuracyReport,
    GeneratorTruth, ScenarioConfig,
};
use crate::train::{fit, TrainConfig, TrainMode, TrainReport};
use crate::vectors::{DimensionSignature, LabeledSequence};
use io::DecodedRecord;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
const SYNTHETIC_NOTE: &str = "synthetic desk-scale proxy data";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => EXIT_INPUT,
            Self::Io(_) => EXIT_IO,
            Self::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<BossError> for CliError {
    fn from(e: BossError) -> Self {
        match e {
            BossError::Numerical(msg) => Self::Numerical(msg),
            other => Self::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "boss", version, about = "Relevance-ratio HMM interpreter and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test dataset and its truth file.
    Gen(GenArgs),
    /// Fit a model to a dataset.
    Train(TrainArgs),
    /// Viterbi-decode every sequence in a dataset.
    Decode(DecodeArgs),
    /// Accuracy of a model or of decoded paths against dataset labels.
    Eval(EvalArgs),
    /// Mutual-information bounds for a discrete channel.
    Bound(BoundArgs),
    /// Power-scaled aggregation of 0-5 scores.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scenario config (JSON). Defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Training config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for model.json and report.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Decoded output (JSONL).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled dataset (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Model to decode with.
    #[arg(long, conflicts_with = "decoded", required_unless_present = "decoded")]
    pub model: Option<PathBuf>,
    /// Previously decoded paths (JSONL), matched to the data by id.
    #[arg(long)]
    pub decoded: Option<PathBuf>,
    /// Truth file; adds the Bayes-oracle ceiling to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Report file. The report is always printed to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Channel document: {"input_marginal": [...], "rows": [[...], ...]}.
    #[arg(long)]
    pub channel: PathBuf,
    /// Reference distribution: {"probs": [...]}.
    #[arg(long)]
    pub v: PathBuf,
    /// Variational conditional: {"rows": [[...], ...]}.
    #[arg(long)]
    pub q: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Score document: {"items": [[...], ...]} or {"scores": [...]}.
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the document's power (default 2).
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Training run settings: the optimizer config plus what is needed to
/// build the initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    /// Inferred from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<DimensionSignature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
}

fn default_hidden_width() -> usize {
    DEFAULT_HIDDEN_WIDTH
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            signature: None,
            labels: None,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            train: TrainConfig::default(),
        }
    }
}

/// Merged record of one run, written beside its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainRunConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
}

impl RunConfig {
    fn new(command: &str, inputs: &[&Path]) -> Self {
        Self {
            command: command.to_string(),
            scenario: None,
            train: None,
            config_hash: None,
            seed: None,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            power: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthDoc {
    note: String,
    #[serde(flatten)]
    truth: GeneratorTruth,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub accuracy: AccuracyReport,
    /// Share of the most frequent reference state.
    pub chance_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<AccuracyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub mi: f64,
    pub mi_bits: f64,
    pub expected_kl: f64,
    pub slack: f64,
    pub tight: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ba_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ba_gap: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreDoc {
    #[serde(default)]
    items: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    scores: Option<Vec<f64>>,
    #[serde(default)]
    power: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RowsDoc {
    rows: Vec<Vec<f64>>,
}

/// Initializes logging from `BOSS_LOG` (error, info or debug).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("BOSS_LOG", "error");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors go to stderr; machine-readable output goes to `out`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("boss: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Decode(a) => cmd_decode(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Bound(a) => cmd_bound(&a, out),
        Command::Score(a) => cmd_score(&a, out),
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Input(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    io::write_json_pretty(&dir.join(RESOLVED_CONFIG_FILE), cfg)
}

fn beside(file: &Path) -> &Path {
    file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut scenario: ScenarioConfig = match &a.config {
        Some(p) => io::read_json(p)?,
        None => ScenarioConfig::default(),
    };
    if a.seed.is_some() {
        scenario.seed = a.seed;
    }
    let seed = scenario
        .seed
        .ok_or_else(|| CliError::Input("a seed is required (config \"seed\" or --seed)".into()))?;
    let hash = io::config_hash(&scenario)?;
    info!("generating dataset, config hash {hash}");
    let ds = generate_dataset(&scenario)?;

    io::write_jsonl(&a.out.join("train.jsonl"), &ds.train)?;
    io::write_jsonl(&a.out.join("test.jsonl"), &ds.test)?;
    let truth = TruthDoc {
        note: SYNTHETIC_NOTE.to_string(),
        truth: ds.truth,
    };
    io::write_json_exact(&a.out.join("truth.json"), &truth)?;
    let mut run = RunConfig::new("gen", &a.config.iter().map(PathBuf::as_path).collect::<Vec<_>>());
    run.scenario = Some(scenario);
    run.config_hash = Some(hash.clone());
    run.seed = Some(seed);
    write_resolved(&a.out, &run)?;

    emit(
        out,
        &serde_json::json!({
            "command": "gen",
            "n_train": ds.train.len(),
            "n_test": ds.test.len(),
            "config_hash": hash,
            "note": SYNTHETIC_NOTE,
        }),
    )
}

/// Channel sizes from the first sequence; `n_states` from the labels or
/// the largest state index.
fn infer_signature(
    data: &[LabeledSequence],
    labels: Option<&[String]>,
) -> Result<DimensionSignature, CliError> {
    let first = data
        .first()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CliError::Input("cannot infer dimensions from an empty dataset".into()))?;
    let o = &first.obs[0];
    let c = first.context_at(0);
    let n_states = match labels {
        Some(l) => l.len(),
        None => {
            let max = data
                .iter()
                .filter_map(|s| s.states.as_ref())
                .flat_map(|s| s.iter().copied())
                .max()
                .ok_or_else(|| {
                    CliError::Input(
                        "unlabeled data: give \"labels\" or \"signature\" in the training config"
                            .into(),
                    )
                })?;
            max + 1
        }
    };
    Ok(DimensionSignature {
        d_l: o.v_l.len(),
        d_ac: o.v_ac.len(),
        d_cd: o.v_cd.len(),
        d_is: o.v_is.len(),
        d_hist: c.c_hist.len(),
        d_env: c.c_env.len(),
        d_char: c.c_char.len(),
        d_task: c.c_task.len(),
        n_states,
    })
}

fn check_data(data: &[LabeledSequence], sig: &DimensionSignature) -> Result<(), CliError> {
    for s in data {
        s.validate(sig)
            .map_err(|e| CliError::Input(format!("sequence {}: {e}", s.id)))?;
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg: TrainRunConfig = match &a.config {
        Some(p) => io::read_json(p)?,
        None => TrainRunConfig::default(),
    };
    if let Some(m) = &a.mode {
        cfg.train.mode = m.parse::<TrainMode>()?;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(i) = a.iters {
        cfg.train.iterations = i;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    cfg.train.validate()?;

    let data: Vec<LabeledSequence> = io::read_jsonl(&a.data)?;
    if data.is_empty() {
        return Err(CliError::Input(format!("{}: no sequences", a.data.display())));
    }
    let sig = match cfg.signature {
        Some(s) => s,
        None => infer_signature(&data, cfg.labels.as_deref())?,
    };
    sig.validate()?;
    check_data(&data, &sig)?;
    if cfg.train.mode == TrainMode::Supervised {
        if let Some(s) = data.iter().find(|s| s.states.is_none()) {
            return Err(CliError::Input(format!(
                "supervised training needs state labels; sequence {} has none",
                s.id
            )));
        }
    }

    let mut init = BossModel::random(sig, cfg.hidden_width, cfg.train.seed);
    if let Some(labels) = &cfg.labels {
        init.labels = labels.clone();
    }
    init.validate()?;
    info!(
        "training {:?} on {} sequences, {} iterations max",
        cfg.train.mode,
        data.len(),
        cfg.train.iterations
    );
    let (model, report): (BossModel, TrainReport) = fit(&init, &data, &cfg.train)?;
    if !report.final_ll.is_finite() {
        return Err(CliError::Numerical(format!(
            "final objective is {} after {} iterations",
            report.final_ll,
            report.log_likelihood_trace.len()
        )));
    }
    debug!("trace {:?}", report.log_likelihood_trace);

    io::save_model(&a.out.join("model.json"), &model)?;
    io::write_json_pretty(&a.out.join("report.json"), &report)?;
    let mut run = RunConfig::new("train", &[a.data.as_path()]);
    run.seed = Some(cfg.train.seed);
    run.config_hash = Some(io::config_hash(&cfg)?);
    run.train = Some(cfg);
    write_resolved(&a.out, &run)?;

    emit(
        out,
        &serde_json::json!({
            "command": "train",
            "mode": report.mode,
            "iterations": report.log_likelihood_trace.len(),
            "converged": report.converged,
            "halving_exhausted": report.halving_exhausted,
            "initial_ll": report.initial_ll,
            "final_ll": report.final_ll,
        }),
    )
}

fn decode_all(model: &BossModel, data: &[LabeledSequence]) -> Result<Vec<DecodedRecord>, CliError> {
    use rayon::prelude::*;
    check_data(data, &model.signature)?;
    let decoded = data
        .par_iter()
        .map(|s| {
            hmm::viterbi(model, s).map(|d| DecodedRecord {
                id: s.id.clone(),
                states: d.states,
                log_prob: d.log_prob,
            })
        })
        .collect::<Result<Vec<_>, BossError>>()?;
    Ok(decoded)
}

pub fn cmd_decode(a: &DecodeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = io::load_model(&a.model)?;
    let data: Vec<LabeledSequence> = io::read_jsonl(&a.data)?;
    let decoded = decode_all(&model, &data)?;
    io::write_jsonl(&a.out, &decoded)?;
    write_resolved(beside(&a.out), &RunConfig::new("decode", &[&a.model, &a.data]))?;
    emit(
        out,
        &serde_json::json!({ "command": "decode", "sequences": decoded.len() }),
    )
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data: Vec<LabeledSequence> = io::read_jsonl(&a.data)?;
    let reference = crate::synth::labels_of(&data)?;
    let (paths, n_states) = match (&a.model, &a.decoded) {
        (Some(mp), None) => {
            let model = io::load_model(mp)?;
            let d = decode_all(&model, &data)?;
            (d.into_iter().map(|r| r.states).collect::<Vec<_>>(), model.n_states())
        }
        (None, Some(dp)) => {
            let records: Vec<DecodedRecord> = io::read_jsonl(dp)?;
            let mut by_id: HashMap<String, Vec<usize>> =
                records.into_iter().map(|r| (r.id, r.states)).collect();
            let paths = data
                .iter()
                .map(|s| {
                    by_id.remove(&s.id).ok_or_else(|| {
                        CliError::Input(format!("no decoded path for sequence {}", s.id))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let n = paths
                .iter()
                .chain(&reference)
                .flat_map(|p| p.iter().copied())
                .max()
                .map_or(0, |m| m + 1);
            (paths, n)
        }
        _ => return Err(CliError::Input("give exactly one of --model or --decoded".into())),
    };
    let accuracy = evaluate_accuracy(&paths, &reference, n_states)?;
    let (oracle, note) = match &a.truth {
        Some(tp) => {
            let doc: TruthDoc = io::read_json(tp)?;
            (Some(oracle_accuracy(&doc.truth, &data)?), Some(doc.note))
        }
        None => (None, None),
    };
    let report = EvalReport {
        accuracy,
        chance_rate: majority_rate(&reference, n_states),
        oracle,
        note,
    };
    if let Some(p) = &a.out {
        io::write_json_pretty(p, &report)?;
        let mut inputs: Vec<&Path> = vec![&a.data];
        inputs.extend(a.model.as_deref());
        inputs.extend(a.decoded.as_deref());
        inputs.extend(a.truth.as_deref());
        write_resolved(beside(p), &RunConfig::new("eval", &inputs))?;
    }
    emit(out, &report)
}

pub fn cmd_bound(a: &BoundArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let channel: DiscreteChannel = io::read_json(&a.channel)?;
    let v: DiscreteDistribution = io::read_json(&a.v)?;
    let upper = check_upper_bound(&channel, &v)?;
    let mi = mutual_information(&channel)?;
    let (ba_lower, gap) = match &a.q {
        Some(qp) => {
            let doc: RowsDoc = io::read_json(qp)?;
            let rows = doc
                .rows
                .into_iter()
                .map(DiscreteDistribution::new)
                .collect::<Result<Vec<_>, _>>()?;
            (Some(ba_lower_bound(&channel, &rows)?), Some(ba_gap(&channel, &rows)?))
        }
        None => (None, None),
    };
    let report = BoundReport {
        mi,
        mi_bits: nats_to_bits(mi),
        expected_kl: upper.expected_kl,
        slack: upper.slack,
        tight: upper.tight,
        ba_lower,
        ba_gap: gap,
    };
    if let Some(p) = &a.out {
        io::write_json_pretty(p, &report)?;
        let mut inputs: Vec<&Path> = vec![&a.channel, &a.v];
        inputs.extend(a.q.as_deref());
        write_resolved(beside(p), &RunConfig::new("bound", &inputs))?;
    }
    emit(out, &report)
}

pub fn cmd_score(a: &ScoreArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let doc: ScoreDoc = io::read_json(&a.data)?;
    let items = match (doc.items, doc.scores) {
        (Some(items), None) => items,
        (None, Some(scores)) => scores.into_iter().map(|s| vec![s]).collect(),
        _ => {
            return Err(CliError::Input(
                "score document needs exactly one of \"items\" or \"scores\"".into(),
            ))
        }
    };
    let power = a.power.or(doc.power).unwrap_or(DEFAULT_POWER);
    let report: AggregateReport = aggregate_repeated(&items, power)?;
    if let Some(p) = &a.out {
        io::write_json_pretty(p, &report)?;
        let mut run = RunConfig::new("score", &[&a.data]);
        run.power = Some(power);
        write_resolved(beside(p), &run)?;
    }
    emit(out, &report)
}
