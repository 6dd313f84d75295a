//! Command-line entry points: `train`, `summarize`, `lead3`, `rouge`, `inspect`.
//!
//! Precedence for run settings is command-line flag, then config file, then
//! built-in default. Relative paths in a config file are resolved against the
//! file's directory.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocab, encode_document, encode_split, load_jsonl, Document, Limits, RawDocument, SplitRole,
    DEFAULT_MAX_SENTS, DEFAULT_MAX_SENT_LEN, DEFAULT_VOCAB_CAP,
};
use crate::embeddings::load_pretrained;
use crate::error::{Error, Result};
use crate::inference::{join_sentences, lead3, summarize, Attention, Budget};
use crate::model::{HssasModel, ModelConfig};
use crate::rouge::{evaluate_corpus, EvalMode, ReferenceSet, SystemSummary};
use crate::training::{train_with_callback, Checkpoint, TrainConfig, CHECKPOINT_VERSION};

/// Version stamped into every JSON output's sidecar.
pub const OUTPUT_FORMAT_VERSION: u32 = 1;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_ECHO_FILE: &str = "run_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<PathBuf>,
    /// word2vec text file used to initialise the embedding table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub vocab_cap: usize,
    pub max_sent_len: usize,
    pub max_sents: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train: None,
            validation: None,
            embeddings: None,
            vocab_cap: DEFAULT_VOCAB_CAP,
            max_sent_len: DEFAULT_MAX_SENT_LEN,
            max_sents: DEFAULT_MAX_SENTS,
        }
    }
}

impl CorpusConfig {
    pub fn limits(&self) -> Limits {
        Limits {
            max_sent_len: self.max_sent_len,
            max_sents: self.max_sents,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_sentences: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_words: Option<usize>,
}

impl InferenceConfig {
    pub fn budget(&self) -> Result<Budget> {
        let budget = match (self.budget_sentences, self.budget_words) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "inference.budget_sentences and inference.budget_words are exclusive".into(),
                ))
            }
            (Some(n), None) => Budget::SentenceCount(n),
            (None, Some(n)) => Budget::WordCount(n),
            (None, None) => Budget::default(),
        };
        budget.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RougeConfig {
    pub mode: EvalMode,
    pub stem: bool,
}

impl Default for RougeConfig {
    fn default() -> Self {
        RougeConfig {
            mode: EvalMode::RecallTruncated,
            stem: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("run") }
    }
}

/// Every setting of a run. Serialized back to TOML as the config echo.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub rouge: RougeConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.inference.budget()?;
        if self.corpus.vocab_cap == 0 || self.corpus.max_sent_len == 0 || self.corpus.max_sents == 0 {
            return Err(Error::Config(
                "corpus.vocab_cap, corpus.max_sent_len and corpus.max_sents must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Settings stored in a checkpoint; defaults when the echo is empty.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.config_echo.trim().is_empty() {
            return Ok(RunConfig {
                model: ckpt.model.config.clone(),
                train: ckpt.train.clone(),
                ..RunConfig::default()
            });
        }
        Self::from_toml(&ckpt.config_echo)
    }
}

#[derive(Debug, Parser)]
#[command(name = "hssas", version, about = "Extractive summarizer with hierarchical self-attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, log and config echo.
    Train(TrainArgs),
    /// Extract summaries with a trained model (or LEAD-3).
    Summarize(SummarizeArgs),
    /// Emit the first three sentences of each document.
    Lead3(Lead3Args),
    /// Score system summaries against references.
    Rouge(RougeArgs),
    /// Dump word- and sentence-level attention weights.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long, conflicts_with = "budget_words")]
    pub budget_sentences: Option<usize>,
    #[arg(long)]
    pub budget_words: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long, required_unless_present = "lead3")]
    pub checkpoint: Option<PathBuf>,
    /// Corpus JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSONL; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Include attention weights in each record.
    #[arg(long)]
    pub attention: bool,
    /// Skip the model and take the first three sentences.
    #[arg(long)]
    pub lead3: bool,
}

#[derive(Debug, Args)]
pub struct Lead3Args {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Candidates cut to 75 words, recall reported.
    Recall75,
    /// Full-length candidates, F1 reported.
    F1,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Recall75 => EvalMode::RecallTruncated,
            ModeArg::F1 => EvalMode::FulllengthF1,
        }
    }
}

#[derive(Debug, Args)]
pub struct RougeArgs {
    /// JSONL with `id` and `summary`.
    #[arg(long)]
    pub system: PathBuf,
    /// JSONL with `id` and `references`.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Porter-stem tokens before matching.
    #[arg(long)]
    pub stem: bool,
    /// Print the scores as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a, out, err),
        Command::Summarize(a) => cmd_summarize(&a, out),
        Command::Lead3(a) => cmd_summarize(
            &SummarizeArgs {
                checkpoint: None,
                input: a.input,
                output: a.output,
                budget: BudgetArgs {
                    budget_sentences: None,
                    budget_words: None,
                },
                attention: false,
                lead3: true,
            },
            out,
        ),
        Command::Rouge(a) => cmd_rouge(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Meta<'a> {
    format_version: u32,
    command: &'a str,
    config: Option<&'a str>,
}

/// Writes `body` to `output` with a `<output>.meta.json` sidecar holding the
/// config echo, or to `out` when no path is given.
fn emit(output: Option<&Path>, body: &str, command: &str, echo: Option<&str>, out: &mut dyn Write) -> Result<()> {
    match output {
        None => out.write_all(body.as_bytes()).map_err(stdout_err),
        Some(path) => {
            write_file(path, body.as_bytes())?;
            let meta = Meta {
                format_version: OUTPUT_FORMAT_VERSION,
                command,
                config: echo,
            };
            let mut sidecar = path.as_os_str().to_owned();
            sidecar.push(".meta.json");
            let text = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
            write_file(Path::new(&sidecar), text.as_bytes())
        }
    }
}

fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r).expect("record serializes"));
        body.push('\n');
    }
    body
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub epochs: usize,
    pub vocab_size: usize,
    pub train_documents: usize,
    pub validation_documents: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrained_matched: Option<usize>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    // flag paths are relative to the working directory, file paths to the file
    let mut train_path = cfg.corpus.train.as_deref().map(|p| resolve(&base, p));
    let mut val_path = cfg.corpus.validation.as_deref().map(|p| resolve(&base, p));
    let mut out_dir = resolve(&base, &cfg.output.dir);
    if let Some(p) = &args.train {
        cfg.corpus.train = Some(p.clone());
        train_path = Some(p.clone());
    }
    if let Some(p) = &args.validation {
        cfg.corpus.validation = Some(p.clone());
        val_path = Some(p.clone());
    }
    if let Some(p) = &args.output_dir {
        cfg.output.dir = p.clone();
        out_dir = p.clone();
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = args.max_epochs {
        cfg.train.max_epochs = n;
    }
    if let Some(n) = args.batch_size {
        cfg.train.batch_size = n;
    }
    cfg.validate()?;
    let echo = cfg.to_toml()?;

    let train_path = train_path.ok_or_else(|| Error::Config("corpus.train is not set".into()))?;
    let train_split = load_jsonl(&train_path, SplitRole::Train)?;
    let vocab = build_vocab(&train_split, cfg.corpus.vocab_cap);
    let limits = cfg.corpus.limits();
    let train_docs = encode_split(&train_split, &vocab, limits)?;
    let val_docs = match &val_path {
        Some(p) => encode_split(&load_jsonl(p, SplitRole::Validation)?, &vocab, limits)?,
        None => Vec::new(),
    };

    let (pretrained, matched) = match &cfg.corpus.embeddings {
        Some(p) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let (table, matched) = load_pretrained(resolve(&base, p), &vocab, cfg.model.word_dim, &mut rng)?;
            (Some(table), Some(matched))
        }
        None => (None, None),
    };
    let mut model = HssasModel::new(cfg.model.clone(), vocab.len(), pretrained, cfg.train.seed)?;
    let outcome = train_with_callback(&mut model, &train_docs, &val_docs, &cfg.train, |r| {
        let val = r.val_loss.map(|v| format!(" val_loss {v:.6}")).unwrap_or_default();
        let _ = writeln!(err, "epoch {} train_loss {:.6}{val} clip_events {}", r.epoch, r.train_loss, r.clip_events);
    })?;

    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOG_FILE);
    let report = TrainReport {
        best_epoch: outcome.best_epoch,
        epochs: outcome.log.len(),
        vocab_size: vocab.len(),
        train_documents: train_docs.len(),
        validation_documents: val_docs.len(),
        pretrained_matched: matched,
        checkpoint: ckpt_path.clone(),
        log: log_path.clone(),
    };
    let ckpt = Checkpoint {
        model,
        vocab,
        optimizer: Some(outcome.optimizer.clone()),
        train: cfg.train.clone(),
        epoch: outcome.best_epoch,
        config_echo: echo.clone(),
    };
    write_file(&ckpt_path, &ckpt.to_bytes()?)?;
    write_file(&log_path, outcome.log_csv().as_bytes())?;
    let stamped = format!("# format_version = {CHECKPOINT_VERSION}\n{echo}");
    write_file(&out_dir.join(CONFIG_ECHO_FILE), stamped.as_bytes())?;
    writeln!(out, "{}", serde_json::to_string(&report).expect("report serializes")).map_err(stdout_err)
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub selected: Vec<usize>,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Attention>,
}

fn load_model(path: &Path) -> Result<(Checkpoint, RunConfig)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg = RunConfig::from_checkpoint(&ckpt)?;
    if cfg.model != ckpt.model.config {
        return Err(Error::Checkpoint("config echo disagrees with the stored model config".into()));
    }
    Ok((ckpt, cfg))
}

fn lead3_record(raw: &RawDocument) -> SummaryRecord {
    let doc = Document {
        id: raw.id.clone(),
        sentences: Vec::new(),
        text: raw.sentences.clone(),
        labels: None,
        references: None,
    };
    let selected = lead3(raw.sentences.len());
    SummaryRecord {
        id: raw.id.clone(),
        summary: join_sentences(&doc, &selected),
        selected,
        probs: None,
        attention: None,
    }
}

pub fn cmd_summarize(args: &SummarizeArgs, out: &mut dyn Write) -> Result<()> {
    let split = load_jsonl(&args.input, SplitRole::Test)?;
    if args.lead3 {
        let records: Vec<SummaryRecord> = split.documents.iter().map(lead3_record).collect();
        return emit(args.output.as_deref(), &to_jsonl(&records), "lead3", None, out);
    }
    let path = args
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--checkpoint is required without --lead3".into()))?;
    let (ckpt, cfg) = load_model(path)?;
    let budget = match (args.budget.budget_sentences, args.budget.budget_words) {
        (Some(n), _) => Budget::SentenceCount(n).validate()?,
        (_, Some(n)) => Budget::WordCount(n).validate()?,
        _ => cfg.inference.budget()?,
    };
    let docs = encode_split(&split, &ckpt.vocab, cfg.corpus.limits())?;
    let records: Vec<SummaryRecord> = docs
        .par_iter()
        .map(|doc| {
            let s = summarize(doc, &ckpt.model, budget)?;
            Ok(SummaryRecord {
                id: doc.id.clone(),
                selected: s.selected,
                summary: s.text,
                probs: Some(s.probs),
                attention: args.attention.then_some(s.attention),
            })
        })
        .collect::<Result<_>>()?;
    emit(args.output.as_deref(), &to_jsonl(&records), "summarize", Some(&ckpt.config_echo), out)
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn cmd_rouge(args: &RougeArgs, out: &mut dyn Write) -> Result<()> {
    let system: Vec<SystemSummary> = read_records(&args.system)?;
    let references: Vec<ReferenceSet> = read_records(&args.reference)?;
    let scores = evaluate_corpus(&system, &references, args.mode.into(), args.stem)?;
    let text = if args.json {
        serde_json::to_string(&scores).expect("scores serialize") + "\n"
    } else {
        scores.table()
    };
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceAttention {
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectRecord {
    pub id: String,
    pub sentences: Vec<SentenceAttention>,
    pub sentence_attention: Vec<f64>,
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let (ckpt, cfg) = load_model(&args.checkpoint)?;
    let split = load_jsonl(&args.input, SplitRole::Test)?;
    let limits = cfg.corpus.limits();
    let records: Vec<InspectRecord> = split
        .documents
        .par_iter()
        .map(|raw| {
            let doc = encode_document(raw, &ckpt.vocab, limits)?;
            if doc.is_empty() {
                return Err(Error::Document {
                    id: doc.id.clone(),
                    message: "document has no sentences".into(),
                });
            }
            let pred = ckpt.model.predict(&doc.sentences)?;
            let sentences = doc
                .sentences
                .iter()
                .zip(pred.word_attention)
                .map(|(ids, weights)| SentenceAttention {
                    tokens: ids.iter().map(|&i| ckpt.vocab.word(i).unwrap_or("<unk>").to_string()).collect(),
                    weights,
                })
                .collect();
            Ok(InspectRecord {
                id: doc.id.clone(),
                sentences,
                sentence_attention: pred.sentence_attention,
            })
        })
        .collect::<Result<_>>()?;
    emit(args.output.as_deref(), &to_jsonl(&records), "inspect", Some(&ckpt.config_echo), out)
}
