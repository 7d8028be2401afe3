//! Command-line front end.
//!
//! Settings resolve as: flag, else config-file value, else default. Config
//! files are flat `key=value` lines; `#` starts a comment. Keys match the
//! long flag names (`batch_size` and `batch-size` are both accepted).

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::analysis::{self, AttentionRecord, DEFAULT_THRESHOLD};
use crate::corpus::{
    self, generate_synthetic_corpus, load_embeddings, units_from_trees, EmbeddingTable,
    TrainingUnit, UnitMode, Vocabulary, OOV_INIT_RANGE,
};
use crate::model::{self, AgtNetwork, Checkpoint, ModelConfig};
use crate::seeds::{self, Stream};
use crate::tensor::GradReport;
use crate::training::{self, Data, TrainConfig};

/// Tolerance of the `gradcheck` command.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "agt",
    version,
    about = "Attention gated transformation networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write the best checkpoint and an epoch log.
    Train(Flags),
    /// Print sentence-level accuracy of a checkpoint.
    Eval(Flags),
    /// Dump attention records, phrase statistics and heatmaps.
    Analyze(Flags),
    /// Check backprop gradients against finite differences on a small network.
    Gradcheck(Flags),
    /// Write the synthetic negation corpus in treebank format.
    Synth(Flags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<String>,
    #[arg(long)]
    pub dev: Option<String>,
    #[arg(long)]
    pub test: Option<String>,
    #[arg(long)]
    pub embeddings: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub dropout: Option<String>,
    #[arg(long)]
    pub gate_bias: Option<String>,
    /// Highest layer that computes its own attention ("none" for all).
    #[arg(long)]
    pub max_selector_layer: Option<String>,
    /// sentences | phrases
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub threshold: Option<String>,
    /// Input width when no embedding file is given.
    #[arg(long)]
    pub embedding_dim: Option<String>,
    /// Use the synthetic corpus instead of treebank files.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub synthetic: Option<String>,
    #[arg(long)]
    pub synthetic_size: Option<String>,
    /// Comma-separated sentence indices to draw heatmaps for.
    #[arg(long)]
    pub heatmaps: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all: [(&'static str, &Option<String>); 22] = [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
            ("embeddings", &self.embeddings),
            ("checkpoint", &self.checkpoint),
            ("out_dir", &self.out_dir),
            ("layers", &self.layers),
            ("hidden", &self.hidden),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("lr", &self.lr),
            ("rho", &self.rho),
            ("epsilon", &self.epsilon),
            ("dropout", &self.dropout),
            ("gate_bias", &self.gate_bias),
            ("max_selector_layer", &self.max_selector_layer),
            ("mode", &self.mode),
            ("threshold", &self.threshold),
            ("embedding_dim", &self.embedding_dim),
            ("synthetic", &self.synthetic),
            ("synthetic_size", &self.synthetic_size),
        ];
        let mut out: Vec<(&'static str, &str)> = all
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect();
        if let Some(h) = self.heatmaps.as_deref() {
            out.push(("heatmaps", h));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Train,
    Eval,
    Analyze,
    Gradcheck,
    Synth,
}

#[derive(Debug, Error)]
pub enum UsageError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("{key} is required for this command")]
    Missing { key: &'static str },
    #[error("cannot read config file {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config file line {line}: expected key=value")]
    Syntax { line: usize },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] UsageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] model::CheckpointError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub command: CommandKind,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub training: TrainConfig,
    pub threshold: f64,
    pub embedding_dim: usize,
    pub synthetic: bool,
    pub synthetic_size: usize,
    pub heatmaps: Vec<usize>,
}

impl CliConfig {
    pub fn defaults(command: CommandKind) -> Self {
        CliConfig {
            command,
            train: None,
            dev: None,
            test: None,
            embeddings: None,
            checkpoint: None,
            out_dir: None,
            training: TrainConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            embedding_dim: 300,
            synthetic: false,
            synthetic_size: 500,
            heatmaps: vec![0, 1, 2],
        }
    }

    /// Applies one setting. Keys may use `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let invalid = |message: String| UsageError::Invalid {
            key: key.clone(),
            message,
        };
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
        }
        let t = &mut self.training;
        match key.as_str() {
            "train" => self.train = Some(value.into()),
            "dev" => self.dev = Some(value.into()),
            "test" => self.test = Some(value.into()),
            "embeddings" => self.embeddings = Some(value.into()),
            "checkpoint" => self.checkpoint = Some(value.into()),
            "out_dir" => self.out_dir = Some(value.into()),
            "layers" => t.layers = num(value).map_err(invalid)?,
            "hidden" => t.hidden = num(value).map_err(invalid)?,
            "batch_size" => t.batch_size = num(value).map_err(invalid)?,
            "epochs" => t.epochs = num(value).map_err(invalid)?,
            "seed" => t.seed = num(value).map_err(invalid)?,
            "lr" => t.optimizer.lr = num(value).map_err(invalid)?,
            "rho" => t.optimizer.rho = num(value).map_err(invalid)?,
            "epsilon" => t.optimizer.epsilon = num(value).map_err(invalid)?,
            "dropout" => t.dropout = num(value).map_err(invalid)?,
            "gate_bias" => t.gate_bias_init = num(value).map_err(invalid)?,
            "max_selector_layer" => {
                t.max_selector_layer = match value {
                    "none" | "inf" | "" => None,
                    v => Some(num(v).map_err(invalid)?),
                }
            }
            "mode" => {
                t.mode = match value {
                    "sentences" | "sentences_only" => UnitMode::SentencesOnly,
                    "phrases" | "phrases_and_sentences" => UnitMode::PhrasesAndSentences,
                    v => return Err(invalid(format!("{v:?} is not sentences|phrases"))),
                }
            }
            "threshold" => self.threshold = num(value).map_err(invalid)?,
            "embedding_dim" => self.embedding_dim = num(value).map_err(invalid)?,
            "synthetic" => self.synthetic = num(value).map_err(invalid)?,
            "synthetic_size" => self.synthetic_size = num(value).map_err(invalid)?,
            "heatmaps" => {
                self.heatmaps = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(num)
                    .collect::<Result<_, _>>()
                    .map_err(invalid)?
            }
            _ => return Err(UsageError::UnknownKey(key)),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |key: &str, message: &str| {
            Err(UsageError::Invalid {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        let t = &self.training;
        if t.layers == 0 {
            return bad("layers", "must be at least 1");
        }
        if t.hidden == 0 {
            return bad("hidden", "must be at least 1");
        }
        if t.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if t.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if !(t.optimizer.lr > 0.0 && t.optimizer.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(t.optimizer.rho > 0.0 && t.optimizer.rho < 1.0) {
            return bad("rho", "must lie in (0, 1)");
        }
        if !(t.optimizer.epsilon > 0.0 && t.optimizer.epsilon.is_finite()) {
            return bad("epsilon", "must be positive");
        }
        if !t.gate_bias_init.is_finite() {
            return bad("gate_bias", "must be finite");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold", "must lie in [0, 1]");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim", "must be at least 1");
        }
        if self.synthetic_size < 10 {
            return bad("synthetic_size", "must be at least 10");
        }

        let need = |present: bool, key: &'static str| {
            if present {
                Ok(())
            } else {
                Err(UsageError::Missing { key })
            }
        };
        match self.command {
            CommandKind::Train => {
                need(self.checkpoint.is_some(), "checkpoint")?;
                need(self.out_dir.is_some(), "out_dir")?;
                if !self.synthetic {
                    need(self.train.is_some(), "train")?;
                    need(self.dev.is_some(), "dev")?;
                }
            }
            CommandKind::Eval | CommandKind::Analyze => {
                need(self.checkpoint.is_some(), "checkpoint")?;
                if self.command == CommandKind::Analyze {
                    need(self.out_dir.is_some(), "out_dir")?;
                }
                if !self.synthetic {
                    need(self.test.is_some(), "test")?;
                }
            }
            CommandKind::Synth => need(self.out_dir.is_some(), "out_dir")?,
            CommandKind::Gradcheck => {}
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order.
    pub fn render(&self) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        let t = &self.training;
        let mode = match t.mode {
            UnitMode::SentencesOnly => "sentences",
            UnitMode::PhrasesAndSentences => "phrases",
        };
        let heatmaps: Vec<String> = self.heatmaps.iter().map(usize::to_string).collect();
        [
            ("train", path(&self.train)),
            ("dev", path(&self.dev)),
            ("test", path(&self.test)),
            ("embeddings", path(&self.embeddings)),
            ("checkpoint", path(&self.checkpoint)),
            ("out_dir", path(&self.out_dir)),
            ("layers", t.layers.to_string()),
            ("hidden", t.hidden.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("lr", t.optimizer.lr.to_string()),
            ("rho", t.optimizer.rho.to_string()),
            ("epsilon", t.optimizer.epsilon.to_string()),
            ("dropout", t.dropout.to_string()),
            ("gate_bias", t.gate_bias_init.to_string()),
            (
                "max_selector_layer",
                t.max_selector_layer
                    .map_or("none".into(), |k| k.to_string()),
            ),
            ("mode", mode.to_string()),
            ("threshold", self.threshold.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("synthetic", self.synthetic.to_string()),
            ("synthetic_size", self.synthetic_size.to_string()),
            ("heatmaps", heatmaps.join(",")),
        ]
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
    }
}

/// Parses a flat `key=value` config file into ordered pairs.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(UsageError::Syntax { line: i + 1 })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Resolves defaults, then the config file, then flags.
pub fn resolve(command: CommandKind, flags: &Flags) -> Result<CliConfig, UsageError> {
    let mut cfg = CliConfig::defaults(command);
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|source| UsageError::Unreadable {
            path: path.clone(),
            source,
        })?;
        for (k, v) in parse_config_text(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    for (k, v) in flags.pairs() {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(cli: &Cli) -> Result<CliConfig, UsageError> {
    let (kind, flags) = match &cli.command {
        Command::Train(f) => (CommandKind::Train, f),
        Command::Eval(f) => (CommandKind::Eval, f),
        Command::Analyze(f) => (CommandKind::Analyze, f),
        Command::Gradcheck(f) => (CommandKind::Gradcheck, f),
        Command::Synth(f) => (CommandKind::Synth, f),
    };
    resolve(kind, flags)
}

/// Corpus, vocabulary and embeddings for a training run.
struct Prepared {
    train: Vec<TrainingUnit>,
    dev: Vec<TrainingUnit>,
    vocabulary: Vocabulary,
    embeddings: EmbeddingTable,
}

fn synthetic_corpus(cfg: &CliConfig) -> corpus::SyntheticCorpus {
    generate_synthetic_corpus(
        cfg.synthetic_size,
        seeds::derive(cfg.training.seed, Stream::Corpus, 0),
    )
}

fn sentences(path: &Path) -> Result<Vec<TrainingUnit>, CliError> {
    Ok(units_from_trees(
        &corpus::read_treebank(path)?,
        UnitMode::SentencesOnly,
    ))
}

fn prepare(cfg: &CliConfig) -> Result<Prepared, CliError> {
    let embed_seed = seeds::derive(cfg.training.seed, Stream::Embeddings, 0);
    if cfg.synthetic {
        let c = synthetic_corpus(cfg);
        let vocabulary = Vocabulary::from_tokens(
            c.all_units()
                .flat_map(|u| u.tokens.iter().map(String::as_str)),
        );
        let embeddings =
            EmbeddingTable::random(vocabulary.len(), cfg.embedding_dim, 1.0, embed_seed);
        return Ok(Prepared {
            train: c.train,
            dev: c.test,
            vocabulary,
            embeddings,
        });
    }
    let train_trees = corpus::read_treebank(cfg.train.as_deref().expect("validated"))?;
    let dev_trees = corpus::read_treebank(cfg.dev.as_deref().expect("validated"))?;
    let vocabulary = Vocabulary::from_tokens(
        train_trees
            .iter()
            .chain(&dev_trees)
            .flat_map(|t| t.leaves()),
    );
    let embeddings = match &cfg.embeddings {
        Some(path) => load_embeddings(BufReader::new(File::open(path)?), &vocabulary, embed_seed)?,
        None => EmbeddingTable::random(
            vocabulary.len(),
            cfg.embedding_dim,
            OOV_INIT_RANGE,
            embed_seed,
        ),
    };
    Ok(Prepared {
        train: units_from_trees(&train_trees, cfg.training.mode),
        dev: units_from_trees(&dev_trees, UnitMode::SentencesOnly),
        vocabulary,
        embeddings,
    })
}

fn eval_units(cfg: &CliConfig) -> Result<Vec<TrainingUnit>, CliError> {
    if cfg.synthetic {
        Ok(synthetic_corpus(cfg).test)
    } else {
        sentences(cfg.test.as_deref().expect("validated"))
    }
}

/// 3-layer, d=8 network on one 5-word sentence.
pub fn gradcheck_fixture(seed: u64) -> Result<GradReport, CliError> {
    let config = ModelConfig {
        hidden: 8,
        head_hidden: 8,
        layers: 3,
        dropout: 0.0,
        ..ModelConfig::new(6)
    };
    let net = AgtNetwork::new(config, seeds::derive(seed, Stream::Init, 0))?;
    let words = ["not", "so", "much", "a", "movie"];
    let vocabulary = Vocabulary::from_tokens(words);
    let embeddings = EmbeddingTable::random(
        vocabulary.len(),
        6,
        1.0,
        seeds::derive(seed, Stream::Embeddings, 0),
    );
    let unit = TrainingUnit {
        tokens: words.iter().map(|w| w.to_string()).collect(),
        label: 1,
        is_full_sentence: true,
    };
    let batch = corpus::encode_batch(&[&unit], &vocabulary, &embeddings)?;
    Ok(model::check_gradients(&net, &batch, GRADCHECK_TOLERANCE)?)
}

fn out_dir(cfg: &CliConfig) -> Result<&Path, CliError> {
    let dir = cfg.out_dir.as_deref().expect("validated");
    fs::create_dir_all(dir)?;
    Ok(dir)
}

fn run_train(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let data = prepare(cfg)?;
    let dir = out_dir(cfg)?;
    let net = cfg.training.init_network(data.embeddings.dim())?;
    let mut log = File::create(dir.join("epoch_log.tsv"))?;
    let mut io_err = None;
    let outcome = training::fit(
        net,
        Data {
            units: &data.train,
            vocabulary: &data.vocabulary,
            embeddings: &data.embeddings,
        },
        Data {
            units: &data.dev,
            vocabulary: &data.vocabulary,
            embeddings: &data.embeddings,
        },
        &cfg.training,
        |entry| {
            let line = entry.to_tsv();
            eprintln!("{line}");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                io_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    Checkpoint {
        network: outcome.best,
        vocabulary: data.vocabulary,
        embeddings: data.embeddings,
    }
    .save(cfg.checkpoint.as_deref().expect("validated"))?;
    writeln!(out, "best_epoch\t{}", outcome.best_epoch)?;
    writeln!(out, "dev_accuracy\t{:.4}", outcome.best_dev_acc)?;
    Ok(())
}

fn run_eval(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = Checkpoint::load(cfg.checkpoint.as_deref().expect("validated"))?;
    let units = eval_units(cfg)?;
    let acc = training::evaluate(
        &ck.network,
        Data {
            units: &units,
            vocabulary: &ck.vocabulary,
            embeddings: &ck.embeddings,
        },
    )?;
    writeln!(out, "accuracy\t{acc:.4}")?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)?;
    Ok(())
}

/// Writes every analysis artifact for `records` into `dir`.
pub fn write_analysis(
    dir: &Path,
    records: &[AttentionRecord],
    threshold: f64,
    heatmaps: &[usize],
) -> Result<(), CliError> {
    let mut dump = String::new();
    for r in records {
        dump.push_str(&r.to_json_line());
        dump.push('\n');
    }
    write_file(&dir.join("records.jsonl"), &dump)?;

    let hist = analysis::phrase_length_distribution(records, threshold)?;
    let mut lengths = String::from("layer\tlength\tcount\n");
    let mut summary = String::from("layer\tspans\tmean_length\tempty\n");
    for h in &hist {
        for (len, count) in &h.counts {
            lengths.push_str(&format!("{}\t{len}\t{count}\n", h.layer + 1));
        }
        summary.push_str(&format!(
            "{}\t{}\t{:.4}\t{}\n",
            h.layer + 1,
            h.spans(),
            h.mean,
            h.empty
        ));
    }
    write_file(&dir.join("phrase_lengths.tsv"), &lengths)?;
    write_file(&dir.join("phrase_length_summary.tsv"), &summary)?;

    let mut spiky = String::from("layer\thigh_fraction\tlow_fraction\n");
    for s in analysis::attention_spikiness(records)? {
        spiky.push_str(&format!("{}\t{:.6}\t{:.6}\n", s.layer + 1, s.high, s.low));
    }
    write_file(&dir.join("spikiness.tsv"), &spiky)?;

    let mut gates = String::from("layer\tmean\tp10\tp50\tp90\n");
    for g in analysis::gate_activity_summary(records)? {
        gates.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            g.layer + 1,
            g.mean,
            g.p10,
            g.p50,
            g.p90
        ));
    }
    write_file(&dir.join("gates.tsv"), &gates)?;

    let mut words = String::from("layer\trank\tword\tcount\n");
    for (l, top) in analysis::top_selected_words(records, threshold, 10)?
        .iter()
        .enumerate()
    {
        for (rank, (w, c)) in top.iter().enumerate() {
            words.push_str(&format!("{}\t{}\t{w}\t{c}\n", l + 1, rank + 1));
        }
    }
    write_file(&dir.join("selected_words.tsv"), &words)?;

    let mut phrases = String::from("sentence\tlayer\tstart\tend\ttext\n");
    let mut relaxed = String::from("sentence\tlayer\twords\n");
    for (i, r) in records.iter().enumerate() {
        let norm = analysis::normalize_attention(r);
        for span in analysis::select_and_compose(&norm, &r.tokens, threshold)? {
            phrases.push_str(&format!(
                "{i}\t{}\t{}\t{}\t{}\n",
                span.layer + 1,
                span.start,
                span.end,
                span.text
            ));
        }
        for (l, row) in norm.iter().enumerate() {
            let picked: Vec<&str> = analysis::median_relaxed_select(row)
                .into_iter()
                .map(|j| r.tokens[j].as_str())
                .collect();
            relaxed.push_str(&format!("{i}\t{}\t{}\n", l + 1, picked.join(" ")));
        }
    }
    write_file(&dir.join("phrases.tsv"), &phrases)?;
    write_file(&dir.join("median_selection.tsv"), &relaxed)?;

    let mut grids = String::new();
    for &i in heatmaps.iter().filter(|&&i| i < records.len()) {
        let r = &records[i];
        let norm = analysis::normalize_attention(r);
        write_file(
            &dir.join(format!("heatmap_{i}.svg")),
            &analysis::render_svg(r, &norm),
        )?;
        grids.push_str(&format!(
            "# sentence {i} (gold {}, predicted {})\n",
            r.gold, r.prediction
        ));
        grids.push_str(&analysis::render_text_grid(r, &norm));
        grids.push('\n');
    }
    write_file(&dir.join("heatmaps.txt"), &grids)?;
    Ok(())
}

fn run_analyze(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = Checkpoint::load(cfg.checkpoint.as_deref().expect("validated"))?;
    let units = eval_units(cfg)?;
    let records = analysis::capture_records(
        &ck.network,
        Data {
            units: &units,
            vocabulary: &ck.vocabulary,
            embeddings: &ck.embeddings,
        },
        true,
    )?;
    let dir = out_dir(cfg)?;
    write_analysis(dir, &records, cfg.threshold, &cfg.heatmaps)?;
    writeln!(out, "records\t{}", records.len())?;
    Ok(())
}

fn run_gradcheck(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let report = gradcheck_fixture(cfg.training.seed)?;
    for t in &report.tensors {
        writeln!(
            out,
            "{}\t{:.3e}\t{}",
            t.name,
            t.max_rel_error,
            if t.passed { "ok" } else { "FAIL" }
        )?;
    }
    writeln!(out, "max_rel_error\t{:.3e}", report.max_rel_error())?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradient check failed at tolerance {}",
            report.tolerance
        )))
    }
}

fn run_synth(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let c = synthetic_corpus(cfg);
    let dir = out_dir(cfg)?;
    for (name, units) in [("train.txt", &c.train), ("test.txt", &c.test)] {
        let text: String = units.iter().map(|u| u.to_tree().render() + "\n").collect();
        write_file(&dir.join(name), &text)?;
    }
    writeln!(out, "train\t{}\ntest\t{}", c.train.len(), c.test.len())?;
    Ok(())
}

/// Runs a resolved command, writing its report to `out`.
pub fn run(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    match cfg.command {
        CommandKind::Train => run_train(cfg, out),
        CommandKind::Eval => run_eval(cfg, out),
        CommandKind::Analyze => run_analyze(cfg, out),
        CommandKind::Gradcheck => run_gradcheck(cfg, out),
        CommandKind::Synth => run_synth(cfg, out),
    }
}

/// Entry point; returns the process exit code (0 ok, 1 failure, 2 usage).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match parse_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("usage error: {e}");
            return 2;
        }
    };
    eprint!("{}", cfg.render());
    let stdout = std::io::stdout();
    match run(&cfg, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
