//! Command-line surface: task generation, training, evaluation, attention
//! analysis with heatmap export, and loss-weight sweeps.
//!
//! Every command resolves its configuration up front (flags override an
//! optional flat key=value file, which overrides defaults; the seed falls
//! back to MONOATTN_SEED, then 1) and records it in a manifest.json in the
//! output directory before the real work starts, so reruns from the same
//! invocation are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    default_tags, gen_cipher, gen_inflection, gen_reorder, write_tsv, Corpus, Pair, TaskData,
    DEFAULT_COUNTS, DEFAULT_LEN_RANGE, DEFAULT_VOCAB, EOS_ID,
};
use crate::attention::AttentionWeights;
use crate::metrics::{eval_metric, metric_maximizes, MetricReport, METRIC_NAMES};
use crate::model::{Decoded, Model, ModelConfig, PosMode};
use crate::monoloss::{
    abar_path, hinge_terms, report_batch, separator_scope, Direction, HeadMask, MonoConfig,
    SeqScope,
};
use crate::ndgrad::{Array, NodeId};
use crate::trainer::{
    decode_corpus, eval_pairs, sweep_lambda, write_trace_csv, FitResult, LrDecay, TrainConfig,
    Trainer,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "monoattn",
    version,
    about = "Train and analyze attentional transduction models with a monotonicity loss"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic transduction task directory
    Gen(GenArgs),
    /// Train a model and write checkpoint, trace, and manifest
    Train(TrainArgs),
    /// Score a checkpoint on a data split
    Eval(EvalArgs),
    /// Break attention down per example and head; export heatmaps
    Analyze(AnalyzeArgs),
    /// Train once per loss weight and tabulate the dev results
    Sweep(SweepArgs),
}

/// Parses the process arguments, runs the chosen command, and returns the
/// process exit code: 0 on success, 1 on runtime failures, 2 on usage errors
/// (clap reports flag-level mistakes with exit 2 on its own).
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskKind {
    Cipher,
    Inflection,
    Reorder,
}

impl TaskKind {
    fn label(self) -> &'static str {
        match self {
            TaskKind::Cipher => "cipher",
            TaskKind::Inflection => "inflection",
            TaskKind::Reorder => "reorder",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl SplitArg {
    fn label(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Dev => "dev",
            SplitArg::Test => "test",
        }
    }
}

fn pick_split(data: &TaskData, split: SplitArg) -> &Corpus {
    match split {
        SplitArg::Train => &data.train,
        SplitArg::Dev => &data.dev,
        SplitArg::Test => &data.test,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    Inc,
    Dec,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Direction {
        match d {
            DirectionArg::Inc => Direction::Increasing,
            DirectionArg::Dec => Direction::Decreasing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PosModeArg {
    Vanilla,
    SepCentered,
}

impl From<PosModeArg> for PosMode {
    fn from(m: PosModeArg) -> PosMode {
        match m {
            PosModeArg::Vanilla => PosMode::Vanilla,
            PosModeArg::SepCentered => PosMode::SepCentered,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LrDecayArg {
    Constant,
    Cosine,
}

impl From<LrDecayArg> for LrDecay {
    fn from(d: LrDecayArg) -> LrDecay {
        match d {
            LrDecayArg::Constant => LrDecay::Constant,
            LrDecayArg::Cosine => LrDecay::Cosine,
        }
    }
}

fn parse_lr_decay(s: &str) -> Result<LrDecay> {
    match s {
        "constant" => Ok(LrDecay::Constant),
        "cosine" => Ok(LrDecay::Cosine),
        other => Err(Error::Usage(format!(
            "unknown lr decay {:?}, expected constant or cosine",
            other
        ))),
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Task family
    #[arg(long, value_enum)]
    task: TaskKind,
    /// Directory receiving train/dev/test TSVs and the manifests
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Training examples
    #[arg(long, alias = "n", default_value_t = DEFAULT_COUNTS.0)]
    n_train: usize,
    #[arg(long, default_value_t = DEFAULT_COUNTS.1)]
    n_dev: usize,
    #[arg(long, default_value_t = DEFAULT_COUNTS.2)]
    n_test: usize,
    /// Content alphabet size (cipher and reorder)
    #[arg(long, default_value_t = DEFAULT_VOCAB)]
    vocab: usize,
    #[arg(long, default_value_t = DEFAULT_LEN_RANGE.0)]
    min_len: usize,
    #[arg(long, default_value_t = DEFAULT_LEN_RANGE.1)]
    max_len: usize,
    /// Fraction of displaced examples (reorder)
    #[arg(long, default_value_t = 0.3)]
    swap: f64,
}

/// Flags shared verbatim between train and sweep.
#[derive(Debug, Args)]
struct SharedTrainFlags {
    /// Task directory holding train.tsv, dev.tsv, test.tsv
    #[arg(long)]
    data: PathBuf,
    /// Margin fraction: each step must advance by delta * |X| / |Y|
    #[arg(long)]
    delta: Option<f64>,
    /// Expected direction of the attended positions
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    /// Heads receiving the loss: all, none, or pairs like 0:1,1:3
    #[arg(long)]
    mono_heads: Option<String>,
    /// Whole-head dropout rate during training
    #[arg(long)]
    drophead: Option<f64>,
    /// Attention heads per layer
    #[arg(long)]
    heads: Option<usize>,
    /// Encoder and decoder layer count
    #[arg(long)]
    layers: Option<usize>,
    /// Model width
    #[arg(long)]
    dim: Option<usize>,
    /// Feed-forward width
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Score only source positions right of the separator token
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    sep_masking: Option<bool>,
    /// Source position numbering
    #[arg(long, value_enum)]
    pos_mode: Option<PosModeArg>,
    /// Flat key = value config file; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Steps between dev evaluations
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    /// Non-improving dev checkpoints tolerated before stopping
    #[arg(long)]
    patience: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Learning-rate schedule over max-steps
    #[arg(long, value_enum)]
    lr_decay: Option<LrDecayArg>,
    /// Dev metric steering early stopping (wer, per, acc, lev, mfs)
    #[arg(long)]
    dev_metric: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: SharedTrainFlags,
    /// Directory receiving checkpoint.json, trace.csv, manifest.json
    #[arg(long)]
    out: PathBuf,
    /// Monotonicity loss weight
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint written by train
    #[arg(long)]
    model: PathBuf,
    /// Task directory the model was trained on
    #[arg(long)]
    data: PathBuf,
    /// Which split to score
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Comma list out of wer,per,acc,lev,mfs; all of them by default
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    sep_masking: Option<bool>,
    /// Directory receiving metrics.csv, manifest.json, and the dump
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write dump.jsonl with per-head attention weights
    #[arg(long)]
    dump_attn: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// JSONL attention dump written by eval --dump-attn
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Checkpoint to decode with (needs --data)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Task directory to decode (needs --model)
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    sep_masking: Option<bool>,
    /// Directory receiving heatmaps, CSVs, manifest.json
    #[arg(long)]
    out_dir: PathBuf,
    /// Cap on examples given per-example files; statistics cover every record
    #[arg(long, default_value_t = 8)]
    limit: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    shared: SharedTrainFlags,
    /// Directory receiving sweep.csv and manifest.json
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma list of loss weights, at least two
    #[arg(long)]
    lambdas: String,
}

/// Record of one invocation, written to the output directory before the
/// command does its real work. Carries everything needed to replay the run.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    tool_version: String,
    seed: u64,
    paths: BTreeMap<String, String>,
    config: serde_json::Value,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            paths: BTreeMap::new(),
            config: serde_json::Value::Null,
        }
    }

    fn path(mut self, key: &str, value: &Path) -> Self {
        self.paths.insert(key.to_string(), value.display().to_string());
        self
    }

    fn config<T: Serialize>(mut self, config: &T) -> Result<Self> {
        self.config = serde_json::to_value(config)?;
        Ok(self)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let text = serde_json::to_string_pretty(self)? + "\n";
        let path = dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Keys that would turn on attention dropout in other toolkits. Attention
/// dropout is deliberately unsupported: it favors parking the attention on a
/// constant position. Whole-head dropout (drophead) is the replacement.
const DROPOUT_KEYS: [&str; 3] = ["attention_dropout", "attn_dropout", "dropout"];

/// Flat `key = value` config file. Keys are normalized (dashes to
/// underscores), `#` starts a comment line, blank lines are skipped. Every
/// key must be consumed by the merge; leftovers are rejected.
#[derive(Debug)]
struct FileConfig {
    path: String,
    map: BTreeMap<String, String>,
}

impl FileConfig {
    fn empty() -> FileConfig {
        FileConfig {
            path: String::new(),
            map: BTreeMap::new(),
        }
    }

    fn load(path: &Path) -> Result<FileConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected key = value".to_string(),
                });
            };
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "empty key".to_string(),
                });
            }
            if DROPOUT_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(
                    "attention dropout is not supported (it collapses attention onto a \
                     constant position); whole-head dropout is the knob: drophead"
                        .to_string(),
                ));
            }
            map.insert(key, v.trim().to_string());
        }
        Ok(FileConfig {
            path: path.display().to_string(),
            map,
        })
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Config(format!(
                    "config key {} has unusable value {:?} in {}",
                    key, v, self.path
                ))
            }),
        }
    }

    fn take_str(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(Error::Config(format!(
                "unknown config key {:?} in {}",
                key, self.path
            )));
        }
        Ok(())
    }
}

/// Seed precedence: explicit flag, then config file, then the MONOATTN_SEED
/// environment variable, then 1.
fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file {
        return Ok(s);
    }
    match std::env::var("MONOATTN_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::Config(format!(
                "MONOATTN_SEED must be an unsigned integer, got {:?}",
                v
            ))
        }),
        Err(_) => Ok(1),
    }
}

fn parse_direction(s: &str) -> Result<Direction> {
    match s.trim() {
        "inc" | "increasing" => Ok(Direction::Increasing),
        "dec" | "decreasing" => Ok(Direction::Decreasing),
        other => Err(Error::Usage(format!(
            "direction must be inc or dec, got {:?}",
            other
        ))),
    }
}

fn parse_pos_mode(s: &str) -> Result<PosMode> {
    match s.trim().replace('_', "-").as_str() {
        "vanilla" => Ok(PosMode::Vanilla),
        "sep-centered" => Ok(PosMode::SepCentered),
        other => Err(Error::Usage(format!(
            "pos mode must be vanilla or sep-centered, got {:?}",
            other
        ))),
    }
}

fn parse_head_mask(s: &str) -> Result<HeadMask> {
    match s.trim() {
        "all" => Ok(HeadMask::All),
        "none" => Ok(HeadMask::None),
        list => {
            let mut pairs = Vec::new();
            for part in list.split(',') {
                let part = part.trim();
                let Some((l, h)) = part.split_once(':') else {
                    return Err(Error::Usage(format!(
                        "head subset entries look like layer:head, got {:?}",
                        part
                    )));
                };
                let parse = |v: &str| {
                    v.trim().parse::<usize>().map_err(|_| {
                        Error::Usage(format!("bad head subset entry {:?}", part))
                    })
                };
                pairs.push((parse(l)?, parse(h)?));
            }
            Ok(HeadMask::Subset(pairs))
        }
    }
}

fn parse_metrics(spec: Option<&str>) -> Result<Vec<String>> {
    match spec {
        None => Ok(METRIC_NAMES.iter().map(|s| s.to_string()).collect()),
        Some(list) => {
            let mut out: Vec<String> = Vec::new();
            for part in list.split(',') {
                let name = part.trim().to_string();
                metric_maximizes(&name)
                    .map_err(|_| Error::Usage(format!("unknown metric {:?}", name)))?;
                if out.contains(&name) {
                    return Err(Error::Usage(format!("metric {} listed twice", name)));
                }
                out.push(name);
            }
            Ok(out)
        }
    }
}

fn parse_lambdas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| {
                Error::Usage(format!("bad loss weight {:?} in --lambdas", p.trim()))
            })
        })
        .collect()
}

/// Merges flags over the config file over the defaults into a validated
/// training configuration. Vocabulary sizes come from the loaded task.
fn build_train_config(
    shared: &SharedTrainFlags,
    lambda_flag: Option<f64>,
    data: &TaskData,
) -> Result<TrainConfig> {
    let mut file = match &shared.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::empty(),
    };
    let mut model = ModelConfig::new(data.train.src_vocab.len(), data.train.tgt_vocab.len());
    if let Some(v) = shared.heads.or(file.take("heads")?) {
        model.heads = v;
    }
    if let Some(v) = shared.layers.or(file.take("layers")?) {
        model.enc_layers = v;
        model.dec_layers = v;
    }
    if let Some(v) = shared.dim.or(file.take("dim")?) {
        model.dim = v;
    }
    if let Some(v) = shared.ff_dim.or(file.take("ff_dim")?) {
        model.ff_dim = v;
    }
    if let Some(v) = shared.drophead.or(file.take("drophead")?) {
        model.drophead = v;
    }
    let pos_file = file.take_str("pos_mode").map(|v| parse_pos_mode(&v)).transpose()?;
    if let Some(m) = shared.pos_mode.map(PosMode::from).or(pos_file) {
        model.pos_mode = m;
    }
    let seed = resolve_seed(shared.seed, file.take("seed")?)?;
    model.seed = seed;

    let mut config = TrainConfig::new(model);
    config.seed = seed;
    if let Some(v) = lambda_flag.or(file.take("lambda")?) {
        config.mono.lambda = v;
    }
    if let Some(v) = shared.delta.or(file.take("delta")?) {
        config.mono.delta = v;
    }
    let dir_file = file
        .take_str("direction")
        .map(|v| parse_direction(&v))
        .transpose()?;
    if let Some(d) = shared.direction.map(Direction::from).or(dir_file) {
        config.mono.direction = d;
    }
    let mask_flag = shared.mono_heads.as_deref().map(parse_head_mask).transpose()?;
    let mask_file = file
        .take_str("mono_heads")
        .map(|v| parse_head_mask(&v))
        .transpose()?;
    if let Some(m) = mask_flag.or(mask_file) {
        config.mono.head_mask = m;
    }
    if let Some(v) = shared.sep_masking.or(file.take("sep_masking")?) {
        config.mono.separator_masking = v;
    }
    if let Some(v) = shared.batch_size.or(file.take("batch_size")?) {
        config.batch_size = v;
    }
    if let Some(v) = shared.max_steps.or(file.take("max_steps")?) {
        config.max_steps = v;
    }
    if let Some(v) = shared
        .checkpoint_interval
        .or(file.take("checkpoint_interval")?)
    {
        config.checkpoint_interval = v;
    }
    if let Some(v) = shared.patience.or(file.take("patience")?) {
        config.patience = v;
    }
    if let Some(v) = shared.lr.or(file.take("lr")?) {
        config.optim.lr = v;
    }
    if let Some(v) = shared
        .lr_decay
        .map(LrDecay::from)
        .or(file.take_str("lr_decay").map(|s| parse_lr_decay(&s)).transpose()?)
    {
        config.lr_decay = v;
    }
    if let Some(v) = shared.dev_metric.clone().or(file.take_str("dev_metric")) {
        config.dev_metric = v;
    }
    file.finish()?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Serialize)]
struct GenConfig {
    task: String,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    vocab: usize,
    min_len: usize,
    max_len: usize,
    swap: f64,
    seed: u64,
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let seed = resolve_seed(args.seed, None)?;
    let counts = (args.n_train, args.n_dev, args.n_test);
    let len_range = (args.min_len, args.max_len);
    let config = GenConfig {
        task: args.task.label().to_string(),
        n_train: counts.0,
        n_dev: counts.1,
        n_test: counts.2,
        vocab: args.vocab,
        min_len: len_range.0,
        max_len: len_range.1,
        swap: args.swap,
        seed,
    };
    RunManifest::new("gen", seed)
        .path("out_dir", &args.out_dir)
        .config(&config)?
        .write(&args.out_dir)?;
    let data = match args.task {
        TaskKind::Cipher => gen_cipher(counts, args.vocab, len_range, seed)?,
        TaskKind::Inflection => gen_inflection(counts, &default_tags(), len_range, seed)?,
        TaskKind::Reorder => gen_reorder(counts, args.swap, args.vocab, len_range, seed)?,
    };
    write_tsv(&args.out_dir.join("train.tsv"), &data.train.pairs)?;
    write_tsv(&args.out_dir.join("dev.tsv"), &data.dev.pairs)?;
    write_tsv(&args.out_dir.join("test.tsv"), &data.test.pairs)?;
    let mut side = String::new();
    for (k, v) in &data.manifest {
        side.push_str(&format!("{}={}\n", k, v));
    }
    let side_path = args.out_dir.join("manifest.txt");
    fs::write(&side_path, side)
        .map_err(|e| Error::io(format!("writing {}", side_path.display()), e))?;
    println!(
        "train={} dev={} test={}",
        data.train.len(),
        data.dev.len(),
        data.test.len()
    );
    Ok(())
}

fn print_fit_summary(config: &TrainConfig, fit: &FitResult) {
    println!("steps={}", fit.trace.last().map_or(0, |r| r.step));
    println!("checkpoints={}", fit.trace.len());
    println!("stopped_early={}", fit.stopped_early);
    println!("best_step={}", fit.best_step);
    println!("dev_{}={}", config.dev_metric, fit.best_metric);
    println!("dev_l_mono={}", fit.best_row.dev_mono);
    println!("dev_pct_mono={}", fit.best_row.dev_pctmono);
    let names = |in_loss: bool| -> String {
        let list: Vec<String> = fit
            .best_row
            .per_head
            .iter()
            .filter(|h| h.in_loss == in_loss)
            .map(|h| format!("l{}h{}", h.layer, h.head))
            .collect();
        if list.is_empty() {
            "-".to_string()
        } else {
            list.join(" ")
        }
    };
    println!("heads_with_loss={}", names(true));
    println!("heads_without_loss={}", names(false));
    for h in &fit.best_row.per_head {
        println!(
            "head_l{}h{} l_mono={} pct_mono={}",
            h.layer, h.head, h.l_mono, h.pct_mono
        );
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let data = TaskData::load_dir(&args.shared.data)?;
    let config = build_train_config(&args.shared, args.lambda, &data)?;
    RunManifest::new("train", config.seed)
        .path("data", &args.shared.data)
        .path("out", &args.out)
        .config(&config)?
        .write(&args.out)?;
    let mut trainer = Trainer::new(config)?;
    let fit = trainer.fit(&data.train, &data.dev)?;
    fit.best.save(&args.out.join("checkpoint.json"))?;
    write_trace_csv(&args.out.join("trace.csv"), &fit.trace)?;
    print_fit_summary(&trainer.config, &fit);
    Ok(())
}

/// One decoded example of the JSONL attention dump: source tokens, decoded
/// target tokens, per-head weight matrices (row = target step, column =
/// source position), and the separator position if the source has one.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DumpRecord {
    id: usize,
    src: Vec<String>,
    tgt: Vec<String>,
    heads: Vec<DumpHead>,
    sep: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DumpHead {
    layer: usize,
    head: usize,
    weights: Vec<Vec<f64>>,
}

fn dump_record(id: usize, pair: &Pair, data: &Corpus, d: &Decoded) -> Result<DumpRecord> {
    let heads = d
        .cross_attn
        .iter()
        .map(|aw| DumpHead {
            layer: aw.layer,
            head: aw.head,
            weights: (0..aw.weights.nrows())
                .map(|i| aw.weights.row(i).to_vec())
                .collect(),
        })
        .collect();
    // The source column list mirrors the model input, so the trailing eos
    // position shows up in dumps and heatmaps like any other column.
    let mut src = pair.src.clone();
    src.push(data.src_vocab.token(EOS_ID)?.to_string());
    Ok(DumpRecord {
        id,
        src,
        tgt: data.tgt_vocab.decode(&d.tokens)?,
        heads,
        sep: pair.sep_index(),
    })
}

fn dump_records(data: &Corpus, decoded: &[Decoded]) -> Result<Vec<DumpRecord>> {
    data.pairs
        .iter()
        .zip(decoded)
        .enumerate()
        .map(|(i, (p, d))| dump_record(i, p, data, d))
        .collect()
}

fn write_dump(path: &Path, records: &[DumpRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_dump(path: &Path) -> Result<Vec<DumpRecord>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DumpRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("record {}: {}", out.len() + 1, e),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "attention dump {} holds no records",
            path.display()
        )));
    }
    Ok(out)
}

/// Rebuilds the in-memory attention from one dump record, shaped exactly as
/// the decoder produced it.
fn record_attention(rec: &DumpRecord, index: usize) -> Result<(Vec<AttentionWeights>, SeqScope)> {
    let bad = |detail: String| {
        Error::InvalidArgument(format!("attention dump record {}: {}", index + 1, detail))
    };
    if rec.heads.is_empty() {
        return Err(bad("no attention heads".to_string()));
    }
    let rows = rec.heads[0].weights.len();
    if rows == 0 {
        return Err(bad("empty weight matrix".to_string()));
    }
    let mut attn = Vec::with_capacity(rec.heads.len());
    for h in &rec.heads {
        if h.weights.len() != rows {
            return Err(bad(format!(
                "head {}:{} has {} rows, head {}:{} has {}",
                rec.heads[0].layer,
                rec.heads[0].head,
                rows,
                h.layer,
                h.head,
                h.weights.len()
            )));
        }
        for row in &h.weights {
            if row.len() != rec.src.len() {
                return Err(bad(format!(
                    "head {}:{} row of width {} vs {} source tokens",
                    h.layer,
                    h.head,
                    row.len(),
                    rec.src.len()
                )));
            }
        }
        attn.push(AttentionWeights {
            layer: h.layer,
            head: h.head,
            node: NodeId(0),
            weights: Array::from_rows(&h.weights)?,
            src_mask: vec![true; rec.src.len()],
            tgt_mask: vec![true; rows],
        });
    }
    let scope = SeqScope {
        src_len: rec.src.len(),
        tgt_len: rows,
        sep: rec.sep,
    };
    Ok((attn, scope))
}

#[derive(Debug, Serialize)]
struct EvalConfig {
    split: String,
    metrics: Vec<String>,
    mono: MonoConfig,
    dump_attn: bool,
}

fn check_vocab(model: &Model, data: &TaskData) -> Result<()> {
    let (s, t) = (data.train.src_vocab.len(), data.train.tgt_vocab.len());
    if model.config.src_vocab != s || model.config.tgt_vocab != t {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects vocab sizes {}/{} (source/target), data directory yields {}/{}",
            model.config.src_vocab, model.config.tgt_vocab, s, t
        )));
    }
    Ok(())
}

fn mono_from_flags(
    delta: Option<f64>,
    direction: Option<DirectionArg>,
    sep_masking: Option<bool>,
) -> MonoConfig {
    MonoConfig {
        lambda: 0.0,
        delta: delta.unwrap_or(0.0),
        direction: direction.map(Direction::from).unwrap_or(Direction::Increasing),
        head_mask: HeadMask::All,
        separator_masking: sep_masking.unwrap_or(false),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let metrics = parse_metrics(args.metrics.as_deref())?;
    let mono = mono_from_flags(args.delta, args.direction, args.sep_masking);
    mono.validate()?;
    let seed = resolve_seed(args.seed, None)?;
    let model = Model::load(&args.model)?;
    let data = TaskData::load_dir(&args.data)?;
    check_vocab(&model, &data)?;
    let corpus = pick_split(&data, args.split);
    let config = EvalConfig {
        split: args.split.label().to_string(),
        metrics: metrics.clone(),
        mono: mono.clone(),
        dump_attn: args.dump_attn,
    };
    RunManifest::new("eval", seed)
        .path("model", &args.model)
        .path("data", &args.data)
        .path("out_dir", &args.out_dir)
        .config(&config)?
        .write(&args.out_dir)?;
    let decoded = decode_corpus(&model, corpus)?;
    let pairs = eval_pairs(corpus, &decoded)?;
    let mut report = MetricReport::new();
    for name in &metrics {
        report.push(name, eval_metric(name, &pairs)?);
    }
    let records = dump_records(corpus, &decoded)?;
    let mut attn = Vec::with_capacity(records.len());
    let mut scopes = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let (a, s) = record_attention(rec, i)?;
        attn.push(a);
        scopes.push(s);
    }
    let mreport = report_batch(&attn, &scopes, &mono)?;
    report.push("l_mono", mreport.l_mono);
    report.push("pct_mono", mreport.pct_mono);
    print!("{}", report.kv_block());
    let csv_path = args.out_dir.join("metrics.csv");
    fs::write(&csv_path, report.csv())
        .map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;
    if args.dump_attn {
        write_dump(&args.out_dir.join("dump.jsonl"), &records)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AnalyzeConfig {
    source: String,
    split: Option<String>,
    mono: MonoConfig,
    limit: usize,
}

fn write_pgm(path: &Path, w: &Array) -> Result<()> {
    let mut out = format!("P2\n{} {}\n255\n", w.ncols(), w.nrows());
    for i in 0..w.nrows() {
        let cells: Vec<String> = w
            .row(i)
            .iter()
            .map(|&v| ((v.clamp(0.0, 1.0) * 255.0).round() as u32).to_string())
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_weights_csv(path: &Path, w: &Array) -> Result<()> {
    let mut out = String::new();
    for i in 0..w.nrows() {
        let cells: Vec<String> = w.row(i).iter().map(|v| format!("{}", v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Heatmaps, mean-position paths, and hinge terms for one example.
fn write_example_files(
    dir: &Path,
    i: usize,
    attn: &[AttentionWeights],
    scope: &SeqScope,
    mono: &MonoConfig,
) -> Result<()> {
    let mut paths = Vec::with_capacity(attn.len());
    for aw in attn {
        let base = format!("ex{}_l{}h{}", i, aw.layer, aw.head);
        write_pgm(&dir.join(format!("{}.pgm", base)), &aw.weights)?;
        write_weights_csv(&dir.join(format!("{}.csv", base)), &aw.weights)?;
        paths.push(abar_path(&aw.weights, scope, mono.separator_masking)?);
    }
    let mut out = String::from("step");
    for aw in attn {
        out.push_str(&format!(",l{}h{}", aw.layer, aw.head));
    }
    out.push('\n');
    for t in 0..scope.tgt_len {
        out.push_str(&format!("{}", t + 1));
        for p in &paths {
            out.push_str(&format!(",{}", p[t]));
        }
        out.push('\n');
    }
    let abar_file = dir.join(format!("ex{}_abar.csv", i));
    fs::write(&abar_file, out)
        .map_err(|e| Error::io(format!("writing {}", abar_file.display()), e))?;

    let (_, x_eff) = separator_scope(scope.src_len, scope.sep, mono.separator_masking)?;
    let mut out = String::from("layer,head,k,term\n");
    for (aw, p) in attn.iter().zip(&paths) {
        for (k, term) in hinge_terms(p, x_eff, mono.delta, mono.direction)?
            .iter()
            .enumerate()
        {
            out.push_str(&format!("{},{},{},{}\n", aw.layer, aw.head, k, term));
        }
    }
    let terms_file = dir.join(format!("ex{}_terms.csv", i));
    fs::write(&terms_file, out)
        .map_err(|e| Error::io(format!("writing {}", terms_file.display()), e))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let from_dump = args.dump.is_some();
    let from_model = args.model.is_some() || args.data.is_some();
    if from_dump == from_model || (from_model && (args.model.is_none() || args.data.is_none())) {
        return Err(Error::Usage(
            "analyze reads either --dump or --model together with --data".to_string(),
        ));
    }
    let mono = mono_from_flags(args.delta, args.direction, args.sep_masking);
    mono.validate()?;
    let seed = resolve_seed(args.seed, None)?;
    let config = AnalyzeConfig {
        source: if from_dump { "dump" } else { "model" }.to_string(),
        split: if from_dump {
            None
        } else {
            Some(args.split.label().to_string())
        },
        mono: mono.clone(),
        limit: args.limit,
    };
    let mut manifest = RunManifest::new("analyze", seed)
        .path("out_dir", &args.out_dir)
        .config(&config)?;
    if let Some(p) = &args.dump {
        manifest = manifest.path("dump", p);
    }
    if let Some(p) = &args.model {
        manifest = manifest.path("model", p);
    }
    if let Some(p) = &args.data {
        manifest = manifest.path("data", p);
    }
    manifest.write(&args.out_dir)?;

    let records = if let Some(dump) = &args.dump {
        read_dump(dump)?
    } else {
        let model = Model::load(args.model.as_ref().expect("checked above"))?;
        let data = TaskData::load_dir(args.data.as_ref().expect("checked above"))?;
        check_vocab(&model, &data)?;
        let corpus = pick_split(&data, args.split);
        let decoded = decode_corpus(&model, corpus)?;
        dump_records(corpus, &decoded)?
    };

    let mut attn = Vec::with_capacity(records.len());
    let mut scopes = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let (a, s) = record_attention(rec, i)?;
        attn.push(a);
        scopes.push(s);
    }
    for i in 0..records.len().min(args.limit) {
        write_example_files(&args.out_dir, i, &attn[i], &scopes[i], &mono)?;
    }

    // Per-example, per-head breakdown over every record.
    let mut rows = String::from("example,layer,head,l_mono,pct_mono,pairs\n");
    for (i, (seq, scope)) in attn.iter().zip(&scopes).enumerate() {
        let (_, x_eff) = separator_scope(scope.src_len, scope.sep, mono.separator_masking)?;
        for aw in seq {
            let path = abar_path(&aw.weights, scope, mono.separator_masking)?;
            let terms = hinge_terms(&path, x_eff, mono.delta, mono.direction)?;
            let zeros = terms.iter().filter(|&&t| t == 0.0).count();
            let l_mono = terms.iter().sum::<f64>() / scope.tgt_len as f64;
            let pct = if terms.is_empty() {
                1.0
            } else {
                zeros as f64 / terms.len() as f64
            };
            rows.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i, aw.layer, aw.head, l_mono, pct, terms.len()
            ));
        }
    }
    let rows_path = args.out_dir.join("analysis.csv");
    fs::write(&rows_path, rows)
        .map_err(|e| Error::io(format!("writing {}", rows_path.display()), e))?;

    let report = report_batch(&attn, &scopes, &mono)?;
    let mut summary = String::from("layer,head,l_mono,pct_mono,pairs\n");
    for h in &report.per_head {
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            h.layer, h.head, h.l_mono, h.pct_mono, h.pairs
        ));
    }
    let summary_path = args.out_dir.join("summary.csv");
    fs::write(&summary_path, summary)
        .map_err(|e| Error::io(format!("writing {}", summary_path.display()), e))?;
    println!("records={}", records.len());
    println!("l_mono={}", report.l_mono);
    println!("pct_mono={}", report.pct_mono);
    println!("pairs={}", report.pair_count);
    for h in &report.per_head {
        println!(
            "head_l{}h{} l_mono={} pct_mono={}",
            h.layer, h.head, h.l_mono, h.pct_mono
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepConfig {
    lambdas: Vec<f64>,
    base: TrainConfig,
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let lambdas = parse_lambdas(&args.lambdas)?;
    let data = TaskData::load_dir(&args.shared.data)?;
    let base = build_train_config(&args.shared, None, &data)?;
    let config = SweepConfig {
        lambdas: lambdas.clone(),
        base: base.clone(),
    };
    RunManifest::new("sweep", base.seed)
        .path("data", &args.shared.data)
        .path("out_dir", &args.out_dir)
        .config(&config)?
        .write(&args.out_dir)?;
    let rows = sweep_lambda(&base, &lambdas, &data.train, &data.dev)?;
    let mut csv = String::from("lambda,dev_metric,dev_mono,dev_pctmono\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.lambda, r.dev_metric, r.dev_mono, r.dev_pctmono
        ));
    }
    let csv_path = args.out_dir.join("sweep.csv");
    fs::write(&csv_path, &csv)
        .map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;
    print!("{}", csv);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::gen_reorder;
    use tempfile::tempdir;

    #[test]
    fn head_mask_spellings() {
        assert_eq!(parse_head_mask("all").unwrap(), HeadMask::All);
        assert_eq!(parse_head_mask("none").unwrap(), HeadMask::None);
        assert_eq!(
            parse_head_mask("0:1,1:3").unwrap(),
            HeadMask::Subset(vec![(0, 1), (1, 3)])
        );
        assert_eq!(
            parse_head_mask(" 0:0 ").unwrap(),
            HeadMask::Subset(vec![(0, 0)])
        );
        assert!(parse_head_mask("0-1").is_err());
        assert!(parse_head_mask("0:x").is_err());
    }

    #[test]
    fn direction_and_pos_mode_spellings() {
        assert_eq!(parse_direction("inc").unwrap(), Direction::Increasing);
        assert_eq!(parse_direction("decreasing").unwrap(), Direction::Decreasing);
        assert!(parse_direction("up").is_err());
        assert_eq!(parse_pos_mode("vanilla").unwrap(), PosMode::Vanilla);
        assert_eq!(parse_pos_mode("sep_centered").unwrap(), PosMode::SepCentered);
        assert_eq!(parse_pos_mode("sep-centered").unwrap(), PosMode::SepCentered);
        assert!(parse_pos_mode("center").is_err());
    }

    #[test]
    fn metric_lists() {
        assert_eq!(parse_metrics(None).unwrap(), METRIC_NAMES.to_vec());
        assert_eq!(parse_metrics(Some("mfs, acc")).unwrap(), vec!["mfs", "acc"]);
        assert!(parse_metrics(Some("bleu")).is_err());
        assert!(parse_metrics(Some("acc,acc")).is_err());
    }

    #[test]
    fn lambda_lists() {
        assert_eq!(parse_lambdas("0,0.1").unwrap(), vec![0.0, 0.1]);
        assert!(parse_lambdas("0,ten").is_err());
    }

    #[test]
    fn seed_precedence_without_environment() {
        assert_eq!(resolve_seed(Some(3), Some(9)).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some(9)).unwrap(), 9);
    }

    #[test]
    fn lr_decay_names() {
        assert_eq!(parse_lr_decay("constant").unwrap(), LrDecay::Constant);
        assert_eq!(parse_lr_decay("cosine").unwrap(), LrDecay::Cosine);
        let err = parse_lr_decay("linear").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn config_file_normalizes_keys_and_rejects_leftovers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "# comment\nmax-steps = 50\n\nheads=2\n").unwrap();
        let mut file = FileConfig::load(&path).unwrap();
        assert_eq!(file.take::<usize>("max_steps").unwrap(), Some(50));
        assert_eq!(file.take::<usize>("heads").unwrap(), Some(2));
        file.finish().unwrap();

        fs::write(&path, "mystery = 1\n").unwrap();
        let file = FileConfig::load(&path).unwrap();
        let err = file.finish().unwrap_err().to_string();
        assert!(err.contains("mystery"), "{}", err);
    }

    #[test]
    fn config_file_rejects_attention_dropout() {
        let dir = tempdir().unwrap();
        for key in DROPOUT_KEYS {
            let path = dir.path().join("run.conf");
            fs::write(&path, format!("{} = 0.1\n", key)).unwrap();
            let err = FileConfig::load(&path).unwrap_err().to_string();
            assert!(err.contains("drophead"), "{}", err);
        }
    }

    #[test]
    fn config_file_value_errors_name_the_key() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "dim = huge\n").unwrap();
        let mut file = FileConfig::load(&path).unwrap();
        let err = file.take::<usize>("dim").unwrap_err().to_string();
        assert!(err.contains("dim") && err.contains("huge"), "{}", err);
    }

    fn shared_flags(data: &Path) -> SharedTrainFlags {
        SharedTrainFlags {
            data: data.to_path_buf(),
            delta: None,
            direction: None,
            mono_heads: None,
            drophead: None,
            heads: None,
            layers: None,
            dim: None,
            ff_dim: None,
            seed: Some(4),
            sep_masking: None,
            pos_mode: None,
            config: None,
            batch_size: None,
            max_steps: None,
            checkpoint_interval: None,
            patience: None,
            lr: None,
            lr_decay: None,
            dev_metric: None,
        }
    }

    fn tiny_task_dir() -> tempfile::TempDir {
        let dir = tempdir().unwrap();
        let data = gen_reorder((12, 4, 4), 0.0, 6, (3, 5), 3).unwrap();
        write_tsv(&dir.path().join("train.tsv"), &data.train.pairs).unwrap();
        write_tsv(&dir.path().join("dev.tsv"), &data.dev.pairs).unwrap();
        write_tsv(&dir.path().join("test.tsv"), &data.test.pairs).unwrap();
        dir
    }

    #[test]
    fn flags_override_file_values_which_override_defaults() {
        let task = tiny_task_dir();
        let data = TaskData::load_dir(task.path()).unwrap();
        let conf = task.path().join("run.conf");
        fs::write(&conf, "heads = 2\nmax_steps = 40\nlambda = 0.5\ndim = 32\n").unwrap();
        let mut shared = shared_flags(task.path());
        shared.config = Some(conf);
        shared.dim = Some(16);
        let config = build_train_config(&shared, None, &data).unwrap();
        assert_eq!(config.model.heads, 2);
        assert_eq!(config.max_steps, 40);
        assert_eq!(config.mono.lambda, 0.5);
        assert_eq!(config.model.dim, 16);
        assert_eq!(config.seed, 4);
        assert_eq!(config.model.seed, 4);

        let config = build_train_config(&shared, Some(0.0), &data).unwrap();
        assert_eq!(config.mono.lambda, 0.0);
    }

    #[test]
    fn positive_lambda_with_unscored_heads_is_contradictory() {
        let task = tiny_task_dir();
        let data = TaskData::load_dir(task.path()).unwrap();
        let mut shared = shared_flags(task.path());
        shared.mono_heads = Some("none".to_string());
        let err = build_train_config(&shared, Some(0.1), &data).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("head mask"), "{}", err);
    }

    #[test]
    fn pgm_puts_one_bright_cell_per_one_hot_row() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.pgm");
        let w = Array::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        write_pgm(&path, &w).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "P2\n3 2\n255\n0 255 0\n0 0 255\n");
    }

    #[test]
    fn dump_records_round_trip_bit_for_bit() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dump.jsonl");
        let tricky = vec![0.1, 1.0 / 3.0, 1e-300, 0.7f64.exp()];
        let rec = DumpRecord {
            id: 7,
            src: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            tgt: vec!["x".into()],
            heads: vec![DumpHead {
                layer: 0,
                head: 2,
                weights: vec![tricky.clone()],
            }],
            sep: Some(1),
        };
        write_dump(&path, &[rec]).unwrap();
        let back = read_dump(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].id, 7);
        assert_eq!(back[0].sep, Some(1));
        for (a, b) in tricky.iter().zip(&back[0].heads[0].weights[0]) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_dump_lines_carry_the_record_index() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dump.jsonl");
        fs::write(
            &path,
            "{\"id\":0,\"src\":[\"a\"],\"tgt\":[\"a\"],\"heads\":[{\"layer\":0,\"head\":0,\"weights\":[[1.0]]}],\"sep\":null}\nnot json\n",
        )
        .unwrap();
        let err = read_dump(&path).unwrap_err().to_string();
        assert!(err.contains("record 2"), "{}", err);
    }

    #[test]
    fn record_attention_checks_shape_against_the_source() {
        let rec = DumpRecord {
            id: 0,
            src: vec!["a".into(), "b".into()],
            tgt: vec!["a".into()],
            heads: vec![DumpHead {
                layer: 0,
                head: 0,
                weights: vec![vec![1.0, 0.0, 0.0]],
            }],
            sep: None,
        };
        let err = record_attention(&rec, 4).unwrap_err().to_string();
        assert!(err.contains("record 5"), "{}", err);
        assert!(err.contains("width 3"), "{}", err);
    }

    #[test]
    fn analyze_needs_exactly_one_source() {
        let dir = tempdir().unwrap();
        let args = AnalyzeArgs {
            dump: None,
            model: None,
            data: None,
            split: SplitArg::Test,
            delta: None,
            direction: None,
            sep_masking: None,
            out_dir: dir.path().join("out"),
            limit: 8,
            seed: None,
        };
        let err = cmd_analyze(args).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let args = AnalyzeArgs {
            dump: Some(dir.path().join("d.jsonl")),
            model: Some(dir.path().join("m.json")),
            data: None,
            split: SplitArg::Test,
            delta: None,
            direction: None,
            sep_masking: None,
            out_dir: dir.path().join("out"),
            limit: 8,
            seed: None,
        };
        assert_eq!(cmd_analyze(args).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn gen_accepts_the_short_count_alias() {
        let cli = Cli::try_parse_from([
            "monoattn", "gen", "--task", "cipher", "--out-dir", "x", "--n", "30",
        ])
        .unwrap();
        match cli.command {
            Command::Gen(args) => {
                assert_eq!(args.n_train, 30);
                assert_eq!(args.n_dev, DEFAULT_COUNTS.1);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn sep_masking_flag_forms() {
        let parse = |argv: &[&str]| -> Option<bool> {
            let cli = Cli::try_parse_from(argv).unwrap();
            match cli.command {
                Command::Train(args) => args.shared.sep_masking,
                _ => unreachable!(),
            }
        };
        let base = ["monoattn", "train", "--data", "d", "--out", "o"];
        assert_eq!(parse(&base), None);
        let mut with_flag = base.to_vec();
        with_flag.push("--sep-masking");
        assert_eq!(parse(&with_flag), Some(true));
        let mut with_value = base.to_vec();
        with_value.extend(["--sep-masking", "false"]);
        assert_eq!(parse(&with_value), Some(false));
    }
}
