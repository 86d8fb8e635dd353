mod exit;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use annopipe::bench::{render_report, run_comparison, ReportFormat};
use annopipe::data::{
    class_counts, load_agnews_csv_report, load_model, save_model, stratified_split, CsvOptions, DatasetSplit,
    LabeledExample, AG_CLASS_NAMES,
};
use annopipe::encoder::{names, EncoderConfig, EncoderWeights, Preset};
use annopipe::tokenize::{self, encode_sequence, Vocab, DEFAULT_MAX_LEN};
use annopipe::train::{evaluate, train, AdamConfig, Regime, TrainConfig, DEFAULT_FROZEN_LR};

#[derive(Parser)]
#[command(
    name = "annopipe",
    version,
    about = "Transformer text classification: fine-tuning vs. a frozen annotation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate text with document, sentence and token columns (and WordPiece ids with --vocab).
    Tokenize(TokenizeArgs),
    /// Print encoder parameter counts.
    Params(ParamsArgs),
    /// Train one regime and save the model directory.
    Train(TrainArgs),
    /// Evaluate a saved model on a labeled CSV.
    Eval(EvalArgs),
    /// Train and evaluate both regimes on each preset and emit a comparison report.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TokenizeArgs {
    /// Text to annotate; may be repeated.
    #[arg(long)]
    text: Vec<String>,
    /// File with one text per line.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
}

#[derive(Args)]
struct ParamsArgs {
    /// tiny, mini, small, medium, base or all.
    #[arg(long, default_value = "all")]
    preset: String,
    #[arg(long, default_value_t = annopipe::encoder::DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Zero-based CSV column holding the text.
    #[arg(long, default_value_t = 2)]
    text_column: usize,
    /// Fields per CSV row.
    #[arg(long, default_value_t = 3)]
    columns: usize,
    /// Malformed rows to skip before failing.
    #[arg(long, default_value_t = 0)]
    error_budget: usize,
}

impl DataArgs {
    fn options(&self) -> CsvOptions {
        CsvOptions {
            text_column: self.text_column,
            expected_columns: self.columns,
            error_budget: self.error_budget,
            ..CsvOptions::default()
        }
    }
}

#[derive(Args, Clone)]
struct HyperArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    partitions: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, default_value_t = 4)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Fine-tuning peak learning rate.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Frozen-regime head peak learning rate.
    #[arg(long, default_value_t = DEFAULT_FROZEN_LR)]
    frozen_lr: f64,
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
    /// Seed for random encoder initialization (defaults to --seed).
    #[arg(long)]
    init_seed: Option<u64>,
    /// Softmax head without a bias term.
    #[arg(long)]
    no_head_bias: bool,
    #[arg(long)]
    max_grad_norm: Option<f64>,
    /// Decoupled Adam weight decay; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
}

impl HyperArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lr_base: self.lr,
            frozen_lr: self.frozen_lr,
            warmup_proportion: self.warmup,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            validation_fraction: self.validation_fraction,
            partitions: self.partitions,
            max_len: self.max_len,
            head_bias: !self.no_head_bias,
            max_grad_norm: self.max_grad_norm,
            adam: AdamConfig {
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// fine-tune or frozen.
    #[arg(long)]
    regime: String,
    #[arg(long, default_value = "tiny")]
    preset: String,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
    /// Starting encoder weights (NGW1 file) instead of random initialization.
    #[arg(long)]
    init_weights: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 1)]
    partitions: usize,
    /// Write metrics JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Comma-separated presets, or all.
    #[arg(long, default_value = "tiny")]
    presets: String,
    /// json, csv or markdown.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-run TrainLogs and the full JSON outcome.
    #[arg(long)]
    logs: Option<PathBuf>,
    /// Directory of `<preset>.ngw` starting weights.
    #[arg(long)]
    weights_dir: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    let result = match cli.command {
        Command::Tokenize(a) => cmd_tokenize(a),
        Command::Params(a) => cmd_params(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}

/// Writes `text` and a newline to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn parse_presets(spec: &str) -> Result<Vec<Preset>> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(Preset::ALL.to_vec());
    }
    spec.split(',').map(|s| Ok(s.trim().parse::<Preset>()?)).collect()
}

fn load_vocab(path: &Path) -> Result<Arc<Vocab>> {
    Ok(Arc::new(Vocab::from_file(path)?))
}

fn load_csv(path: &Path, data: &DataArgs) -> Result<Vec<LabeledExample>> {
    let load = load_agnews_csv_report(path, &data.options())?;
    for s in &load.skipped {
        eprintln!("warning: {}:{}: skipped row: {}", path.display(), s.line, s.message);
    }
    Ok(load.examples)
}

fn class_names() -> Vec<String> {
    AG_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

fn cmd_tokenize(args: TokenizeArgs) -> Result<()> {
    let mut texts = args.text.clone();
    if let Some(path) = &args.input {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let content =
            String::from_utf8(bytes).map_err(|e| annopipe::Error::Encoding(format!("{}: {e}", path.display())))?;
        texts.extend(content.lines().map(str::to_string));
    }
    if texts.is_empty() {
        bail!(annopipe::Error::Config(
            "nothing to tokenize: pass --text or --input".into()
        ));
    }
    let vocab = args.vocab.as_deref().map(load_vocab).transpose()?;
    let mut out = Vec::with_capacity(texts.len());
    for text in &texts {
        let record = tokenize::assemble_document(text);
        let record = tokenize::detect_sentences(&record)?;
        let record = tokenize::tokenize_basic(&record)?;
        let mut value = serde_json::to_value(&record)?;
        if let Some(v) = &vocab {
            let seq = encode_sequence(text, v, args.max_len)?;
            let pieces: Vec<&str> = seq
                .ids
                .iter()
                .take(seq.real_len())
                .map(|&id| v.token(id).unwrap_or(tokenize::UNK))
                .collect();
            value["wordpieces"] = json!({
                "pieces": pieces,
                "ids": seq.ids,
                "attention_mask": seq.attention_mask,
                "token_spans": seq.token_spans,
            });
        }
        out.push(value);
    }
    emit(&serde_json::to_string_pretty(&out)?)
}

fn cmd_params(args: ParamsArgs) -> Result<()> {
    let presets = parse_presets(&args.preset)?;
    let rows: Vec<(Preset, usize)> = presets
        .into_iter()
        .map(|p| {
            (
                p,
                EncoderConfig::preset(p).with_vocab_size(args.vocab_size).count_params(),
            )
        })
        .collect();
    if args.json {
        let v: Vec<_> = rows
            .iter()
            .map(|(p, n)| json!({"preset": p.name(), "model": p.display_name(), "parameters": n}))
            .collect();
        emit(&serde_json::to_string_pretty(&v)?)
    } else {
        let lines: Vec<String> = rows
            .into_iter()
            .map(|(p, n)| format!("{:<12} {:>11} {:>7.1}M", p.display_name(), n, n as f64 / 1e6))
            .collect();
        emit(&lines.join("\n"))
    }
}

/// Starting encoder for a preset: a weight file when given, otherwise a
/// seeded random initialization sized to the vocabulary.
fn initial_encoder(preset: Preset, vocab: &Vocab, init: Option<&Path>, seed: u64) -> Result<EncoderWeights<f32>> {
    let mut config = EncoderConfig::preset(preset).with_vocab_size(vocab.len());
    match init {
        Some(path) => {
            let params = annopipe::data::load_weights::<f32>(path)?;
            if let Some(t) = params.get(names::WORD_EMB) {
                config.vocab_size = t.shape()[0];
            }
            Ok(EncoderWeights::new(config, params)?)
        }
        None => Ok(EncoderWeights::init(config, seed)?),
    }
}

fn prepare_split(
    train_path: &Path,
    test_path: Option<&Path>,
    data: &DataArgs,
    hyper: &HyperArgs,
) -> Result<DatasetSplit> {
    let train_examples = load_csv(train_path, data)?;
    let mut split = stratified_split(&train_examples, hyper.validation_fraction, hyper.seed)?;
    if let Some(t) = test_path {
        split.test = load_csv(t, data)?;
    }
    eprintln!(
        "data: {} train {:?}, {} validation, {} test",
        split.train.len(),
        class_counts(&split.train, 4),
        split.validation.len(),
        split.test.len()
    );
    Ok(split)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let regime: Regime = args.regime.parse()?;
    let preset: Preset = args.preset.parse()?;
    let vocab = load_vocab(&args.vocab)?;
    let split = prepare_split(&args.train, args.test.as_deref(), &args.data, &args.hyper)?;
    let config = args.hyper.config();
    let seed = args.hyper.init_seed.unwrap_or(args.hyper.seed);
    let encoder = initial_encoder(preset, &vocab, args.init_weights.as_deref(), seed)?;
    eprintln!(
        "training {} ({regime}) for {} epochs",
        preset.display_name(),
        config.epochs
    );
    let (model, log) = train(regime, &split, vocab, encoder, &config)?;
    save_model(&args.out, &model, &class_names())?;
    let log_path = args.out.join("train_log.jsonl");
    fs::write(&log_path, log.to_json_lines()).map_err(|e| annopipe::Error::io(&log_path, e))?;
    let mut text = log.to_json_lines();
    if !split.test.is_empty() {
        let eval = evaluate(&model, &split.test, config.classes)?;
        text.push_str(
            &json!({"test_accuracy": eval.accuracy, "correct": eval.correct, "total": eval.total}).to_string(),
        );
    }
    emit(text.trim_end())?;
    eprintln!("model saved to {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (model, config) = load_model::<f32>(&args.model, args.partitions)?;
    let test = load_csv(&args.test, &args.data)?;
    let eval = evaluate(&model, &test, config.classes)?;
    let out = json!({
        "regime": config.regime,
        "accuracy": eval.accuracy,
        "correct": eval.correct,
        "total": eval.total,
        "confusion": eval.confusion,
        "class_names": config.class_names,
    });
    let text = serde_json::to_string_pretty(&out)?;
    if let Some(path) = &args.out {
        fs::write(path, &text).map_err(|e| annopipe::Error::io(path, e))?;
    }
    emit(&text)
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let format: ReportFormat = args.format.parse()?;
    let presets = parse_presets(&args.presets)?;
    let vocab = load_vocab(&args.vocab)?;
    let split = prepare_split(&args.train, Some(&args.test), &args.data, &args.hyper)?;
    let config = args.hyper.config();
    let seed = args.hyper.init_seed.unwrap_or(args.hyper.seed);
    let outcome = run_comparison(&presets, &split, vocab.clone(), &config, |p| {
        eprintln!("bench: {}", p.display_name());
        let init = args.weights_dir.as_ref().map(|d| d.join(format!("{}.ngw", p.name())));
        let init = init.filter(|p| p.exists());
        initial_encoder(p, &vocab, init.as_deref(), seed).map_err(|e| match e.downcast::<annopipe::Error>() {
            Ok(e) => e,
            Err(e) => annopipe::Error::Config(e.to_string()),
        })
    })?;
    if let Some(dir) = &args.logs {
        fs::create_dir_all(dir).map_err(|e| annopipe::Error::io(dir, e))?;
        for run in &outcome.runs {
            let path = dir.join(format!("{}_{}.jsonl", run.preset.name(), run.regime.name()));
            fs::write(&path, run.log.to_json_lines()).map_err(|e| annopipe::Error::io(&path, e))?;
        }
        let path = dir.join("outcome.json");
        fs::write(&path, serde_json::to_string_pretty(&outcome)?).map_err(|e| annopipe::Error::io(&path, e))?;
    }
    let text = render_report(&outcome.report, format)?;
    match &args.out {
        Some(path) => fs::write(path, &text).map_err(|e| annopipe::Error::io(path, e))?,
        None => emit(text.trim_end())?,
    }
    Ok(())
}
