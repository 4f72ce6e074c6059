//! `pbreak` command line: corpus preparation, training, prediction and
//! evaluation.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::corpus::{
    format_corpus, label_alignments, parse_alignment, parse_corpus, read_corpus, split_corpus, write_atomic,
    write_corpus, Utterance, DEFAULT_THRESHOLD_MS,
};
use crate::encoders::{LmAssets, Pooling};
use crate::error::Error;
use crate::eval::{evaluate_corpus, render_report, report_json, StratifiedReport};
use crate::lexfeat::{annotate, Annotator, CommandAnnotator, EmbeddingTable, RuleAnnotator};
use crate::model::{PhraseBreakModel, Predictor, SystemConfig, SystemKind, Vocabulary};
use crate::training::{train, TrainConfig};

/// Exit status for usage errors and missing inputs.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for every other failure.
pub const EXIT_FAILURE: i32 = 1;

const ANNOTATOR_FILE: &str = "annotator.txt";

#[derive(Debug, Parser)]
#[command(name = "pbreak", version, about = "Phrase break prediction for Japanese TTS")]
struct Cli {
    /// key=value file with flag defaults; `train.lr=0.001` applies to one
    /// subcommand, `seed=3` to all. Flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label an alignment file (or relabel a TSV corpus) and split it.
    Corpus(CorpusArgs),
    /// Train a system on `train.tsv` and `validation.tsv`.
    Train(TrainArgs),
    /// Predict breaks for text lines or a TSV corpus.
    Predict(PredictArgs),
    /// Score predictions against a gold corpus.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct AnnotatorArgs {
    /// External annotator emitting CoNLL-U for a sentence on stdin.
    #[arg(long, value_name = "COMMAND")]
    annotator_cmd: Option<String>,
}

impl AnnotatorArgs {
    fn build(&self) -> Result<Box<dyn Annotator>, CliError> {
        match &self.annotator_cmd {
            None => Ok(Box::new(RuleAnnotator)),
            Some(line) => CommandAnnotator::from_command_line(line)
                .map(|a| Box::new(a) as Box<dyn Annotator>)
                .ok_or_else(|| CliError::usage("--annotator-cmd is empty")),
        }
    }
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Alignment file (`surface start_ms end_ms` lines) or TSV corpus.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_MS)]
    threshold_ms: u64,
    /// Train, validation and test sizes, e.g. 98807,500,500.
    #[arg(long, value_name = "A,B,C")]
    split: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    annotator: AnnotatorArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    system: String,
    /// Directory holding train.tsv and validation.tsv.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Checkpoint directory to write.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().max_epochs)]
    max_epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pretrained LM checkpoint directory (config.json, vocab.txt,
    /// model.safetensors).
    #[arg(long, value_name = "DIR")]
    lm: Option<PathBuf>,
    /// Keep the LM weights fixed.
    #[arg(long)]
    freeze_lm: bool,
    #[arg(long, value_enum, default_value_t = PoolingArg::Mean)]
    pooling: PoolingArg,
    /// Pretrained word vectors in word2vec text format.
    #[arg(long, value_name = "PATH")]
    word_vectors: Option<PathBuf>,
    #[arg(long)]
    bilstm_layers: Option<usize>,
    #[arg(long)]
    bilstm_hidden: Option<usize>,
    #[arg(long)]
    token_embedding_dim: Option<usize>,
    #[arg(long)]
    feature_embedding_dim: Option<usize>,
    #[arg(long)]
    classifier_hidden: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PoolingArg {
    Mean,
    First,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Markup,
    Tsv,
}

#[derive(Debug, Args)]
struct PredictorArgs {
    #[arg(long, value_name = "DIR", conflicts_with = "system")]
    checkpoint: Option<PathBuf>,
    /// Only `rule-based` needs no checkpoint.
    #[arg(long)]
    system: Option<String>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    predictor: PredictorArgs,
    /// Text file (one sentence per line) or TSV corpus.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Markup)]
    format: OutputFormat,
    /// Write here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Fail when the annotator differs from the one used in training.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    annotator: AnnotatorArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// TSV written by `predict --format tsv` (last column = prediction).
    #[arg(long, value_name = "PATH", conflicts_with_all = ["checkpoint", "system"])]
    pred: Option<PathBuf>,
    #[command(flatten)]
    predictor: PredictorArgs,
    #[arg(long, value_name = "PATH")]
    gold: PathBuf,
    /// JSON report destination.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Inserts defaults from the `--config` file for flags that are absent.
fn apply_config_file(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let strings: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(pos) = strings
        .iter()
        .position(|a| a == "--config" || a.starts_with("--config="))
    else {
        return Ok(args);
    };
    let path = match strings[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => strings
            .get(pos + 1)
            .cloned()
            .ok_or_else(|| CliError::usage("--config needs a file"))?,
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::usage(format!("{path}: {e}")))?;
    let subcommand = strings
        .iter()
        .skip(1)
        .find(|a| ["corpus", "train", "predict", "eval"].contains(&a.as_str()))
        .cloned();
    let Some(subcommand) = subcommand else {
        return Ok(args);
    };
    let given: HashSet<String> = strings
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut extra = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("{path}:{}: expected key=value", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let key = match key.split_once('.') {
            Some((scope, k)) if scope == subcommand => k,
            Some(_) => continue,
            None => key,
        };
        if given.contains(key) {
            continue;
        }
        match value {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => extra.push(format!("--{key}={value}")),
        }
    }
    let at = strings.iter().position(|a| *a == subcommand).expect("found above") + 1;
    let mut out = args;
    out.splice(at..at, extra.into_iter().map(OsString::from));
    Ok(out)
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let result = apply_config_file(args).and_then(|args| match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli, stdout, stderr),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            Err(CliError {
                code,
                message: String::new(),
            })
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            if !e.message.is_empty() {
                let _ = writeln!(stderr, "error: {}", e.message);
            }
            e.code
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Corpus(a) => cmd_corpus(&a, stdout),
        Command::Train(a) => cmd_train(&a, stdout),
        Command::Predict(a) => cmd_predict(&a, stdout, stderr),
        Command::Eval(a) => cmd_eval(&a, stdout, stderr),
    }
}

fn io_out(e: std::io::Error) -> CliError {
    CliError {
        code: EXIT_FAILURE,
        message: format!("writing output: {e}"),
    }
}

fn looks_like_alignment(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim().is_empty() && !(l.starts_with('#') && !l.contains('\t')))
        .is_some_and(|l| {
            let n = l.split('\t').count();
            n == 3 || n == 6
        })
}

fn parse_split(spec: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<usize> = spec
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("--split expects three counts, got '{spec}'")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::usage(format!("--split expects three counts, got '{spec}'"))),
    }
}

fn cmd_corpus(a: &CorpusArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.input, "input")?;
    if a.threshold_ms == 0 {
        return Err(CliError::usage("--threshold-ms must be positive"));
    }
    let annotator = a.annotator.build()?;
    let text = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let origin = a.input.display().to_string();
    let utterances = if looks_like_alignment(&text) {
        let aligned = parse_alignment(&text, &origin)?;
        label_alignments(&aligned, a.threshold_ms, annotator.as_ref())?
    } else {
        parse_corpus(&text, &origin)?
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_corpus(&utterances, a.out.join("corpus.tsv"))?;
    write_atomic(
        &a.out.join(ANNOTATOR_FILE),
        format!("{}\n", annotator.fingerprint()).as_bytes(),
    )?;
    if let Some(spec) = &a.split {
        let sizes = parse_split(spec)?;
        let split = split_corpus(&utterances, sizes, a.seed)?;
        write_corpus(&split.train, a.out.join("train.tsv"))?;
        write_corpus(&split.validation, a.out.join("validation.tsv"))?;
        write_corpus(&split.test, a.out.join("test.tsv"))?;
        let manifest = format!("# seed={}\n{}", a.seed, split.manifest());
        write_atomic(&a.out.join("split.tsv"), manifest.as_bytes())?;
    }
    let tokens: usize = utterances.iter().map(Utterance::len).sum();
    let breaks: usize = utterances.iter().map(Utterance::break_count).sum();
    let rate = if tokens == 0 {
        0.0
    } else {
        breaks as f64 / tokens as f64
    };
    writeln!(
        stdout,
        "utterances={} tokens={tokens} breaks={breaks} break_rate={rate:.4}",
        utterances.len()
    )
    .map_err(io_out)?;
    Ok(())
}

fn build_system_config(a: &TrainArgs, kind: SystemKind, lm: Option<&LmAssets>) -> Result<SystemConfig, CliError> {
    let mut config = SystemConfig::new(kind, lm.map(|l| l.encoder_config(!a.freeze_lm)));
    config.pooling = match a.pooling {
        PoolingArg::Mean => Pooling::Mean,
        PoolingArg::First => Pooling::First,
    };
    if let Some(h) = a.classifier_hidden {
        config.classifier_hidden = h;
    }
    match &mut config.bilstm {
        Some(b) => {
            if let Some(v) = a.bilstm_layers {
                b.layers = v;
            }
            if let Some(v) = a.bilstm_hidden {
                b.hidden_per_direction = v;
            }
            if let Some(v) = a.token_embedding_dim {
                b.token_embedding_dim = v;
            }
            if let Some(v) = a.feature_embedding_dim {
                b.feature_embedding_dim = v;
            }
            if a.word_vectors.is_some() {
                if !kind.uses_features() {
                    return Err(CliError::usage(format!("--word-vectors is not used by {kind}")));
                }
                b.use_pretrained_word_embeddings = true;
            }
        }
        None if a.word_vectors.is_some() => {
            return Err(CliError::usage(format!("--word-vectors is not used by {kind}")));
        }
        None => {}
    }
    Ok(config)
}

fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let kind: SystemKind = a.system.parse().map_err(CliError::usage)?;
    if !kind.is_trainable() {
        return Err(CliError::usage("rule-based requires no training"));
    }
    let train_path = a.corpus.join("train.tsv");
    let validation_path = a.corpus.join("validation.tsv");
    require_file(&train_path, "training corpus")?;
    require_file(&validation_path, "validation corpus")?;
    let lm = match (kind.uses_lm(), &a.lm) {
        (true, Some(dir)) => {
            require_file(dir, "LM checkpoint")?;
            Some(LmAssets::load(dir)?)
        }
        (true, None) => return Err(CliError::usage(format!("system {kind} needs --lm"))),
        (false, Some(_)) => return Err(CliError::usage(format!("--lm is not used by {kind}"))),
        (false, None) => None,
    };
    let word_vectors = match &a.word_vectors {
        Some(p) => {
            require_file(p, "word vectors")?;
            Some(EmbeddingTable::read(p)?)
        }
        None => None,
    };
    let system = build_system_config(a, kind, lm.as_ref())?;
    let config = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        grad_clip: a.grad_clip,
        weight_decay: a.weight_decay,
        ..TrainConfig::default()
    };
    config.validate()?;

    let train_set = read_corpus(&train_path)?;
    let validation = read_corpus(&validation_path)?;
    let annotator = fs::read_to_string(a.corpus.join(ANNOTATOR_FILE))
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|_| RuleAnnotator.fingerprint());
    let vocab = Vocabulary::build(&train_set, 1);
    let model = PhraseBreakModel::new(
        system,
        vocab,
        word_vectors,
        lm,
        Default::default(),
        a.seed,
        candle::DType::F32,
    )?;
    let mut write_error = None;
    let report = train(&model, &train_set, &validation, &config, |record| {
        if let Err(e) = writeln!(stdout, "{}", record.line()) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(io_out(e));
    }
    let checkpoint = Checkpoint {
        model,
        threshold: config.decision_threshold,
        annotator,
        seed: a.seed,
    };
    checkpoint.save_with(
        &a.out,
        &[
            ("train_report.txt", report.lines()),
            ("train_report.json", report.to_json()),
        ],
    )?;
    writeln!(
        stdout,
        "best_epoch={} best_f1={:.4} stopped_early={} checkpoint={}",
        report.best_epoch,
        report.best_f1,
        report.stopped_early,
        a.out.display()
    )
    .map_err(io_out)?;
    Ok(())
}

/// `annotator` is the fingerprint of the annotator in use, when input text
/// gets annotated at all.
fn load_predictor(
    args: &PredictorArgs,
    stderr: &mut dyn Write,
    annotator: Option<&str>,
    strict: bool,
) -> Result<Predictor, CliError> {
    match (&args.checkpoint, &args.system) {
        (Some(dir), None) => {
            require_file(dir, "checkpoint")?;
            let checkpoint = Checkpoint::load(dir)?;
            if let Some(current) = annotator {
                if let Some(warning) = checkpoint.check_annotator(current, strict)? {
                    let _ = writeln!(stderr, "warning: {warning}");
                }
            }
            Ok(Predictor::Neural {
                model: Box::new(checkpoint.model),
                threshold: checkpoint.threshold,
            })
        }
        (None, Some(name)) => {
            let kind: SystemKind = name.parse().map_err(CliError::usage)?;
            if kind != SystemKind::RuleBased {
                return Err(CliError::usage(format!("system {kind} needs --checkpoint")));
            }
            Ok(Predictor::RuleBased)
        }
        _ => Err(CliError::usage("give either --checkpoint or --system rule-based")),
    }
}

fn is_tsv_corpus(text: &str) -> bool {
    text.lines().any(|l| l.starts_with("# id=")) || text.lines().any(|l| l.contains('\t'))
}

/// Utterances from a TSV corpus, or annotated text lines.
fn read_prediction_input(path: &Path, annotator: &dyn Annotator) -> Result<Vec<Utterance>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if is_tsv_corpus(&text) {
        return Ok(parse_corpus(&text, &path.display().to_string())?);
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id = format!("line-{}", i + 1);
        let tokens = annotate(&id, line, annotator)?;
        out.push(Utterance::new(id, tokens, None)?);
    }
    Ok(out)
}

/// Tokens joined by spaces, `<pause/>` glued to every break token.
pub fn render_markup(utterance: &Utterance, labels: &[bool]) -> String {
    utterance
        .tokens
        .iter()
        .zip(labels)
        .map(|(t, &b)| {
            if b {
                format!("{}<pause/>", t.surface)
            } else {
                t.surface.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_predict(a: &PredictArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.input, "input")?;
    let annotator = a.annotator.build()?;
    let predictor = load_predictor(&a.predictor, stderr, Some(&annotator.fingerprint()), a.strict)?;
    let utterances = read_prediction_input(&a.input, annotator.as_ref())?;
    let labels: Vec<Vec<bool>> = predictor.predict(&utterances)?.into_iter().map(|p| p.labels).collect();
    let output = match a.format {
        OutputFormat::Markup => utterances
            .iter()
            .zip(&labels)
            .map(|(u, l)| render_markup(u, l) + "\n")
            .collect(),
        OutputFormat::Tsv => format_corpus(&utterances, Some(&labels))?,
    };
    match &a.out {
        Some(path) => write_atomic(path, output.as_bytes())?,
        None => stdout.write_all(output.as_bytes()).map_err(io_out)?,
    }
    Ok(())
}

/// Splits the last column of every token line off as the prediction.
pub fn parse_predictions(text: &str, origin: &str) -> Result<(Vec<Utterance>, Vec<Vec<bool>>), Error> {
    let mut stripped = String::with_capacity(text.len());
    let mut predictions: Vec<Vec<bool>> = Vec::new();
    let mut open = false;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            open = false;
            stripped.push_str(line);
        } else if line.starts_with('#') && !line.contains('\t') {
            stripped.push_str(line);
        } else {
            let (rest, last) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected a prediction column"))?;
            let value = match last {
                "0" => false,
                "1" => true,
                _ => {
                    return Err(Error::parse(
                        origin,
                        i + 1,
                        format!("prediction must be 0 or 1, got '{last}'"),
                    ))
                }
            };
            if !open {
                predictions.push(Vec::new());
                open = true;
            }
            predictions.last_mut().expect("pushed above").push(value);
            stripped.push_str(rest);
        }
        stripped.push('\n');
    }
    let utterances = parse_corpus(&stripped, origin)?;
    Ok((utterances, predictions))
}

/// Checks that predicted utterances line up with the gold corpus.
fn align_with_gold(gold: &[Utterance], predicted: &[Utterance]) -> Result<(), CliError> {
    if gold.len() != predicted.len() {
        return Err(CliError {
            code: EXIT_FAILURE,
            message: format!("{} gold utterances but {} predicted", gold.len(), predicted.len()),
        });
    }
    for (g, p) in gold.iter().zip(predicted) {
        if g.id != p.id || g.surfaces() != p.surfaces() {
            return Err(CliError {
                code: EXIT_FAILURE,
                message: format!(
                    "predictions for utterance {} do not match gold utterance {}",
                    p.id, g.id
                ),
            });
        }
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.gold, "gold corpus")?;
    let gold = read_corpus(&a.gold)?;
    let (system, predictions) = match &a.pred {
        Some(path) => {
            require_file(path, "predictions")?;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let (utts, preds) = parse_predictions(&text, &path.display().to_string())?;
            align_with_gold(&gold, &utts)?;
            (path.display().to_string(), preds)
        }
        None => {
            let predictor = load_predictor(&a.predictor, stderr, None, false)?;
            let preds = predictor.predict(&gold)?.into_iter().map(|p| p.labels).collect();
            (predictor.system().to_string(), preds)
        }
    };
    let report: StratifiedReport = evaluate_corpus(&gold, &predictions)?;
    stdout
        .write_all(render_report(&system, &report).as_bytes())
        .map_err(io_out)?;
    if let Some(out) = &a.out {
        write_atomic(out, report_json(&system, &report).as_bytes())?;
    }
    Ok(())
}
