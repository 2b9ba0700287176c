use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bytespan::corpus::{read_files, read_manifest, read_signal_file, write_signal_file, Document};
use bytespan::eval::{self, MetricReport};
use bytespan::learn::{count_spans_by_language, write_table_dump};
use bytespan::ngram::{train_ngram, DEFAULT_DISCOUNT, DEFAULT_ORDER};
use bytespan::pipeline::{self, Method, TrainConfig};
use bytespan::{ConstraintKind, Error, Mode, NGramByteModel, SignalKind, SignalTrack, Tokenizer, Vocabulary};

/// Learn, apply and evaluate information-driven subword vocabularies.
#[derive(Parser)]
#[command(name = "bytespan", version)]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Produce per-byte surprisal and entropy.
    #[command(subcommand)]
    Signals(SignalsCommand),
    /// Learn a vocabulary.
    Train(TrainArgs),
    /// Tokenise documents into line-delimited id arrays.
    Tokenize(TokenizeArgs),
    /// Turn line-delimited id arrays back into bytes.
    Detokenize(DetokenizeArgs),
    /// Compute intrinsic metrics for a vocabulary.
    Evaluate(EvaluateArgs),
}

#[derive(Subcommand)]
enum SignalsCommand {
    /// Score documents with an n-gram byte model.
    Ngram(NgramArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Line-delimited manifest of {"doc_id", "path", "language"}.
    #[arg(long, conflicts_with = "input")]
    manifest: Option<PathBuf>,
    /// Raw document files, one document each.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Language tag for --input documents.
    #[arg(long, requires = "input")]
    language: Option<String>,
}

impl CorpusArgs {
    fn present(&self) -> bool {
        self.manifest.is_some() || !self.input.is_empty()
    }

    fn load(&self) -> Result<Vec<Document>, Failure> {
        if let Some(m) = &self.manifest {
            Ok(read_manifest(m)?)
        } else if !self.input.is_empty() {
            Ok(read_files(&self.input, self.language.as_deref())?)
        } else {
            Err(Failure::Usage("give --manifest or --input".into()))
        }
    }
}

#[derive(Args)]
struct NgramArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Manifest of the model's training corpus (defaults to the scored corpus).
    #[arg(long, conflicts_with = "model")]
    lm_manifest: Option<PathBuf>,
    /// Load a saved model instead of training one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Save the trained model here.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
    discount: f64,
    /// Signal file to write.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Frequency,
    Incremental,
    SeedBpe,
    Bpe,
    BpeWp,
    Balanced,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Frequency => Method::Frequency,
            MethodArg::Incremental => Method::Incremental,
            MethodArg::SeedBpe => Method::SeedBpe,
            MethodArg::Bpe => Method::Bpe,
            MethodArg::BpeWp => Method::BpeWp,
            MethodArg::Balanced => Method::Balanced,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstraintArg {
    Global,
    Monotonic,
    Combined,
}

impl From<ConstraintArg> for ConstraintKind {
    fn from(c: ConstraintArg) -> Self {
        match c {
            ConstraintArg::Global => ConstraintKind::Global,
            ConstraintArg::Monotonic => ConstraintKind::Monotonic,
            ConstraintArg::Combined => ConstraintKind::Combined,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SignalArg {
    Surprisal,
    Entropy,
}

impl From<SignalArg> for SignalKind {
    fn from(s: SignalArg) -> Self {
        match s {
            SignalArg::Surprisal => SignalKind::Surprisal,
            SignalArg::Entropy => SignalKind::Entropy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    LongestPrefix,
    Bpe,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::LongestPrefix => Mode::LongestPrefix,
            ModeArg::Bpe => Mode::BpeMerges,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Signal file (required for every method except bpe and bpe-wp).
    #[arg(long)]
    signals: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum, default_value = "combined")]
    constraint: ConstraintArg,
    #[arg(long, value_enum, default_value = "surprisal")]
    signal: SignalArg,
    #[arg(long)]
    vocab_size: usize,
    /// Minimum span count.
    #[arg(long, default_value_t = 20)]
    theta_f: u64,
    /// Quantile of the signal that sets the global threshold.
    #[arg(long, default_value_t = 0.30)]
    theta_g_quantile: f64,
    /// Absolute global threshold in bits (overrides the quantile).
    #[arg(long)]
    theta_g: Option<f64>,
    /// Monotonic slack in bits.
    #[arg(long, default_value_t = 0.0)]
    theta_m: f64,
    /// Share of the learned symbols taken from spans by seed-bpe.
    #[arg(long, default_value_t = 0.5)]
    seed_fraction: f64,
    /// Comma-separated thresholds for the incremental method.
    #[arg(long, value_delimiter = ',')]
    schedule: Option<Vec<f64>>,
    /// Also write the span frequency tables here.
    #[arg(long)]
    dump_table: Option<PathBuf>,
    /// Vocabulary file to write.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum, default_value = "longest-prefix")]
    mode: ModeArg,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output file (stdout when absent).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DetokenizeArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Line-delimited id arrays (stdin when absent).
    #[arg(long)]
    ids: Option<PathBuf>,
    /// Output file (stdout when absent). Documents are separated by nothing.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum, default_value = "longest-prefix")]
    mode: ModeArg,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Comma-separated metrics: fertility, renyi, shannon, morph, cognitive,
    /// lengths, overlap; or all (those whose inputs are given).
    #[arg(long, default_value = "all", value_delimiter = ',')]
    metrics: Vec<String>,
    /// Gold segmentation file or directory of *.jsonl files.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Lexical decision file.
    #[arg(long)]
    lexdec: Option<PathBuf>,
    /// Second vocabulary for the overlap metric.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Rényi order.
    #[arg(long, default_value_t = eval::DEFAULT_ALPHA)]
    alpha: f64,
    /// Report file (stdout when absent).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Directory for TSV tables.
    #[arg(long)]
    tsv_dir: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Data(other),
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Data(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_output(path: Option<&Path>, data: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, data).map_err(|e| io_err(p, e)),
        None => io::stdout().write_all(data).map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

#[derive(Serialize)]
struct SignalsMeta<'a> {
    order: usize,
    discount: f64,
    model: Option<&'a Path>,
    lm_corpus_fingerprint: Option<String>,
    corpus_fingerprint: String,
}

fn run_ngram(a: &NgramArgs) -> Result<(), Failure> {
    let docs = a.corpus.load()?;
    let (model, lm_fp) = match (&a.model, &a.lm_manifest) {
        (Some(path), _) => (NGramByteModel::load(path)?, None),
        (None, Some(m)) => {
            let lm_docs = read_manifest(m)?;
            let bytes: Vec<&[u8]> = lm_docs.iter().map(|d| d.bytes.as_slice()).collect();
            let fp = pipeline::documents_fingerprint(&lm_docs);
            (train_ngram(&bytes, a.order, a.discount)?, Some(fp))
        }
        (None, None) => {
            let bytes: Vec<&[u8]> = docs.iter().map(|d| d.bytes.as_slice()).collect();
            (train_ngram(&bytes, a.order, a.discount)?, Some(pipeline::documents_fingerprint(&docs)))
        }
    };
    if let Some(p) = &a.model_out {
        model.save(p)?;
    }
    let tracks: Vec<SignalTrack> = model.score_all(&docs);
    write_signal_file(&tracks, &a.output)?;
    let meta = SignalsMeta {
        order: model.order(),
        discount: model.discount(),
        model: a.model.as_deref(),
        lm_corpus_fingerprint: lm_fp,
        corpus_fingerprint: pipeline::documents_fingerprint(&docs),
    };
    let meta_path = sidecar(&a.output);
    let mut text = serde_json::to_string_pretty(&meta).expect("metadata serialises");
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| io_err(&meta_path, e))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn run_train(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = TrainConfig {
        method: a.method.into(),
        constraint: a.constraint.into(),
        signal: a.signal.into(),
        vocab_size: a.vocab_size,
        theta_f: a.theta_f,
        theta_g_quantile: a.theta_g_quantile,
        theta_g: a.theta_g,
        theta_m: a.theta_m,
        seed_fraction: a.seed_fraction,
        schedule: a.schedule.clone(),
    };
    cfg.validate()?;
    let vocab = match (&a.signals, a.corpus.present()) {
        (Some(_), true) => return Err(Failure::Usage("give either --signals or a corpus, not both".into())),
        (Some(path), false) => {
            let tracks: Vec<SignalTrack> = read_signal_file(path)?;
            if let Some(dump) = &a.dump_table {
                let c = cfg.constraint_for(&tracks)?;
                let tables = count_spans_by_language(&tracks, &c)?;
                let f = fs::File::create(dump).map_err(|e| io_err(dump, e))?;
                write_table_dump(&tables, BufWriter::new(f)).map_err(|e| io_err(dump, e))?;
            }
            pipeline::train(&cfg, &tracks)?
        }
        (None, true) => pipeline::train_documents(&cfg, &a.corpus.load()?)?,
        (None, false) => return Err(Failure::Usage("give --signals or a corpus".into())),
    };
    for w in &vocab.metadata.warnings {
        log::warn!("{w}");
    }
    vocab.save(&a.output)?;
    Ok(())
}

fn run_tokenize(a: &TokenizeArgs) -> Result<(), Failure> {
    let tokenizer = Tokenizer::new(Vocabulary::load(&a.vocab)?);
    let docs = a.corpus.load()?;
    let mode: Mode = a.mode.into();
    use rayon::prelude::*;
    let lines: Vec<String> = docs
        .par_iter()
        .map(|d| serde_json::to_string(&tokenizer.tokenize(&d.bytes, mode)).expect("ids serialise"))
        .collect();
    let mut out = lines.join("\n");
    out.push('\n');
    write_output(a.output.as_deref(), out.as_bytes())
}

fn run_detokenize(a: &DetokenizeArgs) -> Result<(), Failure> {
    let tokenizer = Tokenizer::new(Vocabulary::load(&a.vocab)?);
    let text = match &a.ids {
        Some(p) => fs::read_to_string(p).map_err(|e| io_err(p, e))?,
        None => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| io_err(Path::new("<stdin>"), e))?;
            s
        }
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ids: Vec<u32> = serde_json::from_str(line).map_err(|e| {
            Failure::Data(Error::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })?;
        out.extend(tokenizer.detokenize(&ids)?);
    }
    write_output(a.output.as_deref(), &out)
}

const METRICS: [&str; 7] = ["fertility", "renyi", "shannon", "morph", "cognitive", "lengths", "overlap"];

fn run_evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let mode: Mode = a.mode.into();
    let all = a.metrics.iter().any(|m| m == "all");
    for m in &a.metrics {
        if m != "all" && !METRICS.contains(&m.as_str()) {
            return Err(Failure::Usage(format!("unknown metric {m:?}")));
        }
    }
    let wants = |m: &str| a.metrics.iter().any(|x| x == m);
    let needs_corpus = ["fertility", "renyi", "shannon"].iter().any(|m| wants(m));
    if needs_corpus && !a.corpus.present() {
        return Err(Failure::Usage("fertility, renyi and shannon need a corpus".into()));
    }
    let pick = |m: &str, available: bool| -> Result<bool, Failure> {
        if wants(m) && !available {
            return Err(Failure::Usage(format!("metric {m} needs its input file")));
        }
        Ok(wants(m) || (all && available))
    };
    let with_corpus = a.corpus.present();
    let (do_fert, do_renyi, do_shannon) = (
        pick("fertility", with_corpus)?,
        pick("renyi", with_corpus)?,
        pick("shannon", with_corpus)?,
    );
    let do_morph = pick("morph", a.gold.is_some())?;
    let do_cog = pick("cognitive", a.lexdec.is_some())?;
    let do_lengths = pick("lengths", true)?;
    let do_overlap = pick("overlap", a.compare.is_some())?;

    let mut report = MetricReport {
        vocab_fingerprint: vocab.fingerprint(),
        vocab_size: vocab.len(),
        mode: match mode {
            Mode::LongestPrefix => "longest-prefix",
            Mode::BpeMerges => "bpe",
        }
        .into(),
        alpha: a.alpha,
        ..MetricReport::default()
    };
    let tokenizer = Tokenizer::new(vocab);
    if do_fert || do_renyi || do_shannon {
        let docs = a.corpus.load()?;
        if do_fert {
            report.metrics.insert("fertility".into(), eval::fertility(&tokenizer, &bytes_of(&docs), mode)?);
            let tagged = docs.iter().any(|d| d.language.is_some());
            if tagged {
                for (lang, f) in eval::fertility_by_language(&tokenizer, &docs, mode)? {
                    report.per_language.entry(lang).or_default().insert("fertility".into(), f);
                }
            }
        }
        if do_renyi || do_shannon {
            let counts = eval::token_counts(&tokenizer, &bytes_of(&docs), mode);
            let n = tokenizer.vocab().len();
            if do_renyi {
                report
                    .metrics
                    .insert("renyi_efficiency".into(), eval::renyi_efficiency(&counts, a.alpha, n)?);
            }
            if do_shannon {
                report
                    .metrics
                    .insert("shannon_efficiency".into(), eval::shannon_efficiency(&counts, n)?);
            }
        }
    }
    if do_morph {
        let gold = eval::read_gold_path(a.gold.as_ref().expect("checked"))?;
        let m = eval::morph_alignment(&tokenizer, &gold, mode)?;
        if let Some(f1) = m.macro_f1 {
            report.metrics.insert("morph_f1".into(), f1);
        }
        report.metrics.insert("morph_coverage".into(), m.coverage);
        for (name, r) in m.per_resource {
            let e = report.per_resource.entry(name).or_default();
            if let Some(f1) = r.f1 {
                e.insert("f1".into(), f1);
            }
            e.insert("coverage".into(), r.coverage);
        }
        report.warnings.extend(m.warnings);
    }
    if do_cog {
        let records = eval::read_lexdec_path(a.lexdec.as_ref().expect("checked"))?;
        let p = eval::cognitive_plausibility(&tokenizer, &records, mode)?;
        report.metrics.insert("cognitive_plausibility".into(), p.score);
        report.warnings.extend(p.warnings);
    }
    if do_lengths {
        report.token_lengths = eval::token_length_distribution(tokenizer.vocab());
    }
    if do_overlap {
        let other = Vocabulary::load(a.compare.as_ref().expect("checked"))?;
        report
            .metrics
            .insert("vocab_overlap".into(), eval::vocab_overlap(tokenizer.vocab(), &other));
    }
    if let Some(dir) = &a.tsv_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let lengths = dir.join("token_lengths.tsv");
        fs::write(&lengths, report.length_tsv()).map_err(|e| io_err(&lengths, e))?;
        let langs = dir.join("per_language.tsv");
        fs::write(&langs, report.language_tsv()).map_err(|e| io_err(&langs, e))?;
    }
    write_output(a.output.as_deref(), report.to_json().as_bytes())
}

fn bytes_of(docs: &[Document]) -> Vec<&[u8]> {
    docs.iter().map(|d| d.bytes.as_slice()).collect()
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Signals(SignalsCommand::Ngram(a)) => run_ngram(a),
        Command::Train(a) => run_train(a),
        Command::Tokenize(a) => run_tokenize(a),
        Command::Detokenize(a) => run_detokenize(a),
        Command::Evaluate(a) => run_evaluate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
