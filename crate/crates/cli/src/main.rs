use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use biasguard_core::eval::{read_queries, QueryRecord};
use biasguard_core::index::read_corpus;
use biasguard_core::synth::{generate, SyntheticSpec};
use biasguard_core::{
    evaluate, ChatConfig, Config, DetectorConfig, EmbedderSpec, Engine, Error, Index, Mode,
};

/// Exit status for runtime failures.
const EXIT_RUNTIME: u8 = 1;
/// Exit status for usage, configuration and missing-input errors.
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "biasguard", version, about = "Bias-aware source selection for retrieval-augmented answers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a JSONL corpus and write an index snapshot.
    Ingest(IngestArgs),
    /// Answer one query.
    Query(QueryArgs),
    /// Run a query set through one or more modes and write reports.
    Eval(EvalArgs),
    /// Write a synthetic corpus and query set with planted bias.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    NoSelect,
    ZeroShot,
    FewShot,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::NoSelect => Mode::NoSourceSelection,
            ModeArg::ZeroShot => Mode::ZeroShot,
            ModeArg::FewShot => Mode::FewShot,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorKind {
    Lexicon,
    Remote,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML or JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    lambda_penalty: Option<f64>,
    #[arg(long, value_enum)]
    detector: Option<DetectorKind>,
    /// Base URL of the classifier service (remote detector).
    #[arg(long)]
    detector_endpoint: Option<String>,
    /// Chat-completions URL; enables model-backed selection, expansion and writing.
    #[arg(long)]
    chat_endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4o-mini")]
    chat_model: String,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config, Error> {
        let mut config = match &self.config {
            Some(path) => {
                require_file(path)?;
                Config::load(path)?
            }
            None => Config::default(),
        };
        if let Some(k) = self.k {
            config.k = k;
        }
        if let Some(b) = self.beta_min {
            config.beta_min = b;
        }
        if let Some(m) = self.max_retries {
            config.max_retries = m;
        }
        if let Some(l) = self.lambda_penalty {
            config.lambda_penalty = l;
        }
        match (self.detector, &self.detector_endpoint) {
            (Some(DetectorKind::Lexicon), _) => config.detector = DetectorConfig::default(),
            (Some(DetectorKind::Remote), Some(endpoint)) => {
                config.detector = DetectorConfig::Remote {
                    endpoint: endpoint.clone(),
                    timeout_secs: 10,
                }
            }
            (Some(DetectorKind::Remote), None) if !matches!(config.detector, DetectorConfig::Remote { .. }) => {
                return Err(Error::InvalidConfig("--detector remote needs --detector-endpoint".into()))
            }
            _ => {}
        }
        if let Some(endpoint) = &self.chat_endpoint {
            config.chat = Some(ChatConfig::new(endpoint.clone(), self.chat_model.clone()));
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct IngestArgs {
    /// JSONL corpus: {"id": ..., "text": ..., "label": 0|1}.
    corpus: PathBuf,
    /// Where to write the index snapshot.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the hashing embedder.
    #[arg(long)]
    seed: Option<u64>,
    /// Dimension of the hashing embedder.
    #[arg(long)]
    dimension: Option<usize>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    query: String,
    #[arg(long, value_enum, default_value = "zero-shot")]
    mode: ModeArg,
    /// Print the whole outcome, including the event trace, as JSON.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    /// JSONL queries: {"id": ..., "query": ...}.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "no-select,zero-shot,few-shot")]
    modes: Vec<ModeArg>,
    #[arg(long, default_value = "eval-out")]
    out: PathBuf,
    /// Leave latency figures out of the reports so reruns are byte-identical.
    #[arg(long)]
    omit_timing: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    topics: usize,
    /// Fraction of topics whose top document is planted as biased.
    #[arg(long, default_value_t = 1.0)]
    planted: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::Io(_) | Error::InvalidConfig(_) | Error::UnknownMode(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

fn require_file(path: &Path) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(format!("{}: no such file", path.display())))
    }
}

fn ingest(args: IngestArgs) -> Result<(), Failure> {
    require_file(&args.corpus)?;
    let mut spec = match &args.config {
        Some(path) => {
            require_file(path)?;
            Config::load(path)?.embedder
        }
        None => EmbedderSpec::default(),
    };
    if let EmbedderSpec::DeterministicHash { dimension, seed } = &mut spec {
        if let Some(s) = args.seed {
            *seed = s;
        }
        if let Some(d) = args.dimension {
            *dimension = d;
        }
    }
    let records = read_corpus(&args.corpus)?;
    let embedder = spec.build()?;
    let index = Index::ingest(&records, embedder.as_ref())?;
    index.save(&args.out)?;
    println!("ingested {}", index.len());
    Ok(())
}

fn load_engine(index_path: &Path, config: &Config) -> Result<Engine, Failure> {
    require_file(index_path)?;
    let index = Index::load(index_path)?;
    Ok(Engine::from_config(config, index)?)
}

fn query(args: QueryArgs) -> Result<(), Failure> {
    let config = args.config.resolve()?;
    let engine = load_engine(&args.index, &config)?;
    match engine.run(&args.query, args.mode.into()) {
        Ok(out) => {
            if args.trace {
                println!("{}", serde_json::to_string_pretty(&out).expect("outcome serializes"));
            } else {
                let sel = &out.selected;
                println!("answer: {}", out.answer.text);
                println!(
                    "source: {} (relevance {:.4}, bias label {}, bias confidence {:.3})",
                    sel.id,
                    sel.relevance,
                    sel.bias_label().map_or("-".into(), |l| l.as_u8().to_string()),
                    sel.bias_confidence().unwrap_or(f64::NAN),
                );
                println!("retries: {}", out.retries_used);
            }
            Ok(())
        }
        Err(fail) => {
            println!("{}", serde_json::to_string_pretty(&fail).expect("failure serializes"));
            Err(Failure {
                code: EXIT_RUNTIME,
                message: fail.to_string(),
            })
        }
    }
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let config = args.config.resolve()?;
    require_file(&args.queries)?;
    let queries: Vec<QueryRecord> = read_queries(&args.queries)?;
    let engine = load_engine(&args.index, &config)?;
    let mut modes: Vec<Mode> = args.modes.iter().map(|&m| m.into()).collect();
    modes.dedup();
    let workers = args.workers.unwrap_or(config.workers);
    let mut report = evaluate(&engine, &modes, &queries, &config.backend, workers)?;
    if args.omit_timing {
        report = report.without_timing();
    }
    let written = report.write(&args.out)?;
    print!("{}", report.to_table());
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let ds = generate(&SyntheticSpec {
        topics: args.topics,
        planted_fraction: args.planted,
        seed: args.seed,
    });
    std::fs::create_dir_all(&args.out).map_err(Error::from)?;
    let jsonl = |items: Vec<serde_json::Value>| -> String {
        items.into_iter().map(|v| format!("{v}\n")).collect()
    };
    let corpus = jsonl(
        ds.corpus
            .iter()
            .map(|r| json!({"id": r.id, "text": r.text, "label": r.label.map(|l| l.as_u8())}))
            .collect(),
    );
    let queries = jsonl(ds.queries.iter().map(|q| json!({"id": q.id, "query": q.query})).collect());
    std::fs::write(args.out.join("corpus.jsonl"), corpus).map_err(Error::from)?;
    std::fs::write(args.out.join("queries.jsonl"), queries).map_err(Error::from)?;
    println!("wrote {} documents and {} queries to {}", ds.corpus.len(), ds.queries.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
