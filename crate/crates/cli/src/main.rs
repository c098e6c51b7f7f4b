//! `kbqa`: offline build and online answering from the command line.
//!
//! Machine-readable records go to stdout, one JSON object per line; logs go
//! to stderr. Exit codes: 0 success, 2 configuration error, 3 stage failure,
//! 4 some question in a batch went unanswered.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kbqa_core::pipeline::{self, OnlineSystem, PipelineConfig};
use kbqa_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;
const EXIT_UNANSWERED: u8 = 4;

#[derive(Parser)]
#[command(name = "kbqa", version, about = "Template-based question answering over an RDF knowledge base")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the entity index from the dictionary.
    BuildIndex(ConfigArgs),
    /// Generate expanded predicates for entities mentioned in the corpus.
    Expand(ConfigArgs),
    /// Extract observations and learn the predicate model.
    Learn(ConfigArgs),
    /// Answer questions given as arguments or in a batch file.
    Answer {
        #[command(flatten)]
        config: ConfigArgs,
        /// File with one question per line (`-` for stdin).
        #[arg(long)]
        batch: Option<PathBuf>,
        questions: Vec<String>,
    },
    /// Print the best question sequence for each question.
    Decompose {
        #[command(flatten)]
        config: ConfigArgs,
        questions: Vec<String>,
    },
    /// Read questions from stdin, one per line, until end of input.
    Repl(ConfigArgs),
    /// Run every offline stage, then answer any questions given.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        questions: Vec<String>,
    },
}

/// Flags override values from `--config`.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// `key = value` file; relative paths in it resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kb: Option<String>,
    #[arg(long)]
    isa: Option<String>,
    #[arg(long)]
    corpus: Option<String>,
    #[arg(long)]
    predicate_categories: Option<String>,
    #[arg(long)]
    dictionary: Option<String>,
    #[arg(long)]
    context_weights: Option<String>,
    #[arg(long)]
    fixture_overrides: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    index: Option<String>,
    #[arg(long)]
    expansion: Option<String>,
    #[arg(long)]
    report: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    em_max_iters: Option<String>,
    #[arg(long)]
    em_epsilon: Option<String>,
    #[arg(long)]
    name_restriction: Option<String>,
    #[arg(long)]
    max_question_len: Option<String>,
    #[arg(long)]
    max_mention_span: Option<String>,
    #[arg(long)]
    refine: Option<String>,
}

impl ConfigArgs {
    fn flag_pairs(&self) -> Vec<(String, String)> {
        let fields = [
            ("kb", &self.kb),
            ("isa", &self.isa),
            ("corpus", &self.corpus),
            ("predicate-categories", &self.predicate_categories),
            ("dictionary", &self.dictionary),
            ("context-weights", &self.context_weights),
            ("fixture-overrides", &self.fixture_overrides),
            ("model", &self.model),
            ("index", &self.index),
            ("expansion", &self.expansion),
            ("report", &self.report),
            ("k", &self.k),
            ("em-max-iters", &self.em_max_iters),
            ("em-epsilon", &self.em_epsilon),
            ("name-restriction", &self.name_restriction),
            ("max-question-len", &self.max_question_len),
            ("max-mention-span", &self.max_mention_span),
            ("refine", &self.refine),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    fn resolve(&self) -> kbqa_core::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        cfg.apply(&self.flag_pairs(), Path::new(""))?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_STAGE,
    }
}

fn emit<T: serde::Serialize>(out: &mut impl Write, record: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    writeln!(out)
}

fn read_lines(path: &Path) -> std::io::Result<Vec<String>> {
    let reader: Box<dyn BufRead> = if path == Path::new("-") {
        Box::new(std::io::stdin().lock())
    } else {
        Box::new(std::io::BufReader::new(std::fs::File::open(path)?))
    };
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

/// Answers every question; true if all were answered.
fn answer_all(system: &OnlineSystem, questions: &[String], out: &mut impl Write) -> std::io::Result<bool> {
    let mut all = true;
    for q in questions {
        let record = system.answer(q);
        all &= record.is_answered();
        emit(out, &record)?;
    }
    Ok(all)
}

fn run(cli: Cli) -> Result<u8, (u8, String)> {
    let fail = |e: Error| (exit_code(&e), e.to_string());
    let io_fail = |e: std::io::Error| (EXIT_STAGE, e.to_string());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::BuildIndex(args) => {
            let cfg = args.resolve().map_err(fail)?;
            let n = pipeline::run_build_index(&cfg).map_err(fail)?;
            emit(&mut out, &serde_json::json!({ "index_entries": n })).map_err(io_fail)?;
        }
        Command::Expand(args) => {
            let cfg = args.resolve().map_err(fail)?;
            let n = pipeline::run_expand(&cfg).map_err(fail)?;
            emit(&mut out, &serde_json::json!({ "expanded_paths": n })).map_err(io_fail)?;
        }
        Command::Learn(args) => {
            let cfg = args.resolve().map_err(fail)?;
            let report = pipeline::run_learn(&cfg).map_err(fail)?;
            emit(&mut out, &report).map_err(io_fail)?;
        }
        Command::Answer {
            config,
            batch,
            mut questions,
        } => {
            let cfg = config.resolve().map_err(fail)?;
            if let Some(path) = batch {
                questions.extend(read_lines(&path).map_err(|e| (EXIT_CONFIG, format!("{}: {e}", path.display())))?);
            }
            let system = OnlineSystem::load(&cfg).map_err(fail)?;
            if !answer_all(&system, &questions, &mut out).map_err(io_fail)? {
                return Ok(EXIT_UNANSWERED);
            }
        }
        Command::Decompose { config, questions } => {
            let cfg = config.resolve().map_err(fail)?;
            let system = OnlineSystem::load(&cfg).map_err(fail)?;
            for q in &questions {
                let record = system.decompose_record(q).map_err(fail)?;
                emit(&mut out, &record).map_err(io_fail)?;
            }
        }
        Command::Repl(args) => {
            let cfg = args.resolve().map_err(fail)?;
            let system = OnlineSystem::load(&cfg).map_err(fail)?;
            for line in std::io::stdin().lock().lines() {
                let line = line.map_err(io_fail)?;
                if line.trim().is_empty() {
                    continue;
                }
                emit(&mut out, &system.answer(&line)).map_err(io_fail)?;
                out.flush().map_err(io_fail)?;
            }
        }
        Command::Pipeline { config, questions } => {
            let cfg = config.resolve().map_err(fail)?;
            let report = pipeline::run_offline(&cfg).map_err(fail)?;
            log::info!("offline pipeline finished after {} EM iterations", report.iterations);
            if questions.is_empty() {
                emit(&mut out, &report).map_err(io_fail)?;
            } else {
                let system = OnlineSystem::load(&cfg).map_err(fail)?;
                if !answer_all(&system, &questions, &mut out).map_err(io_fail)? {
                    return Ok(EXIT_UNANSWERED);
                }
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err((code, message)) => {
            log::error!("{message}");
            eprintln!("kbqa: {message}");
            ExitCode::from(code)
        }
    }
}
