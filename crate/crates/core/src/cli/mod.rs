//! Batch commands: `train`, `generate`, `evaluate`, `gradcheck`, `make-toy`.
//!
//! [`run`] is the whole program minus process setup, so it can be driven from
//! tests with in-memory streams.

pub mod archive;
pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

pub use archive::{ModelArchive, FORMAT_VERSION};
pub use config::{RunConfig, KEYS};

use crate::corpus::{generate_toy_corpus, tokenize_question, ParallelCorpus};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckConfig, GradCheckReport};
use crate::pipeline::{
    evaluate_exact_match, evaluate_retrieval, train_full, ExactMatchReport, TrainReport,
};

#[derive(Debug, Parser)]
#[command(
    name = "semparse",
    version,
    about = "Train and run a two-stage neural semantic parser"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a TSV corpus and write a model archive and metrics report
    Train(Settings),
    /// Read one question per line and print `query<TAB>log_prob`
    Generate {
        #[command(flatten)]
        settings: Settings,
        /// Questions file; stdin when omitted
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Exact-match evaluation of a model on a TSV corpus
    Evaluate(Settings),
    /// Finite-difference check of every analytic gradient
    Gradcheck(GradcheckArgs),
    /// Write a synthetic question/query corpus as TSV
    MakeToy(MakeToyArgs),
}

/// Flags mirror the config keys; a flag overrides the same key in `--config`.
#[derive(Debug, Args)]
struct Settings {
    /// `key = value` config file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Any config key, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_name = "PATH")]
    corpus: Option<String>,
    #[arg(long, value_name = "PATH")]
    model: Option<String>,
    #[arg(long, value_name = "PATH")]
    report: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    margin: Option<String>,
    #[arg(long = "noise-k")]
    noise_k: Option<String>,
    #[arg(long)]
    l2: Option<String>,
    #[arg(long = "bicvm-lr")]
    bicvm_lr: Option<String>,
    #[arg(long = "bicvm-epochs")]
    bicvm_epochs: Option<String>,
    #[arg(long = "context-n")]
    context_n: Option<String>,
    #[arg(long = "cnlm-lr")]
    cnlm_lr: Option<String>,
    #[arg(long = "cnlm-epochs")]
    cnlm_epochs: Option<String>,
    #[arg(long = "init-scale")]
    init_scale: Option<String>,
    #[arg(long = "compose-question")]
    compose_question: Option<String>,
    #[arg(long = "compose-query")]
    compose_query: Option<String>,
    #[arg(long)]
    decode: Option<String>,
    /// Beam width
    #[arg(long)]
    beam: Option<String>,
    #[arg(long = "max-len")]
    max_len: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    autoencoder: Option<String>,
    #[arg(long = "init-r-from-dr", num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    init_r_from_dr: Option<String>,
    #[arg(long = "min-count")]
    min_count: Option<String>,
    #[arg(long = "pretrained-question", value_name = "PATH")]
    pretrained_question: Option<String>,
    #[arg(long = "pretrained-query", value_name = "PATH")]
    pretrained_query: Option<String>,
}

impl Settings {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            config.set(k.trim(), v)?;
        }
        let flags: [(&str, &Option<String>); 25] = [
            ("corpus", &self.corpus),
            ("model", &self.model),
            ("report", &self.report),
            ("seed", &self.seed),
            ("dim", &self.dim),
            ("margin", &self.margin),
            ("noise_k", &self.noise_k),
            ("l2", &self.l2),
            ("bicvm_lr", &self.bicvm_lr),
            ("bicvm_epochs", &self.bicvm_epochs),
            ("context_n", &self.context_n),
            ("cnlm_lr", &self.cnlm_lr),
            ("cnlm_epochs", &self.cnlm_epochs),
            ("init_scale", &self.init_scale),
            ("compose_question", &self.compose_question),
            ("compose_query", &self.compose_query),
            ("decode", &self.decode),
            ("beam", &self.beam),
            ("max_len", &self.max_len),
            ("rounds", &self.rounds),
            ("autoencoder", &self.autoencoder),
            ("init_r_from_dr", &self.init_r_from_dr),
            ("min_count", &self.min_count),
            ("pretrained_question", &self.pretrained_question),
            ("pretrained_query", &self.pretrained_query),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-dim", default_value_t = 8)]
    max_dim: usize,
    /// Including the four reserved tokens
    #[arg(long = "max-vocab", default_value_t = 12)]
    max_vocab: usize,
    #[arg(long, default_value_t = gradcheck::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = crate::numerics::FD_EPSILON)]
    epsilon: f64,
    /// Test fixture: perturb one class's analytic gradient
    #[arg(long, hide = true, value_name = "CLASS")]
    corrupt: Option<String>,
}

#[derive(Debug, Args)]
struct MakeToyArgs {
    #[arg(long, default_value_t = 5)]
    entities: usize,
    #[arg(long, default_value_t = 4)]
    relations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output TSV; stdout when omitted
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command. Returns the exit
/// code: 0 on success, 1 on failure, 2 on a usage error.
pub fn run<I, T>(
    args: I,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    match dispatch(cli.command, stdin, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn dispatch(
    command: Command,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32> {
    match command {
        Command::Train(settings) => {
            let config = settings.resolve()?;
            let outcome = cmd_train(&config)?;
            for issue in &outcome.warnings {
                writeln!(stderr, "warning: {issue}")?;
            }
            if config.report.is_none() {
                stdout.write_all(outcome.report.as_bytes())?;
            }
        }
        Command::Generate { settings, input } => {
            let config = settings.resolve()?;
            let archive = load_for_use(&config)?;
            match input {
                Some(path) => {
                    let file = std::fs::File::open(&path).map_err(Error::file(&path))?;
                    cmd_generate(&archive, std::io::BufReader::new(file), stdout)?;
                }
                None => cmd_generate(&archive, stdin, stdout)?,
            }
        }
        Command::Evaluate(settings) => {
            let config = settings.resolve()?;
            let archive = load_for_use(&config)?;
            let (test, _) = ParallelCorpus::load(config.require_corpus()?)?;
            let text = cmd_evaluate(&archive, &test)?;
            stdout.write_all(text.as_bytes())?;
        }
        Command::Gradcheck(args) => {
            let report = cmd_gradcheck(&GradCheckConfig {
                instances: args.instances,
                seed: args.seed,
                max_dim: args.max_dim,
                max_vocab: args.max_vocab,
                epsilon: args.epsilon,
                threshold: args.threshold,
                corrupt: args.corrupt,
            })?;
            stdout.write_all(report.render().as_bytes())?;
            if !report.passed() {
                writeln!(
                    stderr,
                    "error: gradient check failed, worst relative error {:e}",
                    report.worst()
                )?;
                return Ok(1);
            }
        }
        Command::MakeToy(args) => {
            let corpus = generate_toy_corpus(args.entities, args.relations, args.seed)?;
            match args.out {
                Some(path) => std::fs::write(&path, corpus.to_tsv()).map_err(Error::file(&path))?,
                None => stdout.write_all(corpus.to_tsv().as_bytes())?,
            }
        }
    }
    Ok(0)
}

/// What [`cmd_train`] produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub archive: ModelArchive,
    pub train_report: TrainReport,
    /// Rendered metrics report; also written to `report` when configured.
    pub report: String,
    /// Corpus diagnostics worth surfacing.
    pub warnings: Vec<String>,
}

/// Trains on `corpus`, writes the archive to `model` and the metrics report
/// to `report` when set.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let corpus_path = config.require_corpus()?;
    let model_path = config.require_model()?;
    config.train.validate()?;
    let (corpus, load) = ParallelCorpus::load(corpus_path)?;
    let mut warnings: Vec<String> = load
        .malformed
        .iter()
        .map(|i| {
            format!(
                "{}:{}: skipped: {}",
                corpus_path.display(),
                i.line,
                i.message
            )
        })
        .collect();
    warnings.extend(load.unbalanced.iter().map(|l| {
        format!(
            "{}:{}: unbalanced parentheses in query",
            corpus_path.display(),
            l
        )
    }));
    let (parser, train_report) = train_full(&corpus, &config.train)?;
    let archive = ModelArchive::new(parser, config, corpus.content_hash());
    archive.save(model_path)?;

    let body = render_train_report(&archive, &train_report, corpus.len(), load.malformed.len());
    let started_unix = started
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let report = format!(
        "# semparse train report started_unix={started_unix} wall_time_s={:.3}\n{body}",
        clock.elapsed().as_secs_f64()
    );
    if let Some(path) = &config.report {
        std::fs::write(path, &report).map_err(Error::file(path))?;
    }
    Ok(TrainOutcome {
        archive,
        train_report,
        report,
        warnings,
    })
}

/// Report body after the header line; fully determined by config and seed.
fn render_train_report(
    archive: &ModelArchive,
    report: &TrainReport,
    pairs: usize,
    skipped: usize,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "corpus_sha256 {}", archive.corpus_sha256);
    let _ = writeln!(out, "pairs {pairs}");
    let _ = writeln!(out, "skipped_lines {skipped}");
    let _ = writeln!(
        out,
        "question_vocab {}",
        archive.parser.question.table.vocab().len()
    );
    let _ = writeln!(out, "query_vocab {}", archive.parser.cnlm.vocab_size());
    out.push_str(&archive.config.render(config::MODEL_KEYS));
    for which in [
        ("question", &report.pretrained_question),
        ("query", &report.pretrained_query),
    ] {
        if let (name, Some(p)) = which {
            let _ = writeln!(
                out,
                "pretrained_{name} replaced={} skipped={}",
                p.replaced, p.skipped
            );
        }
    }
    for (r, round) in report.rounds.iter().enumerate() {
        let _ = writeln!(out, "round {}", r + 1);
        for (e, h) in round.bicvm_trace.iter().enumerate() {
            let _ = writeln!(out, "bicvm_epoch {} mean_hinge {h}", e + 1);
        }
        for (e, nll) in round.cnlm_trace.iter().enumerate() {
            let _ = writeln!(out, "cnlm_epoch {} mean_nll {nll}", e + 1);
        }
        match round.retrieval_accuracy {
            Some(a) => {
                let _ = writeln!(out, "retrieval_accuracy {a}");
            }
            None => out.push_str("retrieval_accuracy n/a\n"),
        }
    }
    let show = |x: Option<f64>| x.map_or("n/a".to_string(), |v| v.to_string());
    let _ = writeln!(out, "final_hinge {}", show(report.final_hinge()));
    let _ = writeln!(out, "final_nll {}", show(report.final_nll()));
    let _ = writeln!(out, "final_retrieval {}", show(report.final_retrieval()));
    out
}

/// Loads `model` and applies decode overrides. A `dim` or `context_n` set
/// explicitly in the config must agree with the archive.
pub fn load_for_use(config: &RunConfig) -> Result<ModelArchive> {
    let mut archive = ModelArchive::load(config.require_model()?)?;
    check_against(&archive, config)?;
    let decode = &mut archive.parser.decode;
    if config.is_explicit("decode") {
        decode.strategy = config.train.decode.strategy;
    }
    if config.is_explicit("beam") {
        decode.width = config.train.decode.width;
    }
    if config.is_explicit("max_len") {
        decode.max_len = config.train.decode.max_len;
    }
    if decode.width == 0 || decode.max_len == 0 {
        return Err(Error::Config("beam and max_len must be >= 1".into()));
    }
    Ok(archive)
}

fn check_against(archive: &ModelArchive, config: &RunConfig) -> Result<()> {
    if config.is_explicit("dim") && config.train.bicvm.dim != archive.parser.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.train.bicvm.dim,
            actual: archive.parser.dim(),
        });
    }
    if config.is_explicit("context_n") && config.train.cnlm.context != archive.parser.cnlm.order() {
        return Err(Error::DimensionMismatch {
            expected: config.train.cnlm.context,
            actual: archive.parser.cnlm.order(),
        });
    }
    Ok(())
}

/// One output line per input line: query tokens, TAB, log probability.
/// Lines with no question tokens produce an empty line.
pub fn cmd_generate<R: BufRead, W: Write + ?Sized>(
    archive: &ModelArchive,
    input: R,
    out: &mut W,
) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        let tokens = tokenize_question(&line);
        if tokens.is_empty() {
            log::warn!("empty question line; writing an empty result");
            writeln!(out)?;
            continue;
        }
        let g = archive.parser.generate(&tokens)?;
        writeln!(out, "{}\t{}", g.query.join(" "), g.log_prob)?;
    }
    out.flush()?;
    Ok(())
}

/// Exact-match rate followed by one line per pair.
pub fn cmd_evaluate(archive: &ModelArchive, test: &ParallelCorpus) -> Result<String> {
    let report = evaluate_exact_match(&archive.parser, test)?;
    let mut out = render_evaluation(&report);
    if let Some(bicvm) = archive.parser.bicvm() {
        if test.len() >= 2 {
            let encoded = test.encode(bicvm.question.table.vocab(), bicvm.query.table.vocab());
            let _ = writeln!(
                out,
                "retrieval_accuracy {}",
                evaluate_retrieval(&bicvm, &encoded)?
            );
        }
    }
    Ok(out)
}

fn render_evaluation(report: &ExactMatchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "exact_match_rate {}", report.rate);
    let _ = writeln!(out, "matches {}/{}", report.matches, report.outcomes.len());
    for o in &report.outcomes {
        let status = if o.matched { "ok" } else { "diff" };
        let _ = writeln!(
            out,
            "{status}\t{}\tgold: {}\tgot: {}\t{}",
            o.question.join(" "),
            o.gold.join(" "),
            o.predicted.join(" "),
            o.log_prob
        );
    }
    out
}

pub fn cmd_gradcheck(config: &GradCheckConfig) -> Result<GradCheckReport> {
    gradcheck::run(config)
}
