//! The `sktod` binary: `analyze`, `eval`, `generate`, `postprocess`,
//! `augment`, and `stats` subcommands over a shared JSON config file.
//!
//! Every subcommand writes machine-readable JSON to stdout (or `--out`)
//! and human diagnostics to stderr. Exit codes: 0 success, 1 validation or
//! config error, 2 partial generation failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::analysis::{self, five_number_summary};
use crate::augment::{self, TravelerTypeMap};
use crate::backend::{
    Backend, HttpBackend, HttpConfig, MockBackend, RecordingBackend, ReplayBackend,
};
use crate::corpus::{
    self, load_dialogues, load_knowledge, DialogueInstance, Entity, Id, KnowledgeBase, Prediction,
};
use crate::metrics::{self, MetricReport};
use crate::pipeline::{self, RunBackends, RunConfig, RunMode};
use crate::prompting;
use crate::sentiment::{self, SentimentLexicon};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("required path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("missing required setting: {0}")]
    MissingSetting(&'static str),
    #[error("failed to read config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Sentiment(#[from] sentiment::SentimentError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Prompt(#[from] prompting::PromptError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Augment(#[from] augment::AugmentError),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Parser)]
#[command(name = "sktod", version, about = "Subjective-knowledge dialogue toolkit")]
struct Cli {
    /// JSON config file with data paths and backend settings
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus analyses: response splits, question statistics, sentiment
    /// distributions, dialogue acts, lengths, and feature correlations
    Analyze(AnalyzeArgs),
    /// Score a predictions file against gold labels
    Eval(EvalArgs),
    /// Run response generation against a backend
    Generate(GenerateArgs),
    /// Post-process a predictions file (strip questions, append the MFQ)
    Postprocess(PostprocessArgs),
    /// Generate synthetic reviews and merge them into the knowledge base
    Augment(AugmentArgs),
    /// Compare an augmented knowledge base against its original
    Stats(StatsArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Optional predictions for per-act metrics and correlations
    #[arg(long)]
    preds: Option<PathBuf>,
    /// Directory for CSV tables (acts, correlations, top questions, lengths)
    #[arg(long)]
    csv_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    preds: PathBuf,
    /// JSON map of metric name -> rank for MRR aggregation
    #[arg(long)]
    ranks: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// plain_completion | plain_chat | cot | cot_fewshot | waterfall
    #[arg(long)]
    mode: String,
    /// http | mock | replay:PATH | record:PATH
    #[arg(long, default_value = "mock")]
    backend: String,
    /// Predictions-schema file supplying target flags and knowledge refs
    #[arg(long)]
    selection_file: Option<PathBuf>,
    /// Print the prompt bundles without calling any backend
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Training split for few-shot selection (defaults to --logs/--labels)
    #[arg(long)]
    train_logs: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    preds: PathBuf,
    /// Append the most frequent question to responses without one
    #[arg(long)]
    append_mfq: bool,
    /// Strip trailing questions from responses
    #[arg(long)]
    strip_questions: bool,
    /// MFQ to append; derived from the labels file when omitted
    #[arg(long)]
    mfq: Option<String>,
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    knowledge: Option<PathBuf>,
    /// http | mock | replay:PATH | record:PATH
    #[arg(long, default_value = "mock")]
    backend: String,
    /// Traveler types requested per entity
    #[arg(long, default_value_t = 5)]
    per_entity_types: usize,
    /// Expected sentences per generated review (deviations are reported)
    #[arg(long, default_value_t = 5)]
    sentences_per_review: usize,
    /// New-domain entities file: {domain: {entity_id: {name, faqs}}}
    #[arg(long)]
    domains_file: Option<PathBuf>,
    /// Merged knowledge file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    augmented: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BackendSettings {
    #[serde(default)]
    endpoint: Option<String>,
    #[serde(default)]
    summariser_model: Option<String>,
    #[serde(default)]
    responder_model: Option<String>,
    #[serde(default)]
    requests_per_minute: Option<u32>,
    #[serde(default)]
    concurrency_bound: Option<usize>,
    #[serde(default)]
    max_tokens: Option<u32>,
}

/// The shared config file. Flags win over file values.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AppConfig {
    #[serde(default)]
    knowledge: Option<PathBuf>,
    #[serde(default)]
    logs: Option<PathBuf>,
    #[serde(default)]
    labels: Option<PathBuf>,
    #[serde(default)]
    train_logs: Option<PathBuf>,
    #[serde(default)]
    train_labels: Option<PathBuf>,
    #[serde(default)]
    lexicon: Option<PathBuf>,
    #[serde(default)]
    traveler_types: Option<PathBuf>,
    #[serde(default)]
    backend: BackendSettings,
}

impl AppConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(AppConfig::default());
        };
        let raw = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&raw).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn lexicon(&self) -> Result<SentimentLexicon, CliError> {
        match &self.lexicon {
            Some(path) => Ok(SentimentLexicon::load(path)?),
            None => Ok(SentimentLexicon::default_lexicon()),
        }
    }

    fn traveler_map(&self) -> Result<TravelerTypeMap, CliError> {
        match &self.traveler_types {
            Some(path) => Ok(TravelerTypeMap::load(path)?),
            None => Ok(TravelerTypeMap::default_map()),
        }
    }

    fn max_tokens(&self) -> u32 {
        self.backend.max_tokens.unwrap_or(prompting::DEFAULT_MAX_TOKENS)
    }

    fn concurrency_bound(&self) -> usize {
        self.backend.concurrency_bound.unwrap_or(4)
    }
}

fn require(path: Option<PathBuf>, setting: &'static str) -> Result<PathBuf, CliError> {
    let path = path.ok_or(CliError::MissingSetting(setting))?;
    if !path.exists() {
        return Err(CliError::MissingPath(path));
    }
    Ok(path)
}

fn require_exists(path: PathBuf) -> Result<PathBuf, CliError> {
    if !path.exists() {
        return Err(CliError::MissingPath(path));
    }
    Ok(path)
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match out {
        Some(path) => std::fs::write(path, body).map_err(|source| CliError::Write {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print to stdout and exit cleanly
            if e.use_stderr() {
                eprint!("{e}");
                return 1;
            }
            print!("{e}");
            return 0;
        }
    };
    let config = match AppConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let outcome = match cli.command {
        Command::Analyze(args) => cmd_analyze(&config, args),
        Command::Eval(args) => cmd_eval(&config, args),
        Command::Generate(args) => cmd_generate(&config, args),
        Command::Postprocess(args) => cmd_postprocess(&config, args),
        Command::Augment(args) => cmd_augment(&config, args),
        Command::Stats(args) => cmd_stats(&config, args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_instances(
    config: &AppConfig,
    logs: Option<PathBuf>,
    labels: Option<PathBuf>,
) -> Result<Vec<DialogueInstance>, CliError> {
    let logs = require(logs.or_else(|| config.logs.clone()), "logs path")?;
    let labels = require(labels.or_else(|| config.labels.clone()), "labels path")?;
    Ok(load_dialogues(logs, Some(labels.as_path()))?)
}

fn gold_responses(instances: &[DialogueInstance]) -> Vec<String> {
    instances
        .iter()
        .filter_map(|i| i.label.as_ref())
        .filter(|l| l.target)
        .map(|l| l.response.clone())
        .collect()
}

fn cmd_analyze(config: &AppConfig, args: AnalyzeArgs) -> Result<i32, CliError> {
    let knowledge = require(
        args.knowledge.or_else(|| config.knowledge.clone()),
        "knowledge path",
    )?;
    let kb = load_knowledge(knowledge)?;
    let instances = load_instances(config, args.logs, args.labels)?;
    let lex = config.lexicon()?;

    let responses = gold_responses(&instances);
    let question_stats = analysis::question_stats(&responses);
    let mfq = analysis::most_frequent_question(&responses).ok();
    let length = analysis::length_stats(&responses);

    // per-dialogue sentiment of selected knowledge vs the response summary
    let mut knowledge_means = Vec::new();
    let mut knowledge_stds = Vec::new();
    let mut summary_scores = Vec::new();
    for inst in &instances {
        let Some(label) = inst.label.as_ref().filter(|l| l.target) else {
            continue;
        };
        let ks = sentiment::dialogue_knowledge_sentiment(&lex, &kb, &label.refs)?;
        knowledge_means.push(ks.mean);
        knowledge_stds.push(ks.std);
        let summary = analysis::split_response(&label.response).summary;
        summary_scores.push(sentiment::score_text(&lex, &summary));
    }
    let knowledge_vs_summary = sentiment::pearson(&knowledge_means, &summary_scores).ok();
    let median_knowledge_std = five_number_summary(&knowledge_stds).map(|f| f.median);

    let predictions = match &args.preds {
        Some(path) => Some(pipeline::ingest_external_predictions(require_exists(
            path.clone(),
        )?)?),
        None => None,
    };
    let acts = analysis::per_act_report(&instances, predictions.as_deref())?;
    let correlations = match &predictions {
        Some(preds) => Some(analysis::feature_correlations(&instances, preds)?),
        None => None,
    };

    let total_question_occurrences: usize = {
        let counted: usize = responses
            .iter()
            .filter(|r| analysis::split_response(r).question.is_some())
            .count();
        counted
    };
    let report = json!({
        "instances": {
            "total": instances.len(),
            "seeking": responses.len(),
        },
        "responses": {
            "length": length,
            "questions": question_stats,
            "mfq": mfq.map(|(question, count)| json!({
                "question": question,
                "count": count,
                "share_of_question_occurrences": if total_question_occurrences > 0 {
                    count as f64 / total_question_occurrences as f64
                } else {
                    0.0
                },
            })),
        },
        "sentiment": {
            "knowledge_mean": five_number_summary(&knowledge_means),
            "knowledge_std": five_number_summary(&knowledge_stds),
            "median_knowledge_std": median_knowledge_std,
            "response_summary": five_number_summary(&summary_scores),
            "knowledge_vs_summary_pearson": knowledge_vs_summary,
        },
        "acts": acts,
        "correlations": correlations,
    });

    if let Some(dir) = &args.csv_dir {
        write_analysis_csvs(dir, &report)?;
    }
    emit(&report, args.out.as_deref())?;
    Ok(0)
}

fn write_analysis_csvs(dir: &Path, report: &serde_json::Value) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let write_err = |path: &Path, e: csv::Error| CliError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };

    let acts_path = dir.join("acts.csv");
    let mut w = csv::Writer::from_path(&acts_path)
        .map_err(|e| write_err(&acts_path, e))?;
    w.write_record([
        "act", "freq", "avg_response_chars", "bleu", "meteor", "rouge1", "rouge2", "rouge_l",
    ])
    .map_err(|e| write_err(&acts_path, e))?;
    for row in report["acts"].as_array().into_iter().flatten() {
        let scores = &row["scores"];
        let field = |k: &str| {
            scores
                .get(k)
                .and_then(serde_json::Value::as_f64)
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default()
        };
        w.write_record([
            row["act"].as_str().unwrap_or_default().to_string(),
            row["freq"].to_string(),
            format!("{:.2}", row["avg_response_chars"].as_f64().unwrap_or(0.0)),
            field("bleu"),
            field("meteor"),
            field("rouge1"),
            field("rouge2"),
            field("rouge_l"),
        ])
        .map_err(|e| write_err(&acts_path, e))?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: acts_path.clone(),
        source,
    })?;

    let q_path = dir.join("top_questions.csv");
    let mut w = csv::Writer::from_path(&q_path).map_err(|e| write_err(&q_path, e))?;
    w.write_record(["question", "count"])
        .map_err(|e| write_err(&q_path, e))?;
    for pair in report["responses"]["questions"]["top_k"]
        .as_array()
        .into_iter()
        .flatten()
    {
        w.write_record([
            pair[0].as_str().unwrap_or_default().to_string(),
            pair[1].to_string(),
        ])
        .map_err(|e| write_err(&q_path, e))?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: q_path.clone(),
        source,
    })?;

    if let Some(correlations) = report["correlations"].as_object() {
        let c_path = dir.join("correlations.csv");
        let mut w = csv::Writer::from_path(&c_path).map_err(|e| write_err(&c_path, e))?;
        let features: Vec<String> = correlations["features"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|f| f.as_str().unwrap_or_default().to_string())
            .collect();
        let mut header = vec!["feature".to_string()];
        header.extend(features.clone());
        w.write_record(&header).map_err(|e| write_err(&c_path, e))?;
        for (i, feature) in features.iter().enumerate() {
            let mut record = vec![feature.clone()];
            for j in 0..features.len() {
                let cell = &correlations["values"][i][j];
                record.push(cell.as_f64().map(|v| format!("{v:.6}")).unwrap_or_default());
            }
            w.write_record(&record).map_err(|e| write_err(&c_path, e))?;
        }
        w.flush().map_err(|source| CliError::Write {
            path: c_path.clone(),
            source,
        })?;
    }

    let l_path = dir.join("lengths.csv");
    let mut w = csv::Writer::from_path(&l_path).map_err(|e| write_err(&l_path, e))?;
    w.write_record(["avg_sentences", "std_sentences", "avg_chars", "std_chars"])
        .map_err(|e| write_err(&l_path, e))?;
    let length = &report["responses"]["length"];
    w.write_record([
        format!("{:.4}", length["avg_sentences"].as_f64().unwrap_or(0.0)),
        format!("{:.4}", length["std_sentences"].as_f64().unwrap_or(0.0)),
        format!("{:.4}", length["avg_chars"].as_f64().unwrap_or(0.0)),
        format!("{:.4}", length["std_chars"].as_f64().unwrap_or(0.0)),
    ])
    .map_err(|e| write_err(&l_path, e))?;
    w.flush().map_err(|source| CliError::Write {
        path: l_path,
        source,
    })?;
    Ok(())
}

fn render_report_table(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(
        "            | detection             | selection                     | generation                                 | total\n",
    );
    out.push_str(
        "            | P      R      F1     | P      R      F1     EM      | BLEU    METEOR  R-1     R-2     R-L       | MRR\n",
    );
    let mrr = report
        .mrr
        .map(|v| format!("{v:.3}"))
        .unwrap_or_else(|| "-".to_string());
    out.push_str(&format!(
        "predictions | {:<6.3} {:<6.3} {:<6.3} | {:<6.3} {:<6.3} {:<6.3} {:<7.3} | {:<7.3} {:<7.3} {:<7.3} {:<7.3} {:<9.3} | {}\n",
        report.detection.precision,
        report.detection.recall,
        report.detection.f1,
        report.selection.prf.precision,
        report.selection.prf.recall,
        report.selection.prf.f1,
        report.selection.em,
        report.generation.bleu,
        report.generation.meteor,
        report.generation.rouge1,
        report.generation.rouge2,
        report.generation.rouge_l,
        mrr
    ));
    out
}

fn cmd_eval(config: &AppConfig, args: EvalArgs) -> Result<i32, CliError> {
    let instances = load_instances(config, args.logs, args.labels)?;
    let preds = pipeline::ingest_external_predictions(require_exists(args.preds)?)?;
    let mut report = metrics::evaluate_all(&instances, &preds)?;
    if let Some(ranks_path) = args.ranks {
        let raw = std::fs::read_to_string(require_exists(ranks_path.clone())?).map_err(
            |source| CliError::Write {
                path: ranks_path.clone(),
                source,
            },
        )?;
        let ranks: BTreeMap<String, usize> =
            serde_json::from_str(&raw).map_err(|e| CliError::Config {
                path: ranks_path,
                message: e.to_string(),
            })?;
        report.mrr = Some(metrics::mrr(&ranks)?);
    }
    eprint!("{}", render_report_table(&report));
    let value = serde_json::to_value(&report).expect("report serializes");
    emit(&value, args.out.as_deref())?;
    Ok(0)
}

fn backend_from_spec(config: &AppConfig, spec: &str) -> Result<Arc<dyn Backend>, CliError> {
    if spec == "mock" {
        return Ok(Arc::new(MockBackend));
    }
    if spec == "http" {
        return Ok(Arc::new(http_backend(config)));
    }
    if let Some(path) = spec.strip_prefix("replay:") {
        return Ok(Arc::new(ReplayBackend::open(require_exists(
            PathBuf::from(path),
        )?)?));
    }
    if let Some(path) = spec.strip_prefix("record:") {
        return Ok(Arc::new(RecordingBackend::new(
            http_backend(config),
            PathBuf::from(path),
        )));
    }
    Err(CliError::Usage(format!(
        "unknown backend \"{spec}\"; use http, mock, replay:PATH, or record:PATH"
    )))
}

fn http_backend(config: &AppConfig) -> HttpBackend {
    let endpoint = config
        .backend
        .endpoint
        .clone()
        .unwrap_or_else(|| "https://api.openai.com/v1".to_string());
    let mut http = HttpConfig::new(endpoint);
    http.requests_per_minute = config.backend.requests_per_minute;
    http.max_concurrent_requests = config.concurrency_bound();
    HttpBackend::new(http)
}

fn run_config(config: &AppConfig, mode: RunMode) -> RunConfig {
    RunConfig {
        mode,
        summariser_model: config
            .backend
            .summariser_model
            .clone()
            .unwrap_or_else(|| "gpt-3.5-turbo-instruct".to_string()),
        responder_model: config
            .backend
            .responder_model
            .clone()
            .unwrap_or_else(|| "gpt-3.5-turbo".to_string()),
        max_tokens: config.max_tokens(),
        concurrency_bound: config.concurrency_bound(),
    }
}

fn cmd_generate(config: &AppConfig, args: GenerateArgs) -> Result<i32, CliError> {
    let mode = RunMode::parse(&args.mode).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown mode \"{}\"; use plain_completion, plain_chat, cot, cot_fewshot, or waterfall",
            args.mode
        ))
    })?;
    let knowledge = require(
        args.knowledge.or_else(|| config.knowledge.clone()),
        "knowledge path",
    )?;
    let kb = load_knowledge(knowledge)?;
    let logs = require(args.logs.or_else(|| config.logs.clone()), "logs path")?;
    let labels = args
        .labels
        .or_else(|| config.labels.clone())
        .map(require_exists)
        .transpose()?;
    let instances = load_dialogues(logs, labels.as_deref())?;

    let selection = match args.selection_file {
        Some(p) => Some(pipeline::ingest_external_predictions(require_exists(p)?)?),
        None => None,
    };

    let few_shot = if mode == RunMode::CotFewshot {
        let train_logs = require(
            args.train_logs
                .or_else(|| config.train_logs.clone())
                .or_else(|| config.logs.clone()),
            "train logs path",
        )?;
        let train_labels = require(
            args.train_labels
                .or_else(|| config.train_labels.clone())
                .or_else(|| config.labels.clone()),
            "train labels path",
        )?;
        let train = load_dialogues(train_logs, Some(train_labels.as_path()))?;
        let lex = config.lexicon()?;
        prompting::select_few_shot(&train, &lex, &kb, 3)?
    } else {
        Vec::new()
    };

    let cfg = run_config(config, mode);
    if args.dry_run {
        return dry_run(&instances, &kb, &cfg, &few_shot, selection.as_deref(), args.out);
    }

    let backend = backend_from_spec(config, &args.backend)?;
    let backends = RunBackends::single(backend);
    let (preds, stats) =
        pipeline::run_generation(&instances, &kb, &backends, &cfg, &few_shot, selection.as_deref())?;

    match &args.out {
        Some(path) => corpus::write_predictions(&preds, path)?,
        None => {
            let value = serde_json::to_value(&preds).expect("predictions serialize");
            emit(&value, None)?;
        }
    }
    eprintln!(
        "generated {} predictions ({} seeking); {} truncated calls, {} degraded, {} failed",
        preds.len(),
        preds.iter().filter(|p| p.target).count(),
        stats.truncated_count,
        stats.degraded_count,
        stats.failures.len()
    );
    for failure in &stats.failures {
        eprintln!("  instance {}: {}", failure.id, failure.message);
    }
    Ok(if stats.failures.is_empty() { 0 } else { 2 })
}

fn dry_run(
    instances: &[DialogueInstance],
    kb: &KnowledgeBase,
    cfg: &RunConfig,
    few_shot: &[prompting::FewShotExample],
    selection: Option<&[Prediction]>,
    out: Option<PathBuf>,
) -> Result<i32, CliError> {
    let mut bundles = Vec::new();
    for inst in instances {
        let (target, refs) = match selection {
            Some(sel) => {
                let p = sel.get(inst.id).ok_or(CliError::Usage(
                    "selection file shorter than instance list".to_string(),
                ))?;
                (p.target, p.refs.clone())
            }
            None => match &inst.label {
                Some(l) => (l.target, l.refs.clone()),
                None => {
                    return Err(CliError::Usage(format!(
                        "instance {} has no label; provide --selection-file",
                        inst.id
                    )))
                }
            },
        };
        if !target {
            continue;
        }
        let snippets = corpus::resolve_refs(kb, &refs)?;
        let knowledge_text = prompting::format_knowledge(&snippets);
        let bundle = match cfg.mode {
            RunMode::PlainCompletion => {
                prompting::build_completion_prompt(inst, &knowledge_text, cfg.max_tokens)
            }
            RunMode::PlainChat => {
                prompting::build_chat_messages(inst, &knowledge_text, cfg.max_tokens)?
            }
            RunMode::Cot => prompting::build_cot_messages(inst, &knowledge_text, &[], cfg.max_tokens),
            RunMode::CotFewshot => {
                prompting::build_cot_messages(inst, &knowledge_text, few_shot, cfg.max_tokens)
            }
            RunMode::Waterfall => {
                let faqs: Vec<_> = snippets
                    .iter()
                    .filter(|s| s.kind == corpus::SnippetKind::Faq)
                    .cloned()
                    .collect();
                let reviews: Vec<_> = snippets
                    .iter()
                    .filter(|s| s.kind == corpus::SnippetKind::Review)
                    .cloned()
                    .collect();
                prompting::build_summarisation_prompt(&faqs, &reviews, cfg.max_tokens)
            }
        };
        bundles.push(json!({"id": inst.id, "bundle": bundle}));
    }
    emit(&serde_json::Value::Array(bundles), out.as_deref())?;
    Ok(0)
}

fn cmd_postprocess(config: &AppConfig, args: PostprocessArgs) -> Result<i32, CliError> {
    if !args.append_mfq && !args.strip_questions {
        return Err(CliError::Usage(
            "nothing to do: pass --append-mfq and/or --strip-questions".to_string(),
        ));
    }
    let mut preds = pipeline::ingest_external_predictions(require_exists(args.preds)?)?;
    if args.strip_questions {
        preds = pipeline::postprocess_strip_questions(&preds);
    }
    if args.append_mfq {
        let mfq = match args.mfq {
            Some(mfq) => mfq,
            None => {
                let instances = load_instances(config, args.logs, args.labels)?;
                let responses = gold_responses(&instances);
                analysis::most_frequent_question(&responses)?.0
            }
        };
        if !mfq.ends_with('?') {
            return Err(CliError::Usage(format!(
                "the MFQ must end with '?': \"{mfq}\""
            )));
        }
        preds = pipeline::postprocess_append_mfq(&preds, &mfq);
        eprintln!("appended MFQ: {mfq}");
    }
    match &args.out {
        Some(path) => corpus::write_predictions(&preds, path)?,
        None => emit(
            &serde_json::to_value(&preds).expect("predictions serialize"),
            None,
        )?,
    }
    Ok(0)
}

#[derive(Deserialize)]
struct DomainEntityWire {
    name: String,
    faqs: BTreeMap<Id, corpus::Faq>,
}

fn cmd_augment(config: &AppConfig, args: AugmentArgs) -> Result<i32, CliError> {
    let knowledge = require(
        args.knowledge.or_else(|| config.knowledge.clone()),
        "knowledge path",
    )?;
    let kb = load_knowledge(knowledge)?;
    let backend = backend_from_spec(config, &args.backend)?;
    let type_map = config.traveler_map()?;
    let model = config
        .backend
        .responder_model
        .clone()
        .unwrap_or_else(|| "gpt-3.5-turbo".to_string());
    let max_tokens = config.max_tokens();

    let mut extra = KnowledgeBase::default();
    let mut reviews_added = 0usize;
    let mut unknown_types: Vec<String> = Vec::new();
    let mut sentence_count_deviations = 0usize;
    let mut failures: Vec<String> = Vec::new();

    for (domain, entities) in &kb.domains {
        for (entity_id, entity) in entities {
            let at = format!("{domain}/{entity_id}");
            let outcome = (|| -> Result<BTreeMap<Id, corpus::Review>, CliError> {
                let bundle = augment::build_review_prompt(entity, args.per_entity_types, max_tokens)?;
                let start_id = entity
                    .reviews
                    .keys()
                    .filter_map(Id::as_number)
                    .max()
                    .map_or(0, |m| m + 1);
                let result = backend.generate(&crate::backend::GenerationRequest::new(
                    bundle,
                    model.clone(),
                ))?;
                Ok(augment::parse_generated_reviews(&result.text, start_id)?)
            })();
            match outcome {
                Ok(parsed) => {
                    let (normalized, unknown) = augment::normalize_traveler_types(&parsed, &type_map);
                    for t in unknown {
                        if !unknown_types.contains(&t) {
                            unknown_types.push(t);
                        }
                    }
                    sentence_count_deviations += normalized
                        .values()
                        .filter(|r| r.sentences.len() != args.sentences_per_review)
                        .count();
                    reviews_added += normalized.len();
                    extra
                        .domains
                        .entry(domain.clone())
                        .or_default()
                        .insert(
                            entity_id.clone(),
                            Entity {
                                name: entity.name.clone(),
                                reviews: normalized,
                                faqs: BTreeMap::new(),
                            },
                        );
                }
                Err(e) => failures.push(format!("{at}: {e}")),
            }
        }
    }

    if let Some(domains_file) = args.domains_file {
        let path = require_exists(domains_file)?;
        let raw = std::fs::read_to_string(&path).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        let new_domains: BTreeMap<String, BTreeMap<Id, DomainEntityWire>> =
            serde_json::from_str(&raw).map_err(|e| CliError::Config {
                path: path.clone(),
                message: e.to_string(),
            })?;
        for (domain, entities) in new_domains {
            for (entity_id, wire) in entities {
                let at = format!("{domain}/{entity_id}");
                let outcome = (|| -> Result<BTreeMap<Id, corpus::Review>, CliError> {
                    let bundle =
                        augment::build_domain_review_prompt(&wire.name, &wire.faqs, max_tokens)?;
                    let result = backend.generate(&crate::backend::GenerationRequest::new(
                        bundle,
                        model.clone(),
                    ))?;
                    Ok(augment::parse_typed_review_lines(&result.text))
                })();
                match outcome {
                    Ok(parsed) => {
                        let (normalized, unknown) =
                            augment::normalize_traveler_types(&parsed, &type_map);
                        for t in unknown {
                            if !unknown_types.contains(&t) {
                                unknown_types.push(t);
                            }
                        }
                        reviews_added += normalized.len();
                        extra.domains.entry(domain.clone()).or_default().insert(
                            entity_id,
                            Entity {
                                name: wire.name,
                                reviews: normalized,
                                faqs: wire.faqs,
                            },
                        );
                    }
                    Err(e) => failures.push(format!("{at}: {e}")),
                }
            }
        }
    }

    let merged = corpus::merge_knowledge(kb.clone(), extra)?;
    corpus::write_knowledge(&merged, &args.out)?;
    let stats = augment::augmentation_stats(&kb, &merged)?;

    let report = json!({
        "reviews_added": reviews_added,
        "entities_failed": failures.len(),
        "failures": failures,
        "unknown_traveler_types": unknown_types,
        "sentence_count_deviations": sentence_count_deviations,
        "stats": stats,
        "out": args.out,
    });
    emit(&report, None)?;
    Ok(if failures.is_empty() { 0 } else { 2 })
}

fn cmd_stats(_config: &AppConfig, args: StatsArgs) -> Result<i32, CliError> {
    let original = load_knowledge(require_exists(args.original)?)?;
    let augmented = load_knowledge(require_exists(args.augmented)?)?;
    let stats = augment::augmentation_stats(&original, &augmented)?;
    emit(
        &serde_json::to_value(&stats).expect("stats serialize"),
        args.out.as_deref(),
    )?;
    Ok(0)
}
