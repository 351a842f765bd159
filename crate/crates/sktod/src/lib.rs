//! Toolkit for task-oriented dialogue grounded in subjective knowledge
//! (user reviews and FAQs about hotels, restaurants, and similar entities).
//!
//! The crate covers the full loop of a knowledge-grounded response
//! generation system:
//!
//! - [`corpus`] — load/validate/merge the knowledge base, dialogue logs,
//!   labels, and prediction files, and resolve knowledge references.
//! - [`sentiment`] — lexicon-based sentence sentiment with negation
//!   handling, per-dialogue aggregates, and Pearson correlation.
//! - [`analysis`] — response summary/question splitting, question
//!   statistics (including the most frequent question), heuristic
//!   dialogue-act tagging, feature correlations, and length statistics.
//! - [`metrics`] — self-contained BLEU, METEOR, ROUGE-1/2/L, detection and
//!   selection P/R/F1/EM, and MRR.
//! - [`prompting`] — deterministic construction of every prompt variant
//!   (completion, chat, chain-of-thought, summarisation, waterfall) plus
//!   statistical few-shot example selection.
//! - [`backend`] — pluggable generation backends: HTTP (OpenAI-style),
//!   deterministic mock, and record/replay cassettes.
//! - [`pipeline`] — end-to-end generation orchestration, chain-of-thought
//!   output parsing, and response post-processors.
//! - [`augment`] — synthetic review generation prompts, tolerant parsing
//!   of model output, traveler-type normalization, and merge statistics.
//! - [`cli`] — the `sktod` binary: `analyze`, `eval`, `generate`,
//!   `postprocess`, `augment`, and `stats` subcommands.
//!
//! Each major capability has a runnable example under `examples/`; start
//! with `cargo run --example score_predictions -p sktod`.

pub mod analysis;
pub mod augment;
pub mod backend;
pub mod cli;
pub mod corpus;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod sentiment;

mod stem;
