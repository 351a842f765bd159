//! End-to-end generation orchestration: plain, chain-of-thought (with or
//! without examples), and two-model waterfall runs, plus chain-of-thought
//! output parsing and the question post-processors.
//!
//! Instances are processed concurrently up to a configured bound, but the
//! prediction list always comes back complete and in instance order, and
//! aggregation never depends on scheduling. Backend failures are recorded
//! per instance and the run continues.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::split_response;
use crate::backend::{Backend, BackendError, GenerationRequest, GenerationResult};
use crate::corpus::{
    self, CorpusError, DialogueInstance, KnowledgeBase, KnowledgeRef, Prediction, Snippet,
    SnippetKind,
};
use crate::prompting::{
    build_chat_messages, build_completion_prompt, build_cot_messages, build_summarisation_prompt,
    build_waterfall_messages, format_knowledge, FewShotExample, PromptError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("selection file does not align with instances: {selections} entries vs {instances} instances")]
    SelectionMisaligned { selections: usize, instances: usize },
    #[error("instance {id} has no label and no selection entry; provide a selection file")]
    NoSelectionSource { id: usize },
    #[error("invalid run config: {0}")]
    Config(String),
}

/// Generation mode for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    PlainCompletion,
    PlainChat,
    Cot,
    CotFewshot,
    Waterfall,
}

impl RunMode {
    pub fn parse(s: &str) -> Option<RunMode> {
        match s {
            "plain_completion" => Some(RunMode::PlainCompletion),
            "plain_chat" => Some(RunMode::PlainChat),
            "cot" => Some(RunMode::Cot),
            "cot_fewshot" => Some(RunMode::CotFewshot),
            "waterfall" => Some(RunMode::Waterfall),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub summariser_model: String,
    pub responder_model: String,
    pub max_tokens: u32,
    pub concurrency_bound: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.responder_model.trim().is_empty() {
            return Err(PipelineError::Config(
                "responder model name is empty".to_string(),
            ));
        }
        if self.mode == RunMode::Waterfall && self.summariser_model.trim().is_empty() {
            return Err(PipelineError::Config(
                "waterfall mode needs both a summariser and a responder model".to_string(),
            ));
        }
        Ok(())
    }
}

/// The backends a run draws from. Single-model modes only use `responder`;
/// waterfall sends the summarisation step to `summariser`.
#[derive(Clone)]
pub struct RunBackends {
    pub summariser: Arc<dyn Backend>,
    pub responder: Arc<dyn Backend>,
}

impl RunBackends {
    pub fn single(backend: Arc<dyn Backend>) -> Self {
        RunBackends {
            summariser: backend.clone(),
            responder: backend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub id: usize,
    pub message: String,
}

/// Aggregated run outcome, independent of scheduling order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    /// Number of backend calls the provider stopped for length.
    pub truncated_count: usize,
    /// Instances that fell back to formatted knowledge (empty summariser
    /// output in waterfall mode).
    pub degraded_count: usize,
    pub failures: Vec<RunFailure>,
}

/// Parsed chain-of-thought output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotParse {
    pub summary: String,
    pub follow_up: Option<String>,
    pub final_response: String,
}

/// Drops a leading step label like `summary:` / `follow-up:` / `final:`
/// (or a bare colon) from a marker segment.
fn strip_marker_label(segment: &str, labels: &[&str]) -> String {
    let s = segment.trim_start();
    let lower = s.to_lowercase();
    for label in labels {
        if lower.starts_with(label) {
            let after = s[label.len()..].trim_start();
            let after = after.strip_prefix(':').unwrap_or(after);
            return after.trim().to_string();
        }
    }
    let s = s.strip_prefix(':').unwrap_or(s);
    s.trim().to_string()
}

/// Recovers the summary, follow-up, and final response from stepped model
/// output. Degenerate input falls back to the whole trimmed text; a missing
/// or empty final segment falls back to "summary follow-up" joined by one
/// space. The final response is non-empty whenever the input is.
pub fn parse_cot_output(text: &str) -> CotParse {
    let trimmed = text.trim();
    let pos2 = text.find("(2)");
    let pos3 = text.find("(3)").filter(|&p3| pos2.is_none_or(|p2| p3 > p2));

    let summary = {
        let region = match pos2.or(pos3) {
            Some(p) => &text[..p],
            None => text,
        };
        let region = region.trim();
        let region = match region.strip_prefix("(1)") {
            Some(rest) => strip_marker_label(rest, &["summary"]),
            None => region.to_string(),
        };
        region.trim().to_string()
    };

    let follow_up = pos2.map(|p2| {
        let after = &text[p2 + 3..];
        let segment = match pos3 {
            Some(p3) => &text[p2 + 3..p3],
            None => after,
        };
        strip_marker_label(segment, &["follow-up", "follow up", "followup"])
    });
    let follow_up = follow_up.filter(|q| !q.is_empty());

    let final_from_marker = pos3.map(|p3| {
        strip_marker_label(
            &text[p3 + 3..],
            &["final response", "final answer", "final"],
        )
    });

    let mut final_response = final_from_marker.unwrap_or_default();
    if final_response.is_empty() {
        final_response = match &follow_up {
            Some(q) if summary.is_empty() => q.clone(),
            Some(q) => format!("{summary} {q}"),
            None => summary.clone(),
        };
    }
    if final_response.is_empty() {
        final_response = trimmed.to_string();
    }

    CotParse {
        summary: if summary.is_empty() && pos2.is_none() && pos3.is_none() {
            trimmed.to_string()
        } else {
            summary
        },
        follow_up,
        final_response,
    }
}

fn partition_snippets(snippets: &[Snippet]) -> (Vec<Snippet>, Vec<Snippet>) {
    let faqs = snippets
        .iter()
        .filter(|s| s.kind == SnippetKind::Faq)
        .cloned()
        .collect();
    let reviews = snippets
        .iter()
        .filter(|s| s.kind == SnippetKind::Review)
        .cloned()
        .collect();
    (faqs, reviews)
}

/// Assembles the waterfall final response from the responder's continuation
/// of the `(2) follow-up:` slot: a `(3)` segment wins when present and
/// non-empty, otherwise the summary and the emitted follow-up are joined
/// with one space.
fn assemble_waterfall_response(summary: &str, continuation: &str) -> String {
    if let Some(p3) = continuation.find("(3)") {
        let final_part = strip_marker_label(
            &continuation[p3 + 3..],
            &["final response", "final answer", "final"],
        );
        if !final_part.is_empty() {
            return final_part;
        }
    }
    let follow_up_region = match continuation.find("(3)") {
        Some(p3) => &continuation[..p3],
        None => continuation,
    };
    let follow_up = strip_marker_label(follow_up_region, &["follow-up", "follow up", "followup"]);
    if follow_up.is_empty() {
        summary.to_string()
    } else {
        format!("{summary} {follow_up}")
    }
}

struct InstanceOutcome {
    prediction: Prediction,
    truncated_calls: usize,
    degraded: bool,
    failure: Option<String>,
}

/// Two-step waterfall generation for one knowledge-seeking instance: FAQs
/// and reviews are summarised first, then the responder continues a prompt
/// carrying that summary. An empty summary degrades to the formatted
/// knowledge as the response.
pub fn run_waterfall(
    instance: &DialogueInstance,
    kb: &KnowledgeBase,
    refs: &[KnowledgeRef],
    backends: &RunBackends,
    cfg: &RunConfig,
) -> Result<(Prediction, usize, bool), PipelineError> {
    let snippets = corpus::resolve_refs(kb, refs)?;
    let (faqs, reviews) = partition_snippets(&snippets);
    let mut truncated_calls = 0usize;

    let summarise = build_summarisation_prompt(&faqs, &reviews, cfg.max_tokens);
    let summary_result = backends
        .summariser
        .generate(&GenerationRequest::new(summarise, &cfg.summariser_model))
        .map_err(PipelineError::from)?;
    if summary_result.truncated {
        truncated_calls += 1;
    }
    let summary = summary_result.text.trim().to_string();

    if summary.is_empty() {
        let prediction = Prediction {
            id: instance.id,
            target: true,
            refs: refs.to_vec(),
            response: format_knowledge(&snippets),
            truncated: truncated_calls > 0,
        };
        return Ok((prediction, truncated_calls, true));
    }

    let knowledge_text = format_knowledge(&snippets);
    let waterfall = build_waterfall_messages(instance, &knowledge_text, &summary, cfg.max_tokens)?;
    let continuation = backends
        .responder
        .generate(&GenerationRequest::new(waterfall, &cfg.responder_model))
        .map_err(PipelineError::from)?;
    if continuation.truncated {
        truncated_calls += 1;
    }

    let response = assemble_waterfall_response(&summary, &continuation.text);
    let prediction = Prediction {
        id: instance.id,
        target: true,
        refs: refs.to_vec(),
        response,
        truncated: truncated_calls > 0,
    };
    Ok((prediction, truncated_calls, false))
}

impl From<BackendError> for PipelineError {
    fn from(e: BackendError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

fn generate_one(
    instance: &DialogueInstance,
    kb: &KnowledgeBase,
    backends: &RunBackends,
    cfg: &RunConfig,
    few_shot: &[FewShotExample],
    target: bool,
    refs: &[KnowledgeRef],
) -> InstanceOutcome {
    if !target {
        return InstanceOutcome {
            prediction: Prediction::non_seeking(instance.id),
            truncated_calls: 0,
            degraded: false,
            failure: None,
        };
    }
    let failed = |message: String| InstanceOutcome {
        prediction: Prediction {
            id: instance.id,
            target: true,
            refs: refs.to_vec(),
            response: String::new(),
            truncated: false,
        },
        truncated_calls: 0,
        degraded: false,
        failure: Some(message),
    };

    if cfg.mode == RunMode::Waterfall {
        return match run_waterfall(instance, kb, refs, backends, cfg) {
            Ok((prediction, truncated_calls, degraded)) => InstanceOutcome {
                prediction,
                truncated_calls,
                degraded,
                failure: None,
            },
            Err(e) => failed(e.to_string()),
        };
    }

    let snippets = match corpus::resolve_refs(kb, refs) {
        Ok(s) => s,
        Err(e) => return failed(e.to_string()),
    };
    let knowledge_text = format_knowledge(&snippets);
    let bundle = match cfg.mode {
        RunMode::PlainCompletion => build_completion_prompt(instance, &knowledge_text, cfg.max_tokens),
        RunMode::PlainChat => match build_chat_messages(instance, &knowledge_text, cfg.max_tokens) {
            Ok(b) => b,
            Err(e) => return failed(e.to_string()),
        },
        RunMode::Cot => build_cot_messages(instance, &knowledge_text, &[], cfg.max_tokens),
        RunMode::CotFewshot => build_cot_messages(instance, &knowledge_text, few_shot, cfg.max_tokens),
        RunMode::Waterfall => unreachable!("handled above"),
    };
    let result: GenerationResult = match backends
        .responder
        .generate(&GenerationRequest::new(bundle, &cfg.responder_model))
    {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    let response = match cfg.mode {
        RunMode::Cot | RunMode::CotFewshot => parse_cot_output(&result.text).final_response,
        _ => result.text.trim().to_string(),
    };
    InstanceOutcome {
        prediction: Prediction {
            id: instance.id,
            target: true,
            refs: refs.to_vec(),
            response,
            truncated: result.truncated,
        },
        truncated_calls: usize::from(result.truncated),
        degraded: false,
        failure: None,
    }
}

/// Runs generation over all instances. Knowledge selection comes from the
/// gold labels unless a selection prediction list is supplied. Non-seeking
/// instances produce `{target: false}` predictions; per-instance failures
/// leave an empty response and are summarized in the stats.
pub fn run_generation(
    instances: &[DialogueInstance],
    kb: &KnowledgeBase,
    backends: &RunBackends,
    cfg: &RunConfig,
    few_shot: &[FewShotExample],
    selection: Option<&[Prediction]>,
) -> Result<(Vec<Prediction>, RunStats), PipelineError> {
    cfg.validate()?;
    if cfg.mode == RunMode::CotFewshot && few_shot.is_empty() {
        return Err(PipelineError::Config(
            "cot_fewshot mode needs few-shot examples".to_string(),
        ));
    }
    if let Some(sel) = selection {
        if sel.len() != instances.len() {
            return Err(PipelineError::SelectionMisaligned {
                selections: sel.len(),
                instances: instances.len(),
            });
        }
    }
    // resolve the selection source up front so bad inputs fail fast
    let mut plan: Vec<(bool, Vec<KnowledgeRef>)> = Vec::with_capacity(instances.len());
    for inst in instances {
        let (target, refs) = match selection {
            Some(sel) => {
                let p = &sel[inst.id];
                (p.target, p.refs.clone())
            }
            None => match &inst.label {
                Some(label) => (label.target, label.refs.clone()),
                None => return Err(PipelineError::NoSelectionSource { id: inst.id }),
            },
        };
        plan.push((target, refs));
    }

    let workers = cfg.concurrency_bound.clamp(1, instances.len().max(1));
    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<InstanceOutcome>>> =
        Mutex::new((0..instances.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= instances.len() {
                    break;
                }
                let (target, refs) = &plan[idx];
                let outcome =
                    generate_one(&instances[idx], kb, backends, cfg, few_shot, *target, refs);
                outcomes.lock().expect("outcome lock")[idx] = Some(outcome);
            });
        }
    });

    let mut predictions = Vec::with_capacity(instances.len());
    let mut stats = RunStats::default();
    for outcome in outcomes.into_inner().expect("outcome lock") {
        let outcome = outcome.expect("every instance processed");
        stats.truncated_count += outcome.truncated_calls;
        stats.degraded_count += usize::from(outcome.degraded);
        if let Some(message) = outcome.failure {
            stats.failures.push(RunFailure {
                id: outcome.prediction.id,
                message,
            });
        }
        predictions.push(outcome.prediction);
    }
    Ok((predictions, stats))
}

/// Appends the most frequent question to a response that does not already
/// end in one. The MFQ must end with '?'.
pub fn append_mfq_response(response: &str, mfq: &str) -> String {
    assert!(mfq.ends_with('?'), "mfq must end with '?'");
    if split_response(response).question.is_some() {
        response.to_string()
    } else {
        format!("{response} {mfq}")
    }
}

/// Strips trailing questions from a response, leaving the summary part.
/// Stacked trailing questions are all removed, which makes this a fixpoint.
pub fn strip_questions_response(response: &str) -> String {
    let mut current = response.to_string();
    loop {
        let split = split_response(&current);
        match split.question {
            Some(_) => current = split.summary,
            None => return current,
        }
    }
}

/// Applies the MFQ append to every knowledge-seeking prediction.
pub fn postprocess_append_mfq(preds: &[Prediction], mfq: &str) -> Vec<Prediction> {
    preds
        .iter()
        .map(|p| {
            if p.target {
                Prediction {
                    response: append_mfq_response(&p.response, mfq),
                    ..p.clone()
                }
            } else {
                p.clone()
            }
        })
        .collect()
}

/// Replaces every knowledge-seeking response by its summary part.
pub fn postprocess_strip_questions(preds: &[Prediction]) -> Vec<Prediction> {
    preds
        .iter()
        .map(|p| {
            if p.target {
                Prediction {
                    response: strip_questions_response(&p.response),
                    ..p.clone()
                }
            } else {
                p.clone()
            }
        })
        .collect()
}

/// Loads a predictions file produced elsewhere (for example a fine-tuned
/// model's outputs) for scoring and post-processing.
pub fn ingest_external_predictions(
    path: impl AsRef<std::path::Path>,
) -> Result<Vec<Prediction>, PipelineError> {
    Ok(corpus::load_predictions(path)?)
}
