//! Corpus analyses: response summary/question splitting, question
//! statistics, heuristic dialogue-act tagging, feature correlations, and
//! length statistics.
//!
//! One sentence splitter is shared by everything here: sentences end at a
//! run of `.`, `?`, or `!` followed by whitespace or end of input, and the
//! terminator stays with its sentence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DialogueInstance, Prediction};
use crate::metrics::{self, GenerationScores};
use crate::sentiment::{self, SentimentLexicon};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no response contains a question")]
    NoQuestions,
    #[error("predictions do not align with instances: {0} predictions vs {1} instances")]
    Misaligned(usize, usize),
}

/// Splits text into sentences, keeping terminators.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        current.push(c);
        if matches!(c, '.' | '?' | '!') {
            // absorb the rest of the terminator run
            while i + 1 < chars.len() && matches!(chars[i + 1], '.' | '?' | '!') {
                i += 1;
                current.push(chars[i]);
            }
            if i + 1 >= chars.len() || chars[i + 1].is_whitespace() {
                let sentence = current.trim();
                if !sentence.is_empty() {
                    sentences.push(sentence.to_string());
                }
                current.clear();
            }
        }
        i += 1;
    }
    let tail = current.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// A system response decomposed into its knowledge summary and an optional
/// trailing dialogue-management question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResponse {
    pub summary: String,
    pub question: Option<String>,
}

/// The final sentence becomes the question iff it ends with '?'; the
/// summary is everything before it, trimmed.
pub fn split_response(text: &str) -> SplitResponse {
    let sentences = split_sentences(text);
    match sentences.last() {
        Some(last) if last.ends_with('?') => {
            let question = last.clone();
            let summary = sentences[..sentences.len() - 1].join(" ");
            SplitResponse {
                summary,
                question: Some(question),
            }
        }
        _ => SplitResponse {
            summary: sentences.join(" "),
            question: None,
        },
    }
}

/// The modal trailing question across responses, ties broken
/// lexicographically. Counts use exact string grouping after trimming.
pub fn most_frequent_question(responses: &[String]) -> Result<(String, usize), AnalysisError> {
    let counts = question_counts(responses);
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .ok_or(AnalysisError::NoQuestions)
        .map(|(q, c)| (q, c))
}

fn question_counts(responses: &[String]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for response in responses {
        if let Some(question) = split_response(response).question {
            *counts.entry(question.trim().to_string()).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionStats {
    /// Fraction of responses whose split carries a question.
    pub pct_with_question: f64,
    /// Number of distinct question strings.
    pub unique_count: usize,
    /// Fraction of distinct questions that occur exactly once.
    pub singleton_pct: f64,
    /// (question, count) sorted by descending count, question ascending on
    /// ties; at most k entries.
    pub top_k: Vec<(String, usize)>,
}

/// Question statistics over a set of responses. `k` bounds `top_k`
/// (use [`question_stats`] for the default of 100).
pub fn question_stats_top_k(responses: &[String], k: usize) -> QuestionStats {
    let counts = question_counts(responses);
    let total_responses = responses.len();
    let with_question = responses
        .iter()
        .filter(|r| split_response(r).question.is_some())
        .count();
    let unique_count = counts.len();
    let singletons = counts.values().filter(|&&c| c == 1).count();
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    QuestionStats {
        pct_with_question: if total_responses > 0 {
            with_question as f64 / total_responses as f64
        } else {
            0.0
        },
        unique_count,
        singleton_pct: if unique_count > 0 {
            singletons as f64 / unique_count as f64
        } else {
            0.0
        },
        top_k: ranked,
    }
}

pub fn question_stats(responses: &[String]) -> QuestionStats {
    question_stats_top_k(responses, 100)
}

/// Dialogue-act tags for the user's final utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueAct {
    YesNoQuestion,
    OpenQuestionOpinion,
    OpenQuestionFactual,
    Statement,
    Command,
    Opinion,
    PosAnswer,
    NegAnswer,
    Complaint,
    Comment,
    Nonsense,
}

impl DialogueAct {
    pub fn name(self) -> &'static str {
        match self {
            DialogueAct::YesNoQuestion => "yes_no_question",
            DialogueAct::OpenQuestionOpinion => "open_question_opinion",
            DialogueAct::OpenQuestionFactual => "open_question_factual",
            DialogueAct::Statement => "statement",
            DialogueAct::Command => "command",
            DialogueAct::Opinion => "opinion",
            DialogueAct::PosAnswer => "pos_answer",
            DialogueAct::NegAnswer => "neg_answer",
            DialogueAct::Complaint => "complaint",
            DialogueAct::Comment => "comment",
            DialogueAct::Nonsense => "nonsense",
        }
    }
}

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "am", "do", "does", "did", "can", "could", "will", "would",
    "shall", "should", "may", "might", "must", "have", "has", "had",
];

const WH_WORDS: &[&str] = &[
    "what", "which", "who", "whom", "whose", "where", "when", "why", "how",
];

const OPINION_CUES: &[&str] = &[
    "think", "like", "recommend", "opinion", "good", "best", "feel", "favorite", "favourite",
];

const IMPERATIVE_VERBS: &[&str] = &[
    "book", "find", "show", "tell", "give", "get", "make", "search", "look", "help", "reserve",
    "cancel", "send", "call", "check", "confirm", "add", "change",
];

const POS_ANSWERS: &[&str] = &["yes", "yeah", "yep", "sure", "ok", "okay", "absolutely", "definitely"];
const NEG_ANSWERS: &[&str] = &["no", "nope", "nah"];

fn words_of(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Deterministic heuristic act tagger. The cascade, in order:
///
/// 1. empty input -> nonsense; no alphabetic content -> comment
/// 2. ends with '?': auxiliary/modal start -> yes_no_question; wh-word
///    start with an opinion cue -> open_question_opinion; other wh-start ->
///    open_question_factual; any other question -> yes_no_question
/// 3. imperative verb start (optionally after "please") -> command
/// 4. bare yes/no token(s) -> pos_answer / neg_answer
/// 5. first-person evaluative cue -> complaint when the default-lexicon
///    valence is negative, opinion otherwise
/// 6. everything else -> statement
pub fn tag_dialogue_act(utterance: &str) -> DialogueAct {
    let trimmed = utterance.trim();
    if trimmed.is_empty() {
        return DialogueAct::Nonsense;
    }
    if !trimmed.chars().any(|c| c.is_alphabetic()) {
        return DialogueAct::Comment;
    }
    let words = words_of(trimmed);
    let first = words.first().map(String::as_str).unwrap_or("");

    if trimmed.ends_with('?') {
        if AUXILIARIES.contains(&first) {
            return DialogueAct::YesNoQuestion;
        }
        if WH_WORDS.contains(&first) {
            if words.iter().any(|w| OPINION_CUES.contains(&w.as_str())) {
                return DialogueAct::OpenQuestionOpinion;
            }
            return DialogueAct::OpenQuestionFactual;
        }
        return DialogueAct::YesNoQuestion;
    }

    let imperative_head = if first == "please" { words.get(1).map(String::as_str).unwrap_or("") } else { first };
    if IMPERATIVE_VERBS.contains(&imperative_head) {
        return DialogueAct::Command;
    }

    let content: Vec<&str> = words
        .iter()
        .map(String::as_str)
        .filter(|w| !matches!(*w, "please" | "thanks" | "thank"))
        .collect();
    if !content.is_empty() && content.iter().all(|w| POS_ANSWERS.contains(w)) {
        return DialogueAct::PosAnswer;
    }
    if !content.is_empty() && content.iter().all(|w| NEG_ANSWERS.contains(w)) {
        return DialogueAct::NegAnswer;
    }

    let first_person = words.iter().any(|w| matches!(w.as_str(), "i" | "we" | "my" | "our" | "i'm" | "i've"));
    let evaluative = words.iter().any(|w| {
        matches!(w.as_str(), "think" | "love" | "hate" | "like" | "dislike" | "prefer" | "feel" | "want")
    });
    if first_person && evaluative {
        let lex = SentimentLexicon::default_lexicon();
        if lex.is_negative_cue(trimmed) {
            return DialogueAct::Complaint;
        }
        return DialogueAct::Opinion;
    }

    DialogueAct::Statement
}

/// Five-number summary of a distribution, linear interpolation between
/// order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn five_number_summary(values: &[f64]) -> Option<FiveNumber> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let percentile = |p: f64| -> f64 {
        let rank = p * (sorted.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let frac = rank - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    };
    Some(FiveNumber {
        min: sorted[0],
        q1: percentile(0.25),
        median: percentile(0.5),
        q3: percentile(0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Average/std of sentence and character counts over responses.
/// Std is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub avg_sentences: f64,
    pub std_sentences: f64,
    pub avg_chars: f64,
    pub std_chars: f64,
}

pub fn length_stats(responses: &[String]) -> LengthStats {
    let sentence_counts: Vec<f64> = responses
        .iter()
        .map(|r| split_sentences(r).len() as f64)
        .collect();
    let char_counts: Vec<f64> = responses.iter().map(|r| r.chars().count() as f64).collect();
    let (avg_sentences, std_sentences) = sentiment::mean_std(&sentence_counts);
    let (avg_chars, std_chars) = sentiment::mean_std(&char_counts);
    LengthStats {
        avg_sentences,
        std_sentences,
        avg_chars,
        std_chars,
    }
}

/// Pairwise Pearson correlations between instance/prediction features.
/// Cells with zero variance are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub features: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Correlates n_turns, n_knowledge_items, and reference/prediction lengths
/// (chars and sentences) over instances whose gold target is true.
pub fn feature_correlations(
    instances: &[DialogueInstance],
    predictions: &[Prediction],
) -> Result<CorrelationMatrix, AnalysisError> {
    if instances.len() != predictions.len() {
        return Err(AnalysisError::Misaligned(predictions.len(), instances.len()));
    }
    let features = [
        "n_turns",
        "n_knowledge_items",
        "ref_chars",
        "ref_sentences",
        "pred_chars",
        "pred_sentences",
    ];
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); features.len()];
    for (inst, pred) in instances.iter().zip(predictions) {
        let Some(label) = inst.label.as_ref().filter(|l| l.target) else {
            continue;
        };
        columns[0].push(inst.turns.len() as f64);
        columns[1].push(label.refs.len() as f64);
        columns[2].push(label.response.chars().count() as f64);
        columns[3].push(split_sentences(&label.response).len() as f64);
        columns[4].push(pred.response.chars().count() as f64);
        columns[5].push(split_sentences(&pred.response).len() as f64);
    }
    let values = (0..features.len())
        .map(|i| {
            (0..features.len())
                .map(|j| sentiment::pearson(&columns[i], &columns[j]).ok())
                .collect()
        })
        .collect();
    Ok(CorrelationMatrix {
        features: features.iter().map(|s| s.to_string()).collect(),
        values,
    })
}

/// One row of the per-act breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActRow {
    pub act: DialogueAct,
    pub freq: usize,
    pub avg_response_chars: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<GenerationScores>,
}

/// Tags each knowledge-seeking instance by the act of its final user turn
/// and reports frequency, mean reference length, and (when predictions are
/// given) generation scores computed on that act's subset.
pub fn per_act_report(
    instances: &[DialogueInstance],
    predictions: Option<&[Prediction]>,
) -> Result<Vec<ActRow>, AnalysisError> {
    if let Some(preds) = predictions {
        if preds.len() != instances.len() {
            return Err(AnalysisError::Misaligned(preds.len(), instances.len()));
        }
    }
    let mut groups: BTreeMap<DialogueAct, Vec<usize>> = BTreeMap::new();
    for inst in instances {
        if !inst.is_seeking() {
            continue;
        }
        let act = tag_dialogue_act(inst.last_user_turn().unwrap_or(""));
        groups.entry(act).or_default().push(inst.id);
    }
    let mut rows = Vec::new();
    for (act, ids) in groups {
        let lengths: Vec<f64> = ids
            .iter()
            .map(|&id| {
                instances[id]
                    .label
                    .as_ref()
                    .map(|l| l.response.chars().count() as f64)
                    .unwrap_or(0.0)
            })
            .collect();
        let (avg_response_chars, _) = sentiment::mean_std(&lengths);
        let scores = predictions.map(|preds| {
            metrics::generation_scores(ids.iter().filter_map(|&id| {
                let inst = &instances[id];
                let pred = &preds[id];
                if pred.target {
                    Some((
                        pred.response.as_str(),
                        inst.label.as_ref().expect("seeking implies label").response.as_str(),
                    ))
                } else {
                    None
                }
            }))
        });
        rows.push(ActRow {
            act,
            freq: ids.len(),
            avg_response_chars,
            scores,
        });
    }
    rows.sort_by(|a, b| b.freq.cmp(&a.freq).then_with(|| a.act.cmp(&b.act)));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, KnowledgeRef, Speaker, Turn};

    #[test]
    fn splits_summary_and_trailing_question() {
        let split = split_response("They have free wifi. Would you like to know more about them?");
        assert_eq!(split.summary, "They have free wifi.");
        assert_eq!(
            split.question.as_deref(),
            Some("Would you like to know more about them?")
        );
    }

    #[test]
    fn declarative_only_has_no_question() {
        let split = split_response("The beds are comfortable.");
        assert_eq!(split.summary, "The beds are comfortable.");
        assert_eq!(split.question, None);
    }

    #[test]
    fn question_only_response() {
        let split = split_response("Is that ok?");
        assert_eq!(split.summary, "");
        assert_eq!(split.question.as_deref(), Some("Is that ok?"));
    }

    #[test]
    fn empty_text_splits_empty() {
        let split = split_response("");
        assert_eq!(split.summary, "");
        assert_eq!(split.question, None);
    }

    #[test]
    fn split_rejoin_recovers_normalized_input() {
        let inputs = [
            "One sentence. Two sentences!  A question at the end?",
            "Just a summary here.",
            "Multiple?  Questions? Stacked?",
            "No terminator at all",
        ];
        for input in inputs {
            let split = split_response(input);
            let rejoined = match &split.question {
                Some(q) if split.summary.is_empty() => q.clone(),
                Some(q) => format!("{} {}", split.summary, q),
                None => split.summary.clone(),
            };
            let normalize =
                |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
            assert_eq!(rejoined, normalize(input), "input: {input:?}");
        }
    }

    #[test]
    fn sentence_splitter_keeps_terminators() {
        assert_eq!(
            split_sentences("First one. Second?! Third..."),
            ["First one.", "Second?!", "Third..."]
        );
        assert_eq!(split_sentences("no end"), ["no end"]);
        assert_eq!(split_sentences(""), Vec::<String>::new());
        // version numbers do not split without following whitespace
        assert_eq!(split_sentences("about 2.5 km away."), ["about 2.5 km away."]);
    }

    #[test]
    fn mfq_counts_and_tie_break() {
        let responses: Vec<String> = ["A? ", "A?", "B?"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            most_frequent_question(&responses).unwrap(),
            ("A?".to_string(), 2)
        );
        let tie: Vec<String> = ["A?", "B?"].iter().map(|s| s.to_string()).collect();
        assert_eq!(most_frequent_question(&tie).unwrap().0, "A?");
        let none: Vec<String> = ["No questions here."].iter().map(|s| s.to_string()).collect();
        assert!(matches!(
            most_frequent_question(&none),
            Err(AnalysisError::NoQuestions)
        ));
    }

    #[test]
    fn question_stats_fields() {
        let responses: Vec<String> = [
            "Summary. Would you like more?",
            "Summary. Would you like more?",
            "Other. Anything else?",
            "Plain statement.",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let stats = question_stats(&responses);
        assert!((stats.pct_with_question - 0.75).abs() < 1e-15);
        assert_eq!(stats.unique_count, 2);
        assert!((stats.singleton_pct - 0.5).abs() < 1e-15);
        assert_eq!(stats.top_k[0], ("Would you like more?".to_string(), 2));
        // counts are non-increasing
        assert!(stats.top_k.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn question_stats_empty() {
        let stats = question_stats(&["Nothing.".to_string()]);
        assert_eq!(stats.pct_with_question, 0.0);
        assert_eq!(stats.unique_count, 0);
        assert_eq!(stats.top_k.len(), 0);
    }

    #[test]
    fn singleton_identity_holds() {
        let responses: Vec<String> = [
            "S. One off?",
            "S. Twice?",
            "S. Twice?",
            "S. Also once?",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let stats = question_stats(&responses);
        let singletons = (stats.singleton_pct * stats.unique_count as f64).round() as usize;
        assert_eq!(singletons, 2);
    }

    #[test]
    fn act_tagger_rule_cascade() {
        assert_eq!(tag_dialogue_act("Does the hotel have parking?"), DialogueAct::YesNoQuestion);
        assert_eq!(
            tag_dialogue_act("What do people think of the food?"),
            DialogueAct::OpenQuestionOpinion
        );
        assert_eq!(
            tag_dialogue_act("Where is the guest house?"),
            DialogueAct::OpenQuestionFactual
        );
        assert_eq!(tag_dialogue_act("Book it for me."), DialogueAct::Command);
        assert_eq!(tag_dialogue_act("Please book it."), DialogueAct::Command);
        assert_eq!(tag_dialogue_act("Yes please."), DialogueAct::PosAnswer);
        assert_eq!(tag_dialogue_act("No."), DialogueAct::NegAnswer);
        assert_eq!(tag_dialogue_act("I think the room is lovely."), DialogueAct::Opinion);
        assert_eq!(tag_dialogue_act("I hate how dirty the room was."), DialogueAct::Complaint);
        assert_eq!(tag_dialogue_act("The hotel is in the north."), DialogueAct::Statement);
        assert_eq!(tag_dialogue_act(""), DialogueAct::Nonsense);
        assert_eq!(tag_dialogue_act("???"), DialogueAct::Comment);
        // question without aux or wh start still lands in the question family
        assert_eq!(tag_dialogue_act("Parking available?"), DialogueAct::YesNoQuestion);
    }

    #[test]
    fn act_tagger_is_deterministic() {
        for text in ["Does it?", "book now", "I like it", "hmm", ""] {
            assert_eq!(tag_dialogue_act(text), tag_dialogue_act(text));
        }
    }

    #[test]
    fn length_stats_hand_values() {
        let responses: Vec<String> = ["ab", "abcd"].iter().map(|s| s.to_string()).collect();
        let stats = length_stats(&responses);
        assert!((stats.avg_chars - 3.0).abs() < 1e-15);
        assert!((stats.std_chars - 1.0).abs() < 1e-15);

        let single = length_stats(&["One sentence only.".to_string()]);
        assert_eq!(single.std_chars, 0.0);
        assert_eq!(single.std_sentences, 0.0);
        assert_eq!(single.avg_sentences, 1.0);
    }

    fn seeking(id: usize, last_turn: &str, n_refs: usize, response: &str) -> DialogueInstance {
        let refs = (0..n_refs)
            .map(|i| KnowledgeRef::review("hotel", 0, 0, i as u64))
            .collect();
        DialogueInstance {
            id,
            turns: vec![Turn {
                speaker: Speaker::User,
                text: last_turn.to_string(),
            }],
            label: Some(Label {
                target: true,
                refs,
                response: response.to_string(),
            }),
        }
    }

    fn pred(id: usize, response: &str) -> Prediction {
        Prediction {
            id,
            target: true,
            refs: vec![],
            response: response.to_string(),
            truncated: false,
        }
    }

    #[test]
    fn correlations_diagonal_and_affine_pair() {
        let instances: Vec<DialogueInstance> = (0..6)
            .map(|i| {
                seeking(
                    i,
                    "Is it good?",
                    i + 1,
                    &"x".repeat(10 * (i + 1)),
                )
            })
            .collect();
        // prediction chars = 2 * reference chars
        let predictions: Vec<Prediction> = (0..6).map(|i| pred(i, &"y".repeat(20 * (i + 1)))).collect();
        let m = feature_correlations(&instances, &predictions).unwrap();
        assert_eq!(m.features.len(), 6);
        // diagonal is 1 where variance exists
        let ref_chars = m.features.iter().position(|f| f == "ref_chars").unwrap();
        assert!((m.values[ref_chars][ref_chars].unwrap() - 1.0).abs() < 1e-12);
        // pred_chars vs ref_chars is exactly affine
        let pred_chars = m.features.iter().position(|f| f == "pred_chars").unwrap();
        assert!((m.values[ref_chars][pred_chars].unwrap() - 1.0).abs() < 1e-12);
        // n_turns is constant -> undefined cells
        let n_turns = m.features.iter().position(|f| f == "n_turns").unwrap();
        assert!(m.values[n_turns][n_turns].is_none());
    }

    #[test]
    fn correlation_matrix_is_symmetric() {
        let instances: Vec<DialogueInstance> = (0..8)
            .map(|i| {
                seeking(
                    i,
                    "Is it good?",
                    (i * 7 + 3) % 5 + 1,
                    &"word sentence. ".repeat(i % 4 + 1),
                )
            })
            .collect();
        let predictions: Vec<Prediction> = (0..8)
            .map(|i| pred(i, &"pred text here. ".repeat((i * 3) % 5 + 1)))
            .collect();
        let m = feature_correlations(&instances, &predictions).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                match (m.values[i][j], m.values[j][i]) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (None, None) => {}
                    other => panic!("asymmetric definedness at ({i},{j}): {other:?}"),
                }
            }
        }
    }

    #[test]
    fn per_act_rows_partition_and_match_subset_metrics() {
        let instances = vec![
            seeking(0, "Does it have wifi?", 1, "Yes it does."),
            seeking(1, "Is it clean?", 1, "Guests say it is clean."),
            seeking(2, "Where is it?", 1, "In the north."),
            DialogueInstance {
                id: 3,
                turns: vec![Turn {
                    speaker: Speaker::User,
                    text: "Book it.".to_string(),
                }],
                label: Some(Label {
                    target: false,
                    refs: vec![],
                    response: String::new(),
                }),
            },
        ];
        let predictions = vec![
            pred(0, "Yes it does."),
            pred(1, "It is very clean."),
            pred(2, "It is in the north."),
            Prediction::non_seeking(3),
        ];
        let rows = per_act_report(&instances, Some(&predictions)).unwrap();
        let total: usize = rows.iter().map(|r| r.freq).sum();
        assert_eq!(total, 3); // seeking instances only

        let yn = rows.iter().find(|r| r.act == DialogueAct::YesNoQuestion).unwrap();
        assert_eq!(yn.freq, 2);
        // recompute on the subset in isolation
        let subset = metrics::generation_scores([
            ("Yes it does.", "Yes it does."),
            ("It is very clean.", "Guests say it is clean."),
        ]);
        let got = yn.scores.unwrap();
        assert!((got.rouge1 - subset.rouge1).abs() < 1e-15);
        assert!((got.bleu - subset.bleu).abs() < 1e-15);
    }

    #[test]
    fn five_number_summary_basics() {
        let summary = five_number_summary(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(summary.min, 1.0);
        assert_eq!(summary.median, 3.0);
        assert_eq!(summary.q1, 2.0);
        assert_eq!(summary.q3, 4.0);
        assert_eq!(summary.max, 5.0);
        assert!(five_number_summary(&[]).is_none());
    }

    #[test]
    fn single_act_gives_single_row() {
        let instances = vec![
            seeking(0, "Does it have wifi?", 1, "Yes."),
            seeking(1, "Is it clean?", 1, "Mostly."),
        ];
        let rows = per_act_report(&instances, None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].act, DialogueAct::YesNoQuestion);
        assert_eq!(rows[0].freq, 2);
        assert!(rows[0].scores.is_none());
    }
}
