//! Deterministic prompt construction for every generation mode, plus
//! statistical few-shot example selection.
//!
//! Completion prompts render dialogue turns as `U: ...` / `S: ...` lines.
//! Chat prompts carry the knowledge in the system message and replay the
//! dialogue as user/assistant turns. Chain-of-thought and waterfall
//! prompts are sent as a single user message. All builders are pure:
//! identical inputs produce byte-identical bundles, with temperature 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::split_response;
use crate::corpus::{DialogueInstance, KnowledgeBase, Snippet, SnippetKind, Speaker};
use crate::sentiment::{self, SentimentError, SentimentLexicon};

/// Default completion budget; chain-of-thought bundles double it.
pub const DEFAULT_MAX_TOKENS: u32 = 256;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("chat prompts require the dialogue to end with a user turn")]
    LastTurnNotUser,
    #[error("waterfall prompts need a non-empty summary")]
    EmptySummary,
    #[error(
        "not enough few-shot candidates: {with_question} in-band with a question (need \
         {need_with_question}), {without_question} without (need {need_without_question}); \
         {n_items_matches} matched the knowledge-count filter, {sentiment_matches} matched \
         the sentiment filter"
    )]
    InsufficientCandidates {
        with_question: usize,
        without_question: usize,
        need_with_question: usize,
        need_without_question: usize,
        n_items_matches: usize,
        sentiment_matches: usize,
    },
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Completion,
    Chat,
}

/// A fully rendered request body: either completion text or chat messages,
/// never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub messages: Option<Vec<ChatMessage>>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl PromptBundle {
    pub fn completion(text: String, max_tokens: u32) -> Self {
        PromptBundle {
            kind: PromptKind::Completion,
            text: Some(text),
            messages: None,
            max_tokens,
            temperature: 0.0,
        }
    }

    pub fn chat(messages: Vec<ChatMessage>, max_tokens: u32) -> Self {
        PromptBundle {
            kind: PromptKind::Chat,
            text: None,
            messages: Some(messages),
            max_tokens,
            temperature: 0.0,
        }
    }

    /// All prompt text in order, for content hashing and the mock backend.
    pub fn rendered_text(&self) -> String {
        match self.kind {
            PromptKind::Completion => self.text.clone().unwrap_or_default(),
            PromptKind::Chat => self
                .messages
                .as_deref()
                .unwrap_or_default()
                .iter()
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }
}

/// One line per item: `Review: {text}` or `FAQ: {text}`, in input order.
pub fn format_knowledge(snippets: &[Snippet]) -> String {
    snippets
        .iter()
        .map(|s| match s.kind {
            SnippetKind::Review => format!("Review: {}", s.text),
            SnippetKind::Faq => format!("FAQ: {}", s.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Dialogue turns as `U: ...` / `S: ...` lines.
pub fn render_dialogue(dialogue: &DialogueInstance) -> String {
    dialogue
        .turns
        .iter()
        .map(|t| match t.speaker {
            Speaker::User => format!("U: {}", t.text),
            Speaker::System => format!("S: {}", t.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Completion-style prompt: DIALOGUE / KNOWLEDGE / RESPONSE sections.
pub fn build_completion_prompt(
    dialogue: &DialogueInstance,
    knowledge_text: &str,
    max_tokens: u32,
) -> PromptBundle {
    let text = format!(
        "DIALOGUE:\n{}\n\nKNOWLEDGE:\n{}\n\nRESPONSE:",
        render_dialogue(dialogue),
        knowledge_text
    );
    PromptBundle::completion(text, max_tokens)
}

/// Chat-style prompt: knowledge in the system message, dialogue replayed as
/// user/assistant turns. The dialogue must end with a user turn.
pub fn build_chat_messages(
    dialogue: &DialogueInstance,
    knowledge_text: &str,
    max_tokens: u32,
) -> Result<PromptBundle, PromptError> {
    if dialogue.turns.last().map(|t| t.speaker) != Some(Speaker::User) {
        return Err(PromptError::LastTurnNotUser);
    }
    let mut messages = vec![ChatMessage {
        role: Role::System,
        content: format!(
            "You are a helpful assistant with access to the following:\n{knowledge_text}"
        ),
    }];
    for turn in &dialogue.turns {
        messages.push(ChatMessage {
            role: match turn.speaker {
                Speaker::User => Role::User,
                Speaker::System => Role::Assistant,
            },
            content: turn.text.clone(),
        });
    }
    Ok(PromptBundle::chat(messages, max_tokens))
}

/// A solved training example rendered ahead of the query in few-shot
/// chain-of-thought prompts. Draw these from the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub dialogue: DialogueInstance,
    pub knowledge_text: String,
    pub response: String,
}

const COT_PROCEDURE: &str = "You are assisting a user. Create a response for the user, using the following procedure:\n\
(1) First, summarise the available knowledge into a couple sentences.\n\
(2) Then, create a short follow-up question given the dialogue history.\n";

fn cot_query_block(knowledge_text: &str, dialogue: &DialogueInstance) -> String {
    format!(
        "Knowledge:\n{}\n\nDialogue history:\n{}\n\nSolution:\n(1) summary:",
        knowledge_text,
        render_dialogue(dialogue)
    )
}

fn cot_example_block(example: &FewShotExample) -> String {
    let split = split_response(&example.response);
    let follow_up = match &split.question {
        Some(q) => format!(" {q}"),
        None => String::new(),
    };
    format!(
        "Knowledge:\n{}\n\nDialogue history:\n{}\n\nSolution:\n(1) summary: {}\n(2) follow-up:{}\n(3) final: {}",
        example.knowledge_text,
        render_dialogue(&example.dialogue),
        split.summary,
        follow_up,
        example.response
    )
}

impl Serialize for DialogueInstance {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("DialogueInstance", 2)?;
        s.serialize_field("id", &self.id)?;
        s.serialize_field("turns", &self.turns)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for DialogueInstance {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            id: usize,
            turns: Vec<crate::corpus::Turn>,
        }
        let wire = Wire::deserialize(deserializer)?;
        Ok(DialogueInstance {
            id: wire.id,
            turns: wire.turns,
            label: None,
        })
    }
}

/// Chain-of-thought prompt, optionally with solved examples ahead of the
/// query. The bundle is a single user message ending at the summary slot,
/// with double the base token budget to fit the longer stepped answers.
pub fn build_cot_messages(
    dialogue: &DialogueInstance,
    knowledge_text: &str,
    examples: &[FewShotExample],
    base_max_tokens: u32,
) -> PromptBundle {
    let mut blocks = vec![format!(
        "{COT_PROCEDURE}(3) Create the final response to the user as <summary><follow-up>"
    )];
    for example in examples {
        blocks.push(cot_example_block(example));
    }
    blocks.push(cot_query_block(knowledge_text, dialogue));
    let content = blocks.join("\n\n");
    PromptBundle::chat(
        vec![ChatMessage {
            role: Role::User,
            content,
        }],
        base_max_tokens * 2,
    )
}

/// Summarisation prompt with FAQs and reviews in separate sections, one
/// snippet per line.
pub fn build_summarisation_prompt(
    faqs: &[Snippet],
    reviews: &[Snippet],
    max_tokens: u32,
) -> PromptBundle {
    let lines = |snippets: &[Snippet]| {
        snippets
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let text = format!(
        "Summarize the following into one or two sentences max:\n\nFAQs:\n{}\n\nReviews:\n{}",
        lines(faqs),
        lines(reviews)
    );
    PromptBundle::completion(text, max_tokens)
}

/// Waterfall continuation prompt: the chain-of-thought structure with the
/// first-stage summary prefilled, ending at the follow-up slot so the
/// responder continues from there.
pub fn build_waterfall_messages(
    dialogue: &DialogueInstance,
    knowledge_text: &str,
    summary: &str,
    max_tokens: u32,
) -> Result<PromptBundle, PromptError> {
    let summary = summary.trim();
    if summary.is_empty() {
        return Err(PromptError::EmptySummary);
    }
    let content = format!(
        "{COT_PROCEDURE}(3) Create a final brief response to the user as <summary><follow-up>\n\n\
         Knowledge:\n{}\n\nDialogue history:\n{}\n\nSolution:\n(1) summary:\n{}\n(2) follow-up:",
        knowledge_text,
        render_dialogue(dialogue),
        summary
    );
    Ok(PromptBundle::chat(
        vec![ChatMessage {
            role: Role::User,
            content,
        }],
        max_tokens,
    ))
}

/// Selects k training examples from the hard region: knowledge-item count
/// in [mean+std, mean+2std] and mean knowledge sentiment in
/// [mean-2std, mean-std], with population statistics computed over the
/// knowledge-seeking instances of the training split. Since about a third
/// of responses carry a question, round(k/3) of the picks must contain one.
/// Output is ordered by ascending instance id.
pub fn select_few_shot(
    train: &[DialogueInstance],
    lex: &SentimentLexicon,
    kb: &KnowledgeBase,
    k: usize,
) -> Result<Vec<FewShotExample>, PromptError> {
    let mut seeking: Vec<(&DialogueInstance, f64, f64)> = Vec::new();
    for inst in train {
        let Some(label) = inst.label.as_ref().filter(|l| l.target) else {
            continue;
        };
        let sent = sentiment::dialogue_knowledge_sentiment(lex, kb, &label.refs)?;
        seeking.push((inst, label.refs.len() as f64, sent.mean));
    }

    let n_items: Vec<f64> = seeking.iter().map(|(_, n, _)| *n).collect();
    let sentiments: Vec<f64> = seeking.iter().map(|(_, _, s)| *s).collect();
    let (mean_n, std_n) = sentiment::mean_std(&n_items);
    let (mean_s, std_s) = sentiment::mean_std(&sentiments);
    let n_band = (mean_n + std_n, mean_n + 2.0 * std_n);
    let s_band = (mean_s - 2.0 * std_s, mean_s - std_s);

    let mut n_items_matches = 0usize;
    let mut sentiment_matches = 0usize;
    let mut with_question: Vec<&DialogueInstance> = Vec::new();
    let mut without_question: Vec<&DialogueInstance> = Vec::new();
    for (inst, n, s) in &seeking {
        let in_n = *n >= n_band.0 && *n <= n_band.1;
        let in_s = *s >= s_band.0 && *s <= s_band.1;
        if in_n {
            n_items_matches += 1;
        }
        if in_s {
            sentiment_matches += 1;
        }
        if in_n && in_s {
            let label = inst.label.as_ref().expect("seeking implies label");
            if split_response(&label.response).question.is_some() {
                with_question.push(inst);
            } else {
                without_question.push(inst);
            }
        }
    }
    with_question.sort_by_key(|i| i.id);
    without_question.sort_by_key(|i| i.id);

    let need_with_question = (k as f64 / 3.0).round() as usize;
    let need_without_question = k - need_with_question;
    if with_question.len() < need_with_question || without_question.len() < need_without_question {
        return Err(PromptError::InsufficientCandidates {
            with_question: with_question.len(),
            without_question: without_question.len(),
            need_with_question,
            need_without_question,
            n_items_matches,
            sentiment_matches,
        });
    }

    let mut picked: Vec<&DialogueInstance> = with_question
        .into_iter()
        .take(need_with_question)
        .chain(without_question.into_iter().take(need_without_question))
        .collect();
    picked.sort_by_key(|i| i.id);

    picked
        .into_iter()
        .map(|inst| {
            let label = inst.label.as_ref().expect("seeking implies label");
            let snippets = crate::corpus::resolve_refs(kb, &label.refs)
                .map_err(SentimentError::from)?;
            Ok(FewShotExample {
                dialogue: inst.clone(),
                knowledge_text: format_knowledge(&snippets),
                response: label.response.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_dialogues, load_knowledge, resolve_refs, KnowledgeRef, Snippet};
    use std::path::{Path, PathBuf};

    fn fixture(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    fn golden(name: &str) -> String {
        std::fs::read_to_string(fixture(format!("goldens/{name}").as_str())).unwrap()
    }

    fn fixture_setup() -> (crate::corpus::KnowledgeBase, Vec<DialogueInstance>) {
        let kb = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let instances =
            load_dialogues(fixture("logs.json"), Some(fixture("labels.json").as_path())).unwrap();
        (kb, instances)
    }

    fn knowledge_for(kb: &crate::corpus::KnowledgeBase, inst: &DialogueInstance) -> String {
        let refs = &inst.label.as_ref().unwrap().refs;
        format_knowledge(&resolve_refs(kb, refs).unwrap())
    }

    #[test]
    fn formats_knowledge_lines() {
        let snippets = vec![
            Snippet {
                kind: crate::corpus::SnippetKind::Review,
                text: "Great beds.".to_string(),
            },
            Snippet {
                kind: crate::corpus::SnippetKind::Faq,
                text: "Any parking? Yes, for a fee.".to_string(),
            },
        ];
        assert_eq!(
            format_knowledge(&snippets),
            "Review: Great beds.\nFAQ: Any parking? Yes, for a fee."
        );
        assert_eq!(format_knowledge(&[]), "");
        let reordered: Vec<Snippet> = snippets.iter().rev().cloned().collect();
        assert_eq!(
            format_knowledge(&reordered),
            "FAQ: Any parking? Yes, for a fee.\nReview: Great beds."
        );
    }

    #[test]
    fn completion_prompt_matches_golden() {
        let (kb, instances) = fixture_setup();
        let bundle =
            build_completion_prompt(&instances[0], &knowledge_for(&kb, &instances[0]), 256);
        assert_eq!(bundle.kind, PromptKind::Completion);
        assert_eq!(bundle.temperature, 0.0);
        assert_eq!(bundle.text.as_deref().unwrap(), golden("prompt_completion.txt"));
    }

    #[test]
    fn completion_prompt_with_empty_knowledge_keeps_header() {
        let (_, instances) = fixture_setup();
        let bundle = build_completion_prompt(&instances[0], "", 256);
        assert!(bundle.text.unwrap().contains("KNOWLEDGE:\n\n\nRESPONSE:"));
    }

    #[test]
    fn chat_messages_match_golden() {
        let (kb, instances) = fixture_setup();
        let bundle = build_chat_messages(&instances[0], &knowledge_for(&kb, &instances[0]), 256)
            .unwrap();
        let messages = bundle.messages.as_ref().unwrap();
        let roles: Vec<Role> = messages.iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::System, Role::User, Role::Assistant, Role::User]);
        let rendered = serde_json::to_string_pretty(messages).unwrap() + "\n";
        assert_eq!(rendered, golden("prompt_chat.json"));
    }

    #[test]
    fn chat_single_user_turn() {
        let dialogue = DialogueInstance {
            id: 0,
            turns: vec![crate::corpus::Turn {
                speaker: Speaker::User,
                text: "Any good?".to_string(),
            }],
            label: None,
        };
        let bundle = build_chat_messages(&dialogue, "Review: Fine.", 256).unwrap();
        let roles: Vec<Role> = bundle.messages.unwrap().iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::System, Role::User]);
    }

    #[test]
    fn chat_rejects_system_final_turn() {
        let dialogue = DialogueInstance {
            id: 0,
            turns: vec![crate::corpus::Turn {
                speaker: Speaker::System,
                text: "Hello!".to_string(),
            }],
            label: None,
        };
        assert!(matches!(
            build_chat_messages(&dialogue, "", 256),
            Err(PromptError::LastTurnNotUser)
        ));
    }

    #[test]
    fn cot_prompt_matches_golden() {
        let (kb, instances) = fixture_setup();
        let bundle = build_cot_messages(&instances[0], &knowledge_for(&kb, &instances[0]), &[], 256);
        assert_eq!(bundle.max_tokens, 512);
        let messages = bundle.messages.as_ref().unwrap();
        assert_eq!(messages.len(), 1);
        assert_eq!(messages[0].role, Role::User);
        assert_eq!(messages[0].content, golden("prompt_cot.txt"));
    }

    #[test]
    fn cot_with_examples_matches_golden() {
        let (kb, instances) = fixture_setup();
        // instances 1 (no question), 3 and 5 (with question) as solved examples
        let examples: Vec<FewShotExample> = [1usize, 3, 5]
            .iter()
            .map(|&i| {
                let label = instances[i].label.as_ref().unwrap();
                FewShotExample {
                    dialogue: instances[i].clone(),
                    knowledge_text: knowledge_for(&kb, &instances[i]),
                    response: label.response.clone(),
                }
            })
            .collect();
        let bundle =
            build_cot_messages(&instances[0], &knowledge_for(&kb, &instances[0]), &examples, 256);
        let content = &bundle.messages.as_ref().unwrap()[0].content;
        assert_eq!(content, &golden("prompt_cot_fewshot.txt"));
        // examples precede the query, which still ends at the summary slot
        assert!(content.ends_with("Solution:\n(1) summary:"));
    }

    #[test]
    fn summarisation_prompt_matches_golden() {
        let kb = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let faqs = resolve_refs(
            &kb,
            &[KnowledgeRef::faq("hotel", 0, 2), KnowledgeRef::faq("hotel", 0, 6)],
        )
        .unwrap();
        let reviews = resolve_refs(
            &kb,
            &[
                KnowledgeRef::review("hotel", 0, 1, 0),
                KnowledgeRef::review("hotel", 0, 7, 2),
                KnowledgeRef::review("hotel", 0, 12, 3),
            ],
        )
        .unwrap();
        let bundle = build_summarisation_prompt(&faqs, &reviews, 256);
        assert_eq!(bundle.text.as_deref().unwrap(), golden("prompt_summarisation.txt"));
    }

    #[test]
    fn summarisation_with_reviews_only_keeps_faq_header() {
        let reviews = vec![Snippet {
            kind: crate::corpus::SnippetKind::Review,
            text: "Lovely view.".to_string(),
        }];
        let bundle = build_summarisation_prompt(&[], &reviews, 256);
        let text = bundle.text.unwrap();
        assert!(text.contains("FAQs:\n\n\nReviews:\nLovely view."), "{text}");
    }

    #[test]
    fn waterfall_prompt_matches_golden() {
        let (kb, instances) = fixture_setup();
        let summary = "The guest house can be a bit noisy at night, though one solo guest found it very quiet.";
        let bundle = build_waterfall_messages(
            &instances[0],
            &knowledge_for(&kb, &instances[0]),
            summary,
            256,
        )
        .unwrap();
        let content = &bundle.messages.as_ref().unwrap()[0].content;
        assert_eq!(content, &golden("prompt_waterfall.txt"));
        assert!(content.ends_with("(2) follow-up:"));
    }

    #[test]
    fn waterfall_normalizes_trailing_newlines() {
        let (kb, instances) = fixture_setup();
        let knowledge = knowledge_for(&kb, &instances[0]);
        let clean = build_waterfall_messages(&instances[0], &knowledge, "A summary.", 256).unwrap();
        let newline = build_waterfall_messages(&instances[0], &knowledge, "A summary.\n\n", 256).unwrap();
        assert_eq!(clean, newline);
        assert!(clean.messages.unwrap()[0]
            .content
            .contains("(1) summary:\nA summary.\n(2) follow-up:"));
    }

    #[test]
    fn waterfall_rejects_empty_summary() {
        let (kb, instances) = fixture_setup();
        let knowledge = knowledge_for(&kb, &instances[0]);
        assert!(matches!(
            build_waterfall_messages(&instances[0], &knowledge, "  \n", 256),
            Err(PromptError::EmptySummary)
        ));
    }

    #[test]
    fn builders_are_deterministic() {
        let (kb, instances) = fixture_setup();
        let knowledge = knowledge_for(&kb, &instances[0]);
        assert_eq!(
            build_completion_prompt(&instances[0], &knowledge, 256),
            build_completion_prompt(&instances[0], &knowledge, 256)
        );
        assert_eq!(
            build_cot_messages(&instances[0], &knowledge, &[], 256),
            build_cot_messages(&instances[0], &knowledge, &[], 256)
        );
    }
}
