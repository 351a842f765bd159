//! Synthetic review augmentation: prompt construction for new reviews of
//! existing entities and for entities in new domains, tolerant parsing of
//! model output, traveler-type normalization, and before/after statistics.
//!
//! Model output is the real data path here, so parsing repairs a fixed,
//! ordered rule list (stub re-prepend, quote normalization, trailing-comma
//! strip, brace balancing) and anything still unparseable is an error
//! carrying the raw text, never a silent drop.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::analysis::split_sentences;
use crate::corpus::{self, Entity, Faq, Id, KnowledgeBase, Review};
use crate::prompting::PromptBundle;

const DEFAULT_TYPE_MAP: &str = include_str!("data/traveler_types.json");

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("entity \"{0}\" has no existing reviews to continue from")]
    NoExistingReviews(String),
    #[error("entity \"{0}\" has no FAQs to seed the prompt")]
    NoFaqs(String),
    #[error("could not repair model output ({message}); raw text:\n{raw}")]
    UnrecoverableParse { message: String, raw: String },
    #[error("generated review ids must continue from {expected} without gaps, found \"{found}\"")]
    GapInIds { expected: u64, found: String },
    #[error("generated review {id}: {message}")]
    InvalidReview { id: String, message: String },
    #[error("failed to read traveler-type map {path}: {source}")]
    MapIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("traveler-type map: {0}")]
    BadTypeMap(String),
    #[error("augmented knowledge base is missing original content: {missing}")]
    NotSuperset { missing: String },
}

fn number_word(n: usize) -> String {
    match n {
        1 => "one",
        2 => "two",
        3 => "three",
        4 => "four",
        5 => "five",
        6 => "six",
        7 => "seven",
        8 => "eight",
        9 => "nine",
        10 => "ten",
        _ => return n.to_string(),
    }
    .to_string()
}

fn next_review_id(entity: &Entity) -> u64 {
    entity
        .reviews
        .keys()
        .filter_map(Id::as_number)
        .max()
        .map_or(0, |m| m + 1)
}

/// The continuation stub the model is asked to pick up from, e.g.
/// `"10": {"traveler_type":`.
pub fn continuation_stub(start_id: u64) -> String {
    format!("\"{start_id}\": {{\"traveler_type\":")
}

/// Prompt asking for new reviews of an existing entity, serializing its
/// current reviews and ending with the continuation stub at the next free
/// review id.
pub fn build_review_prompt(
    entity: &Entity,
    traveler_type_count: usize,
    max_tokens: u32,
) -> Result<PromptBundle, AugmentError> {
    if entity.reviews.is_empty() {
        return Err(AugmentError::NoExistingReviews(entity.name.clone()));
    }
    let reviews_all = serde_json::to_string(&entity.reviews).expect("reviews serialize");
    let text = format!(
        "Please provide new reviews for the {} but for {} different traveler_type.\n\
         Continue the counting of the reviews and make sure the new reviews are in a dict format like this:\n\
         \"<id>\": {{\"traveler_type\": \"<traveler_type>\", \"sentences\": {{\"<id>\": \"<review>\", \"<id>\": \"<review>\", \"<id>\": \"<review>\", \"<id>\": \"<review>\"}}}},\n\n\
         These are the existing reviews: {}.\n\n\
         Take this start and continue. Use double quotes to comply with json format.\n\n\
         {}",
        entity.name,
        number_word(traveler_type_count),
        reviews_all,
        continuation_stub(next_review_id(entity))
    );
    Ok(PromptBundle::completion(text, max_tokens))
}

#[derive(Serialize)]
struct DomainExample<'a> {
    name: &'a str,
    faqs: &'a BTreeMap<Id, Faq>,
}

/// Prompt asking for three short reviews of a new-domain entity, seeded
/// with its name and FAQs and answered as `traveler type: review` lines.
pub fn build_domain_review_prompt(
    entity_name: &str,
    faqs: &BTreeMap<Id, Faq>,
    max_tokens: u32,
) -> Result<PromptBundle, AugmentError> {
    if faqs.is_empty() {
        return Err(AugmentError::NoFaqs(entity_name.to_string()));
    }
    let mut example = BTreeMap::new();
    example.insert(
        Id::new("0"),
        DomainExample {
            name: entity_name,
            faqs,
        },
    );
    let json = serde_json::to_string_pretty(&example).expect("example serializes");
    let text = format!(
        "Given this example:\n\n{json},\n\ncan you generate three more reviews, not more than 2 sentences, as: traveler type: review?"
    );
    Ok(PromptBundle::completion(text, max_tokens))
}

/// Converts single-quoted strings to double-quoted ones, leaving the
/// contents of double-quoted strings (apostrophes included) alone.
fn normalize_quotes(text: &str) -> String {
    #[derive(PartialEq)]
    enum State {
        Plain,
        Double,
        Single,
    }
    let mut state = State::Plain;
    let mut escaped = false;
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match state {
            State::Plain => match c {
                '"' => {
                    state = State::Double;
                    out.push(c);
                }
                '\'' => {
                    state = State::Single;
                    out.push('"');
                }
                _ => out.push(c),
            },
            State::Double => {
                if escaped {
                    escaped = false;
                    out.push(c);
                } else if c == '\\' {
                    escaped = true;
                    out.push(c);
                } else {
                    if c == '"' {
                        state = State::Plain;
                    }
                    out.push(c);
                }
            }
            State::Single => match c {
                '\'' => {
                    state = State::Plain;
                    out.push('"');
                }
                '"' => out.push_str("\\\""),
                _ => out.push(c),
            },
        }
    }
    out
}

/// Removes commas that directly precede a closing brace/bracket or the end
/// of input (string contents untouched).
fn strip_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            ',' => {
                let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                if !matches!(next, Some('}') | Some(']') | None) {
                    out.push(c);
                }
            }
            _ => out.push(c),
        }
    }
    out
}

/// Closes an unterminated string and any unbalanced braces/brackets.
fn balance_braces(text: &str) -> String {
    let mut stack: Vec<char> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => stack.push('}'),
            '[' => stack.push(']'),
            '}' | ']' => {
                if stack.last() == Some(&c) {
                    stack.pop();
                }
            }
            _ => {}
        }
    }
    let mut out = text.to_string();
    if in_string {
        out.push('"');
    }
    while let Some(closer) = stack.pop() {
        out.push(closer);
    }
    out
}

fn looks_like_entry_start(text: &str) -> bool {
    let mut chars = text.chars();
    if chars.next() != Some('"') {
        return false;
    }
    let digits: String = chars.by_ref().take_while(|c| *c != '"').collect();
    !digits.is_empty()
        && digits.chars().all(|c| c.is_ascii_digit())
        && chars.as_str().trim_start().starts_with(':')
}

/// Parses raw model output into reviews continuing from `start_id`.
///
/// Repair rules run in a fixed order: re-prepend the continuation stub
/// (unless the output already starts an object or an entry), normalize
/// single quotes, strip trailing commas, balance braces. Ids must continue
/// from `start_id` without gaps and every review must carry a traveler type
/// and contiguous sentences.
pub fn parse_generated_reviews(
    text: &str,
    start_id: u64,
) -> Result<BTreeMap<Id, Review>, AugmentError> {
    let trimmed = text.trim();
    let unrecoverable = |message: String| AugmentError::UnrecoverableParse {
        message,
        raw: text.to_string(),
    };
    if trimmed.is_empty() {
        return Err(unrecoverable("empty output".to_string()));
    }

    let mut candidate = if trimmed.starts_with('{') {
        trimmed.to_string()
    } else if looks_like_entry_start(trimmed) {
        format!("{{{trimmed}")
    } else {
        format!("{{{}{}", continuation_stub(start_id), trimmed)
    };
    candidate = normalize_quotes(&candidate);
    candidate = strip_trailing_commas(&candidate);
    candidate = balance_braces(&candidate);

    let reviews: BTreeMap<Id, Review> =
        serde_json::from_str(&candidate).map_err(|e| unrecoverable(e.to_string()))?;

    for (offset, (id, review)) in reviews.iter().enumerate() {
        let expected = start_id + offset as u64;
        if id.as_number() != Some(expected) {
            return Err(AugmentError::GapInIds {
                expected,
                found: id.to_string(),
            });
        }
        corpus::validate_review(review).map_err(|message| AugmentError::InvalidReview {
            id: id.to_string(),
            message,
        })?;
    }
    Ok(reviews)
}

/// Parses `traveler type: review` lines (the new-domain output format)
/// into reviews numbered from 0. Lines without a usable `type: text` shape
/// are skipped.
pub fn parse_typed_review_lines(text: &str) -> BTreeMap<Id, Review> {
    let mut reviews = BTreeMap::new();
    let mut next = 0u64;
    for line in text.lines() {
        let line = line
            .trim()
            .trim_start_matches(['-', '*', '•'])
            .trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ')')
            .trim();
        let Some((traveler_type, review_text)) = line.split_once(':') else {
            continue;
        };
        let traveler_type = traveler_type.trim();
        let review_text = review_text.trim();
        if traveler_type.is_empty() || review_text.is_empty() {
            continue;
        }
        let sentences: BTreeMap<Id, String> = split_sentences(review_text)
            .into_iter()
            .enumerate()
            .map(|(i, s)| (Id::from_number(i as u64), s))
            .collect();
        if sentences.is_empty() {
            continue;
        }
        reviews.insert(
            Id::from_number(next),
            Review {
                traveler_type: traveler_type.to_string(),
                sentences,
            },
        );
        next += 1;
    }
    reviews
}

/// Alias -> canonical traveler-type names. Canonical names are fixed
/// points: a canonical value never maps to something else.
#[derive(Debug, Clone)]
pub struct TravelerTypeMap {
    canonical: BTreeMap<String, String>,
}

impl TravelerTypeMap {
    /// The embedded map of near-duplicate traveler types.
    pub fn default_map() -> Self {
        Self::parse(DEFAULT_TYPE_MAP).expect("embedded map is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| AugmentError::MapIo {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, AugmentError> {
        let canonical: BTreeMap<String, String> =
            serde_json::from_str(raw).map_err(|e| AugmentError::BadTypeMap(e.to_string()))?;
        for target in canonical.values() {
            if let Some(mapped) = canonical.get(target) {
                if mapped != target {
                    return Err(AugmentError::BadTypeMap(format!(
                        "canonical name \"{target}\" is itself aliased to \"{mapped}\""
                    )));
                }
            }
        }
        Ok(TravelerTypeMap { canonical })
    }

    /// The canonical form of a type; aliases map, everything else is its
    /// own canonical form.
    pub fn normalize<'a>(&'a self, traveler_type: &'a str) -> &'a str {
        self.canonical
            .get(traveler_type)
            .map(String::as_str)
            .unwrap_or(traveler_type)
    }

    pub fn is_alias(&self, traveler_type: &str) -> bool {
        self.canonical.contains_key(traveler_type)
    }

    pub fn is_canonical_target(&self, traveler_type: &str) -> bool {
        self.canonical.values().any(|v| v == traveler_type)
    }
}

/// Rewrites traveler types to canonical form. Types that are neither an
/// alias nor a known canonical target pass through unchanged and come back
/// in the report.
pub fn normalize_traveler_types(
    reviews: &BTreeMap<Id, Review>,
    map: &TravelerTypeMap,
) -> (BTreeMap<Id, Review>, Vec<String>) {
    let mut unknown = Vec::new();
    let normalized = reviews
        .iter()
        .map(|(id, review)| {
            let t = review.traveler_type.as_str();
            if !map.is_alias(t) && !map.is_canonical_target(t) && !unknown.contains(&review.traveler_type)
            {
                unknown.push(review.traveler_type.clone());
            }
            (
                id.clone(),
                Review {
                    traveler_type: map.normalize(t).to_string(),
                    sentences: review.sentences.clone(),
                },
            )
        })
        .collect();
    (normalized, unknown)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeCount {
    pub traveler_type: String,
    pub original: usize,
    pub added: usize,
}

/// Review counts by traveler type and mean sentence length (chars) for
/// original vs added content.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentationStats {
    pub by_type: Vec<TypeCount>,
    pub original_reviews: usize,
    pub added_reviews: usize,
    pub avg_sentence_chars_original: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_sentence_chars_added: Option<f64>,
}

/// Compares an augmented knowledge base against the original it grew from.
/// Every original review must still be present.
pub fn augmentation_stats(
    original: &KnowledgeBase,
    augmented: &KnowledgeBase,
) -> Result<AugmentationStats, AugmentError> {
    let mut by_type: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut original_chars = 0usize;
    let mut original_sentences = 0usize;
    let mut added_chars = 0usize;
    let mut added_sentences = 0usize;
    let mut original_reviews = 0usize;
    let mut added_reviews = 0usize;

    for (domain, entities) in &augmented.domains {
        for (entity_id, entity) in entities {
            let original_entity = original
                .domains
                .get(domain)
                .and_then(|d| d.get(entity_id));
            for (review_id, review) in &entity.reviews {
                let is_original = original_entity
                    .map(|e| e.reviews.contains_key(review_id))
                    .unwrap_or(false);
                let slot = by_type.entry(review.traveler_type.clone()).or_insert((0, 0));
                let chars: usize = review.sentences.values().map(|s| s.chars().count()).sum();
                if is_original {
                    slot.0 += 1;
                    original_reviews += 1;
                    original_chars += chars;
                    original_sentences += review.sentences.len();
                } else {
                    slot.1 += 1;
                    added_reviews += 1;
                    added_chars += chars;
                    added_sentences += review.sentences.len();
                }
            }
        }
    }

    // superset check: every original review must survive
    for (domain, entities) in &original.domains {
        for (entity_id, entity) in entities {
            for review_id in entity.reviews.keys() {
                let present = augmented
                    .domains
                    .get(domain)
                    .and_then(|d| d.get(entity_id))
                    .map(|e| e.reviews.contains_key(review_id))
                    .unwrap_or(false);
                if !present {
                    return Err(AugmentError::NotSuperset {
                        missing: format!("{domain}/{entity_id}/review {review_id}"),
                    });
                }
            }
        }
    }

    let mut by_type: Vec<TypeCount> = by_type
        .into_iter()
        .map(|(traveler_type, (original, added))| TypeCount {
            traveler_type,
            original,
            added,
        })
        .collect();
    by_type.sort_by(|a, b| {
        b.original
            .cmp(&a.original)
            .then_with(|| b.added.cmp(&a.added))
            .then_with(|| a.traveler_type.cmp(&b.traveler_type))
    });

    Ok(AugmentationStats {
        by_type,
        original_reviews,
        added_reviews,
        avg_sentence_chars_original: if original_sentences > 0 {
            original_chars as f64 / original_sentences as f64
        } else {
            0.0
        },
        avg_sentence_chars_added: (added_sentences > 0)
            .then(|| added_chars as f64 / added_sentences as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_knowledge;
    use std::path::PathBuf;

    fn fixture(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    fn fixture_text(name: &str) -> String {
        std::fs::read_to_string(fixture(name)).unwrap()
    }

    fn appendix_entity() -> Entity {
        load_knowledge(fixture("knowledge_appendix.json"))
            .unwrap()
            .entity("hotel", &Id::from("0"))
            .unwrap()
            .clone()
    }

    fn mini_entity() -> Entity {
        let mut reviews = BTreeMap::new();
        let mut s0 = BTreeMap::new();
        s0.insert(
            Id::from("0"),
            "I was really happy with my recent stay at A and B Guest House.".to_string(),
        );
        reviews.insert(
            Id::from("0"),
            Review {
                traveler_type: "Solo travelers".to_string(),
                sentences: s0,
            },
        );
        let mut s1 = BTreeMap::new();
        s1.insert(
            Id::from("0"),
            "My husband was pleased to be able to park on site for free.".to_string(),
        );
        reviews.insert(
            Id::from("1"),
            Review {
                traveler_type: "Couples".to_string(),
                sentences: s1,
            },
        );
        Entity {
            name: "A AND B GUEST HOUSE".to_string(),
            reviews,
            faqs: BTreeMap::new(),
        }
    }

    #[test]
    fn review_prompt_matches_golden() {
        let bundle = build_review_prompt(&mini_entity(), 5, 256).unwrap();
        assert_eq!(
            bundle.text.as_deref().unwrap(),
            fixture_text("goldens/prompt_review_extension.txt")
        );
    }

    #[test]
    fn review_prompt_stub_continues_from_max_id() {
        let entity = appendix_entity();
        // appendix entity carries reviews 0-14, so the stub starts at 15
        let bundle = build_review_prompt(&entity, 5, 256).unwrap();
        let text = bundle.text.unwrap();
        assert!(text.ends_with("\"15\": {\"traveler_type\":"), "{text}");

        let mut base: Entity = entity.clone();
        base.reviews.retain(|id, _| id.as_number().unwrap() <= 9);
        let bundle = build_review_prompt(&base, 5, 256).unwrap();
        assert!(bundle.text.unwrap().ends_with("\"10\": {\"traveler_type\":"));

        let mut single = entity;
        single.reviews.retain(|id, _| id.as_number().unwrap() == 0);
        let bundle = build_review_prompt(&single, 5, 256).unwrap();
        assert!(bundle.text.unwrap().ends_with("\"1\": {\"traveler_type\":"));
    }

    #[test]
    fn review_prompt_requires_reviews() {
        let mut entity = mini_entity();
        entity.reviews.clear();
        assert!(matches!(
            build_review_prompt(&entity, 5, 256),
            Err(AugmentError::NoExistingReviews(_))
        ));
    }

    #[test]
    fn domain_prompt_matches_golden() {
        let mut faqs = BTreeMap::new();
        faqs.insert(
            Id::from("0"),
            Faq {
                question: "How long is the tour?".to_string(),
                answer: "The standard tour lasts about two hours.".to_string(),
            },
        );
        faqs.insert(
            Id::from("1"),
            Faq {
                question: "Are tickets refundable?".to_string(),
                answer: "Tickets can be refunded up to 24 hours in advance.".to_string(),
            },
        );
        let bundle = build_domain_review_prompt("Whale Watch Tours", &faqs, 256).unwrap();
        assert_eq!(
            bundle.text.as_deref().unwrap(),
            fixture_text("goldens/prompt_new_domain.txt")
        );
    }

    #[test]
    fn domain_prompt_requires_faqs() {
        assert!(matches!(
            build_domain_review_prompt("Anywhere", &BTreeMap::new(), 256),
            Err(AugmentError::NoFaqs(_))
        ));
    }

    #[test]
    fn parses_appendix_continuation() {
        let reviews = parse_generated_reviews(&fixture_text("augment_continuation.txt"), 10).unwrap();
        assert_eq!(reviews.len(), 5);
        let ids: Vec<&str> = reviews.keys().map(Id::as_str).collect();
        assert_eq!(ids, ["10", "11", "12", "13", "14"]);
        assert_eq!(reviews[&Id::from("10")].traveler_type, "Family travelers");
        assert_eq!(reviews[&Id::from("14")].traveler_type, "Pet owners");
        // content matches the knowledge file byte for byte
        let expected = appendix_entity().reviews;
        for (id, review) in &reviews {
            assert_eq!(review, &expected[id]);
        }
    }

    #[test]
    fn repairs_trailing_comma_and_missing_braces() {
        let reviews = parse_generated_reviews(
            &fixture_text("augment_continuation_trailing_comma.txt"),
            10,
        )
        .unwrap();
        assert_eq!(reviews.len(), 5);
        // review 14 lost its closing braces in the mutation; content survives
        assert_eq!(
            reviews[&Id::from("14")].sentences[&Id::from("3")],
            "The only downside was that there was no designated pet area for our dog to use the bathroom."
        );
    }

    #[test]
    fn repairs_single_quoted_entries() {
        let reviews = parse_generated_reviews(
            &fixture_text("augment_continuation_single_quotes.txt"),
            10,
        )
        .unwrap();
        assert_eq!(reviews.len(), 5);
        assert_eq!(reviews[&Id::from("12")].traveler_type, "Budget travelers");
    }

    #[test]
    fn unrecoverable_output_keeps_raw_text() {
        let raw = fixture_text("augment_continuation_garbage.txt");
        let err = parse_generated_reviews(&raw, 10).unwrap_err();
        match err {
            AugmentError::UnrecoverableParse { raw: kept, .. } => assert_eq!(kept, raw),
            other => panic!("expected UnrecoverableParse, got {other}"),
        }
    }

    #[test]
    fn well_formed_object_parses_directly() {
        let text = r#"{"3": {"traveler_type": "Foodies", "sentences": {"0": "Great snacks."}}}"#;
        let reviews = parse_generated_reviews(text, 3).unwrap();
        assert_eq!(reviews.len(), 1);
        assert_eq!(reviews[&Id::from("3")].traveler_type, "Foodies");
    }

    #[test]
    fn gap_in_ids_is_rejected() {
        let text = r#"{"10": {"traveler_type": "Foodies", "sentences": {"0": "A."}},
                       "12": {"traveler_type": "Retirees", "sentences": {"0": "B."}}}"#;
        let err = parse_generated_reviews(text, 10).unwrap_err();
        assert!(matches!(err, AugmentError::GapInIds { expected: 11, .. }), "{err}");
    }

    #[test]
    fn ids_never_overlap_existing_with_correct_start() {
        let entity = appendix_entity();
        let start = next_review_id(&entity);
        let text = format!(
            r#" "Foodies", "sentences": {{"0": "Tasty."}}}}, "{}": {{"traveler_type": "Retirees", "sentences": {{"0": "Calm."}}}}"#,
            start + 1
        );
        let reviews = parse_generated_reviews(&text, start).unwrap();
        for id in reviews.keys() {
            assert!(!entity.reviews.contains_key(id), "id {id} overlaps");
        }
    }

    #[test]
    fn typed_review_lines_parse() {
        let text = "Sure, here are three reviews:\n\
                    Family travelers: Great for kids. The pool was warm.\n\
                    - Solo travelers: Quiet and convenient.\n\
                    2. Couples: Very romantic spot at sunset!\n\
                    nonsense line without separator\n";
        let reviews = parse_typed_review_lines(text);
        assert_eq!(reviews.len(), 3);
        assert_eq!(reviews[&Id::from("0")].traveler_type, "Family travelers");
        assert_eq!(reviews[&Id::from("0")].sentences.len(), 2);
        assert_eq!(reviews[&Id::from("1")].traveler_type, "Solo travelers");
        assert_eq!(reviews[&Id::from("2")].traveler_type, "Couples");
    }

    #[test]
    fn normalizes_known_aliases_and_reports_unknowns() {
        let map = TravelerTypeMap::default_map();
        let mut reviews = BTreeMap::new();
        for (i, t) in ["Group of friends", "Couples", "Astronauts"].iter().enumerate() {
            let mut sentences = BTreeMap::new();
            sentences.insert(Id::from("0"), "Fine stay.".to_string());
            reviews.insert(
                Id::from_number(i as u64),
                Review {
                    traveler_type: t.to_string(),
                    sentences,
                },
            );
        }
        let (normalized, unknown) = normalize_traveler_types(&reviews, &map);
        assert_eq!(normalized[&Id::from("0")].traveler_type, "Friends");
        assert_eq!(normalized[&Id::from("1")].traveler_type, "Couples");
        assert_eq!(normalized[&Id::from("2")].traveler_type, "Astronauts");
        assert_eq!(unknown, ["Astronauts"]);
    }

    #[test]
    fn normalization_is_idempotent() {
        let map = TravelerTypeMap::default_map();
        let mut reviews = BTreeMap::new();
        let mut sentences = BTreeMap::new();
        sentences.insert(Id::from("0"), "x.".to_string());
        reviews.insert(
            Id::from("0"),
            Review {
                traveler_type: "Friends getaway".to_string(),
                sentences,
            },
        );
        let (once, _) = normalize_traveler_types(&reviews, &map);
        let (twice, _) = normalize_traveler_types(&once, &map);
        assert_eq!(once, twice);
    }

    #[test]
    fn type_map_rejects_non_fixed_points() {
        let err = TravelerTypeMap::parse(r#"{"A": "B", "B": "C"}"#).unwrap_err();
        assert!(matches!(err, AugmentError::BadTypeMap(_)), "{err}");
    }

    #[test]
    fn stats_on_appendix_split() {
        let original = load_knowledge(fixture("knowledge_base_10.json")).unwrap();
        let augmented = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let stats = augmentation_stats(&original, &augmented).unwrap();
        assert_eq!(stats.original_reviews, 10);
        assert_eq!(stats.added_reviews, 5);
        let solo = stats
            .by_type
            .iter()
            .find(|t| t.traveler_type == "Solo travelers")
            .unwrap();
        assert_eq!((solo.original, solo.added), (6, 0));
        let pets = stats
            .by_type
            .iter()
            .find(|t| t.traveler_type == "Pet owners")
            .unwrap();
        assert_eq!((pets.original, pets.added), (0, 1));
        assert!(stats.avg_sentence_chars_added.is_some());
    }

    #[test]
    fn stats_identity_has_no_added_average() {
        let kb = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let stats = augmentation_stats(&kb, &kb).unwrap();
        assert_eq!(stats.added_reviews, 0);
        assert_eq!(stats.avg_sentence_chars_added, None);
    }

    #[test]
    fn stats_hand_computed_added_lengths() {
        let original = load_knowledge(fixture("knowledge_base_10.json")).unwrap();
        let mut augmented = original.clone();
        let entity = augmented
            .domains
            .get_mut("hotel")
            .unwrap()
            .get_mut(&Id::from("0"))
            .unwrap();
        let mut s = BTreeMap::new();
        s.insert(Id::from("0"), "abcd".to_string()); // 4 chars
        s.insert(Id::from("1"), "abcdefgh".to_string()); // 8 chars
        entity.reviews.insert(
            Id::from("10"),
            Review {
                traveler_type: "Foodies".to_string(),
                sentences: s,
            },
        );
        let stats = augmentation_stats(&original, &augmented).unwrap();
        assert_eq!(stats.avg_sentence_chars_added, Some(6.0));
    }

    #[test]
    fn stats_reject_missing_original_content() {
        let original = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let augmented = load_knowledge(fixture("knowledge_base_10.json")).unwrap();
        assert!(matches!(
            augmentation_stats(&original, &augmented),
            Err(AugmentError::NotSuperset { .. })
        ));
    }

    #[test]
    fn merged_parsed_reviews_count_exactly_in_stats() {
        let original = load_knowledge(fixture("knowledge_base_10.json")).unwrap();
        let parsed = parse_generated_reviews(&fixture_text("augment_continuation.txt"), 10).unwrap();
        let mut extra = KnowledgeBase::default();
        extra.domains.entry("hotel".to_string()).or_default().insert(
            Id::from("0"),
            Entity {
                name: "A AND B GUEST HOUSE".to_string(),
                reviews: parsed.clone(),
                faqs: BTreeMap::new(),
            },
        );
        let merged = corpus::merge_knowledge(original.clone(), extra).unwrap();
        let stats = augmentation_stats(&original, &merged).unwrap();
        assert_eq!(stats.added_reviews, parsed.len());
        let added_by_type: usize = stats.by_type.iter().map(|t| t.added).sum();
        assert_eq!(added_by_type, parsed.len());
    }
}
