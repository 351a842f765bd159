//! Knowledge base, dialogue, label, and prediction I/O.
//!
//! All ids (entities, reviews, FAQs, sentences) are decimal strings, kept
//! as strings so files round-trip without renumbering; ordering compares
//! them numerically. Knowledge files are a nested JSON object
//! `{domain -> {entity_id -> {name, reviews, faqs}}}`, logs are an array
//! of dialogues (each an array of `{"speaker": "U"|"S", "text"}` turns),
//! and labels/predictions are arrays aligned index-by-index with the logs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("logs and labels are misaligned: {logs} dialogues vs {labels} labels")]
    LengthMismatch { logs: usize, labels: usize },
    #[error("unknown domain \"{0}\"")]
    UnknownDomain(String),
    #[error("unknown entity \"{entity_id}\" in domain \"{domain}\"")]
    UnknownEntity { domain: String, entity_id: Id },
    #[error("unknown review \"{doc_id}\" for entity \"{entity_id}\" in domain \"{domain}\"")]
    UnknownReview {
        domain: String,
        entity_id: Id,
        doc_id: Id,
    },
    #[error("unknown faq \"{doc_id}\" for entity \"{entity_id}\" in domain \"{domain}\"")]
    UnknownFaq {
        domain: String,
        entity_id: Id,
        doc_id: Id,
    },
    #[error(
        "unknown sentence \"{sent_id}\" in review \"{doc_id}\" for entity \"{entity_id}\" in domain \"{domain}\""
    )]
    UnknownSentence {
        domain: String,
        entity_id: Id,
        doc_id: Id,
        sent_id: Id,
    },
    #[error("review ref {domain}/{entity_id}/{doc_id} is missing a sentence id")]
    MissingSentenceId {
        domain: String,
        entity_id: Id,
        doc_id: Id,
    },
    #[error("cannot merge entity \"{entity_id}\" into domain \"{domain}\": not present in base and no name given")]
    MergeUnknownEntity { domain: String, entity_id: Id },
    #[error("prediction ids must be contiguous from 0: found id {found} at position {position}")]
    NonContiguousIds { position: usize, found: usize },
}

type Result<T> = std::result::Result<T, CorpusError>;

/// A decimal-string identifier. Compares numerically so that `"10"` sorts
/// after `"9"`, while serializing back to the exact original string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Id(String);

impl Id {
    pub fn new(s: impl Into<String>) -> Self {
        Id(s.into())
    }

    pub fn from_number(n: u64) -> Self {
        Id(n.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_number(&self) -> Option<u64> {
        self.0.parse().ok()
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Id {
    fn from(s: &str) -> Self {
        Id(s.to_string())
    }
}

impl Ord for Id {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self.0.parse::<u64>(), other.0.parse::<u64>()) {
            (Ok(a), Ok(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Ok(_), Err(_)) => std::cmp::Ordering::Less,
            (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
            (Err(_), Err(_)) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for Id {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<'de> Deserialize<'de> for Id {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct IdVisitor;
        impl Visitor<'_> for IdVisitor {
            type Value = Id;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a decimal-string or integer id")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Id, E> {
                Ok(Id(v.to_string()))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Id, E> {
                Ok(Id(v.to_string()))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Id, E> {
                Ok(Id(v.to_string()))
            }
        }
        deserializer.deserialize_any(IdVisitor)
    }
}

/// Deserializes a JSON object into an id-keyed map, rejecting duplicate keys
/// (plain serde maps silently keep the last entry).
fn unique_map<'de, D, V>(deserializer: D) -> std::result::Result<BTreeMap<Id, V>, D::Error>
where
    D: Deserializer<'de>,
    V: Deserialize<'de>,
{
    struct MapVisitor<V>(std::marker::PhantomData<V>);
    impl<'de, V: Deserialize<'de>> Visitor<'de> for MapVisitor<V> {
        type Value = BTreeMap<Id, V>;
        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a map of id -> value")
        }
        fn visit_map<A: MapAccess<'de>>(
            self,
            mut access: A,
        ) -> std::result::Result<Self::Value, A::Error> {
            let mut map = BTreeMap::new();
            while let Some((key, value)) = access.next_entry::<Id, V>()? {
                if map.insert(key.clone(), value).is_some() {
                    return Err(de::Error::custom(format!("duplicate id \"{key}\"")));
                }
            }
            Ok(map)
        }
    }
    deserializer.deserialize_map(MapVisitor(std::marker::PhantomData))
}

fn unique_domain_map<'de, D>(
    deserializer: D,
) -> std::result::Result<BTreeMap<String, BTreeMap<Id, Entity>>, D::Error>
where
    D: Deserializer<'de>,
{
    struct DomainVisitor;
    impl<'de> Visitor<'de> for DomainVisitor {
        type Value = BTreeMap<String, BTreeMap<Id, Entity>>;
        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a map of domain -> entities")
        }
        fn visit_map<A: MapAccess<'de>>(
            self,
            mut access: A,
        ) -> std::result::Result<Self::Value, A::Error> {
            let mut map = BTreeMap::new();
            while let Some(key) = access.next_key::<String>()? {
                let value = access.next_value_seed(UniqueEntities)?;
                if map.insert(key.clone(), value).is_some() {
                    return Err(de::Error::custom(format!("duplicate domain \"{key}\"")));
                }
            }
            Ok(map)
        }
    }
    struct UniqueEntities;
    impl<'de> de::DeserializeSeed<'de> for UniqueEntities {
        type Value = BTreeMap<Id, Entity>;
        fn deserialize<D: Deserializer<'de>>(
            self,
            deserializer: D,
        ) -> std::result::Result<Self::Value, D::Error> {
            unique_map(deserializer)
        }
    }
    deserializer.deserialize_map(DomainVisitor)
}

/// One review: a traveler type plus numbered sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub traveler_type: String,
    #[serde(deserialize_with = "unique_map")]
    pub sentences: BTreeMap<Id, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Faq {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    #[serde(default, deserialize_with = "unique_map")]
    pub reviews: BTreeMap<Id, Review>,
    #[serde(default, deserialize_with = "unique_map")]
    pub faqs: BTreeMap<Id, Faq>,
}

/// The subjective knowledge source: domains of entities carrying reviews
/// and FAQs. Immutable after load; share freely across threads.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    #[serde(flatten, deserialize_with = "unique_domain_map")]
    pub domains: BTreeMap<String, BTreeMap<Id, Entity>>,
}

impl KnowledgeBase {
    pub fn entity_count(&self) -> usize {
        self.domains.values().map(|d| d.len()).sum()
    }

    pub fn review_count(&self) -> usize {
        self.domains
            .values()
            .flat_map(|d| d.values())
            .map(|e| e.reviews.len())
            .sum()
    }

    pub fn sentence_count(&self) -> usize {
        self.domains
            .values()
            .flat_map(|d| d.values())
            .flat_map(|e| e.reviews.values())
            .map(|r| r.sentences.len())
            .sum()
    }

    pub fn entity(&self, domain: &str, entity_id: &Id) -> Result<&Entity> {
        let entities = self
            .domains
            .get(domain)
            .ok_or_else(|| CorpusError::UnknownDomain(domain.to_string()))?;
        entities
            .get(entity_id)
            .ok_or_else(|| CorpusError::UnknownEntity {
                domain: domain.to_string(),
                entity_id: entity_id.clone(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocType {
    Review,
    Faq,
}

/// Pointer from a label or prediction into the knowledge base.
/// `sent_id` is present exactly when `doc_type` is [`DocType::Review`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KnowledgeRef {
    pub domain: String,
    pub entity_id: Id,
    pub doc_type: DocType,
    pub doc_id: Id,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent_id: Option<Id>,
}

impl KnowledgeRef {
    pub fn review(domain: &str, entity_id: impl Into<Id>, doc_id: impl Into<Id>, sent_id: impl Into<Id>) -> Self {
        KnowledgeRef {
            domain: domain.to_string(),
            entity_id: entity_id.into(),
            doc_type: DocType::Review,
            doc_id: doc_id.into(),
            sent_id: Some(sent_id.into()),
        }
    }

    pub fn faq(domain: &str, entity_id: impl Into<Id>, doc_id: impl Into<Id>) -> Self {
        KnowledgeRef {
            domain: domain.to_string(),
            entity_id: entity_id.into(),
            doc_type: DocType::Faq,
            doc_id: doc_id.into(),
            sent_id: None,
        }
    }
}

impl From<u64> for Id {
    fn from(n: u64) -> Self {
        Id::from_number(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnippetKind {
    Review,
    Faq,
}

/// A single resolved knowledge item: one review sentence or one FAQ pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snippet {
    pub kind: SnippetKind,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "U")]
    User,
    #[serde(rename = "S")]
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

/// Gold annotation for one dialogue: whether the final user turn seeks
/// knowledge, which items answer it, and the reference response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub target: bool,
    pub refs: Vec<KnowledgeRef>,
    pub response: String,
}

/// One dialogue context with its position in the file as `id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueInstance {
    pub id: usize,
    pub turns: Vec<Turn>,
    pub label: Option<Label>,
}

impl DialogueInstance {
    /// Text of the final user turn, if the dialogue ends with one.
    pub fn last_user_turn(&self) -> Option<&str> {
        self.turns
            .last()
            .filter(|t| t.speaker == Speaker::User)
            .map(|t| t.text.as_str())
    }

    pub fn is_seeking(&self) -> bool {
        self.label.as_ref().is_some_and(|l| l.target)
    }
}

/// System output for one dialogue instance, aligned by `id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub id: usize,
    pub target: bool,
    pub refs: Vec<KnowledgeRef>,
    pub response: String,
    pub truncated: bool,
}

impl Prediction {
    pub fn non_seeking(id: usize) -> Self {
        Prediction {
            id,
            target: false,
            refs: Vec::new(),
            response: String::new(),
            truncated: false,
        }
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_json<T: de::DeserializeOwned>(path: &Path, raw: &str) -> Result<T> {
    serde_json::from_str(raw).map_err(|source| CorpusError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn invalid(path: &Path, message: impl Into<String>) -> CorpusError {
    CorpusError::Invalid {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads a knowledge file and checks every invariant: non-empty entity
/// names, non-empty traveler types, at least one sentence per review with
/// sentence ids contiguous from 0, and non-empty FAQ fields.
pub fn load_knowledge(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let raw = read_file(path)?;
    let kb: KnowledgeBase = parse_json(path, &raw)?;
    validate_knowledge(&kb).map_err(|message| invalid(path, message))?;
    Ok(kb)
}

pub(crate) fn validate_knowledge(kb: &KnowledgeBase) -> std::result::Result<(), String> {
    for (domain, entities) in &kb.domains {
        for (entity_id, entity) in entities {
            let at = format!("{domain}/{entity_id}");
            if entity.name.trim().is_empty() {
                return Err(format!("entity {at} has an empty name"));
            }
            for (review_id, review) in &entity.reviews {
                validate_review(review).map_err(|m| format!("review {at}/{review_id}: {m}"))?;
            }
            for (faq_id, faq) in &entity.faqs {
                if faq.question.trim().is_empty() || faq.answer.trim().is_empty() {
                    return Err(format!("faq {at}/{faq_id} has an empty question or answer"));
                }
            }
        }
    }
    Ok(())
}

pub(crate) fn validate_review(review: &Review) -> std::result::Result<(), String> {
    if review.traveler_type.trim().is_empty() {
        return Err("empty traveler_type".to_string());
    }
    if review.sentences.is_empty() {
        return Err("no sentences".to_string());
    }
    for (i, sent_id) in review.sentences.keys().enumerate() {
        if sent_id.as_number() != Some(i as u64) {
            return Err(format!(
                "sentence ids must be contiguous from 0, found \"{sent_id}\" at position {i}"
            ));
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct LabelWire {
    target: bool,
    #[serde(default)]
    knowledge: Vec<KnowledgeRef>,
    #[serde(default)]
    response: String,
    #[serde(default)]
    truncated: bool,
}

/// Loads dialogue logs and, when given, the aligned labels file.
/// `labels_path = None` is inference mode: every instance gets `label: None`.
pub fn load_dialogues(
    logs_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
) -> Result<Vec<DialogueInstance>> {
    let logs_path = logs_path.as_ref();
    let raw = read_file(logs_path)?;
    let logs: Vec<Vec<Turn>> = parse_json(logs_path, &raw)?;
    for (i, turns) in logs.iter().enumerate() {
        if turns.is_empty() {
            return Err(invalid(logs_path, format!("dialogue {i} has no turns")));
        }
        for (j, turn) in turns.iter().enumerate() {
            if turn.text.trim().is_empty() {
                return Err(invalid(
                    logs_path,
                    format!("dialogue {i} turn {j} has empty text"),
                ));
            }
        }
    }

    let labels: Option<Vec<LabelWire>> = match labels_path {
        Some(p) => {
            let raw = read_file(p)?;
            Some(parse_json(p, &raw)?)
        }
        None => None,
    };

    if let Some(labels) = &labels {
        if labels.len() != logs.len() {
            return Err(CorpusError::LengthMismatch {
                logs: logs.len(),
                labels: labels.len(),
            });
        }
    }

    let mut instances = Vec::with_capacity(logs.len());
    for (id, turns) in logs.into_iter().enumerate() {
        let label = labels.as_ref().map(|ls| {
            let wire = &ls[id];
            Label {
                target: wire.target,
                refs: wire.knowledge.clone(),
                response: wire.response.clone(),
            }
        });
        if let (Some(label), Some(p)) = (&label, labels_path) {
            if label.target && label.refs.is_empty() {
                return Err(invalid(
                    p,
                    format!("instance {id}: target is true but knowledge is empty"),
                ));
            }
            if !label.target && !label.refs.is_empty() {
                return Err(invalid(
                    p,
                    format!("instance {id}: target is false but knowledge is non-empty"),
                ));
            }
            if label.target && turns.last().map(|t| t.speaker) != Some(Speaker::User) {
                return Err(invalid(
                    p,
                    format!("instance {id}: knowledge-seeking dialogue must end with a user turn"),
                ));
            }
        }
        instances.push(DialogueInstance { id, turns, label });
    }
    Ok(instances)
}

/// Resolves a reference to its text: the single sentence for review refs,
/// `"question answer"` joined with one space for FAQ refs.
pub fn resolve_ref(kb: &KnowledgeBase, r: &KnowledgeRef) -> Result<Snippet> {
    let entity = kb.entity(&r.domain, &r.entity_id)?;
    match r.doc_type {
        DocType::Review => {
            let review = entity
                .reviews
                .get(&r.doc_id)
                .ok_or_else(|| CorpusError::UnknownReview {
                    domain: r.domain.clone(),
                    entity_id: r.entity_id.clone(),
                    doc_id: r.doc_id.clone(),
                })?;
            let sent_id = r.sent_id.as_ref().ok_or_else(|| CorpusError::MissingSentenceId {
                domain: r.domain.clone(),
                entity_id: r.entity_id.clone(),
                doc_id: r.doc_id.clone(),
            })?;
            let text = review
                .sentences
                .get(sent_id)
                .ok_or_else(|| CorpusError::UnknownSentence {
                    domain: r.domain.clone(),
                    entity_id: r.entity_id.clone(),
                    doc_id: r.doc_id.clone(),
                    sent_id: sent_id.clone(),
                })?;
            Ok(Snippet {
                kind: SnippetKind::Review,
                text: text.clone(),
            })
        }
        DocType::Faq => {
            let faq = entity
                .faqs
                .get(&r.doc_id)
                .ok_or_else(|| CorpusError::UnknownFaq {
                    domain: r.domain.clone(),
                    entity_id: r.entity_id.clone(),
                    doc_id: r.doc_id.clone(),
                })?;
            Ok(Snippet {
                kind: SnippetKind::Faq,
                text: format!("{} {}", faq.question, faq.answer),
            })
        }
    }
}

/// Resolves a list of refs in order, propagating the first failure.
pub fn resolve_refs(kb: &KnowledgeBase, refs: &[KnowledgeRef]) -> Result<Vec<Snippet>> {
    refs.iter().map(|r| resolve_ref(kb, r)).collect()
}

/// Merges `extra` into `base`. Base content is never touched. Extra reviews
/// and FAQs whose ids collide with existing ones are renumbered to continue
/// after the highest id in use; entities and domains missing from base are
/// added as long as they carry a name.
pub fn merge_knowledge(base: KnowledgeBase, extra: KnowledgeBase) -> Result<KnowledgeBase> {
    let mut merged = base;
    for (domain, entities) in extra.domains {
        let target_domain = merged.domains.entry(domain.clone()).or_default();
        for (entity_id, entity) in entities {
            match target_domain.get_mut(&entity_id) {
                Some(existing) => {
                    merge_docs(&mut existing.reviews, entity.reviews);
                    merge_docs(&mut existing.faqs, entity.faqs);
                }
                None => {
                    if entity.name.trim().is_empty() {
                        return Err(CorpusError::MergeUnknownEntity { domain, entity_id });
                    }
                    target_domain.insert(entity_id, entity);
                }
            }
        }
    }
    Ok(merged)
}

fn merge_docs<V>(base: &mut BTreeMap<Id, V>, extra: BTreeMap<Id, V>) {
    for (id, doc) in extra {
        if base.contains_key(&id) {
            let next = base
                .keys()
                .filter_map(Id::as_number)
                .max()
                .map_or(0, |m| m + 1);
            base.insert(Id::from_number(next), doc);
        } else {
            base.insert(id, doc);
        }
    }
}

pub fn write_knowledge(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = serde_json::to_string_pretty(kb).expect("knowledge serializes");
    std::fs::write(path, body + "\n").map_err(|source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    })
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.target {
            let mut map = serializer.serialize_map(Some(1))?;
            map.serialize_entry("target", &false)?;
            map.end()
        } else {
            let mut map = serializer.serialize_map(Some(4))?;
            map.serialize_entry("target", &true)?;
            map.serialize_entry("knowledge", &self.refs)?;
            map.serialize_entry("response", &self.response)?;
            map.serialize_entry("truncated", &self.truncated)?;
            map.end()
        }
    }
}

/// Writes predictions as a labels-shaped JSON array. Non-seeking entries
/// serialize as `{"target": false}` only. Ids must be contiguous from 0;
/// the array position carries the id on the way back in.
pub fn write_predictions(preds: &[Prediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for (position, pred) in preds.iter().enumerate() {
        if pred.id != position {
            return Err(CorpusError::NonContiguousIds {
                position,
                found: pred.id,
            });
        }
    }
    let body = serde_json::to_string_pretty(preds).expect("predictions serialize");
    std::fs::write(path, body + "\n").map_err(|source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let raw = read_file(path)?;
    parse_predictions(path, &raw)
}

pub(crate) fn parse_predictions(path: &Path, raw: &str) -> Result<Vec<Prediction>> {
    let wires: Vec<serde_json::Value> = parse_json(path, raw)?;
    let mut preds = Vec::with_capacity(wires.len());
    for (id, value) in wires.into_iter().enumerate() {
        let wire: LabelWire = serde_json::from_value(value).map_err(|e| {
            invalid(path, format!("malformed prediction at index {id}: {e}"))
        })?;
        preds.push(Prediction {
            id,
            target: wire.target,
            refs: wire.knowledge,
            response: wire.response,
            truncated: wire.truncated,
        });
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    #[test]
    fn id_orders_numerically() {
        let mut ids: Vec<Id> = ["10", "2", "0", "14"].iter().map(|s| Id::from(*s)).collect();
        ids.sort();
        let order: Vec<&str> = ids.iter().map(Id::as_str).collect();
        assert_eq!(order, ["0", "2", "10", "14"]);
    }

    #[test]
    fn loads_appendix_knowledge() {
        let kb = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let entity = kb.entity("hotel", &Id::from("0")).unwrap();
        assert_eq!(entity.name, "A AND B GUEST HOUSE");
        assert_eq!(entity.reviews.len(), 15);
        assert_eq!(entity.faqs.len(), 10);
        let ids: Vec<&str> = entity.reviews.keys().map(Id::as_str).collect();
        assert_eq!(ids.first(), Some(&"0"));
        assert_eq!(ids.last(), Some(&"14"));
    }

    #[test]
    fn empty_domains_object_is_empty_base() {
        let kb: KnowledgeBase = serde_json::from_str("{}").unwrap();
        assert_eq!(kb.entity_count(), 0);
        assert_eq!(kb.review_count(), 0);
    }

    #[test]
    fn duplicate_review_id_is_rejected() {
        let raw = r#"{"hotel": {"0": {"name": "X", "reviews": {
            "0": {"traveler_type": "Couples", "sentences": {"0": "Nice."}},
            "0": {"traveler_type": "Families", "sentences": {"0": "Bad."}}
        }, "faqs": {}}}}"#;
        let err = serde_json::from_str::<KnowledgeBase>(raw).unwrap_err();
        assert!(err.to_string().contains("duplicate id"), "{err}");
    }

    #[test]
    fn review_with_gap_in_sentence_ids_is_invalid() {
        let raw = r#"{"hotel": {"0": {"name": "X", "reviews": {
            "0": {"traveler_type": "Couples", "sentences": {"0": "A.", "2": "B."}}
        }, "faqs": {}}}}"#;
        let kb: KnowledgeBase = serde_json::from_str(raw).unwrap();
        let err = validate_knowledge(&kb).unwrap_err();
        assert!(err.contains("contiguous"), "{err}");
    }

    #[test]
    fn resolves_review_sentence_and_faq() {
        let kb = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let review = resolve_ref(&kb, &KnowledgeRef::review("hotel", 0, 0, 0)).unwrap();
        assert_eq!(review.kind, SnippetKind::Review);
        assert_eq!(
            review.text,
            "I was really happy with my recent stay at A and B Guest House."
        );
        let faq = resolve_ref(&kb, &KnowledgeRef::faq("hotel", 0, 1)).unwrap();
        assert_eq!(faq.kind, SnippetKind::Faq);
        assert_eq!(
            faq.text,
            "Can I bring my pet to A and B Guest House? No, pets are not allowed at this property."
        );
    }

    #[test]
    fn resolve_names_the_missing_level() {
        let kb = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let err = resolve_ref(&kb, &KnowledgeRef::review("hotel", 999, 0, 0)).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownEntity { .. }), "{err}");
        let err = resolve_ref(&kb, &KnowledgeRef::review("spa", 0, 0, 0)).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownDomain(_)), "{err}");
        let err = resolve_ref(&kb, &KnowledgeRef::review("hotel", 0, 0, 99)).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownSentence { .. }), "{err}");
    }

    #[test]
    fn review_ref_without_sentence_id_is_rejected() {
        let kb = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let mut r = KnowledgeRef::review("hotel", 0, 0, 0);
        r.sent_id = None;
        let err = resolve_ref(&kb, &r).unwrap_err();
        assert!(matches!(err, CorpusError::MissingSentenceId { .. }));
    }

    #[test]
    fn merge_extends_reviews_and_keeps_base_intact() {
        let base = load_knowledge(fixture("knowledge_base_10.json")).unwrap();
        let extra = load_knowledge(fixture("knowledge_extra_5.json")).unwrap();
        let full = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let merged = merge_knowledge(base.clone(), extra).unwrap();
        assert_eq!(merged, full);
        // every base sentence survives byte-identical
        let merged_entity = merged.entity("hotel", &Id::from("0")).unwrap();
        let base_entity = base.entity("hotel", &Id::from("0")).unwrap();
        for (id, review) in &base_entity.reviews {
            assert_eq!(merged_entity.reviews.get(id), Some(review));
        }
    }

    #[test]
    fn merge_with_empty_extra_is_identity() {
        let base = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let merged = merge_knowledge(base.clone(), KnowledgeBase::default()).unwrap();
        assert_eq!(merged, base);
    }

    #[test]
    fn merge_renumbers_colliding_review_ids() {
        let base = load_knowledge(fixture("knowledge_base_10.json")).unwrap();
        let mut extra = KnowledgeBase::default();
        let mut entity = Entity {
            name: "A AND B GUEST HOUSE".to_string(),
            reviews: BTreeMap::new(),
            faqs: BTreeMap::new(),
        };
        let mut sentences = BTreeMap::new();
        sentences.insert(Id::from("0"), "Colliding content survives.".to_string());
        entity.reviews.insert(
            Id::from("3"),
            Review {
                traveler_type: "Couples".to_string(),
                sentences,
            },
        );
        extra
            .domains
            .entry("hotel".to_string())
            .or_default()
            .insert(Id::from("0"), entity);

        let before: Vec<String> = {
            let e = base.entity("hotel", &Id::from("0")).unwrap();
            e.reviews
                .values()
                .flat_map(|r| r.sentences.values().cloned())
                .collect()
        };
        let merged = merge_knowledge(base, extra).unwrap();
        let entity = merged.entity("hotel", &Id::from("0")).unwrap();
        // original id 3 untouched, new review got id 10
        assert_eq!(entity.reviews.len(), 11);
        assert_eq!(
            entity.reviews[&Id::from("10")].sentences[&Id::from("0")],
            "Colliding content survives."
        );
        // sentence multiset = before + the one added sentence
        let mut after: Vec<String> = entity
            .reviews
            .values()
            .flat_map(|r| r.sentences.values().cloned())
            .collect();
        let mut expected = before;
        expected.push("Colliding content survives.".to_string());
        after.sort();
        expected.sort();
        assert_eq!(after, expected);
    }

    #[test]
    fn merge_rejects_new_entity_without_name() {
        let base = load_knowledge(fixture("knowledge_base_10.json")).unwrap();
        let raw = r#"{"hotel": {"7": {"name": " ", "reviews": {}, "faqs": {}}}}"#;
        let extra: KnowledgeBase = serde_json::from_str(raw).unwrap();
        let err = merge_knowledge(base, extra).unwrap_err();
        assert!(matches!(err, CorpusError::MergeUnknownEntity { .. }));
    }

    #[test]
    fn loads_dialogues_with_labels() {
        let instances = load_dialogues(
            fixture("logs.json"),
            Some(fixture("labels.json").as_path()),
        )
        .unwrap();
        assert_eq!(instances.len(), 6);
        assert!(instances[0].is_seeking());
        assert!(!instances[2].is_seeking());
        assert_eq!(instances[0].id, 0);
        assert!(instances[0].last_user_turn().is_some());
    }

    #[test]
    fn loads_dialogues_without_labels() {
        let instances = load_dialogues(fixture("logs.json"), None).unwrap();
        assert_eq!(instances.len(), 6);
        assert!(instances.iter().all(|i| i.label.is_none()));
    }

    #[test]
    fn misaligned_labels_error() {
        let err = load_dialogues(
            fixture("logs.json"),
            Some(fixture("labels_short.json").as_path()),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            CorpusError::LengthMismatch { logs: 6, labels: 2 }
        ));
    }

    #[test]
    fn all_label_refs_resolve() {
        let kb = load_knowledge(fixture("knowledge_appendix.json")).unwrap();
        let instances = load_dialogues(
            fixture("logs.json"),
            Some(fixture("labels.json").as_path()),
        )
        .unwrap();
        for inst in &instances {
            if let Some(label) = &inst.label {
                for r in &label.refs {
                    resolve_ref(&kb, r).unwrap();
                }
            }
        }
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.json");
        let preds = vec![
            Prediction {
                id: 0,
                target: true,
                refs: vec![KnowledgeRef::review("hotel", 0, 1, 1), KnowledgeRef::faq("hotel", 0, 4)],
                response: "It can be noisy at night. Would you like to know more?".to_string(),
                truncated: true,
            },
            Prediction::non_seeking(1),
        ];
        write_predictions(&preds, &path).unwrap();
        let loaded = load_predictions(&path).unwrap();
        assert_eq!(loaded, preds);

        let raw = std::fs::read_to_string(&path).unwrap();
        let values: Vec<serde_json::Value> = serde_json::from_str(&raw).unwrap();
        assert_eq!(values[1], serde_json::json!({"target": false}));
    }

    #[test]
    fn write_rejects_non_contiguous_ids() {
        let dir = tempfile::tempdir().unwrap();
        let preds = vec![Prediction::non_seeking(3)];
        let err = write_predictions(&preds, dir.path().join("p.json")).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::NonContiguousIds { position: 0, found: 3 }
        ));
    }

    #[test]
    fn write_to_unwritable_path_is_io_error() {
        let err = write_predictions(&[], Path::new("/nonexistent-dir/preds.json")).unwrap_err();
        assert!(matches!(err, CorpusError::Write { .. }));
    }

    #[test]
    fn malformed_prediction_names_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"[{"target": true}, {"target": "yes"}]"#).unwrap();
        let err = load_predictions(&path).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }
}
