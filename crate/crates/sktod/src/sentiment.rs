//! Lexicon-based sentence sentiment and Pearson correlation.
//!
//! Scoring is the mean valence of matched tokens, with a sign flip for any
//! valence token preceded by a negator within a fixed window. The default
//! lexicon is embedded; a replacement can be loaded from a
//! `token<TAB>score` file (`#` comments allowed).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{self, CorpusError, KnowledgeBase, KnowledgeRef};

const DEFAULT_LEXICON: &str = include_str!("data/sentiment_lexicon.tsv");
const DEFAULT_NEGATION_WINDOW: usize = 3;

const DEFAULT_NEGATORS: &[&str] = &[
    "not", "no", "never", "none", "nobody", "nothing", "neither", "nor", "nowhere", "hardly",
    "barely", "scarcely", "without", "cannot", "can't", "don't", "doesn't", "didn't", "isn't",
    "aren't", "wasn't", "weren't", "won't", "wouldn't", "couldn't", "shouldn't", "hasn't",
    "haven't", "hadn't",
];

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("failed to read lexicon {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon line {line}: {message}")]
    BadLexiconLine { line: usize, message: String },
    #[error("valence for \"{token}\" is {score}, outside [-1, 1]")]
    ScoreOutOfRange { token: String, score: f64 },
    #[error("\"{0}\" is both a negator and a valence token")]
    NegatorCollision(String),
    #[error("inputs have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 paired observations, got {0}")]
    TooShort(usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error(transparent)]
    Resolution(#[from] CorpusError),
}

/// Token valences plus negation handling. Immutable once built.
#[derive(Debug, Clone)]
pub struct SentimentLexicon {
    valences: BTreeMap<String, f64>,
    negators: BTreeSet<String>,
    negation_window: usize,
}

impl SentimentLexicon {
    /// The embedded hospitality-tuned lexicon with default negators and a
    /// 3-token negation window.
    pub fn default_lexicon() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("embedded lexicon is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SentimentError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| SentimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, SentimentError> {
        let mut valences = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (token, score) = line.split_once('\t').ok_or(SentimentError::BadLexiconLine {
                line: i + 1,
                message: "expected \"token<TAB>score\"".to_string(),
            })?;
            let token = token.trim().to_lowercase();
            let score: f64 = score.trim().parse().map_err(|e| SentimentError::BadLexiconLine {
                line: i + 1,
                message: format!("bad score: {e}"),
            })?;
            if !(-1.0..=1.0).contains(&score) {
                return Err(SentimentError::ScoreOutOfRange { token, score });
            }
            valences.insert(token, score);
        }
        Self::with_valences(valences)
    }

    pub fn with_valences(valences: BTreeMap<String, f64>) -> Result<Self, SentimentError> {
        let negators: BTreeSet<String> = DEFAULT_NEGATORS.iter().map(|s| s.to_string()).collect();
        for negator in &negators {
            if valences.contains_key(negator) {
                return Err(SentimentError::NegatorCollision(negator.clone()));
            }
        }
        Ok(SentimentLexicon {
            valences,
            negators,
            negation_window: DEFAULT_NEGATION_WINDOW,
        })
    }

    pub fn negation_window(&self) -> usize {
        self.negation_window
    }

    pub fn valence(&self, token: &str) -> Option<f64> {
        self.valences.get(token).copied()
    }

    pub(crate) fn is_negative_cue(&self, text: &str) -> bool {
        score_text(self, text) < 0.0
    }
}

/// Lowercased word tokens; internal apostrophes stay inside the token so
/// negators like "don't" survive.
fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '\'' || c == '\u{2019}' {
            for lc in c.to_lowercase() {
                current.push(if lc == '\u{2019}' { '\'' } else { lc });
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Scores text in [-1, 1]: mean valence of lexicon hits, sign flipped when
/// a negator appears within the window before the hit. No hits scores 0.
pub fn score_text(lex: &SentimentLexicon, text: &str) -> f64 {
    let tokens = word_tokens(text);
    let mut hits = Vec::new();
    for (i, token) in tokens.iter().enumerate() {
        let Some(valence) = lex.valence(token) else {
            continue;
        };
        let window_start = i.saturating_sub(lex.negation_window);
        let negated = tokens[window_start..i].iter().any(|t| lex.negators.contains(t));
        hits.push(if negated { -valence } else { valence });
    }
    if hits.is_empty() {
        return 0.0;
    }
    let mean = hits.iter().sum::<f64>() / hits.len() as f64;
    mean.clamp(-1.0, 1.0)
}

/// Per-dialogue sentiment over the knowledge items a dialogue selected.
/// `mean` and `std` are population statistics over `per_item`.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueSentiment {
    pub mean: f64,
    pub std: f64,
    pub per_item: Vec<f64>,
}

pub fn dialogue_knowledge_sentiment(
    lex: &SentimentLexicon,
    kb: &KnowledgeBase,
    refs: &[KnowledgeRef],
) -> Result<DialogueSentiment, SentimentError> {
    let per_item: Vec<f64> = corpus::resolve_refs(kb, refs)?
        .iter()
        .map(|snippet| score_text(lex, &snippet.text))
        .collect();
    let (mean, std) = mean_std(&per_item);
    Ok(DialogueSentiment { mean, std, per_item })
}

/// Population mean and standard deviation; (0, 0) for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Product-moment correlation of two equal-length series.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, SentimentError> {
    if xs.len() != ys.len() {
        return Err(SentimentError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(SentimentError::TooShort(xs.len()));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(SentimentError::ZeroVariance("xs"));
    }
    if var_y == 0.0 {
        return Err(SentimentError::ZeroVariance("ys"));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}
