//! Self-contained generation and task metrics: BLEU, METEOR, ROUGE-1/2/L,
//! detection and selection P/R/F1/EM, MRR, and full-report assembly.
//!
//! Generation scores are sentence level, macro-averaged over instances.
//! BLEU uses n-grams 1-4 with uniform weights and epsilon smoothing
//! (1e-9) for zero counts. METEOR aligns unigrams in two stages (exact,
//! then Porter-stem match) with no synonym stage, F_mean = 10PR/(R+9P),
//! and a fragmentation penalty of 0.5 * (chunks/matches)^3.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DialogueInstance, KnowledgeRef, Prediction};
use crate::stem::stem;

const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("inputs have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("predictions do not align with instances: {0} predictions vs {1} instances")]
    Misaligned(usize, usize),
    #[error("cannot compute MRR over an empty rank map")]
    EmptyRanks,
    #[error("rank for \"{0}\" must be >= 1, got {1}")]
    BadRank(String, usize),
}

/// Lowercased tokens with punctuation split out as standalone tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n && n > 0 {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level BLEU with uniform 1-4-gram weights, epsilon smoothing for
/// zero counts, and the standard brevity penalty. Empty candidate scores 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand_grams = ngram_counts(&cand, n);
        let ref_grams = ngram_counts(&refr, n);
        let total: usize = cand_grams.values().sum();
        let clipped: usize = cand_grams
            .iter()
            .map(|(gram, count)| (*count).min(ref_grams.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if clipped > 0 && total > 0 {
            clipped as f64 / total as f64
        } else {
            BLEU_EPSILON
        };
        log_sum += 0.25 * precision.ln();
    }
    let brevity = if cand.len() >= refr.len() {
        1.0
    } else {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    };
    (brevity * log_sum.exp()).clamp(0.0, 1.0)
}

/// Precision/recall/F1 triple; F1 is 2PR/(P+R), or 0 when P+R is 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

/// ROUGE-N: clipped n-gram overlap, P over candidate n-grams, R over
/// reference n-grams. Degenerate inputs (shorter than n) score 0.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Prf {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    let cand_grams = ngram_counts(&cand, n);
    let ref_grams = ngram_counts(&refr, n);
    let cand_total: usize = cand_grams.values().sum();
    let ref_total: usize = ref_grams.values().sum();
    let overlap: usize = cand_grams
        .iter()
        .map(|(gram, count)| (*count).min(ref_grams.get(gram).copied().unwrap_or(0)))
        .sum();
    let p = if cand_total > 0 { overlap as f64 / cand_total as f64 } else { 0.0 };
    let r = if ref_total > 0 { overlap as f64 / ref_total as f64 } else { 0.0 };
    Prf::new(p, r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if x == y {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// ROUGE-L over the longest common subsequence of the token sequences.
pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return Prf::default();
    }
    let lcs = lcs_len(&cand, &refr) as f64;
    Prf::new(lcs / cand.len() as f64, lcs / refr.len() as f64)
}

/// METEOR with exact and stem alignment stages. Each stage greedily pairs
/// unmatched candidate tokens, in order, with the first unmatched reference
/// token that matches. Zero matches scores 0.
pub fn meteor(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }

    let mut cand_match: Vec<Option<usize>> = vec![None; cand.len()];
    let mut ref_taken = vec![false; refr.len()];

    // stage 1: exact
    for (i, token) in cand.iter().enumerate() {
        if let Some(j) = refr
            .iter()
            .enumerate()
            .position(|(j, r)| !ref_taken[j] && r == token)
        {
            cand_match[i] = Some(j);
            ref_taken[j] = true;
        }
    }
    // stage 2: stem
    let cand_stems: Vec<String> = cand.iter().map(|t| stem(t)).collect();
    let ref_stems: Vec<String> = refr.iter().map(|t| stem(t)).collect();
    for (i, cstem) in cand_stems.iter().enumerate() {
        if cand_match[i].is_some() {
            continue;
        }
        if let Some(j) = ref_stems
            .iter()
            .enumerate()
            .position(|(j, rstem)| !ref_taken[j] && rstem == cstem)
        {
            cand_match[i] = Some(j);
            ref_taken[j] = true;
        }
    }

    let pairs: Vec<(usize, usize)> = cand_match
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (i, j)))
        .collect();
    let matches = pairs.len();
    if matches == 0 {
        return 0.0;
    }

    // chunks: maximal runs contiguous in both sequences (pairs are already
    // sorted by candidate index)
    let mut chunks = 1;
    for w in pairs.windows(2) {
        if w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1 {
            chunks += 1;
        }
    }

    let p = matches as f64 / cand.len() as f64;
    let r = matches as f64 / refr.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    (f_mean * (1.0 - penalty)).clamp(0.0, 1.0)
}

/// Knowledge-seeking turn detection P/R/F1; the positive class is
/// `target = true`.
pub fn detection_scores(preds: &[bool], golds: &[bool]) -> Result<Prf, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), golds.len()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&p, &g) in preds.iter().zip(golds) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fneg > 0 { tp as f64 / (tp + fneg) as f64 } else { 0.0 };
    Ok(Prf::new(precision, recall))
}

/// Selection scores plus exact match.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionScores {
    #[serde(flatten)]
    pub prf: Prf,
    pub em: f64,
}

/// Per-instance set P/R/F over exact ref equality, macro-averaged over
/// instances whose gold target is true. Instances the system marked
/// non-seeking (or left empty) contribute 0; EM is the fraction whose
/// predicted set equals the gold set.
pub fn selection_scores(
    pred_refs: &[Vec<KnowledgeRef>],
    gold_refs: &[Option<Vec<KnowledgeRef>>],
) -> Result<SelectionScores, MetricsError> {
    if pred_refs.len() != gold_refs.len() {
        return Err(MetricsError::LengthMismatch(pred_refs.len(), gold_refs.len()));
    }
    let mut sums = (0.0, 0.0, 0.0);
    let mut exact = 0usize;
    let mut seeking = 0usize;
    for (pred, gold) in pred_refs.iter().zip(gold_refs) {
        let Some(gold) = gold else {
            continue;
        };
        seeking += 1;
        let pred: BTreeSet<&KnowledgeRef> = pred.iter().collect();
        let gold: BTreeSet<&KnowledgeRef> = gold.iter().collect();
        let overlap = pred.intersection(&gold).count() as f64;
        let p = if pred.is_empty() { 0.0 } else { overlap / pred.len() as f64 };
        let r = if gold.is_empty() { 0.0 } else { overlap / gold.len() as f64 };
        let prf = Prf::new(p, r);
        sums.0 += prf.precision;
        sums.1 += prf.recall;
        sums.2 += prf.f1;
        if pred == gold {
            exact += 1;
        }
    }
    if seeking == 0 {
        return Ok(SelectionScores::default());
    }
    let n = seeking as f64;
    Ok(SelectionScores {
        prf: Prf {
            precision: sums.0 / n,
            recall: sums.1 / n,
            f1: sums.2 / n,
        },
        em: exact as f64 / n,
    })
}

/// Mean reciprocal rank over a metric-name -> rank map.
pub fn mrr(ranks: &BTreeMap<String, usize>) -> Result<f64, MetricsError> {
    if ranks.is_empty() {
        return Err(MetricsError::EmptyRanks);
    }
    let mut sum = 0.0;
    for (name, &rank) in ranks {
        if rank == 0 {
            return Err(MetricsError::BadRank(name.clone(), rank));
        }
        sum += 1.0 / rank as f64;
    }
    Ok(sum / ranks.len() as f64)
}

/// Mean sentence-level generation scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationScores {
    pub bleu: f64,
    pub meteor: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

/// All scores for one prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub detection: Prf,
    pub selection: SelectionScores,
    pub generation: GenerationScores,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
}

/// Mean generation scores of (candidate, reference) response pairs.
/// ROUGE columns report F1. An empty pair list scores 0 across the board.
pub fn generation_scores<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> GenerationScores {
    let mut scores = GenerationScores::default();
    let mut count = 0usize;
    for (candidate, reference) in pairs {
        scores.bleu += bleu(candidate, reference);
        scores.meteor += meteor(candidate, reference);
        scores.rouge1 += rouge_n(candidate, reference, 1).f1;
        scores.rouge2 += rouge_n(candidate, reference, 2).f1;
        scores.rouge_l += rouge_l(candidate, reference).f1;
        count += 1;
    }
    if count > 0 {
        let n = count as f64;
        scores.bleu /= n;
        scores.meteor /= n;
        scores.rouge1 /= n;
        scores.rouge2 /= n;
        scores.rouge_l /= n;
    }
    scores
}

/// Scores a prediction list against gold labels. Generation metrics average
/// over instances where both the gold and the predicted target are true,
/// using the gold response as the single reference.
pub fn evaluate_all(
    instances: &[DialogueInstance],
    predictions: &[Prediction],
) -> Result<MetricReport, MetricsError> {
    if instances.len() != predictions.len() {
        return Err(MetricsError::Misaligned(predictions.len(), instances.len()));
    }
    let gold_targets: Vec<bool> = instances.iter().map(DialogueInstance::is_seeking).collect();
    let pred_targets: Vec<bool> = predictions.iter().map(|p| p.target).collect();
    let detection = detection_scores(&pred_targets, &gold_targets)?;

    let pred_refs: Vec<Vec<KnowledgeRef>> = predictions.iter().map(|p| p.refs.clone()).collect();
    let gold_refs: Vec<Option<Vec<KnowledgeRef>>> = instances
        .iter()
        .map(|i| {
            i.label
                .as_ref()
                .filter(|l| l.target)
                .map(|l| l.refs.clone())
        })
        .collect();
    let selection = selection_scores(&pred_refs, &gold_refs)?;

    let generation = generation_scores(
        instances
            .iter()
            .zip(predictions)
            .filter(|(inst, pred)| inst.is_seeking() && pred.target)
            .map(|(inst, pred)| {
                let reference = inst.label.as_ref().expect("seeking implies label");
                (pred.response.as_str(), reference.response.as_str())
            }),
    );

    Ok(MetricReport {
        detection,
        selection,
        generation,
        mrr: None,
    })
}
