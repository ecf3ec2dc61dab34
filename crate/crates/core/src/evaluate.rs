//! ROUGE scoring, corpus reports, sampling and agreement.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CveRecord, ExploitCveLink};
use crate::error::{Error, Result};
use crate::ner::NerMetrics;
use crate::preprocess;
use crate::qa::QaScores;
use crate::score::Prf;

/// Lowercased tokens with punctuation dropped.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    preprocess::tokenize(text)
        .tokens
        .into_iter()
        .filter(|t| !preprocess::is_punctuation_token(&t.surface))
        .map(|t| t.surface.to_lowercase())
        .collect()
}

/// Clipped n-gram overlap between two token sequences.
pub fn rouge_n_tokens<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Prf {
    if n == 0 {
        return Prf::default();
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    let count = |s: &[T]| s.len().saturating_sub(n - 1);
    Prf::from_counts(overlap, count(candidate), count(reference))
}

fn ngram_counts<T: Eq + Hash>(s: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for g in s.windows(n) {
        *m.entry(g).or_default() += 1;
    }
    m
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l_tokens<T: Eq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(
        lcs_len(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Prf {
    rouge_n_tokens(&rouge_tokens(candidate), &rouge_tokens(reference), n)
}

pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    rouge_l_tokens(&rouge_tokens(candidate), &rouge_tokens(reference))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
}

pub fn rouge_scores(candidate: &str, reference: &str) -> RougeScores {
    let c = rouge_tokens(candidate);
    let r = rouge_tokens(reference);
    RougeScores {
        rouge1: rouge_n_tokens(&c, &r, 1),
        rouge2: rouge_n_tokens(&c, &r, 2),
        rouge_l: rouge_l_tokens(&c, &r),
    }
}

impl RougeScores {
    /// Component-wise mean.
    pub fn mean<'a>(scores: impl IntoIterator<Item = &'a RougeScores>) -> Option<RougeScores> {
        let mut n = 0usize;
        let mut acc = [[0.0f64; 3]; 3];
        for s in scores {
            n += 1;
            for (slot, prf) in acc.iter_mut().zip([s.rouge1, s.rouge2, s.rouge_l]) {
                slot[0] += prf.precision;
                slot[1] += prf.recall;
                slot[2] += prf.f1;
            }
        }
        if n == 0 {
            return None;
        }
        let prf = |a: [f64; 3]| Prf {
            precision: a[0] / n as f64,
            recall: a[1] / n as f64,
            f1: a[2] / n as f64,
        };
        Some(RougeScores {
            rouge1: prf(acc[0]),
            rouge2: prf(acc[1]),
            rouge_l: prf(acc[2]),
        })
    }
}

/// A task that ran on the rule backend instead of the configured one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fallback {
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edb_id: Option<u64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub edb_id: u64,
    pub cve_id: String,
    pub rouge: RougeScores,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ner: Option<NerMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa: Option<QaScores>,
    /// Mean over composed/reference pairs.
    pub rouge: RougeScores,
    pub n_pairs: usize,
    /// Composed descriptions with no reference CVE in the feed.
    pub excluded: usize,
    #[serde(default)]
    pub fallbacks: Vec<Fallback>,
}

/// Score every (composed post, linked reference CVE) pair.
pub fn score_pairs(
    composed: &BTreeMap<u64, String>,
    references: &[CveRecord],
    links: &[ExploitCveLink],
) -> (Vec<PairScore>, usize) {
    let by_id: HashMap<&str, &CveRecord> =
        references.iter().map(|c| (c.cve_id.as_str(), c)).collect();
    let mut pairs = Vec::new();
    let mut excluded = 0;
    for (edb_id, text) in composed {
        let before = pairs.len();
        for link in links.iter().filter(|l| l.edb_id == *edb_id) {
            if let Some(cve) = by_id.get(link.cve_id.as_str()) {
                pairs.push(PairScore {
                    edb_id: *edb_id,
                    cve_id: cve.cve_id.clone(),
                    rouge: rouge_scores(text, &cve.description),
                });
            }
        }
        if pairs.len() == before {
            excluded += 1;
        }
    }
    (pairs, excluded)
}

/// Mean ROUGE over linked pairs.
pub fn evaluate_corpus(
    composed: &BTreeMap<u64, String>,
    references: &[CveRecord],
    links: &[ExploitCveLink],
) -> Result<EvalReport> {
    let (pairs, excluded) = score_pairs(composed, references, links);
    let rouge = RougeScores::mean(pairs.iter().map(|p| &p.rouge)).ok_or(Error::NoPairs)?;
    Ok(EvalReport {
        rouge,
        n_pairs: pairs.len(),
        excluded,
        ..Default::default()
    })
}

// ---------------------------------------------------------------------------
// Sampling and agreement

fn z_score(confidence: f64) -> Option<f64> {
    [(0.90, 1.645), (0.95, 1.96), (0.99, 2.576)]
        .into_iter()
        .find(|(c, _)| (confidence - c).abs() < 1e-9)
        .map(|(_, z)| z)
}

/// Cochran's sample size for estimating a proportion, rounded to nearest.
pub fn sample_size(margin: f64, confidence: f64, p: f64) -> Result<u64> {
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::BadParameter(format!(
            "margin {margin} not in (0, 1)"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::BadParameter(format!("proportion {p} not in (0, 1)")));
    }
    let z = z_score(confidence).ok_or_else(|| {
        Error::BadParameter(format!(
            "confidence {confidence} not one of 0.90, 0.95, 0.99"
        ))
    })?;
    Ok((z * z * p * (1.0 - p) / (margin * margin)).round() as u64)
}

/// `n` items drawn uniformly without replacement, reproducible by seed.
pub fn draw_sample<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    if n > items.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, items.len(), n)
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

pub fn cohens_kappa<L: Eq + Hash>(a: &[L], b: &[L]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::BadParameter("no labels".into()));
    }
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ma: HashMap<&L, usize> = HashMap::new();
    let mut mb: HashMap<&L, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let p_e: f64 = ma
        .iter()
        .map(|(l, c)| (*c as f64 / n) * (mb.get(l).copied().unwrap_or(0) as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}
