//! Referenceless diversity metrics over lowercased tokens.

use std::collections::{HashMap, HashSet};

use super::{pairwise_sum, MetricError};

pub const DEFAULT_SEGMENT_LEN: usize = 100;

/// Distinct n-grams across all sentences; n-grams never span sentences.
pub fn unique_ngrams(sentences: &[Vec<String>], n: usize) -> usize {
    assert!(n >= 1, "n must be positive");
    let mut seen: HashSet<&[String]> = HashSet::new();
    for s in sentences {
        if s.len() >= n {
            seen.extend(s.windows(n));
        }
    }
    seen.len()
}

/// H(w2 | w1) in bits from within-sentence bigram counts.
pub fn bigram_conditional_entropy(sentences: &[Vec<String>]) -> Result<f64, MetricError> {
    let mut pair: HashMap<(&str, &str), usize> = HashMap::new();
    let mut first: HashMap<&str, usize> = HashMap::new();
    let mut total = 0usize;
    for s in sentences {
        for w in s.windows(2) {
            *pair.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += 1;
            *first.entry(w[0].as_str()).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(MetricError::NoBigrams);
    }
    let mut keys: Vec<_> = pair.into_iter().collect();
    // Fixed summation order for reproducibility.
    keys.sort_unstable();
    let terms: Vec<f64> = keys
        .iter()
        .map(|((w1, _), c)| {
            let joint = *c as f64 / total as f64;
            let cond = *c as f64 / first[w1] as f64;
            -joint * cond.log2()
        })
        .collect();
    Ok(pairwise_sum(&terms).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Msttr {
    pub value: f64,
    /// Set when the corpus is shorter than one segment and the score comes
    /// from a single truncated segment.
    pub truncated: bool,
}

/// Mean segmental type-token ratio over consecutive segments of the
/// concatenated token stream; a trailing partial segment is dropped.
pub fn msttr(sentences: &[Vec<String>], segment_len: usize) -> Result<Msttr, MetricError> {
    assert!(segment_len >= 1, "segment length must be positive");
    let stream: Vec<&str> = sentences.iter().flatten().map(String::as_str).collect();
    if stream.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let ttr = |seg: &[&str]| seg.iter().collect::<HashSet<_>>().len() as f64 / seg.len() as f64;
    if stream.len() < segment_len {
        log::warn!(
            "MSTTR: only {} tokens, scoring one truncated segment",
            stream.len()
        );
        return Ok(Msttr {
            value: ttr(&stream),
            truncated: true,
        });
    }
    let ratios: Vec<f64> = stream.chunks_exact(segment_len).map(ttr).collect();
    Ok(Msttr {
        value: pairwise_sum(&ratios) / ratios.len() as f64,
        truncated: false,
    })
}

pub fn mean_length(sentences: &[Vec<String>]) -> Result<f64, MetricError> {
    if sentences.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let total: usize = sentences.iter().map(Vec::len).sum();
    Ok(total as f64 / sentences.len() as f64)
}
