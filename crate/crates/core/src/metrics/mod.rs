//! Lexical and diversity metrics.

mod bleu;
mod diversity;
mod meteor;
mod tokenize;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{corpus_bleu_tokens, BleuStats, MAX_ORDER};
pub use diversity::{bigram_conditional_entropy, mean_length, msttr, unique_ngrams, Msttr, DEFAULT_SEGMENT_LEN};
pub use meteor::{align, score_alignment, segment_score, stem, Alignment, MeteorParams};
pub use tokenize::{tokenize, tokenize_lower, TokenizedCorpus, TOKENIZER_ID};

use crate::http::{self, PostError};
use crate::parallel::par_map_ordered;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus has no bigrams")]
    NoBigrams,
    #[error("segment {0} has no reference")]
    NoReferences(usize),
}

pub(crate) fn check_aligned(hyps: usize, refs: usize) -> Result<(), MetricError> {
    if hyps != refs {
        return Err(MetricError::LengthMismatch { hyps, refs });
    }
    if hyps == 0 {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

/// Sum by recursive halving, so the result does not depend on how the work
/// was scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn tokenize_all<S: AsRef<str>>(texts: &[S], lower: bool) -> Vec<Vec<String>> {
    texts
        .iter()
        .map(|t| if lower { tokenize_lower(t.as_ref()) } else { tokenize(t.as_ref()) })
        .collect()
}

fn tokenize_refs<S: AsRef<str>>(refs: &[Vec<S>], lower: bool) -> Vec<Vec<Vec<String>>> {
    refs.iter().map(|r| tokenize_all(r, lower)).collect()
}

/// Corpus BLEU-4 (0..100) with one or more references per hypothesis.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[Vec<R>]) -> Result<f64, MetricError> {
    corpus_bleu_tokens(&tokenize_all(hyps, false), &tokenize_refs(refs, false))
}

pub fn meteor_tokens(
    hyps: &[Vec<String>],
    refs: &[Vec<Vec<String>>],
    params: &MeteorParams,
) -> Result<f64, MetricError> {
    check_aligned(hyps.len(), refs.len())?;
    if let Some(i) = refs.iter().position(Vec::is_empty) {
        return Err(MetricError::NoReferences(i));
    }
    let idx: Vec<usize> = (0..hyps.len()).collect();
    let workers = if hyps.len() > 256 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        1
    };
    let scores = par_map_ordered(&idx, workers, |&i| {
        refs[i]
            .iter()
            .map(|r| segment_score(&hyps[i], r, params))
            .fold(0.0, f64::max)
    });
    Ok(100.0 * pairwise_sum(&scores) / scores.len() as f64)
}

/// Mean segment METEOR (0..100); with several references the best one
/// counts per segment.
pub fn meteor<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[Vec<R>]) -> Result<f64, MetricError> {
    meteor_tokens(&tokenize_all(hyps, true), &tokenize_refs(refs, true), &MeteorParams::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub u1: usize,
    pub ce2: f64,
    pub msttr: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub msttr_truncated: bool,
    pub mean_len: f64,
}

/// U-1, CE-2, MSTTR and mean length of a set of texts.
pub fn diversity<S: AsRef<str>>(texts: &[S]) -> Result<DiversityReport, MetricError> {
    let toks = tokenize_all(texts, true);
    let m = msttr(&toks, DEFAULT_SEGMENT_LEN)?;
    Ok(DiversityReport {
        u1: unique_ngrams(&toks, 1),
        ce2: bigram_conditional_entropy(&toks)?,
        msttr: m.value,
        msttr_truncated: m.truncated,
        mean_len: mean_length(&toks)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub meteor: f64,
    #[serde(flatten)]
    pub diversity: DiversityReport,
    pub tokenizer_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ScorerConfig {
    pub endpoint: String,
    pub timeout: Duration,
}

impl ScorerConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(300),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalConfig {
    pub scorer: Option<ScorerConfig>,
}

#[derive(Debug, Serialize)]
struct ScorePair<'a> {
    hyp: &'a str,
    #[serde(rename = "ref")]
    reference: &'a str,
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<ScorePair<'a>>,
}

pub const EXTERNAL_FIELDS: [&str; 7] = ["ss", "c", "n", "e", "nb", "bleurt", "ppl"];

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScoreResponse {
    Wrapped { scores: Vec<BTreeMap<String, Option<f64>>> },
    Bare(Vec<BTreeMap<String, Option<f64>>>),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("external scorer unavailable: {0}")]
pub struct ExternalScorerUnavailable(pub String);

/// Sends (hyp, first ref) pairs to `POST /score` and averages each returned
/// field over the pairs that report it.
pub fn external_scores<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[Vec<R>],
    config: &ScorerConfig,
) -> Result<BTreeMap<String, f64>, ExternalScorerUnavailable> {
    let url = http::endpoint_url(&config.endpoint, "/score");
    let request = ScoreRequest {
        pairs: hyps
            .iter()
            .zip(refs)
            .map(|(h, r)| ScorePair {
                hyp: h.as_ref(),
                reference: r.first().map_or("", |r| r.as_ref()),
            })
            .collect(),
    };
    let response: ScoreResponse =
        http::post_json(&http::agent(config.timeout), &url, &request).map_err(|e| match e {
            PostError::Transport(m) | PostError::Decode(m) => ExternalScorerUnavailable(m),
        })?;
    let rows = match response {
        ScoreResponse::Wrapped { scores } => scores,
        ScoreResponse::Bare(rows) => rows,
    };
    if rows.len() != hyps.len() {
        return Err(ExternalScorerUnavailable(format!(
            "{} scores for {} pairs",
            rows.len(),
            hyps.len()
        )));
    }
    let mut out = BTreeMap::new();
    for field in EXTERNAL_FIELDS {
        let vals: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.get(field).copied().flatten())
            .filter(|v| v.is_finite())
            .collect();
        if !vals.is_empty() {
            out.insert(field.to_string(), pairwise_sum(&vals) / vals.len() as f64);
        }
    }
    Ok(out)
}

/// Full report for aligned outputs and references. A failing external
/// scorer only adds a warning.
pub fn evaluate<H: AsRef<str> + Sync, R: AsRef<str> + Sync>(
    outputs: &[H],
    references: &[Vec<R>],
    config: &EvalConfig,
) -> Result<MetricReport, MetricError> {
    check_aligned(outputs.len(), references.len())?;
    let bleu = corpus_bleu(outputs, references)?;
    let meteor = meteor(outputs, references)?;
    let diversity = diversity(outputs)?;
    let mut warnings = Vec::new();
    if diversity.msttr_truncated {
        warnings.push(format!("fewer than {DEFAULT_SEGMENT_LEN} tokens; MSTTR uses one truncated segment"));
    }
    let external_scores = match &config.scorer {
        None => None,
        Some(sc) => match external_scores(outputs, references, sc) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("{e}");
                warnings.push(e.to_string());
                None
            }
        },
    };
    Ok(MetricReport {
        bleu,
        meteor,
        diversity,
        tokenizer_id: TOKENIZER_ID.to_string(),
        external_scores,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_disjoint() {
        let hyps = ["the cat sat on the mat .", "a b"];
        let refs: Vec<Vec<&str>> = hyps.iter().map(|h| vec![*h]).collect();
        assert!((corpus_bleu(&hyps, &refs).unwrap() - 100.0).abs() < 1e-9);
        assert!((meteor(&hyps, &refs).unwrap() - 100.0).abs() < 1e-9);
        let other = vec![vec!["x y z"], vec!["q"]];
        assert_eq!(corpus_bleu(&hyps, &other).unwrap(), 0.0);
        assert_eq!(meteor(&hyps, &other).unwrap(), 0.0);
        assert_eq!(
            corpus_bleu(&hyps, &refs[..1]),
            Err(MetricError::LengthMismatch { hyps: 2, refs: 1 })
        );
        assert_eq!(corpus_bleu::<&str, &str>(&[], &[]), Err(MetricError::EmptyCorpus));
    }

    #[test]
    fn pairwise_matches_naive_sum_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn report_serializes_flat() {
        let outs = ["A r B"];
        let refs = vec![vec!["A is r of B ."]];
        let r = evaluate(&outs, &refs, &EvalConfig::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for k in ["bleu", "meteor", "u1", "ce2", "msttr", "mean_len"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(v.get("external_scores").is_none());
    }
}
