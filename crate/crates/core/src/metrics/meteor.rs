//! METEOR with exact and stem matching (no synonym stage).

use std::collections::HashMap;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

/// Above this many memoized states the aligner switches to a greedy pass.
const MAX_SEARCH_STATES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

pub fn stem(token: &str) -> String {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER
        .get_or_init(|| Stemmer::create(Algorithm::English))
        .stem(token)
        .into_owned()
}

struct Search<'a> {
    hyp_class: &'a [Option<usize>],
    ref_pos: &'a [Vec<usize>],
    skip_budget: &'a [usize],
    words: usize,
    memo: HashMap<(usize, Option<usize>, Vec<u64>), usize>,
    overflow: bool,
}

impl Search<'_> {
    fn skipped_before(&self, i: usize, class: usize, used: &[u64]) -> usize {
        let seen = self.hyp_class[..i].iter().filter(|c| **c == Some(class)).count();
        let matched = self.ref_pos[class]
            .iter()
            .filter(|&&j| used[j / 64] & (1 << (j % 64)) != 0)
            .count();
        seen - matched
    }

    /// Minimum number of chunks for hyp positions `i..` given the ref
    /// position matched at `i - 1` and the set of used ref positions.
    fn best(&mut self, i: usize, prev: Option<usize>, used: Vec<u64>) -> usize {
        if i == self.hyp_class.len() {
            return 0;
        }
        let key = (i, prev, used);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        if self.memo.len() > MAX_SEARCH_STATES {
            self.overflow = true;
            return usize::MAX / 4;
        }
        let (_, _, used) = key;
        let mut best = usize::MAX / 4;
        if let Some(class) = self.hyp_class[i] {
            for &j in &self.ref_pos[class] {
                if used[j / 64] & (1 << (j % 64)) != 0 {
                    continue;
                }
                let mut next = used.clone();
                next[j / 64] |= 1 << (j % 64);
                let cost = usize::from(prev.is_none_or(|p| p + 1 != j));
                best = best.min(cost + self.best(i + 1, Some(j), next));
            }
            if self.skipped_before(i, class, &used) < self.skip_budget[class] {
                best = best.min(self.best(i + 1, None, used.clone()));
            }
        } else {
            best = self.best(i + 1, None, used.clone());
        }
        self.memo.insert((i, prev, used), best);
        best
    }
}

/// Left-to-right alignment preferring the ref position that extends the
/// current chunk.
fn greedy_chunks(hyp_class: &[Option<usize>], ref_pos: &[Vec<usize>], ref_len: usize) -> Alignment {
    let mut used = vec![false; ref_len];
    let mut prev: Option<usize> = None;
    let (mut matches, mut chunks) = (0, 0);
    for class in hyp_class {
        let pick = class.and_then(|c| {
            let free = ref_pos[c].iter().copied().filter(|&j| !used[j]);
            let extend = prev.and_then(|p| free.clone().find(|&j| j == p + 1));
            extend.or_else(|| free.min())
        });
        match pick {
            Some(j) => {
                if prev.is_none_or(|p| p + 1 != j) {
                    chunks += 1;
                }
                used[j] = true;
                matches += 1;
                prev = Some(j);
            }
            None => prev = None,
        }
    }
    Alignment { matches, chunks }
}

/// Aligns lowercased tokens: the number of matches is maximal (exact or
/// equal stems), and among maximal alignments the number of chunks is
/// minimal.
pub fn align(hyp: &[String], reference: &[String]) -> Alignment {
    let mut class_of: HashMap<String, usize> = HashMap::new();
    let mut ref_pos: Vec<Vec<usize>> = Vec::new();
    for (j, t) in reference.iter().enumerate() {
        let next = class_of.len();
        let c = *class_of.entry(stem(t)).or_insert(next);
        if c == ref_pos.len() {
            ref_pos.push(Vec::new());
        }
        ref_pos[c].push(j);
    }
    let hyp_class: Vec<Option<usize>> = hyp.iter().map(|t| class_of.get(&stem(t)).copied()).collect();
    let mut hyp_count = vec![0usize; ref_pos.len()];
    for c in hyp_class.iter().flatten() {
        hyp_count[*c] += 1;
    }
    let need: Vec<usize> = hyp_count.iter().zip(&ref_pos).map(|(h, r)| (*h).min(r.len())).collect();
    let matches: usize = need.iter().sum();
    if matches == 0 {
        return Alignment { matches: 0, chunks: 0 };
    }
    let skip_budget: Vec<usize> = hyp_count.iter().zip(&need).map(|(h, n)| h - n).collect();
    let mut search = Search {
        hyp_class: &hyp_class,
        ref_pos: &ref_pos,
        skip_budget: &skip_budget,
        words: reference.len().div_ceil(64),
        memo: HashMap::new(),
        overflow: false,
    };
    let empty = vec![0u64; search.words];
    let chunks = search.best(0, None, empty);
    if search.overflow {
        log::warn!("METEOR alignment search exceeded {MAX_SEARCH_STATES} states; using greedy alignment");
        return greedy_chunks(&hyp_class, &ref_pos, reference.len());
    }
    Alignment { matches, chunks }
}

/// Sentence score in 0..1 from lowercased tokens.
pub fn segment_score(hyp: &[String], reference: &[String], params: &MeteorParams) -> f64 {
    let a = align(hyp, reference);
    score_alignment(a, hyp.len(), reference.len(), params)
}

pub fn score_alignment(a: Alignment, hyp_len: usize, ref_len: usize, params: &MeteorParams) -> f64 {
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / hyp_len as f64;
    let r = m / ref_len as f64;
    let fmean = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
    let frag = if a.chunks == 1 && a.matches == hyp_len && a.matches == ref_len {
        0.0
    } else {
        a.chunks as f64 / m
    };
    fmean * (1.0 - params.gamma * frag.powf(params.beta))
}
