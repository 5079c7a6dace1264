//! Slow reference implementations used to cross-check the metrics.

use std::collections::BTreeSet;

use rel2text::metrics::stem;

fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// Corpus BLEU-4 by linear scans; orders with no hypothesis n-grams are
/// skipped.
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rs) in hyps.iter().zip(refs) {
        c += h.len();
        let mut best = rs[0].len();
        for x in rs {
            let (d, bd) = (x.len().abs_diff(h.len()), best.abs_diff(h.len()));
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
        for n in 1..=4 {
            let hg = ngrams(h, n);
            totals[n - 1] += hg.len();
            let mut distinct: Vec<Vec<String>> = Vec::new();
            for g in &hg {
                if !distinct.contains(g) {
                    distinct.push(g.clone());
                }
            }
            for g in &distinct {
                let max_ref = rs.iter().map(|x| count(&ngrams(x, n), g)).max().unwrap_or(0);
                matches[n - 1] += count(&hg, g).min(max_ref);
            }
        }
    }
    let mut logs = Vec::new();
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        if matches[n] == 0 {
            return 0.0;
        }
        logs.push((matches[n] as f64 / totals[n] as f64).ln());
    }
    if logs.is_empty() || c == 0 {
        return 0.0;
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

/// Best (matches, chunks) over every injective alignment, enumerated
/// position by position.
pub fn align(hyp: &[String], reference: &[String]) -> (usize, usize) {
    fn go(
        i: usize,
        hyp: &[String],
        reference: &[String],
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == hyp.len() {
            let m = pairs.len();
            let mut chunks = 0;
            for (k, &(hi, rj)) in pairs.iter().enumerate() {
                if k == 0 || pairs[k - 1].0 + 1 != hi || pairs[k - 1].1 + 1 != rj {
                    chunks += 1;
                }
            }
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        go(i + 1, hyp, reference, used, pairs, best);
        for j in 0..reference.len() {
            if !used[j] && (hyp[i] == reference[j] || stem(&hyp[i]) == stem(&reference[j])) {
                used[j] = true;
                pairs.push((i, j));
                go(i + 1, hyp, reference, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    go(0, hyp, reference, &mut vec![false; reference.len()], &mut Vec::new(), &mut best);
    best
}

pub fn meteor_segment(hyp: &[String], reference: &[String]) -> f64 {
    let (m, chunks) = align(hyp, reference);
    if m == 0 {
        return 0.0;
    }
    let (alpha, beta, gamma) = (0.9, 3.0, 0.5);
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (alpha * p + (1.0 - alpha) * r);
    let frag = if chunks == 1 && m == hyp.len() && m == reference.len() {
        0.0
    } else {
        chunks as f64 / m as f64
    };
    fmean * (1.0 - gamma * frag.powf(beta))
}

pub fn meteor(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let total: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, rs)| rs.iter().map(|r| meteor_segment(h, r)).fold(0.0, f64::max))
        .sum();
    100.0 * total / hyps.len() as f64
}

pub fn unigrams(sentences: &[Vec<String>]) -> usize {
    sentences.iter().flatten().collect::<BTreeSet<_>>().len()
}

/// H(w1, w2) - H(w1) over within-sentence bigrams.
pub fn ce2(sentences: &[Vec<String>]) -> f64 {
    let bigrams: Vec<(String, String)> = sentences
        .iter()
        .flat_map(|s| s.windows(2).map(|w| (w[0].clone(), w[1].clone())))
        .collect();
    let n = bigrams.len() as f64;
    let entropy = |counts: Vec<usize>| -> f64 {
        counts
            .into_iter()
            .map(|c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum()
    };
    let pairs: BTreeSet<&(String, String)> = bigrams.iter().collect();
    let firsts: BTreeSet<&String> = bigrams.iter().map(|b| &b.0).collect();
    let joint = entropy(pairs.iter().map(|p| bigrams.iter().filter(|b| b == p).count()).collect());
    let first = entropy(firsts.iter().map(|f| bigrams.iter().filter(|b| &b.0 == *f).count()).collect());
    joint - first
}

pub fn msttr(sentences: &[Vec<String>], seg: usize) -> f64 {
    let stream: Vec<&String> = sentences.iter().flatten().collect();
    let ttr = |s: &[&String]| s.iter().collect::<BTreeSet<_>>().len() as f64 / s.len() as f64;
    if stream.len() < seg {
        return ttr(&stream);
    }
    let mut ratios = Vec::new();
    let mut i = 0;
    while i + seg <= stream.len() {
        ratios.push(ttr(&stream[i..i + seg]));
        i += seg;
    }
    ratios.iter().sum::<f64>() / ratios.len() as f64
}

pub fn mean_len(sentences: &[Vec<String>]) -> f64 {
    sentences.iter().map(Vec::len).sum::<usize>() as f64 / sentences.len() as f64
}

/// Relative closeness, with an absolute floor for values that are zero up
/// to rounding.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    let d = (a - b).abs();
    d <= rel * a.abs().max(b.abs()) || d < 1e-12
}
