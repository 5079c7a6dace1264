//! Leakage-aware train/val/test construction and nested few-shot splits.
//!
//! All random choices use ChaCha8 seeded with the run seed
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`) and the Fisher-Yates shuffle
//! from `rand`, so split membership is identical across platforms.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::kg::normalize_label;

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.9;
pub const DEFAULT_TEST_FRACTION: f64 = 0.15;
pub const DEFAULT_VAL_FRACTION: f64 = 0.10;
pub const DEFAULT_FEWSHOT_SIZES: [usize; 4] = [25, 50, 100, 200];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("vector dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("no embedding for label {0:?}")]
    MissingEmbedding(String),
    #[error("need {needed} distinct relations, train split has {available}")]
    NotEnoughRelations { needed: usize, available: usize },
    #[error("embedding file line {line}: {message}")]
    EmbeddingFile { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, SplitError> {
    if u.len() != v.len() {
        return Err(SplitError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(SplitError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Label embeddings, all of one dimension and nonzero norm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct EmbeddingLine {
    label: String,
    vector: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, vector: Vec<f64>) -> Result<(), SplitError> {
        if self.vectors.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(SplitError::DimensionMismatch(self.dim, vector.len()));
        }
        if vector.iter().all(|x| *x == 0.0) || vector.iter().any(|x| !x.is_finite()) {
            return Err(SplitError::ZeroVector);
        }
        self.vectors.insert(label.into(), vector);
        Ok(())
    }

    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, SplitError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut t = Self::new();
        for (l, v) in pairs {
            t.insert(l, v)?;
        }
        Ok(t)
    }

    /// Reads `{"label": ..., "vector": [...]}` lines.
    pub fn load(path: &Path) -> Result<Self, SplitError> {
        let f = File::open(path).map_err(|e| SplitError::Io(format!("{}: {e}", path.display())))?;
        let mut t = Self::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| SplitError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: EmbeddingLine =
                serde_json::from_str(&line).map_err(|e| SplitError::EmbeddingFile {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            t.insert(parsed.label, parsed.vector)
                .map_err(|e| SplitError::EmbeddingFile {
                    line: i + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, label: &str) -> Result<&[f64], SplitError> {
        self.vectors
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| SplitError::MissingEmbedding(label.to_string()))
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, SplitError> {
        cosine_similarity(self.get(a)?, self.get(b)?)
    }
}

/// Reads a one-label-per-line relation inventory.
pub fn load_label_list(path: &Path) -> Result<Vec<String>, SplitError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SplitError::Io(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExclusionReason {
    ExactMatch { list: String },
    Similarity { max_sim: f64, nearest: String, list: String },
}

/// Labels excluded from test, keyed by label.
pub type ExclusionSet = BTreeMap<String, ExclusionReason>;

/// Marks candidates that match (after label normalization), or are more than `threshold`
/// cosine-similar to, any label of the reference lists. Exact matches take
/// precedence over similarity.
pub fn exclusion_set(
    candidates: &[String],
    references: &BTreeMap<String, Vec<String>>,
    embeddings: Option<&EmbeddingTable>,
    threshold: f64,
) -> Result<ExclusionSet, SplitError> {
    let mut out = ExclusionSet::new();
    if let Some(table) = embeddings {
        for c in candidates {
            table.get(c)?;
        }
        for refs in references.values() {
            for r in refs {
                table.get(r)?;
            }
        }
    }
    // Exact matching compares normalized labels, so "birthPlace" and
    // "birth place" are the same relation.
    let exact: HashMap<String, &str> = references
        .iter()
        .rev()
        .flat_map(|(name, refs)| refs.iter().map(move |r| (normalize_label(r), name.as_str())))
        .collect();
    for c in candidates {
        if let Some(list) = exact.get(&normalize_label(c)) {
            out.insert(
                c.clone(),
                ExclusionReason::ExactMatch {
                    list: list.to_string(),
                },
            );
            continue;
        }
        let Some(table) = embeddings else { continue };
        let cv = table.get(c)?;
        let mut best: Option<(f64, &str, &str)> = None;
        for (name, refs) in references {
            for r in refs {
                let s = cosine_similarity(cv, table.get(r)?)?;
                if best.is_none_or(|b| s > b.0) {
                    best = Some((s, r, name));
                }
            }
        }
        if let Some((s, nearest, list)) = best {
            if s > threshold {
                out.insert(
                    c.clone(),
                    ExclusionReason::Similarity {
                        max_sim: s,
                        nearest: nearest.to_string(),
                        list: list.to_string(),
                    },
                );
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionEntry {
    pub label: String,
    pub reason: ExclusionReason,
}

/// A named partition of example ids with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    pub example_ids: Vec<String>,
    pub seed: u64,
    pub exclusion_manifest: Vec<ExclusionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub val_fraction_of_rest: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: DEFAULT_TEST_FRACTION,
            val_fraction_of_rest: DEFAULT_VAL_FRACTION,
            threshold: DEFAULT_SIMILARITY_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub config: SplitConfig,
    pub total_examples: usize,
    pub eligible_examples: usize,
    pub target_test_examples: usize,
    /// Test size over all examples.
    pub achieved_test_fraction: f64,
    /// Test size over examples whose relation was eligible for test.
    pub achieved_test_fraction_of_eligible: f64,
    /// Set when fewer eligible examples existed than the target asked for.
    pub insufficient_eligible_relations: bool,
    pub test_relations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
    pub manifest: SplitManifest,
}

/// Groups relation labels that must end up on the same side of the split:
/// labels that normalize to the same string or whose embeddings are more
/// than `threshold` similar. Uses
/// union-find over the pairwise scan.
fn relation_clusters(
    labels: &[&str],
    embeddings: Option<&EmbeddingTable>,
    threshold: f64,
) -> Result<Vec<Vec<usize>>, SplitError> {
    let n = labels.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut by_norm: HashMap<String, usize> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        let first = *by_norm.entry(normalize_label(l)).or_insert(i);
        if first != i {
            let (a, b) = (find(&mut parent, first), find(&mut parent, i));
            if a != b {
                parent[b.max(a)] = a.min(b);
            }
        }
    }
    if let Some(table) = embeddings {
        let vecs: Vec<&[f64]> = labels.iter().map(|l| table.get(l)).collect::<Result<_, _>>()?;
        for i in 0..n {
            for j in i + 1..n {
                if cosine_similarity(vecs[i], vecs[j])? > threshold {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[b.max(a)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    Ok(groups.into_values().collect())
}

/// Builds train/val/test.
///
/// Test relations are drawn (as whole similarity clusters) from relations not
/// in `excluded`, so no test relation shares a label with, or is more than
/// `threshold` similar to, any train/val relation. The remaining examples are
/// shuffled and divided into train and val.
pub fn build_splits(
    dataset: &Dataset,
    excluded: &ExclusionSet,
    embeddings: Option<&EmbeddingTable>,
    config: &SplitConfig,
) -> Result<Splits, SplitError> {
    if !(0.0..=1.0).contains(&config.test_fraction) || !(0.0..=1.0).contains(&config.val_fraction_of_rest) {
        return Err(SplitError::Config("fractions must lie in [0, 1]".into()));
    }
    let mut rng = rng_for(config.seed);
    let labels = dataset.relation_labels();
    let mut per_label: HashMap<&str, usize> = HashMap::new();
    for e in dataset.examples() {
        *per_label.entry(e.triple.relation.label.as_str()).or_insert(0) += 1;
    }

    let clusters = relation_clusters(&labels, embeddings, config.threshold)?;
    let mut eligible: Vec<(Vec<&str>, usize)> = clusters
        .into_iter()
        .map(|c| c.into_iter().map(|i| labels[i]).collect::<Vec<_>>())
        .filter(|c| c.iter().all(|l| !excluded.contains_key(*l)))
        .map(|c| {
            let size = c.iter().map(|l| per_label[l]).sum();
            (c, size)
        })
        .collect();
    let eligible_examples: usize = eligible.iter().map(|c| c.1).sum();
    let total = dataset.len();
    let target = (config.test_fraction * total as f64).round() as usize;

    eligible.shuffle(&mut rng);
    let mut test_labels: BTreeSet<&str> = BTreeSet::new();
    let mut test_size = 0;
    for (cluster, size) in &eligible {
        if test_size >= target {
            break;
        }
        if test_size + size <= target {
            test_size += size;
            test_labels.extend(cluster.iter().copied());
        }
    }

    let mut test_ids = Vec::new();
    let mut rest_ids = Vec::new();
    for e in dataset.examples() {
        if test_labels.contains(e.triple.relation.label.as_str()) {
            test_ids.push(e.id.clone());
        } else {
            rest_ids.push(e.id.clone());
        }
    }
    let mut shuffled = rest_ids.clone();
    shuffled.shuffle(&mut rng);
    let val_count = (config.val_fraction_of_rest * rest_ids.len() as f64).round() as usize;
    let val_set: HashSet<&String> = shuffled[..val_count].iter().collect();
    let (val_ids, train_ids): (Vec<String>, Vec<String>) =
        rest_ids.iter().cloned().partition(|id| val_set.contains(id));

    let manifest_entries: Vec<ExclusionEntry> = excluded
        .iter()
        .map(|(label, reason)| ExclusionEntry {
            label: label.clone(),
            reason: reason.clone(),
        })
        .collect();
    let split = |name: &str, ids: Vec<String>| DatasetSplit {
        name: name.to_string(),
        example_ids: ids,
        seed: config.seed,
        exclusion_manifest: manifest_entries.clone(),
    };
    let insufficient = test_size < target;
    if insufficient {
        log::warn!("only {test_size} test examples achievable (target {target})");
    }
    let manifest = SplitManifest {
        config: config.clone(),
        total_examples: total,
        eligible_examples,
        target_test_examples: target,
        achieved_test_fraction: if total == 0 { 0.0 } else { test_size as f64 / total as f64 },
        achieved_test_fraction_of_eligible: if eligible_examples == 0 {
            0.0
        } else {
            test_size as f64 / eligible_examples as f64
        },
        insufficient_eligible_relations: insufficient,
        test_relations: test_labels.iter().map(|s| s.to_string()).collect(),
    };
    Ok(Splits {
        train: split("train", train_ids),
        val: split("val", val_ids),
        test: split("test", test_ids),
        manifest,
    })
}

/// Nested few-shot splits with one example per relation.
///
/// Relations are shuffled once and one example is drawn per relation; the
/// split of size N takes the first N relations, so smaller splits are
/// prefixes of larger ones.
pub fn build_fewshot(
    train: &Dataset,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<DatasetSplit>, SplitError> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let mut rng = rng_for(seed);
    let mut by_label: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in train.examples() {
        by_label
            .entry(e.triple.relation.label.as_str())
            .or_default()
            .push(e.id.as_str());
    }
    let needed = sizes.last().copied().unwrap_or(0);
    if by_label.len() < needed {
        return Err(SplitError::NotEnoughRelations {
            needed,
            available: by_label.len(),
        });
    }
    let mut relations: Vec<(&str, &str)> = by_label
        .iter()
        .map(|(label, ids)| (*label, ids[rng.random_range(0..ids.len())]))
        .collect();
    relations.shuffle(&mut rng);
    Ok(sizes
        .iter()
        .map(|&n| DatasetSplit {
            name: format!("fewshot-{n}"),
            example_ids: relations[..n].iter().map(|(_, id)| id.to_string()).collect(),
            seed,
            exclusion_manifest: Vec::new(),
        })
        .collect())
}
