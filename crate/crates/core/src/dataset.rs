//! Dataset data model, JSONL persistence, quality taxonomy and
//! delexicalization.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kg::{Source, TripleRecord};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: schema violation at `{field}`: {message}")]
    SchemaViolation {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate triple id {id}")]
    DuplicateTripleId { line: usize, id: String },
}

impl DatasetError {
    pub fn line(&self) -> Option<usize> {
        match self {
            DatasetError::Io { .. } => None,
            DatasetError::SchemaViolation { line, .. } | DatasetError::DuplicateTripleId { line, .. } => {
                Some(*line)
            }
        }
    }
}

/// Review category of a crowdsourced verbalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quality {
    #[serde(rename = "OK", alias = "ok", alias = "Ok")]
    Ok,
    #[serde(alias = "noisy")]
    Noisy,
    #[serde(alias = "corrupted")]
    Corrupted,
    #[serde(alias = "extra_info", alias = "Extra information", alias = "extra")]
    ExtraInfo,
    #[serde(alias = "unreviewed")]
    Unreviewed,
}

impl Quality {
    pub const ALL: [Quality; 5] = [
        Quality::Ok,
        Quality::Noisy,
        Quality::Corrupted,
        Quality::ExtraInfo,
        Quality::Unreviewed,
    ];
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Quality::Ok => "OK",
            Quality::Noisy => "Noisy",
            Quality::Corrupted => "Corrupted",
            Quality::ExtraInfo => "ExtraInfo",
            Quality::Unreviewed => "Unreviewed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<String>,
}

impl EntityOverrides {
    pub fn is_empty(&self) -> bool {
        self.head.is_none() && self.tail.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerbalizationRecord {
    #[serde(default)]
    pub triple_ref: String,
    pub text: String,
    pub quality: Quality,
    #[serde(default)]
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_overrides: Option<EntityOverrides>,
}

impl VerbalizationRecord {
    /// Entity surfaces after applying overrides.
    pub fn effective_entities<'a>(&'a self, triple: &'a TripleRecord) -> (&'a str, &'a str) {
        let o = self.entity_overrides.as_ref();
        (
            o.and_then(|o| o.head.as_deref()).unwrap_or(&triple.head),
            o.and_then(|o| o.tail.as_deref()).unwrap_or(&triple.tail),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub triple: TripleRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<VerbalizationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_tag: Option<String>,
}

impl Example {
    pub fn new(triple: TripleRecord, reference: Option<VerbalizationRecord>) -> Self {
        let id = triple_id(&triple);
        let reference = reference.map(|mut r| {
            r.triple_ref = id.clone();
            r
        });
        Self {
            id,
            triple,
            reference,
            split_tag: None,
        }
    }
}

/// On-disk line. `id` is optional on input and derived from the triple
/// content when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub triple: TripleRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<VerbalizationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_tag: Option<String>,
}

/// Content-derived triple identifier.
pub fn triple_id(triple: &TripleRecord) -> String {
    let mut h = Sha256::new();
    for part in [
        triple.relation.source.as_str(),
        &triple.relation.id,
        &triple.head,
        &triple.tail,
    ] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    format!("t{}", &hex::encode(h.finalize())[..16])
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: Option<String>,
    pub sha256: Option<String>,
    pub lines: usize,
}

/// A loaded dataset. Immutable after load; examples have unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    examples: Vec<Example>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn from_examples(examples: Vec<Example>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for (i, e) in examples.iter().enumerate() {
            if !seen.insert(e.id.as_str()) {
                return Err(DatasetError::DuplicateTripleId {
                    line: i + 1,
                    id: e.id.clone(),
                });
            }
        }
        Ok(Self {
            examples,
            provenance: Provenance::default(),
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn index(&self) -> HashMap<&str, &Example> {
        self.examples.iter().map(|e| (e.id.as_str(), e)).collect()
    }

    /// Distinct relation labels in first-appearance order.
    pub fn relation_labels(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.examples
            .iter()
            .map(|e| e.triple.relation.label.as_str())
            .filter(|l| seen.insert(*l))
            .collect()
    }

    /// A copy restricted to the given ids, in dataset order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Dataset {
        let keep: HashSet<&str> = ids.into_iter().collect();
        Dataset {
            examples: self
                .examples
                .iter()
                .filter(|e| keep.contains(e.id.as_str()))
                .cloned()
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }
}

fn validate(line: usize, l: &DatasetLine) -> Result<(), DatasetError> {
    let violation = |field: &str, message: &str| DatasetError::SchemaViolation {
        line,
        field: field.to_string(),
        message: message.to_string(),
    };
    if l.triple.relation.label.trim().is_empty() {
        return Err(violation("triple.relation.label", "label is empty"));
    }
    if l.triple.head.is_empty() {
        return Err(violation("triple.head", "head entity is empty"));
    }
    if l.triple.tail.is_empty() {
        return Err(violation("triple.tail", "tail entity is empty"));
    }
    if let Some(r) = &l.reference {
        if r.text.trim().is_empty() {
            return Err(violation("reference.text", "verbalization text is empty"));
        }
    }
    Ok(())
}

/// Reads and validates every line of a dataset JSONL file. Blank lines are
/// skipped. Returned pairs carry 1-based line numbers.
pub fn read_jsonl_lines(path: &Path) -> Result<Vec<(usize, DatasetLine)>, DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let de = &mut serde_json::Deserializer::from_str(&line);
        let parsed: DatasetLine =
            serde_path_to_error::deserialize(de).map_err(|e| DatasetError::SchemaViolation {
                line: n,
                field: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        validate(n, &parsed)?;
        out.push((n, parsed));
    }
    Ok(out)
}

fn to_example(l: DatasetLine) -> Example {
    let id = l.id.unwrap_or_else(|| triple_id(&l.triple));
    let reference = l.reference.map(|mut r| {
        r.triple_ref = id.clone();
        r
    });
    Example {
        id,
        triple: l.triple,
        reference,
        split_tag: l.split_tag,
    }
}

fn file_sha256(path: &Path) -> Result<String, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loads a curated dataset; triple ids must be unique.
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let lines = read_jsonl_lines(path)?;
    let count = lines.len();
    let mut seen = HashSet::new();
    let mut examples = Vec::with_capacity(count);
    for (n, l) in lines {
        let e = to_example(l);
        if !seen.insert(e.id.clone()) {
            return Err(DatasetError::DuplicateTripleId { line: n, id: e.id });
        }
        examples.push(e);
    }
    Ok(Dataset {
        examples,
        provenance: Provenance {
            path: Some(path.display().to_string()),
            sha256: Some(file_sha256(path)?),
            lines: count,
        },
    })
}

/// Loads a response file in which the same triple may occur several times
/// (e.g. the full crowdsourced release or an annotation export).
pub fn load_responses(path: &Path) -> Result<Vec<Example>, DatasetError> {
    Ok(read_jsonl_lines(path)?
        .into_iter()
        .map(|(_, l)| to_example(l))
        .collect())
}

pub fn write_examples<'a>(
    path: &Path,
    examples: impl IntoIterator<Item = &'a Example>,
) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for e in examples {
        let line = serde_json::to_string(e).expect("examples serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<(), DatasetError> {
    write_examples(path, dataset.examples())
}

// ---------------------------------------------------------------------------
// Delexicalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntitySlot {
    Head,
    Tail,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DelexError {
    #[error("{0:?} entity not found in text")]
    EntityNotFound(EntitySlot),
    #[error("head and tail only occur at overlapping spans")]
    OverlappingEntities,
}

/// Text with the head replaced by `X` and the tail by `Y`.
///
/// Placeholder positions are kept so that [`DelexTemplate::fill`] is exact
/// even if the surrounding text itself contains the letters X or Y.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelexTemplate {
    pub pattern: String,
    head_at: usize,
    tail_at: usize,
}

impl DelexTemplate {
    pub fn fill(&self, head: &str, tail: &str) -> String {
        let (first, first_val, second, second_val) = if self.head_at < self.tail_at {
            (self.head_at, head, self.tail_at, tail)
        } else {
            (self.tail_at, tail, self.head_at, head)
        };
        let p = &self.pattern;
        format!(
            "{}{}{}{}{}",
            &p[..first],
            first_val,
            &p[first + 1..second],
            second_val,
            &p[second + 1..]
        )
    }
}

impl fmt::Display for DelexTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pattern)
    }
}

fn occurrences(text: &str, needle: &str) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = text[from..].find(needle) {
        let at = from + pos;
        out.push(at);
        from = at + text[at..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

/// Replaces one occurrence of each entity with its placeholder.
///
/// The longer entity is placed first at its leftmost occurrence; the other
/// takes its leftmost occurrence that does not overlap. Later occurrences of
/// the longer entity are tried only if that fails.
pub fn delexicalize(text: &str, head: &str, tail: &str) -> Result<DelexTemplate, DelexError> {
    let head_occ = occurrences(text, head);
    if head_occ.is_empty() {
        return Err(DelexError::EntityNotFound(EntitySlot::Head));
    }
    let tail_occ = occurrences(text, tail);
    if tail_occ.is_empty() {
        return Err(DelexError::EntityNotFound(EntitySlot::Tail));
    }
    let head_first = head.len() >= tail.len();
    let (long, long_occ, short, short_occ) = if head_first {
        (head, &head_occ, tail, &tail_occ)
    } else {
        (tail, &tail_occ, head, &head_occ)
    };
    for &l in long_occ {
        let l_end = l + long.len();
        if let Some(&s) = short_occ
            .iter()
            .find(|&&s| s + short.len() <= l || s >= l_end)
        {
            let (h, h_len, t, t_len) = if head_first {
                (l, head.len(), s, tail.len())
            } else {
                (s, head.len(), l, tail.len())
            };
            let mut spans = [(h, h_len, 'X'), (t, t_len, 'Y')];
            spans.sort_by_key(|s| s.0);
            let mut pattern = String::with_capacity(text.len());
            let mut cursor = 0;
            let mut at = [0usize; 2];
            for (i, (start, len, ph)) in spans.iter().enumerate() {
                pattern.push_str(&text[cursor..*start]);
                at[i] = pattern.len();
                pattern.push(*ph);
                cursor = start + len;
            }
            pattern.push_str(&text[cursor..]);
            let (head_at, tail_at) = if spans[0].2 == 'X' {
                (at[0], at[1])
            } else {
                (at[1], at[0])
            };
            return Ok(DelexTemplate {
                pattern,
                head_at,
                tail_at,
            });
        }
    }
    Err(DelexError::OverlappingEntities)
}

/// Delexicalizes an example's reference using its effective entity forms.
pub fn delexicalize_example(example: &Example) -> Option<Result<DelexTemplate, DelexError>> {
    let r = example.reference.as_ref()?;
    let (head, tail) = r.effective_entities(&example.triple);
    Some(delexicalize(&r.text, head, tail))
}

// ---------------------------------------------------------------------------
// Quality filtering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Keep every record with an accepted quality.
    All,
    /// Keep at most one record per triple: the smallest by
    /// (annotator id, record position).
    OnePerTriple,
}

/// Indices of the records kept by [`quality_filter`].
fn quality_filter_indices<'a>(
    records: impl IntoIterator<Item = &'a VerbalizationRecord>,
    keep: &BTreeSet<Quality>,
    selection: Selection,
) -> Vec<usize> {
    let kept: Vec<(usize, &VerbalizationRecord)> = records
        .into_iter()
        .enumerate()
        .filter(|(_, r)| keep.contains(&r.quality))
        .collect();
    match selection {
        Selection::All => kept.into_iter().map(|(i, _)| i).collect(),
        Selection::OnePerTriple => {
            let mut best: HashMap<&str, (&str, usize)> = HashMap::new();
            for (i, r) in &kept {
                let key = (r.annotator_id.as_str(), *i);
                best.entry(r.triple_ref.as_str())
                    .and_modify(|b| {
                        if key < *b {
                            *b = key;
                        }
                    })
                    .or_insert(key);
            }
            kept.into_iter()
                .filter(|(i, r)| best.get(r.triple_ref.as_str()).is_some_and(|b| b.1 == *i))
                .map(|(i, _)| i)
                .collect()
        }
    }
}

/// Order-preserving quality filter over response records.
pub fn quality_filter(
    records: &[VerbalizationRecord],
    keep: &BTreeSet<Quality>,
    selection: Selection,
) -> Vec<VerbalizationRecord> {
    quality_filter_indices(records, keep, selection)
        .into_iter()
        .map(|i| records[i].clone())
        .collect()
}

/// [`quality_filter`] over examples; examples without a reference are
/// dropped.
pub fn filter_examples(
    responses: &[Example],
    keep: &BTreeSet<Quality>,
    selection: Selection,
) -> Vec<Example> {
    let with_ref: Vec<&Example> = responses.iter().filter(|e| e.reference.is_some()).collect();
    quality_filter_indices(
        with_ref.iter().map(|e| e.reference.as_ref().expect("filtered above")),
        keep,
        selection,
    )
    .into_iter()
    .map(|i| with_ref[i].clone())
    .collect()
}

/// Curates a response file: OK records only, one per triple.
pub fn curate(responses: &[Example]) -> Vec<Example> {
    filter_examples(responses, &BTreeSet::from([Quality::Ok]), Selection::OnePerTriple)
}

/// Per-quality counts over a set of responses.
pub fn quality_counts(records: &[VerbalizationRecord]) -> BTreeMap<Quality, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.quality).or_insert(0) += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBreakdown {
    pub examples: usize,
    pub relations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub examples: usize,
    pub distinct_relations: usize,
    pub per_source: BTreeMap<Source, SourceBreakdown>,
    pub with_reference: usize,
    pub delexicalizable: usize,
    pub delexicalizable_fraction: f64,
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let mut labels = HashSet::new();
    let mut per_source: BTreeMap<Source, (usize, HashSet<&str>)> = BTreeMap::new();
    let mut with_reference = 0;
    let mut delexicalizable = 0;
    for e in dataset.examples() {
        let label = e.triple.relation.label.as_str();
        labels.insert(label);
        let entry = per_source.entry(e.triple.relation.source).or_default();
        entry.0 += 1;
        entry.1.insert(label);
        if let Some(result) = delexicalize_example(e) {
            with_reference += 1;
            if result.is_ok() {
                delexicalizable += 1;
            }
        }
    }
    DatasetStats {
        examples: dataset.len(),
        distinct_relations: labels.len(),
        per_source: per_source
            .into_iter()
            .map(|(s, (n, l))| {
                (
                    s,
                    SourceBreakdown {
                        examples: n,
                        relations: l.len(),
                    },
                )
            })
            .collect(),
        with_reference,
        delexicalizable,
        delexicalizable_fraction: if with_reference == 0 {
            0.0
        } else {
            delexicalizable as f64 / with_reference as f64
        },
    }
}
