//! Sentence generation from triples: copy baseline, templates, and a client
//! for an external generation server.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{self, PostError};
use crate::parallel::par_map_ordered;
use crate::kg::TripleRecord;
use crate::transforms::{linearize, split_camel_case, LinearizedInput, Phase, TransformError, Variant};

pub const DEFAULT_PATTERN: &str = "The {rel} of {head} is {tail}.";
/// Plural form used by the original table-to-paragraph representation.
pub const DEFAULT_PATTERN_PLURAL: &str = "The {rel} of {head} are {tail}.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerbalizeError {
    #[error("malformed template for {label:?}: {reason} in {pattern:?}")]
    MalformedTemplate {
        label: String,
        pattern: String,
        reason: String,
    },
    #[error("generation endpoint {endpoint} unreachable: {message}")]
    EndpointUnreachable { endpoint: String, message: String },
    #[error("generation endpoint returned {got} outputs for {expected} inputs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("malformed response from {endpoint}: {message}")]
    MalformedResponse { endpoint: String, message: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("template file {path}: {message}")]
    TemplateFile { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub relation_label: String,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Lit(String),
    Head,
    Tail,
    Rel,
}

/// A parsed pattern with exactly one head and one tail slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric() || c == '_')
}

impl Template {
    /// Parses a pattern in one of three placeholder syntaxes, chosen by what
    /// the pattern contains: `{head}`/`{tail}`/`{rel}`, WebNLG-style
    /// `<subject>`/`<object>`, or bare `X`/`Y` words.
    pub fn parse(label: &str, pattern: &str) -> Result<Self, VerbalizeError> {
        let braces = pattern.contains("{head}") || pattern.contains("{tail}");
        let webnlg = pattern.contains("<subject>") || pattern.contains("<object>");
        let mut segments = Vec::new();
        let mut lit = String::new();
        let mut rest = pattern;
        while let Some(c) = rest.chars().next() {
            let slot = if braces {
                [("{head}", Segment::Head), ("{tail}", Segment::Tail), ("{rel}", Segment::Rel)]
                    .into_iter()
                    .find(|(tok, _)| rest.starts_with(tok))
            } else if webnlg {
                [("<subject>", Segment::Head), ("<object>", Segment::Tail)]
                    .into_iter()
                    .find(|(tok, _)| rest.starts_with(tok))
            } else {
                let consumed = pattern.len() - rest.len();
                let before = pattern[..consumed].chars().next_back();
                let after = rest[c.len_utf8()..].chars().next();
                match c {
                    'X' | 'Y' if !is_word_char(before) && !is_word_char(after) => Some((
                        if c == 'X' { "X" } else { "Y" },
                        if c == 'X' { Segment::Head } else { Segment::Tail },
                    )),
                    _ => None,
                }
            };
            match slot {
                Some((tok, seg)) => {
                    if !lit.is_empty() {
                        segments.push(Segment::Lit(std::mem::take(&mut lit)));
                    }
                    segments.push(seg);
                    rest = &rest[tok.len()..];
                }
                None => {
                    lit.push(c);
                    rest = &rest[c.len_utf8()..];
                }
            }
        }
        if !lit.is_empty() {
            segments.push(Segment::Lit(lit));
        }
        for (slot, name) in [(Segment::Head, "head"), (Segment::Tail, "tail")] {
            let n = segments.iter().filter(|s| **s == slot).count();
            if n != 1 {
                return Err(VerbalizeError::MalformedTemplate {
                    label: label.to_string(),
                    pattern: pattern.to_string(),
                    reason: format!("{n} {name} placeholders"),
                });
            }
        }
        Ok(Self { segments })
    }

    pub fn fill(&self, head: &str, rel: &str, tail: &str) -> String {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Lit(l) => out.push_str(l),
                Segment::Head => out.push_str(head),
                Segment::Tail => out.push_str(tail),
                Segment::Rel => out.push_str(rel),
            }
        }
        out
    }
}

/// Lookup table keyed by the camel-case-split relation label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateTable {
    entries: HashMap<String, Template>,
    default: Template,
}

impl TemplateTable {
    pub fn new(entries: &[TemplateEntry], default_pattern: &str) -> Result<Self, VerbalizeError> {
        let default = Template::parse("<default>", default_pattern)?;
        let mut map = HashMap::new();
        for e in entries {
            let key = split_camel_case(&e.relation_label);
            map.entry(key)
                .or_insert(Template::parse(&e.relation_label, &e.pattern)?);
        }
        Ok(Self {
            entries: map,
            default,
        })
    }

    /// Loads a JSON object mapping labels to a pattern or a list of
    /// patterns (the first one is used).
    pub fn load(path: &Path, default_pattern: &str) -> Result<Self, VerbalizeError> {
        let err = |message: String| VerbalizeError::TemplateFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::new(&parse_template_json(&text).map_err(err)?, default_pattern)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, relation_label: &str) -> Option<&Template> {
        self.entries.get(&split_camel_case(relation_label))
    }

    pub fn verbalize(&self, triple: &TripleRecord) -> String {
        let rel = split_camel_case(&triple.relation.label);
        self.entries
            .get(&rel)
            .unwrap_or(&self.default)
            .fill(&triple.head, &rel, &triple.tail)
    }
}

/// Reads `{label: pattern | [pattern, ...]}`; entries come back sorted by label.
pub fn parse_template_json(text: &str) -> Result<Vec<TemplateEntry>, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let mut out = Vec::with_capacity(obj.len());
    for (label, v) in obj {
        let pattern = match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Array(a) => a
                .first()
                .and_then(|p| p.as_str())
                .ok_or_else(|| format!("{label:?}: expected a nonempty list of strings"))?
                .to_string(),
            _ => return Err(format!("{label:?}: expected a string or list")),
        };
        out.push(TemplateEntry {
            relation_label: label.clone(),
            pattern,
        });
    }
    Ok(out)
}

pub fn copy_verbalize(triple: &TripleRecord) -> String {
    format!(
        "{} {} {}",
        triple.head,
        split_camel_case(&triple.relation.label),
        triple.tail
    )
}

/// Copy baseline without camel-case splitting of the label.
pub fn copy_verbalize_raw(triple: &TripleRecord) -> String {
    format!("{} {} {}", triple.head, triple.relation.label, triple.tail)
}

pub fn template_verbalize(
    triple: &TripleRecord,
    table: &[TemplateEntry],
    default_pattern: &str,
) -> Result<String, VerbalizeError> {
    Ok(TemplateTable::new(table, default_pattern)?.verbalize(triple))
}

// ---------------------------------------------------------------------------
// Remote generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub inputs: Vec<String>,
    pub decoding: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            batch_size: 32,
            max_in_flight: 4,
            timeout: Duration::from_secs(120),
        }
    }
}

fn generate_batch(
    agent: &ureq::Agent,
    url: &str,
    inputs: &[LinearizedInput],
) -> Result<Vec<String>, VerbalizeError> {
    let request = GenerationRequest {
        inputs: inputs.iter().map(|i| i.text.clone()).collect(),
        decoding: "greedy".into(),
    };
    let response: GenerationResponse = http::post_json(agent, url, &request).map_err(|e| match e {
        PostError::Transport(message) => VerbalizeError::EndpointUnreachable {
            endpoint: url.to_string(),
            message,
        },
        PostError::Decode(message) => VerbalizeError::MalformedResponse {
            endpoint: url.to_string(),
            message,
        },
    })?;
    if response.outputs.len() != inputs.len() {
        return Err(VerbalizeError::LengthMismatch {
            expected: inputs.len(),
            got: response.outputs.len(),
        });
    }
    Ok(response.outputs)
}

/// Sends inputs to `POST /generate` in batches and returns outputs in input
/// order, unmodified.
pub fn remote_verbalize(
    inputs: &[LinearizedInput],
    config: &RemoteConfig,
) -> Result<Vec<String>, VerbalizeError> {
    if inputs.is_empty() {
        return Err(VerbalizeError::EmptyBatch);
    }
    let agent = http::agent(config.timeout);
    let url = http::endpoint_url(&config.endpoint, "/generate");
    let batches: Vec<&[LinearizedInput]> = inputs.chunks(config.batch_size.max(1)).collect();
    let results = par_map_ordered(&batches, config.max_in_flight, |b| {
        generate_batch(&agent, &url, b)
    });
    let mut out = Vec::with_capacity(inputs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// A configured verbalizer usable wherever triples need sentences.
#[derive(Debug, Clone)]
pub enum Verbalizer {
    Copy { raw_label: bool },
    Template(TemplateTable),
    Remote { config: RemoteConfig, variant: Variant },
}

impl Verbalizer {
    pub fn copy() -> Self {
        Verbalizer::Copy { raw_label: false }
    }

    /// Template verbalizer with no table entries: every triple uses the
    /// default pattern.
    pub fn default_pattern(plural: bool) -> Self {
        let pattern = if plural { DEFAULT_PATTERN_PLURAL } else { DEFAULT_PATTERN };
        Verbalizer::Template(TemplateTable::new(&[], pattern).expect("built-in pattern is valid"))
    }

    pub fn is_template(&self) -> bool {
        matches!(self, Verbalizer::Template(_))
    }

    /// Verbalizes in order. Errors carry the index of the offending triple.
    pub fn verbalize_all(&self, triples: &[TripleRecord]) -> Result<Vec<String>, (usize, VerbalizeError)> {
        match self {
            Verbalizer::Copy { raw_label } => Ok(triples
                .iter()
                .map(|t| if *raw_label { copy_verbalize_raw(t) } else { copy_verbalize(t) })
                .collect()),
            Verbalizer::Template(table) => Ok(triples.iter().map(|t| table.verbalize(t)).collect()),
            Verbalizer::Remote { config, variant } => {
                if triples.is_empty() {
                    return Ok(Vec::new());
                }
                let variant = variant.for_phase(Phase::Test);
                let inputs = triples
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        linearize(t, variant, t.relation.description.as_deref()).map_err(|e| (i, e.into()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                // A batch failure cannot be attributed to one triple; report
                // the first index of the run.
                remote_verbalize(&inputs, config).map_err(|e| (0, e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{RelationRecord, Source};

    fn triple(h: &str, rel: &str, t: &str) -> TripleRecord {
        TripleRecord::new(h, RelationRecord::new("r", rel, Source::Wikidata), t)
    }

    #[test]
    fn copy_examples() {
        assert_eq!(
            copy_verbalize(&triple("Kalatungan Mountain Range", "highest", "Mount Kalatungan")),
            "Kalatungan Mountain Range highest Mount Kalatungan"
        );
        assert_eq!(copy_verbalize(&triple("A", "r", "B")), "A r B");
        assert_eq!(copy_verbalize(&triple("A", "musicBy", "B")), "A music by B");
        assert_eq!(copy_verbalize_raw(&triple("A", "musicBy", "B")), "A musicBy B");
    }

    #[test]
    fn template_examples() {
        let table = [TemplateEntry {
            relation_label: "duration".into(),
            pattern: "X lasted for Y.".into(),
        }];
        let t = triple("Darjeeling Limited", "duration", "91 minutes");
        assert_eq!(
            template_verbalize(&t, &table, DEFAULT_PATTERN).unwrap(),
            "Darjeeling Limited lasted for 91 minutes."
        );
        let cell = triple("Hyson", "calories", "1");
        assert_eq!(
            template_verbalize(&cell, &table, DEFAULT_PATTERN_PLURAL).unwrap(),
            "The calories of Hyson are 1."
        );
        assert_eq!(
            template_verbalize(&triple("Hyson", "origin", "China"), &table, DEFAULT_PATTERN).unwrap(),
            "The origin of Hyson is China."
        );
    }

    #[test]
    fn placeholder_syntaxes() {
        let fill = |p: &str| Template::parse("l", p).unwrap().fill("Alan", "rel", "Bea");
        assert_eq!(fill("<subject> was born in <object>."), "Alan was born in Bea.");
        assert_eq!(fill("{tail} is the parent of {head}."), "Bea is the parent of Alan.");
        assert_eq!(fill("Y's XML parent is X."), "Bea's XML parent is Alan.");
        assert_eq!(fill("X has an id Y in the ChEMBL database."), "Alan has an id Bea in the ChEMBL database.");
    }

    #[test]
    fn malformed_templates() {
        for p in ["X and X met Y.", "X alone.", "no slots", "{head} {head} {tail}"] {
            assert!(
                matches!(Template::parse("l", p), Err(VerbalizeError::MalformedTemplate { .. })),
                "{p}"
            );
        }
    }

    #[test]
    fn lookup_uses_split_label() {
        let json = r#"{"birthPlace": ["<subject> was born in <object>.", "ignored"], "country": "X is in Y."}"#;
        let entries = parse_template_json(json).unwrap();
        let table = TemplateTable::new(&entries, DEFAULT_PATTERN).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(
            table.verbalize(&triple("Ann", "birth place", "Oslo")),
            "Ann was born in Oslo."
        );
        assert_eq!(table.verbalize(&triple("Ann", "birthPlace", "Oslo")), "Ann was born in Oslo.");
    }
}
