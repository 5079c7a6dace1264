//! Knowledge-graph relation and triple retrieval with filtering heuristics.

mod fetch;
mod filter;
mod pipeline;
mod yago;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fetch::{
    fetch_relations, fetch_triples, fetch_triples_many, Backend, EndpointConfig, RequestPolicy,
    DBPEDIA_ENDPOINT_ENV, WIKIDATA_ENDPOINT_ENV, YAGO_DUMP_ENV,
};
pub use pipeline::{ingest, IngestReport};
pub use filter::{
    dedupe_relations, dedupe_relations_with_report, filter_relation, filter_triple,
    normalize_label, FilterReason, FilterVerdict, MAX_ENTITY_CHARS,
};

/// Source knowledge graph. The declaration order is the precedence order
/// used when identical labels are found in several graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "dbpedia", alias = "DBPedia", alias = "DBpedia")]
    DBPedia,
    #[serde(rename = "yago", alias = "YAGO", alias = "Yago")]
    Yago,
    #[serde(rename = "wikidata", alias = "Wikidata")]
    Wikidata,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::DBPedia, Source::Yago, Source::Wikidata];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::DBPedia => "dbpedia",
            Source::Yago => "yago",
            Source::Wikidata => "wikidata",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dbpedia" => Ok(Source::DBPedia),
            "yago" => Ok(Source::Yago),
            "wikidata" => Ok(Source::Wikidata),
            _ => Err(IngestError::UnknownSource(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationRecord {
    pub label: String,
    #[serde(default)]
    pub description: Option<String>,
    pub source: Source,
    pub id: String,
}

impl RelationRecord {
    pub fn new(id: impl Into<String>, label: impl Into<String>, source: Source) -> Self {
        Self {
            label: label.into(),
            description: None,
            source,
            id: id.into(),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripleRecord {
    pub head: String,
    pub relation: RelationRecord,
    pub tail: String,
    #[serde(default)]
    pub head_description: Option<String>,
    #[serde(default)]
    pub tail_description: Option<String>,
}

impl TripleRecord {
    pub fn new(head: impl Into<String>, relation: RelationRecord, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation,
            tail: tail.into(),
            head_description: None,
            tail_description: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("endpoint {endpoint} unreachable after {attempts} attempt(s): {message}")]
    EndpointUnreachable {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error("malformed response from {endpoint}: {message} (payload starts: {excerpt:?})")]
    MalformedResponse {
        endpoint: String,
        message: String,
        excerpt: String,
    },
    #[error("relation {id} not found in {kg}")]
    RelationUnknown { id: String, kg: Source },
    #[error("unknown knowledge graph {0:?}")]
    UnknownSource(String),
    #[error("backend does not support {0}")]
    Unsupported(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture {path} line {line}: {message}")]
    Fixture {
        path: String,
        line: usize,
        message: String,
    },
}

impl IngestError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::EndpointUnreachable { .. })
    }
}
