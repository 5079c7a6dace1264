//! Relation and triple retrieval from SPARQL endpoints, YAGO dumps, or
//! offline fixtures in the dataset JSONL schema.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::yago;
use super::{IngestError, RelationRecord, Source, TripleRecord};
use crate::dataset::read_jsonl_lines;

pub const WIKIDATA_ENDPOINT_ENV: &str = "R2T_WIKIDATA_ENDPOINT";
pub const DBPEDIA_ENDPOINT_ENV: &str = "R2T_DBPEDIA_ENDPOINT";
pub const YAGO_DUMP_ENV: &str = "R2T_YAGO_DUMP";

const DEFAULT_WIKIDATA: &str = "https://query.wikidata.org/sparql";
const DEFAULT_DBPEDIA: &str = "https://dbpedia.org/sparql";

const WIKIDATA_ENTITY: &str = "http://www.wikidata.org/entity/";
const WIKIDATA_DIRECT: &str = "http://www.wikidata.org/prop/direct/";

const EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone)]
pub struct RequestPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub requests_per_second: f64,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for RequestPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            requests_per_second: 2.0,
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Sparql(String),
    YagoDump(PathBuf),
    /// Local dump in the dataset JSONL schema.
    Fixture(PathBuf),
}

#[derive(Debug)]
struct RateLimiter {
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new() -> Self {
        Self {
            next_slot: Mutex::new(None),
        }
    }

    fn acquire(&self, per_second: f64) {
        if per_second <= 0.0 || !per_second.is_finite() {
            return;
        }
        let interval = Duration::from_secs_f64(1.0 / per_second);
        let wait = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Endpoint descriptor. Clones share the same rate limiter.
#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub backend: Backend,
    pub policy: RequestPolicy,
    limiter: Arc<RateLimiter>,
}

impl EndpointConfig {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            policy: RequestPolicy::default(),
            limiter: Arc::new(RateLimiter::new()),
        }
    }

    pub fn sparql(url: impl Into<String>) -> Self {
        Self::new(Backend::Sparql(url.into()))
    }

    pub fn fixture(path: impl Into<PathBuf>) -> Self {
        Self::new(Backend::Fixture(path.into()))
    }

    pub fn yago_dump(path: impl Into<PathBuf>) -> Self {
        Self::new(Backend::YagoDump(path.into()))
    }

    pub fn with_policy(mut self, policy: RequestPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Default live configuration for a graph, honouring the
    /// `R2T_WIKIDATA_ENDPOINT`, `R2T_DBPEDIA_ENDPOINT` and `R2T_YAGO_DUMP`
    /// environment variables.
    pub fn from_env(source: Source) -> Result<Self, IngestError> {
        let env = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        match source {
            Source::Wikidata => Ok(Self::sparql(
                env(WIKIDATA_ENDPOINT_ENV).unwrap_or_else(|| DEFAULT_WIKIDATA.to_string()),
            )),
            Source::DBPedia => Ok(Self::sparql(
                env(DBPEDIA_ENDPOINT_ENV).unwrap_or_else(|| DEFAULT_DBPEDIA.to_string()),
            )),
            Source::Yago => env(YAGO_DUMP_ENV).map(Self::yago_dump).ok_or_else(|| {
                IngestError::Unsupported(format!("YAGO without a dump path (set {YAGO_DUMP_ENV})"))
            }),
        }
    }
}

fn excerpt(s: &str) -> String {
    s.chars().take(EXCERPT_CHARS).collect()
}

#[derive(Debug, Deserialize)]
struct SparqlJson {
    #[serde(default)]
    results: Option<SparqlBindings>,
    #[serde(default)]
    boolean: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct SparqlBindings {
    bindings: Vec<HashMap<String, SparqlTerm>>,
}

#[derive(Debug, Deserialize)]
struct SparqlTerm {
    #[serde(rename = "type")]
    kind: String,
    value: String,
}

type Row = HashMap<String, SparqlTerm>;

struct SparqlClient<'a> {
    url: &'a str,
    config: &'a EndpointConfig,
    agent: ureq::Agent,
}

impl<'a> SparqlClient<'a> {
    fn new(url: &'a str, config: &'a EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.policy.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { url, config, agent }
    }

    fn attempt(&self, query: &str) -> Result<String, (bool, String)> {
        self.config
            .limiter
            .acquire(self.config.policy.requests_per_second);
        let response = self
            .agent
            .get(self.url)
            .query("query", query)
            .query("format", "json")
            .header("Accept", "application/sparql-results+json")
            .header("User-Agent", "rel2text/0.1")
            .call()
            .map_err(|e| (true, e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .into_body()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| (true, e.to_string()))?;
        match status {
            200..=299 => Ok(body),
            429 | 500..=599 => Err((true, format!("HTTP {status}: {}", excerpt(&body)))),
            _ => Err((false, format!("HTTP {status}: {}", excerpt(&body)))),
        }
    }

    /// Runs a query with the retry policy: `max_attempts` tries with
    /// exponential backoff on transport errors, 429 and 5xx.
    fn raw(&self, query: &str) -> Result<String, IngestError> {
        let policy = &self.config.policy;
        let attempts = policy.max_attempts.max(1);
        let mut backoff = policy.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(query) {
                Ok(body) => return Ok(body),
                Err((retryable, message)) => {
                    log::warn!("{}: attempt {attempt}/{attempts} failed: {message}", self.url);
                    last = message;
                    if !retryable {
                        return Err(IngestError::EndpointUnreachable {
                            endpoint: self.url.to_string(),
                            attempts: attempt,
                            message: last,
                        });
                    }
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(IngestError::EndpointUnreachable {
            endpoint: self.url.to_string(),
            attempts,
            message: last,
        })
    }

    fn parse(&self, body: &str) -> Result<SparqlJson, IngestError> {
        serde_json::from_str(body).map_err(|e| {
            log::error!("malformed SPARQL response from {}: {}", self.url, excerpt(body));
            IngestError::MalformedResponse {
                endpoint: self.url.to_string(),
                message: e.to_string(),
                excerpt: excerpt(body),
            }
        })
    }

    fn select(&self, query: &str) -> Result<Vec<Row>, IngestError> {
        let body = self.raw(query)?;
        let parsed = self.parse(&body)?;
        parsed
            .results
            .map(|r| r.bindings)
            .ok_or_else(|| IngestError::MalformedResponse {
                endpoint: self.url.to_string(),
                message: "missing results.bindings".into(),
                excerpt: excerpt(&body),
            })
    }

    fn ask(&self, query: &str) -> Result<bool, IngestError> {
        let body = self.raw(query)?;
        self.parse(&body)?
            .boolean
            .ok_or_else(|| IngestError::MalformedResponse {
                endpoint: self.url.to_string(),
                message: "missing boolean in ASK response".into(),
                excerpt: excerpt(&body),
            })
    }
}

fn local_name(iri: &str) -> &str {
    iri.rsplit(['/', '#']).next().unwrap_or(iri)
}

/// Human-readable surface for an RDF term without a label.
pub(crate) fn surface_from_iri(iri: &str) -> String {
    local_name(iri).replace('_', " ")
}

fn value<'r>(row: &'r Row, key: &str) -> Option<&'r str> {
    row.get(key)
        .map(|t| t.value.as_str())
        .filter(|v| !v.trim().is_empty())
}

fn relations_query(source: Source) -> &'static str {
    match source {
        Source::Wikidata => {
            r#"PREFIX wikibase: <http://wikiba.se/ontology#>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
PREFIX schema: <http://schema.org/>
SELECT ?property ?label ?description WHERE {
  ?property a wikibase:Property ;
            rdfs:label ?label .
  FILTER(lang(?label) = "en")
  OPTIONAL { ?property schema:description ?description . FILTER(lang(?description) = "en") }
}"#
        }
        Source::DBPedia | Source::Yago => {
            r#"PREFIX rdf: <http://www.w3.org/1999/02/22-rdf-syntax-ns#>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
SELECT DISTINCT ?property ?label ?description WHERE {
  ?property a rdf:Property ;
            rdfs:comment ?description .
  FILTER(lang(?description) = "en")
  OPTIONAL { ?property rdfs:label ?label . FILTER(lang(?label) = "en") }
}"#
        }
    }
}

fn predicate_iri(relation: &RelationRecord) -> String {
    match relation.source {
        Source::Wikidata if !relation.id.contains("://") => {
            format!("{WIKIDATA_DIRECT}{}", relation.id)
        }
        _ => relation.id.clone(),
    }
}

fn subject_iri(relation: &RelationRecord) -> String {
    match relation.source {
        Source::Wikidata if !relation.id.contains("://") => {
            format!("{WIKIDATA_ENTITY}{}", relation.id)
        }
        _ => relation.id.clone(),
    }
}

fn triples_query(relation: &RelationRecord, limit: usize) -> String {
    let pred = predicate_iri(relation);
    match relation.source {
        Source::Wikidata => format!(
            r#"PREFIX wikibase: <http://wikiba.se/ontology#>
PREFIX bd: <http://www.bigdata.com/rdf#>
SELECT ?head ?headLabel ?headDescription ?tail ?tailLabel ?tailDescription WHERE {{
  ?head <{pred}> ?tail .
  SERVICE wikibase:label {{ bd:serviceParam wikibase:language "en". }}
}} LIMIT {limit}"#
        ),
        Source::DBPedia | Source::Yago => format!(
            r#"PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
SELECT ?head ?headLabel ?headDescription ?tail ?tailLabel ?tailDescription WHERE {{
  ?head <{pred}> ?tail .
  OPTIONAL {{ ?head rdfs:label ?headLabel . FILTER(lang(?headLabel) = "en") }}
  OPTIONAL {{ ?tail rdfs:label ?tailLabel . FILTER(lang(?tailLabel) = "en") }}
  OPTIONAL {{ ?head rdfs:comment ?headDescription . FILTER(lang(?headDescription) = "en") }}
  OPTIONAL {{ ?tail rdfs:comment ?tailDescription . FILTER(lang(?tailDescription) = "en") }}
}} LIMIT {limit}"#
        ),
    }
}

fn entity_surface(row: &Row, var: &str) -> Option<String> {
    let label_key = format!("{var}Label");
    let term = row.get(var)?;
    if let Some(label) = value(row, &label_key) {
        // The Wikidata label service echoes the entity id when no label exists.
        if !(term.kind == "uri" && local_name(&term.value) == label) {
            return Some(label.to_string());
        }
    }
    match term.kind.as_str() {
        "uri" => Some(surface_from_iri(&term.value)),
        _ => Some(term.value.clone()),
    }
}

fn sparql_relations(url: &str, source: Source, config: &EndpointConfig) -> Result<Vec<RelationRecord>, IngestError> {
    let client = SparqlClient::new(url, config);
    let rows = client.select(relations_query(source))?;
    let mut seen = HashMap::new();
    let mut out: Vec<RelationRecord> = Vec::new();
    for row in rows {
        let Some(iri) = value(&row, "property") else {
            continue;
        };
        let id = match source {
            Source::Wikidata => local_name(iri).to_string(),
            _ => iri.to_string(),
        };
        if seen.contains_key(&id) {
            continue;
        }
        let label = value(&row, "label")
            .map(str::to_string)
            .unwrap_or_else(|| surface_from_iri(iri));
        let mut record = RelationRecord::new(id.clone(), label, source);
        record.description = value(&row, "description").map(str::to_string);
        seen.insert(id, out.len());
        out.push(record);
    }
    Ok(out)
}

fn sparql_triples(
    url: &str,
    relation: &RelationRecord,
    limit: usize,
    config: &EndpointConfig,
) -> Result<Vec<TripleRecord>, IngestError> {
    let client = SparqlClient::new(url, config);
    let rows = client.select(&triples_query(relation, limit))?;
    let mut out: Vec<TripleRecord> = Vec::new();
    for row in rows {
        let (Some(head), Some(tail)) = (entity_surface(&row, "head"), entity_surface(&row, "tail"))
        else {
            continue;
        };
        if out.iter().any(|t| t.head == head && t.tail == tail) {
            continue;
        }
        let mut triple = TripleRecord::new(head, relation.clone(), tail);
        triple.head_description = value(&row, "headDescription").map(str::to_string);
        triple.tail_description = value(&row, "tailDescription").map(str::to_string);
        out.push(triple);
        if out.len() == limit {
            break;
        }
    }
    if out.is_empty() {
        let exists = client.ask(&format!("ASK {{ <{}> ?p ?o }}", subject_iri(relation)))?;
        if !exists {
            return Err(IngestError::RelationUnknown {
                id: relation.id.clone(),
                kg: relation.source,
            });
        }
    }
    Ok(out)
}

fn fixture_triples(path: &Path) -> Result<Vec<TripleRecord>, IngestError> {
    let lines = read_jsonl_lines(path).map_err(|e| match e {
        crate::dataset::DatasetError::Io { source, .. } => IngestError::Io {
            path: path.display().to_string(),
            source,
        },
        other => IngestError::Fixture {
            path: path.display().to_string(),
            line: other.line().unwrap_or(0),
            message: other.to_string(),
        },
    })?;
    Ok(lines.into_iter().map(|(_, l)| l.triple).collect())
}

/// Lists the relations of a knowledge graph.
pub fn fetch_relations(
    source: Source,
    config: &EndpointConfig,
) -> Result<Vec<RelationRecord>, IngestError> {
    match &config.backend {
        Backend::Sparql(url) => sparql_relations(url, source, config),
        Backend::YagoDump(path) => yago::relations(path),
        Backend::Fixture(path) => {
            let mut seen = std::collections::HashSet::new();
            Ok(fixture_triples(path)?
                .into_iter()
                .map(|t| t.relation)
                .filter(|r| r.source == source && seen.insert(r.id.clone()))
                .collect())
        }
    }
}

/// Up to `limit` triples using the relation, in backend order.
pub fn fetch_triples(
    relation: &RelationRecord,
    limit: usize,
    config: &EndpointConfig,
) -> Result<Vec<TripleRecord>, IngestError> {
    match &config.backend {
        Backend::Sparql(url) => sparql_triples(url, relation, limit, config),
        Backend::YagoDump(path) => yago::triples(path, relation, limit),
        Backend::Fixture(path) => {
            let mut known = false;
            let mut out = Vec::new();
            for t in fixture_triples(path)? {
                if t.relation.source == relation.source && t.relation.id == relation.id {
                    known = true;
                    if out.len() < limit {
                        out.push(t);
                    }
                }
            }
            if !known {
                return Err(IngestError::RelationUnknown {
                    id: relation.id.clone(),
                    kg: relation.source,
                });
            }
            Ok(out)
        }
    }
}

/// Fetches triples for many relations with at most `max_in_flight`
/// concurrent requests. Results are ordered by (source, relation id).
pub fn fetch_triples_many(
    relations: &[RelationRecord],
    limit: usize,
    config: &EndpointConfig,
) -> Vec<(RelationRecord, Result<Vec<TripleRecord>, IngestError>)> {
    let next = AtomicUsize::new(0);
    let results = Mutex::new(BTreeMap::new());
    let workers = config.policy.max_in_flight.clamp(1, relations.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(relation) = relations.get(i) else {
                    break;
                };
                let r = fetch_triples(relation, limit, config);
                results
                    .lock()
                    .unwrap()
                    .insert((relation.source, relation.id.clone(), i), (relation.clone(), r));
            });
        }
    });
    results.into_inner().unwrap().into_values().collect()
}
