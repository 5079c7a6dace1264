mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use serde_json::json;

use rel2text::dataset::DatasetLine;
use rel2text::kg::{
    dedupe_relations, fetch_relations, fetch_triples, filter_relation, filter_triple, ingest,
    EndpointConfig, FilterReason, IngestError, RelationRecord, RequestPolicy, Source, TripleRecord,
};

fn line(t: TripleRecord) -> DatasetLine {
    DatasetLine {
        id: None,
        triple: t,
        reference: None,
        split_tag: None,
    }
}

fn rel(id: &str, label: &str, source: Source, desc: Option<&str>) -> RelationRecord {
    let mut r = RelationRecord::new(id, label, source);
    r.description = desc.map(str::to_string);
    r
}

fn fast_policy(max_attempts: u32) -> RequestPolicy {
    RequestPolicy {
        max_attempts,
        initial_backoff: Duration::from_millis(5),
        requests_per_second: 0.0,
        timeout: Duration::from_secs(5),
        max_in_flight: 2,
    }
}

#[test]
fn empty_fixture_has_no_relations() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.jsonl");
    std::fs::write(&p, "").unwrap();
    for s in Source::ALL {
        assert!(fetch_relations(s, &EndpointConfig::fixture(&p)).unwrap().is_empty());
    }
}

#[test]
fn fixture_relations_keep_missing_descriptions_absent() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("wd.jsonl");
    let rels = [
        rel("P17", "country", Source::Wikidata, Some("sovereign state of this item")),
        rel("P27", "country of citizenship", Source::Wikidata, Some("the object is a country")),
        rel("P1532", "country for sport", Source::Wikidata, None),
    ];
    let lines: Vec<_> = rels
        .iter()
        .map(|r| line(TripleRecord::new("A", r.clone(), "B")))
        .collect();
    common::write_jsonl(&p, &lines);
    let got = fetch_relations(Source::Wikidata, &EndpointConfig::fixture(&p)).unwrap();
    assert_eq!(got.len(), 3);
    assert_eq!(got.iter().filter(|r| r.description.is_none()).count(), 1);
    assert!(fetch_relations(Source::DBPedia, &EndpointConfig::fixture(&p)).unwrap().is_empty());
}

#[test]
fn fixture_triples_respect_limit() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.jsonl");
    let sport = rel("P1532", "sport country", Source::Wikidata, None);
    let rare = rel("P9", "rare", Source::Wikidata, None);
    let mut lines = vec![line(TripleRecord::new("Yousra Matine", sport.clone(), "Morocco"))];
    for i in 0..6 {
        lines.push(line(TripleRecord::new(format!("athlete {i}"), sport.clone(), "Spain")));
    }
    for i in 0..2 {
        lines.push(line(TripleRecord::new(format!("x{i}"), rare.clone(), "y")));
    }
    common::write_jsonl(&p, &lines);
    let cfg = EndpointConfig::fixture(&p);
    let five = fetch_triples(&sport, 5, &cfg).unwrap();
    assert_eq!(five.len(), 5);
    assert!(five
        .iter()
        .any(|t| t.head == "Yousra Matine" && t.tail == "Morocco"));
    assert_eq!(fetch_triples(&rare, 5, &cfg).unwrap().len(), 2);
    let missing = rel("P0", "nothing", Source::Wikidata, None);
    assert!(matches!(
        fetch_triples(&missing, 5, &cfg),
        Err(IngestError::RelationUnknown { .. })
    ));
}

#[test]
fn relation_filter_examples() {
    let f = |label: &str, desc: Option<&str>| filter_relation(&rel("r", label, Source::DBPedia, desc));
    let v = f("ChEMBL ID", None);
    assert!(!v.kept);
    assert_eq!(v.reason, FilterReason::LabelIdNumberCode);
    assert!(f("parent", None).kept);
    assert!(f("video", None).kept);
    assert!(!f("isbnNumber", None).kept);
    assert!(!f("areaCode", None).kept);
    let reserved = f("foo", Some("Reserved for DBpedia."));
    assert_eq!(reserved.reason, FilterReason::ReservedForDBpedia);
}

#[test]
fn triple_filter_examples() {
    let r = rel("r", "country", Source::Wikidata, None);
    let t = |h: &str, tail: &str| filter_triple(&TripleRecord::new(h, r.clone(), tail));
    let long = "a".repeat(65);
    assert_eq!(t("x", &long).reason, FilterReason::EntityTooLong);
    assert!(t("x", &"a".repeat(64)).kept);
    assert_eq!(t("Category:Novels", "y").reason, FilterReason::MetaEntity);
    assert!(t("Morocco", "Yousra Matine").kept);
    assert_eq!(t("x", "http://example.org/a").reason, FilterReason::UrlEntity);
    assert_eq!(t("www.example.org", "y").reason, FilterReason::UrlEntity);
}

#[test]
fn dedupe_precedence() {
    let mut per_kg = BTreeMap::new();
    per_kg.insert(Source::Wikidata, vec![rel("P17", "country", Source::Wikidata, None)]);
    per_kg.insert(Source::DBPedia, vec![rel("dbo:country", "country", Source::DBPedia, None)]);
    let out = dedupe_relations(&per_kg);
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].source, Source::DBPedia);

    let mut per_kg = BTreeMap::new();
    per_kg.insert(Source::Yago, vec![rel("y:genre", "genre", Source::Yago, None)]);
    per_kg.insert(Source::DBPedia, vec![rel("d:genre", "genre", Source::DBPedia, None)]);
    let out = dedupe_relations(&per_kg);
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].source, Source::DBPedia);

    let mut per_kg = BTreeMap::new();
    per_kg.insert(Source::Yago, vec![rel("a", "a", Source::Yago, None), rel("b", "b", Source::Yago, None)]);
    per_kg.insert(Source::Wikidata, vec![rel("c", "c", Source::Wikidata, None)]);
    assert_eq!(dedupe_relations(&per_kg).len(), 3);
}

#[test]
fn pipeline_is_deterministic_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("kg.jsonl");
    let mut lines = Vec::new();
    for (i, (label, src)) in [
        ("country", Source::Wikidata),
        ("country", Source::DBPedia),
        ("ChEMBL ID", Source::Wikidata),
        ("musicBy", Source::DBPedia),
        ("genre", Source::Yago),
    ]
    .into_iter()
    .enumerate()
    {
        let r = rel(&format!("r{i}"), label, src, None);
        for j in 0..4 {
            lines.push(line(TripleRecord::new(format!("h{i}-{j}"), r.clone(), format!("t{j}"))));
        }
        lines.push(line(TripleRecord::new("Category:Stuff", r.clone(), "t")));
    }
    common::write_jsonl(&p, &lines);
    let run = || {
        let configs: BTreeMap<_, _> = Source::ALL
            .into_iter()
            .map(|s| (s, EndpointConfig::fixture(&p)))
            .collect();
        let (triples, report) = ingest(&configs, 10).unwrap();
        (serde_json::to_string(&triples).unwrap(), report)
    };
    let (a, report) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    assert_eq!(report.relations_fetched, 5);
    assert_eq!(report.relations_kept, 3);
    assert_eq!(report.relations_dropped["LabelIdNumberCode"], 1);
    assert_eq!(report.relations_dropped["DuplicateLabelLowerPrecedence"], 1);
    assert_eq!(report.triples_fetched, 15);
    assert_eq!(report.triples_kept, 12);
    assert_eq!(report.triples_dropped["MetaEntity"], 3);
}

// ---------------------------------------------------------------------------
// SPARQL against a stub endpoint
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct Stub {
    hits: Arc<AtomicUsize>,
    fail_first: usize,
    fail_status: StatusCode,
    body: Option<&'static str>,
}

async fn sparql(State(s): State<Stub>, Query(q): Query<BTreeMap<String, String>>) -> axum::response::Response {
    let n = s.hits.fetch_add(1, Ordering::SeqCst);
    if n < s.fail_first {
        return (s.fail_status, "busy").into_response();
    }
    if let Some(b) = s.body {
        return b.into_response();
    }
    let query = q.get("query").cloned().unwrap_or_default();
    let body = if query.starts_with("ASK") {
        json!({"boolean": true})
    } else if query.contains("?head") {
        json!({"head": {}, "results": {"bindings": [
            {"head": {"type": "uri", "value": "http://www.wikidata.org/entity/Q1"},
             "headLabel": {"type": "literal", "value": "Yousra Matine"},
             "tail": {"type": "uri", "value": "http://www.wikidata.org/entity/Q1028"},
             "tailLabel": {"type": "literal", "value": "Morocco"}},
            {"head": {"type": "uri", "value": "http://www.wikidata.org/entity/Q77"},
             "headLabel": {"type": "literal", "value": "Q77"},
             "tail": {"type": "literal", "value": "plain value"}}
        ]}})
    } else {
        json!({"head": {}, "results": {"bindings": [
            {"property": {"type": "uri", "value": "http://www.wikidata.org/entity/P1532"},
             "label": {"type": "literal", "value": "country for sport"},
             "description": {"type": "literal", "value": "country a person represents"}},
            {"property": {"type": "uri", "value": "http://www.wikidata.org/entity/P9"},
             "label": {"type": "literal", "value": "no description"}}
        ]}})
    };
    axum::Json(body).into_response()
}

fn stub(fail_first: usize, fail_status: StatusCode, body: Option<&'static str>) -> (String, Arc<AtomicUsize>) {
    let hits = Arc::new(AtomicUsize::new(0));
    let state = Stub {
        hits: hits.clone(),
        fail_first,
        fail_status,
        body,
    };
    let url = common::spawn(Router::new().route("/sparql", get(sparql)).with_state(state));
    (format!("{url}/sparql"), hits)
}

#[test]
fn sparql_relations_and_triples() {
    let (url, _) = stub(0, StatusCode::OK, None);
    let cfg = EndpointConfig::sparql(&url).with_policy(fast_policy(1));
    let rels = fetch_relations(Source::Wikidata, &cfg).unwrap();
    assert_eq!(rels.len(), 2);
    assert_eq!(rels[0].id, "P1532");
    assert_eq!(rels[0].description.as_deref(), Some("country a person represents"));
    assert_eq!(rels[1].description, None);
    let triples = fetch_triples(&rels[0], 5, &cfg).unwrap();
    assert_eq!(triples.len(), 2);
    assert_eq!((triples[0].head.as_str(), triples[0].tail.as_str()), ("Yousra Matine", "Morocco"));
    // A label equal to the entity id is the label service's fallback.
    assert_eq!(triples[1].head, "Q77");
    assert_eq!(triples[1].tail, "plain value");
}

#[test]
fn sparql_retries_transient_failures() {
    let (url, hits) = stub(2, StatusCode::SERVICE_UNAVAILABLE, None);
    let cfg = EndpointConfig::sparql(&url).with_policy(fast_policy(3));
    assert_eq!(fetch_relations(Source::Wikidata, &cfg).unwrap().len(), 2);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn sparql_gives_up_after_max_attempts() {
    let (url, hits) = stub(10, StatusCode::TOO_MANY_REQUESTS, None);
    let cfg = EndpointConfig::sparql(&url).with_policy(fast_policy(3));
    match fetch_relations(Source::Wikidata, &cfg) {
        Err(IngestError::EndpointUnreachable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn sparql_client_errors_are_not_retried() {
    let (url, hits) = stub(10, StatusCode::BAD_REQUEST, None);
    let cfg = EndpointConfig::sparql(&url).with_policy(fast_policy(3));
    match fetch_relations(Source::Wikidata, &cfg) {
        Err(IngestError::EndpointUnreachable { attempts, .. }) => assert_eq!(attempts, 1),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn sparql_malformed_payload_keeps_excerpt() {
    let (url, _) = stub(0, StatusCode::OK, Some("<html>not json</html>"));
    let cfg = EndpointConfig::sparql(&url).with_policy(fast_policy(1));
    match fetch_relations(Source::Wikidata, &cfg) {
        Err(IngestError::MalformedResponse { excerpt, .. }) => assert!(excerpt.starts_with("<html>")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unreachable_endpoint() {
    let cfg = EndpointConfig::sparql(common::dead_url()).with_policy(fast_policy(2));
    assert!(matches!(
        fetch_relations(Source::DBPedia, &cfg),
        Err(IngestError::EndpointUnreachable { attempts: 2, .. })
    ));
}

#[test]
fn yago_dump_relations_and_triples() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("yago.nt");
    let nt = r#"<http://yago/worksAt> <http://www.w3.org/1999/02/22-rdf-syntax-ns#type> <http://www.w3.org/1999/02/22-rdf-syntax-ns#Property> .
<http://yago/worksAt> <http://www.w3.org/2000/01/rdf-schema#comment> "the employer of a person"@en .
<http://yago/worksAt> <http://www.w3.org/2000/01/rdf-schema#label> "works at"@en .
<http://yago/Alan_Turing> <http://yago/worksAt> <http://yago/University_of_Manchester> .
<http://yago/Ada_Lovelace> <http://yago/worksAt> "nowhere" .
"#;
    std::fs::write(&p, nt).unwrap();
    let cfg = EndpointConfig::yago_dump(&p);
    let rels = fetch_relations(Source::Yago, &cfg).unwrap();
    assert_eq!(rels.len(), 1);
    assert_eq!(rels[0].label, "works at");
    assert_eq!(rels[0].description.as_deref(), Some("the employer of a person"));
    let triples = fetch_triples(&rels[0], 5, &cfg).unwrap();
    assert_eq!(triples.len(), 2);
    assert_eq!(triples[0].head, "Alan Turing");
    assert_eq!(triples[0].tail, "University of Manchester");
}
