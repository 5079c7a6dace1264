//! Helpers shared by the integration tests.

#![allow(dead_code)]

pub mod oracle;

use std::path::Path;

use axum::Router;
use rel2text::dataset::{Example, Quality, VerbalizationRecord};
use rel2text::kg::{RelationRecord, Source, TripleRecord};

/// Serves `router` on an ephemeral localhost port from a background thread
/// and returns its base URL. The server lives until the test process exits.
pub fn spawn(router: Router) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{addr}")
}

/// A base URL nothing listens on.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}")
}

pub fn triple(head: &str, label: &str, tail: &str) -> TripleRecord {
    TripleRecord::new(head, RelationRecord::new(label, label, Source::Wikidata), tail)
}

pub fn example(head: &str, label: &str, tail: &str, text: Option<&str>) -> Example {
    let reference = text.map(|t| VerbalizationRecord {
        triple_ref: String::new(),
        text: t.to_string(),
        quality: Quality::Ok,
        annotator_id: "a1".into(),
        entity_overrides: None,
    });
    Example::new(triple(head, label, tail), reference)
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).unwrap());
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

#[derive(Debug, Clone, Copy)]
pub enum GenMode {
    /// Outputs equal inputs.
    Echo,
    /// The same string for every input.
    Constant(&'static str),
    /// Drops the last output of every batch.
    DropLast,
    /// Replies with the given status and no outputs.
    Status(u16),
}

/// A stub generation server implementing `POST /generate`.
pub fn generation_stub(mode: GenMode) -> String {
    use axum::routing::post;
    use axum::Json;
    let handler = move |Json(req): Json<serde_json::Value>| async move {
        assert_eq!(req["decoding"], "greedy");
        let inputs: Vec<String> = serde_json::from_value(req["inputs"].clone()).unwrap();
        let outputs: Vec<String> = match mode {
            GenMode::Echo => inputs,
            GenMode::Constant(s) => inputs.iter().map(|_| s.to_string()).collect(),
            GenMode::DropLast => inputs[..inputs.len() - 1].to_vec(),
            GenMode::Status(code) => {
                return (
                    axum::http::StatusCode::from_u16(code).unwrap(),
                    Json(serde_json::json!({"error": "injected"})),
                );
            }
        };
        (axum::http::StatusCode::OK, Json(serde_json::json!({ "outputs": outputs })))
    };
    spawn(Router::new().route("/generate", post(handler)))
}

#[derive(Debug, Clone, Copy)]
pub enum ScoreMode {
    /// Every pair gets ss = 1 if hyp == ref else 0, and ppl = hyp length.
    Echo,
    /// A body that is not JSON.
    Garbage,
    Status(u16),
}

/// A stub external scorer implementing `POST /score`.
pub fn scorer_stub(mode: ScoreMode) -> String {
    use axum::response::IntoResponse;
    use axum::routing::post;
    use axum::Json;
    let handler = move |Json(req): Json<serde_json::Value>| async move {
        match mode {
            ScoreMode::Echo => {
                let scores: Vec<serde_json::Value> = req["pairs"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|p| {
                        let same = p["hyp"] == p["ref"];
                        let len = p["hyp"].as_str().unwrap().len();
                        serde_json::json!({"ss": if same { 1.0 } else { 0.0 }, "ppl": len as f64})
                    })
                    .collect();
                Json(serde_json::json!({ "scores": scores })).into_response()
            }
            ScoreMode::Garbage => "<<not json>>".into_response(),
            ScoreMode::Status(code) => axum::http::StatusCode::from_u16(code).unwrap().into_response(),
        }
    };
    spawn(Router::new().route("/score", post(handler)))
}
