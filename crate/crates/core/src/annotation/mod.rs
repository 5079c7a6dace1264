//! Crowdsourced verbalization collection and manual error analysis.

mod server;
mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EntityOverrides;

pub use server::{router, serve, ANNOTATION_PORT_ENV, DEFAULT_PORT};
pub use store::{
    AnnotationSession, Event, NextTask, ReviewEntry, Store, StoreConfig, StoredRecord, SubmitOutcome,
};

pub const DEFAULT_SESSION_SIZE: usize = 20;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("pool has {available} eligible triples, session needs {needed}")]
    PoolEmpty { needed: usize, available: usize },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("triple {got} is not the current task (expected {expected:?})")]
    OutOfOrder { expected: Option<String>, got: String },
    #[error("session {0} is complete")]
    SessionComplete(String),
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("invalid review category {0:?}")]
    InvalidCategory(String),
    #[error("event log {path}: {message}")]
    Storage { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Failure {
    HeadMissing,
    TailMissing,
    TooShort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionVerdict {
    pub accepted: bool,
    pub failures: BTreeSet<Failure>,
}

/// Both (possibly overridden) entities must occur verbatim in the text, and
/// the text must have at least two characters beyond the entities.
pub fn validate_submission(
    text: &str,
    head: &str,
    tail: &str,
    overrides: Option<&EntityOverrides>,
) -> SubmissionVerdict {
    let head = overrides.and_then(|o| o.head.as_deref()).unwrap_or(head);
    let tail = overrides.and_then(|o| o.tail.as_deref()).unwrap_or(tail);
    let mut failures = BTreeSet::new();
    if !text.contains(head) {
        failures.insert(Failure::HeadMissing);
    }
    if !text.contains(tail) {
        failures.insert(Failure::TailMissing);
    }
    if text.chars().count() < head.chars().count() + tail.chars().count() + 2 {
        failures.insert(Failure::TooShort);
    }
    SubmissionVerdict {
        accepted: failures.is_empty(),
        failures,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ErrorFlag {
    Sem,
    Dir,
    Lit,
    Lex,
    Ent,
    Lbl,
}

impl ErrorFlag {
    pub const MODEL: [ErrorFlag; 4] = [ErrorFlag::Sem, ErrorFlag::Dir, ErrorFlag::Lit, ErrorFlag::Lex];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAnnotation {
    pub output_id: String,
    pub model_id: String,
    pub flags: BTreeSet<ErrorFlag>,
    #[serde(default)]
    pub annotator_id: String,
}

/// Count of one model-error flag with the split by input flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagCount {
    pub total: usize,
    pub ent_only: usize,
    pub lbl_only: usize,
    pub ent_lbl: usize,
}

pub type ErrorReport = BTreeMap<String, BTreeMap<ErrorFlag, FlagCount>>;

/// Per model and model-error flag, the number of flagged outputs and how
/// many of those had the input marked ENT only, LBL only, or both.
pub fn aggregate_errors(annotations: &[ErrorAnnotation]) -> ErrorReport {
    let mut report = ErrorReport::new();
    for a in annotations {
        let per_model = report
            .entry(a.model_id.clone())
            .or_insert_with(|| ErrorFlag::MODEL.iter().map(|f| (*f, FlagCount::default())).collect());
        let ent = a.flags.contains(&ErrorFlag::Ent);
        let lbl = a.flags.contains(&ErrorFlag::Lbl);
        for f in ErrorFlag::MODEL {
            if !a.flags.contains(&f) {
                continue;
            }
            let c = per_model.get_mut(&f).expect("initialized above");
            c.total += 1;
            match (ent, lbl) {
                (true, false) => c.ent_only += 1,
                (false, true) => c.lbl_only += 1,
                (true, true) => c.ent_lbl += 1,
                (false, false) => {}
            }
        }
    }
    report
}
