//! Session and record state with an append-only JSONL event log.
//!
//! Every mutation is written to the log before it is applied, under one
//! write lock, so the log order is the order in which state changed and a
//! replay reproduces the same state.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{validate_submission, AnnotationError, SubmissionVerdict, DEFAULT_SESSION_SIZE};
use crate::dataset::{Dataset, EntityOverrides, Example, Quality, VerbalizationRecord};
use crate::kg::TripleRecord;
use crate::split::rng_for;

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub session_size: usize,
    pub seed: u64,
    /// Upper bound on how many sessions may be assigned the same triple.
    pub max_assignments: Option<usize>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            session_size: DEFAULT_SESSION_SIZE,
            seed: 0,
            max_assignments: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub session_id: String,
    pub annotator_id: String,
    pub assigned: Vec<String>,
    pub cursor: usize,
    pub completed: bool,
    #[serde(default)]
    pub noisy: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub quality: Quality,
    pub previous: Quality,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub record_id: String,
    pub session_id: String,
    pub example: Example,
    #[serde(default)]
    pub review_history: Vec<ReviewEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: String,
        annotator_id: String,
        assigned: Vec<String>,
    },
    Submitted {
        record_id: String,
        session_id: String,
        triple_id: String,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        overrides: Option<EntityOverrides>,
    },
    NoisyReported {
        session_id: String,
        triple_id: String,
    },
    Reviewed {
        record_id: String,
        quality: Quality,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDescriptions {
    pub head: Option<String>,
    pub tail: Option<String>,
}

/// The task at a session's cursor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextTask {
    pub session_id: String,
    pub completed: bool,
    pub position: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triple_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triple: Option<TripleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_descriptions: Option<EntityDescriptions>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubmitOutcome {
    Accepted {
        verdict: SubmissionVerdict,
        record: StoredRecord,
    },
    Rejected {
        verdict: SubmissionVerdict,
    },
}

#[derive(Debug, Default)]
struct State {
    sessions: HashMap<String, AnnotationSession>,
    records: Vec<StoredRecord>,
    record_index: HashMap<String, usize>,
    assignment_counts: HashMap<String, usize>,
    sessions_created: u64,
}

#[derive(Debug)]
pub struct Store {
    pool: Dataset,
    pool_index: HashMap<String, usize>,
    config: StoreConfig,
    state: RwLock<State>,
    log: Option<Mutex<(PathBuf, File)>>,
}

impl Store {
    /// In-memory store without persistence.
    pub fn in_memory(pool: Dataset, config: StoreConfig) -> Self {
        let pool_index = pool
            .examples()
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        Self {
            pool,
            pool_index,
            config,
            state: RwLock::new(State::default()),
            log: None,
        }
    }

    /// Opens (or creates) the event log at `path`, replaying existing events.
    pub fn open(pool: Dataset, config: StoreConfig, path: &Path) -> Result<Self, AnnotationError> {
        let storage = |message: String| AnnotationError::Storage {
            path: path.display().to_string(),
            message,
        };
        let mut store = Self::in_memory(pool, config);
        if path.exists() {
            let f = File::open(path).map_err(|e| storage(e.to_string()))?;
            let mut state = State::default();
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| storage(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event =
                    serde_json::from_str(&line).map_err(|e| storage(format!("line {}: {e}", i + 1)))?;
                store
                    .apply(&mut state, &event)
                    .map_err(|e| storage(format!("line {}: {e}", i + 1)))?;
            }
            store.state = RwLock::new(state);
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| storage(e.to_string()))?;
        store.log = Some(Mutex::new((path.to_path_buf(), f)));
        Ok(store)
    }

    pub fn pool(&self) -> &Dataset {
        &self.pool
    }

    fn pool_example(&self, id: &str) -> Option<&Example> {
        self.pool_index.get(id).map(|&i| &self.pool.examples()[i])
    }

    fn append(&self, event: &Event) -> Result<(), AnnotationError> {
        let Some(log) = &self.log else { return Ok(()) };
        let mut guard = log.lock().unwrap();
        let (path, f) = &mut *guard;
        let line = serde_json::to_string(event).expect("events serialize");
        writeln!(f, "{line}")
            .and_then(|_| f.flush())
            .map_err(|e| AnnotationError::Storage {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }

    /// Applies an already-validated event.
    fn apply(&self, state: &mut State, event: &Event) -> Result<(), AnnotationError> {
        match event {
            Event::SessionCreated {
                session_id,
                annotator_id,
                assigned,
            } => {
                for id in assigned {
                    if self.pool_example(id).is_none() {
                        return Err(AnnotationError::UnknownRecord(id.clone()));
                    }
                    *state.assignment_counts.entry(id.clone()).or_insert(0) += 1;
                }
                state.sessions_created += 1;
                state.sessions.insert(
                    session_id.clone(),
                    AnnotationSession {
                        session_id: session_id.clone(),
                        annotator_id: annotator_id.clone(),
                        assigned: assigned.clone(),
                        cursor: 0,
                        completed: assigned.is_empty(),
                        noisy: BTreeSet::new(),
                    },
                );
            }
            Event::Submitted {
                record_id,
                session_id,
                triple_id,
                text,
                overrides,
            } => {
                let session = state
                    .sessions
                    .get_mut(session_id)
                    .ok_or_else(|| AnnotationError::UnknownSession(session_id.clone()))?;
                let pooled = self
                    .pool_example(triple_id)
                    .ok_or_else(|| AnnotationError::UnknownRecord(triple_id.clone()))?;
                session.cursor += 1;
                session.completed = session.cursor == session.assigned.len();
                let reference = VerbalizationRecord {
                    triple_ref: triple_id.clone(),
                    text: text.clone(),
                    quality: Quality::Unreviewed,
                    annotator_id: session.annotator_id.clone(),
                    entity_overrides: overrides.clone().filter(|o| !o.is_empty()),
                };
                let example = Example {
                    id: triple_id.clone(),
                    triple: pooled.triple.clone(),
                    reference: Some(reference),
                    split_tag: None,
                };
                state.record_index.insert(record_id.clone(), state.records.len());
                state.records.push(StoredRecord {
                    record_id: record_id.clone(),
                    session_id: session_id.clone(),
                    example,
                    review_history: Vec::new(),
                });
            }
            Event::NoisyReported {
                session_id,
                triple_id,
            } => {
                let session = state
                    .sessions
                    .get_mut(session_id)
                    .ok_or_else(|| AnnotationError::UnknownSession(session_id.clone()))?;
                if session.noisy.insert(triple_id.clone()) {
                    session.cursor += 1;
                    session.completed = session.cursor == session.assigned.len();
                }
            }
            Event::Reviewed { record_id, quality } => {
                let &i = state
                    .record_index
                    .get(record_id)
                    .ok_or_else(|| AnnotationError::UnknownRecord(record_id.clone()))?;
                let record = &mut state.records[i];
                let reference = record.example.reference.as_mut().expect("stored records have a reference");
                record.review_history.push(ReviewEntry {
                    quality: *quality,
                    previous: reference.quality,
                });
                reference.quality = *quality;
            }
        }
        Ok(())
    }

    fn commit(&self, state: &mut State, event: Event) -> Result<(), AnnotationError> {
        self.append(&event)?;
        self.apply(state, &event)
    }

    pub fn create_session(&self, annotator_id: &str) -> Result<AnnotationSession, AnnotationError> {
        self.create_session_sized(annotator_id, self.config.session_size)
    }

    /// Draws `n` distinct triples at random from the eligible part of the
    /// pool. Sessions may overlap.
    pub fn create_session_sized(&self, annotator_id: &str, n: usize) -> Result<AnnotationSession, AnnotationError> {
        let mut state = self.state.write().unwrap();
        let eligible: Vec<&str> = self
            .pool
            .examples()
            .iter()
            .map(|e| e.id.as_str())
            .filter(|id| {
                self.config
                    .max_assignments
                    .is_none_or(|cap| state.assignment_counts.get(*id).copied().unwrap_or(0) < cap)
            })
            .collect();
        if n == 0 || eligible.len() < n {
            return Err(AnnotationError::PoolEmpty {
                needed: n,
                available: eligible.len(),
            });
        }
        let counter = state.sessions_created;
        let mut rng = rng_for(self.config.seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let assigned: Vec<String> = sample(&mut rng, eligible.len(), n)
            .into_iter()
            .map(|i| eligible[i].to_string())
            .collect();
        let session_id = format!("s{:06}", counter + 1);
        self.commit(
            &mut state,
            Event::SessionCreated {
                session_id: session_id.clone(),
                annotator_id: annotator_id.to_string(),
                assigned,
            },
        )?;
        Ok(state.sessions[&session_id].clone())
    }

    pub fn session(&self, session_id: &str) -> Result<AnnotationSession, AnnotationError> {
        self.state
            .read()
            .unwrap()
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| AnnotationError::UnknownSession(session_id.to_string()))
    }

    pub fn next_task(&self, session_id: &str) -> Result<NextTask, AnnotationError> {
        let s = self.session(session_id)?;
        let mut task = NextTask {
            session_id: s.session_id.clone(),
            completed: s.completed,
            position: s.cursor,
            total: s.assigned.len(),
            triple_id: None,
            triple: None,
            relation_description: None,
            entity_descriptions: None,
        };
        if let Some(id) = s.assigned.get(s.cursor) {
            let e = self.pool_example(id).expect("assigned ids come from the pool");
            task.triple_id = Some(id.clone());
            task.relation_description = e.triple.relation.description.clone();
            let descriptions = EntityDescriptions {
                head: e.triple.head_description.clone(),
                tail: e.triple.tail_description.clone(),
            };
            if descriptions.head.is_some() || descriptions.tail.is_some() {
                task.entity_descriptions = Some(descriptions);
            }
            task.triple = Some(e.triple.clone());
        }
        Ok(task)
    }

    fn check_cursor(session: &AnnotationSession, triple_id: &str) -> Result<(), AnnotationError> {
        if session.completed {
            return Err(AnnotationError::SessionComplete(session.session_id.clone()));
        }
        let expected = session.assigned.get(session.cursor);
        if expected.map(String::as_str) != Some(triple_id) {
            return Err(AnnotationError::OutOfOrder {
                expected: expected.cloned(),
                got: triple_id.to_string(),
            });
        }
        Ok(())
    }

    pub fn submit(
        &self,
        session_id: &str,
        triple_id: &str,
        text: &str,
        overrides: Option<EntityOverrides>,
    ) -> Result<SubmitOutcome, AnnotationError> {
        let mut state = self.state.write().unwrap();
        let session = state
            .sessions
            .get(session_id)
            .ok_or_else(|| AnnotationError::UnknownSession(session_id.to_string()))?;
        Self::check_cursor(session, triple_id)?;
        let triple = &self.pool_example(triple_id).expect("assigned ids come from the pool").triple;
        let verdict = validate_submission(text, &triple.head, &triple.tail, overrides.as_ref());
        if !verdict.accepted {
            return Ok(SubmitOutcome::Rejected { verdict });
        }
        let record_id = format!("r{:06}", state.records.len() + 1);
        self.commit(
            &mut state,
            Event::Submitted {
                record_id: record_id.clone(),
                session_id: session_id.to_string(),
                triple_id: triple_id.to_string(),
                text: text.to_string(),
                overrides,
            },
        )?;
        let record = state.records[state.record_index[&record_id]].clone();
        Ok(SubmitOutcome::Accepted { verdict, record })
    }

    /// Flags the current triple as noisy and moves on. Reporting a triple
    /// this session already flagged is a no-op.
    pub fn report_noisy(&self, session_id: &str, triple_id: &str) -> Result<AnnotationSession, AnnotationError> {
        let mut state = self.state.write().unwrap();
        let session = state
            .sessions
            .get(session_id)
            .ok_or_else(|| AnnotationError::UnknownSession(session_id.to_string()))?;
        if session.noisy.contains(triple_id) {
            return Ok(session.clone());
        }
        if !session.assigned.iter().any(|a| a == triple_id) {
            return Err(AnnotationError::OutOfOrder {
                expected: session.assigned.get(session.cursor).cloned(),
                got: triple_id.to_string(),
            });
        }
        Self::check_cursor(session, triple_id)?;
        self.commit(
            &mut state,
            Event::NoisyReported {
                session_id: session_id.to_string(),
                triple_id: triple_id.to_string(),
            },
        )?;
        Ok(state.sessions[session_id].clone())
    }

    pub fn review(&self, record_id: &str, quality: Quality) -> Result<StoredRecord, AnnotationError> {
        if quality == Quality::Unreviewed {
            return Err(AnnotationError::InvalidCategory(quality.to_string()));
        }
        let mut state = self.state.write().unwrap();
        if !state.record_index.contains_key(record_id) {
            return Err(AnnotationError::UnknownRecord(record_id.to_string()));
        }
        self.commit(
            &mut state,
            Event::Reviewed {
                record_id: record_id.to_string(),
                quality,
            },
        )?;
        Ok(state.records[state.record_index[record_id]].clone())
    }

    pub fn record(&self, record_id: &str) -> Option<StoredRecord> {
        let state = self.state.read().unwrap();
        state.record_index.get(record_id).map(|&i| state.records[i].clone())
    }

    pub fn records(&self) -> Vec<StoredRecord> {
        self.state.read().unwrap().records.clone()
    }

    /// Triple ids reported as noisy, with the number of sessions that did so.
    pub fn noisy_reports(&self) -> Vec<(String, usize)> {
        let state = self.state.read().unwrap();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in state.sessions.values() {
            for t in &s.noisy {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut out: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        out.sort();
        out
    }

    /// All collected responses in the dataset schema, in submission order.
    pub fn export(&self) -> Vec<Example> {
        self.records().into_iter().map(|r| r.example).collect()
    }

    /// Writes [`Store::export`] as dataset JSONL.
    pub fn compact_to(&self, path: &Path) -> Result<usize, AnnotationError> {
        let examples = self.export();
        crate::dataset::write_examples(path, &examples).map_err(|e| AnnotationError::Storage {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(examples.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{RelationRecord, Source};

    fn pool(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| {
                let rel = RelationRecord::new(format!("P{i}"), format!("rel{i}"), Source::Wikidata);
                Example::new(TripleRecord::new(format!("Head{i}"), rel, format!("Tail{i}")), None)
            })
            .collect();
        Dataset::from_examples(examples).unwrap()
    }

    #[test]
    fn session_sizes() {
        let store = Store::in_memory(pool(100), StoreConfig::default());
        let s = store.create_session("a").unwrap();
        assert_eq!(s.assigned.len(), 20);
        assert_eq!(s.assigned.iter().collect::<BTreeSet<_>>().len(), 20);

        let store = Store::in_memory(pool(25), StoreConfig::default());
        assert!(store.create_session("a").is_ok());
        assert!(store.create_session("b").is_ok());

        let store = Store::in_memory(pool(5), StoreConfig::default());
        assert!(matches!(store.create_session("a"), Err(AnnotationError::PoolEmpty { .. })));
    }

    #[test]
    fn submission_flow_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("events.jsonl");
        let cfg = StoreConfig {
            session_size: 3,
            ..Default::default()
        };
        let store = Store::open(pool(10), cfg.clone(), &log).unwrap();
        let s = store.create_session("ann").unwrap();
        let first = s.assigned[0].clone();
        let second = s.assigned[1].clone();
        let third = s.assigned[2].clone();
        let ex = store.pool().get(&first).unwrap().clone();

        assert!(matches!(
            store.submit(&s.session_id, &second, "x", None),
            Err(AnnotationError::OutOfOrder { .. })
        ));
        let rejected = store.submit(&s.session_id, &first, "nothing", None).unwrap();
        assert!(matches!(rejected, SubmitOutcome::Rejected { .. }));

        let overrides = EntityOverrides {
            head: Some("H".into()),
            tail: None,
        };
        let text = format!("H relates to {}.", ex.triple.tail);
        let SubmitOutcome::Accepted { record, .. } =
            store.submit(&s.session_id, &first, &text, Some(overrides.clone())).unwrap()
        else {
            panic!("expected acceptance");
        };
        assert_eq!(record.example.reference.as_ref().unwrap().quality, Quality::Unreviewed);
        assert_eq!(record.example.reference.as_ref().unwrap().entity_overrides, Some(overrides));

        store.report_noisy(&s.session_id, &second).unwrap();
        let after = store.report_noisy(&s.session_id, &second).unwrap();
        assert_eq!(after.cursor, 2);
        assert!(matches!(
            store.report_noisy(&s.session_id, "not-assigned"),
            Err(AnnotationError::OutOfOrder { .. })
        ));

        let t3 = store.pool().get(&third).unwrap().triple.clone();
        store
            .submit(&s.session_id, &third, &format!("{} and {}", t3.head, t3.tail), None)
            .unwrap();
        assert!(store.session(&s.session_id).unwrap().completed);
        assert!(matches!(
            store.submit(&s.session_id, &third, "x", None),
            Err(AnnotationError::SessionComplete(_))
        ));

        store.review(&record.record_id, Quality::Noisy).unwrap();
        let r = store.review(&record.record_id, Quality::Ok).unwrap();
        assert_eq!(r.review_history.len(), 2);
        assert_eq!(r.review_history[1].previous, Quality::Noisy);
        assert!(matches!(store.review("r999", Quality::Ok), Err(AnnotationError::UnknownRecord(_))));

        let exported = store.export();
        drop(store);
        let replayed = Store::open(pool(10), cfg, &log).unwrap();
        assert_eq!(replayed.export(), exported);
        assert_eq!(replayed.session(&s.session_id).unwrap().cursor, 3);
        assert_eq!(replayed.noisy_reports(), vec![(second, 1)]);
    }
}
