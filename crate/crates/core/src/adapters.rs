//! Verbalizers as drop-in replacements for hand-written templates in
//! table-to-text and graph-to-text preprocessing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{RelationRecord, Source, TripleRecord};
use crate::verbalize::{VerbalizeError, Verbalizer};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("row {index}: {source}")]
    Row { index: usize, source: VerbalizeError },
    #[error("triple {index}: {source}")]
    Triple { index: usize, source: VerbalizeError },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("empty triple set")]
    EmptyTripleSet,
    #[error("{path}: {message}")]
    Input { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoTable {
    pub title: String,
    pub rows: Vec<(String, String)>,
}

impl InfoTable {
    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.title.trim().is_empty() {
            return Err(AdapterError::InvalidTable("empty title".into()));
        }
        if let Some(i) = self.rows.iter().position(|(k, _)| k.trim().is_empty()) {
            return Err(AdapterError::InvalidTable(format!("row {i} has an empty key")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AdapterError> {
        let err = |message: String| AdapterError::Input {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let table: InfoTable = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    /// Each row as the triple (title, key, value).
    pub fn triples(&self) -> Vec<TripleRecord> {
        self.rows
            .iter()
            .map(|(k, v)| {
                let rel = RelationRecord::new(k.clone(), k.clone(), Source::Wikidata);
                TripleRecord::new(self.title.clone(), rel, v.clone())
            })
            .collect()
    }
}

/// One sentence per row, in row order, joined with single spaces.
pub fn table_to_paragraph(table: &InfoTable, verbalizer: &Verbalizer) -> Result<String, AdapterError> {
    table.validate()?;
    let sentences = verbalizer
        .verbalize_all(&table.triples())
        .map_err(|(index, source)| AdapterError::Row { index, source })?;
    Ok(sentences.join(" "))
}

/// First stage of a graph-to-text pipeline: one sentence per triple.
pub fn graph_first_stage(triples: &[TripleRecord], verbalizer: &Verbalizer) -> Result<Vec<String>, AdapterError> {
    if triples.is_empty() {
        return Err(AdapterError::EmptyTripleSet);
    }
    verbalizer
        .verbalize_all(triples)
        .map_err(|(index, source)| AdapterError::Triple { index, source })
}
