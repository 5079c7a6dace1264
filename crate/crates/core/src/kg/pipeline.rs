use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    dedupe_relations_with_report, fetch_relations, fetch_triples_many, filter_relation, filter_triple,
    EndpointConfig, FilterReason, IngestError, Source, TripleRecord,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub relations_fetched: usize,
    pub relations_kept: usize,
    pub relations_dropped: BTreeMap<String, usize>,
    pub triples_fetched: usize,
    pub triples_kept: usize,
    pub triples_dropped: BTreeMap<String, usize>,
    /// Relations whose triples could not be fetched, with the error text.
    pub failures: Vec<(String, String)>,
}

fn reason_key(r: FilterReason) -> String {
    format!("{r:?}")
}

/// Fetches relations from every source, filters and dedupes them, then
/// fetches and filters up to `limit` triples per relation.
pub fn ingest(
    sources: &BTreeMap<Source, EndpointConfig>,
    limit: usize,
) -> Result<(Vec<TripleRecord>, IngestReport), IngestError> {
    let mut report = IngestReport::default();
    let mut per_kg = BTreeMap::new();
    for (source, config) in sources {
        let relations = fetch_relations(*source, config)?;
        report.relations_fetched += relations.len();
        let mut kept = Vec::new();
        for r in relations {
            let verdict = filter_relation(&r);
            if verdict.kept {
                kept.push(r);
            } else {
                *report.relations_dropped.entry(reason_key(verdict.reason)).or_insert(0) += 1;
            }
        }
        per_kg.insert(*source, kept);
    }
    let (kept, dropped) = dedupe_relations_with_report(&per_kg);
    for (_, verdict) in dropped {
        *report.relations_dropped.entry(reason_key(verdict.reason)).or_insert(0) += 1;
    }
    report.relations_kept = kept.len();

    let mut triples = Vec::new();
    for (source, config) in sources {
        let mine: Vec<_> = kept.iter().filter(|r| r.source == *source).cloned().collect();
        for (relation, result) in fetch_triples_many(&mine, limit, config) {
            match result {
                Ok(ts) => {
                    report.triples_fetched += ts.len();
                    for t in ts {
                        let verdict = filter_triple(&t);
                        if verdict.kept {
                            triples.push(t);
                        } else {
                            *report.triples_dropped.entry(reason_key(verdict.reason)).or_insert(0) += 1;
                        }
                    }
                }
                Err(e) => {
                    log::warn!("{}: {e}", relation.id);
                    report.failures.push((relation.id.clone(), e.to_string()));
                }
            }
        }
    }
    report.triples_kept = triples.len();
    Ok((triples, report))
}
