use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{RelationRecord, Source, TripleRecord};
use crate::transforms::split_camel_case;

/// Entities longer than this many Unicode scalar values are dropped.
pub const MAX_ENTITY_CHARS: usize = 64;

const BANNED_LABEL_TOKENS: [&str; 3] = ["id", "number", "code"];
const RESERVED_DESCRIPTION: &str = "reserved for dbpedia";
const META_MARKERS: [&str; 2] = ["Category:", "XMLSchema#"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterReason {
    MetaEntity,
    UrlEntity,
    EntityTooLong,
    LabelIdNumberCode,
    ReservedForDBpedia,
    DuplicateLabelLowerPrecedence,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub kept: bool,
    pub reason: FilterReason,
}

impl FilterVerdict {
    pub const KEEP: FilterVerdict = FilterVerdict {
        kept: true,
        reason: FilterReason::None,
    };

    pub fn drop(reason: FilterReason) -> Self {
        debug_assert_ne!(reason, FilterReason::None);
        FilterVerdict {
            kept: false,
            reason,
        }
    }
}

fn label_tokens(label: &str) -> impl Iterator<Item = String> + '_ {
    split_camel_case(label)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .into_iter()
}

pub fn filter_relation(relation: &RelationRecord) -> FilterVerdict {
    if label_tokens(&relation.label).any(|t| BANNED_LABEL_TOKENS.contains(&t.as_str())) {
        return FilterVerdict::drop(FilterReason::LabelIdNumberCode);
    }
    let reserved = relation
        .description
        .as_deref()
        .is_some_and(|d| d.to_lowercase().contains(RESERVED_DESCRIPTION));
    if reserved {
        return FilterVerdict::drop(FilterReason::ReservedForDBpedia);
    }
    FilterVerdict::KEEP
}

fn looks_like_url(entity: &str) -> bool {
    let e = entity.trim_start();
    if e.len() >= 4 && e[..4].eq_ignore_ascii_case("www.") {
        return true;
    }
    let Some((scheme, _)) = e.split_once("://") else {
        return false;
    };
    let mut chars = scheme.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
}

fn entity_reason(entity: &str) -> Option<FilterReason> {
    if META_MARKERS.iter().any(|m| entity.contains(m)) {
        Some(FilterReason::MetaEntity)
    } else if looks_like_url(entity) {
        Some(FilterReason::UrlEntity)
    } else if entity.chars().count() > MAX_ENTITY_CHARS {
        Some(FilterReason::EntityTooLong)
    } else {
        None
    }
}

pub fn filter_triple(triple: &TripleRecord) -> FilterVerdict {
    match entity_reason(&triple.head).or_else(|| entity_reason(&triple.tail)) {
        Some(reason) => FilterVerdict::drop(reason),
        None => FilterVerdict::KEEP,
    }
}

/// Dedupe key: camel-case split, lowercased, whitespace collapsed.
pub fn normalize_label(label: &str) -> String {
    split_camel_case(label)
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Keeps one relation per normalized label, preferring DBPedia, then YAGO,
/// then Wikidata.
pub fn dedupe_relations(per_kg: &BTreeMap<Source, Vec<RelationRecord>>) -> Vec<RelationRecord> {
    dedupe_relations_with_report(per_kg).0
}

/// Like [`dedupe_relations`], also returning the dropped records.
pub fn dedupe_relations_with_report(
    per_kg: &BTreeMap<Source, Vec<RelationRecord>>,
) -> (Vec<RelationRecord>, Vec<(RelationRecord, FilterVerdict)>) {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    // BTreeMap iteration follows the Source ordering, i.e. precedence.
    for relations in per_kg.values() {
        for r in relations {
            if seen.insert(normalize_label(&r.label)) {
                kept.push(r.clone());
            } else {
                dropped.push((
                    r.clone(),
                    FilterVerdict::drop(FilterReason::DuplicateLabelLowerPrecedence),
                ));
            }
        }
    }
    (kept, dropped)
}
