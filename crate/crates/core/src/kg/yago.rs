//! Minimal N-Triples reader for YAGO dumps.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::fetch::surface_from_iri;
use super::{IngestError, RelationRecord, Source, TripleRecord};

const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
const RDF_PROPERTY: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#Property";
const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";
const RDFS_COMMENT: &str = "http://www.w3.org/2000/01/rdf-schema#comment";

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Term {
    Iri(String),
    Literal { value: String, lang: Option<String> },
    Blank(String),
}

impl Term {
    fn iri(&self) -> Option<&str> {
        match self {
            Term::Iri(i) => Some(i),
            _ => None,
        }
    }

    fn english_literal(&self) -> Option<&str> {
        match self {
            Term::Literal { value, lang } if lang.as_deref().is_none_or(|l| l.starts_with("en")) => {
                Some(value)
            }
            _ => None,
        }
    }
}

fn parse_term(s: &str) -> Option<(Term, &str)> {
    let s = s.trim_start();
    if let Some(rest) = s.strip_prefix('<') {
        let end = rest.find('>')?;
        return Some((Term::Iri(rest[..end].to_string()), &rest[end + 1..]));
    }
    if let Some(rest) = s.strip_prefix("_:") {
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        return Some((Term::Blank(rest[..end].to_string()), &rest[end..]));
    }
    let rest = s.strip_prefix('"')?;
    let mut value = String::new();
    let mut chars = rest.char_indices();
    let mut end = None;
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => {
                end = Some(i + 1);
                break;
            }
            '\\' => {
                let (_, e) = chars.next()?;
                match e {
                    'n' => value.push('\n'),
                    't' => value.push('\t'),
                    'r' => value.push('\r'),
                    'u' | 'U' => {
                        let len = if e == 'u' { 4 } else { 8 };
                        let hex: String = (0..len).filter_map(|_| chars.next().map(|(_, h)| h)).collect();
                        value.push(char::from_u32(u32::from_str_radix(&hex, 16).ok()?)?);
                    }
                    other => value.push(other),
                }
            }
            c => value.push(c),
        }
    }
    let mut rest = &rest[end?..];
    let mut lang = None;
    if let Some(r) = rest.strip_prefix('@') {
        let e = r.find(char::is_whitespace).unwrap_or(r.len());
        lang = Some(r[..e].to_string());
        rest = &r[e..];
    } else if let Some(r) = rest.strip_prefix("^^<") {
        rest = &r[r.find('>')? + 1..];
    }
    Some((Term::Literal { value, lang }, rest))
}

/// Parses one N-Triples statement; comments and blank lines yield `None`.
pub(crate) fn parse_line(line: &str) -> Option<(Term, Term, Term)> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return None;
    }
    let (s, rest) = parse_term(line)?;
    let (p, rest) = parse_term(rest)?;
    let (o, rest) = parse_term(rest)?;
    rest.trim().starts_with('.').then_some((s, p, o))
}

fn for_each_statement(
    path: &Path,
    mut f: impl FnMut(Term, Term, Term) -> bool,
) -> Result<(), IngestError> {
    let io = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    for line in reader.lines() {
        let line = line.map_err(io)?;
        if let Some((s, p, o)) = parse_line(&line) {
            if !f(s, p, o) {
                break;
            }
        }
    }
    Ok(())
}

pub(crate) fn relations(path: &Path) -> Result<Vec<RelationRecord>, IngestError> {
    let mut order: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    let mut is_property = HashSet::new();
    let mut labels: HashMap<String, String> = HashMap::new();
    let mut comments: HashMap<String, String> = HashMap::new();
    for_each_statement(path, |s, p, o| {
        let (Some(s), Some(p)) = (s.iri(), p.iri()) else {
            return true;
        };
        let s = s.to_string();
        if (p == RDF_TYPE || p == RDFS_LABEL || p == RDFS_COMMENT) && seen.insert(s.clone()) {
            order.push(s.clone());
        }
        match p {
            RDF_TYPE if o.iri() == Some(RDF_PROPERTY) => {
                is_property.insert(s);
            }
            RDFS_LABEL => {
                if let Some(v) = o.english_literal() {
                    labels.entry(s).or_insert_with(|| v.to_string());
                }
            }
            RDFS_COMMENT => {
                if let Some(v) = o.english_literal() {
                    comments.entry(s).or_insert_with(|| v.to_string());
                }
            }
            _ => {}
        }
        true
    })?;
    Ok(order
        .into_iter()
        .filter(|iri| is_property.contains(iri) && comments.contains_key(iri))
        .map(|iri| {
            let label = labels
                .get(&iri)
                .cloned()
                .unwrap_or_else(|| surface_from_iri(&iri));
            let mut r = RelationRecord::new(iri.clone(), label, Source::Yago);
            r.description = comments.get(&iri).cloned();
            r
        })
        .collect())
}

fn surface(term: &Term, labels: &HashMap<String, String>) -> Option<String> {
    match term {
        Term::Iri(i) => Some(labels.get(i).cloned().unwrap_or_else(|| surface_from_iri(i))),
        Term::Literal { value, .. } => Some(value.clone()),
        Term::Blank(_) => None,
    }
}

pub(crate) fn triples(
    path: &Path,
    relation: &RelationRecord,
    limit: usize,
) -> Result<Vec<TripleRecord>, IngestError> {
    let mut known = false;
    let mut pairs: Vec<(Term, Term)> = Vec::new();
    for_each_statement(path, |s, p, o| {
        if p.iri() == Some(relation.id.as_str()) {
            known = true;
            if pairs.len() < limit {
                pairs.push((s, o));
            }
        } else if s.iri() == Some(relation.id.as_str()) {
            known = true;
        }
        true
    })?;
    if !known {
        return Err(IngestError::RelationUnknown {
            id: relation.id.clone(),
            kg: Source::Yago,
        });
    }
    let wanted: HashSet<String> = pairs
        .iter()
        .flat_map(|(s, o)| [s.iri(), o.iri()])
        .flatten()
        .map(str::to_string)
        .collect();
    let mut labels = HashMap::new();
    let mut comments = HashMap::new();
    if !wanted.is_empty() {
        for_each_statement(path, |s, p, o| {
            if let (Some(s), Some(p)) = (s.iri(), p.iri()) {
                if wanted.contains(s) {
                    let target = match p {
                        RDFS_LABEL => Some(&mut labels),
                        RDFS_COMMENT => Some(&mut comments),
                        _ => None,
                    };
                    if let (Some(map), Some(v)) = (target, o.english_literal()) {
                        map.entry(s.to_string()).or_insert_with(|| v.to_string());
                    }
                }
            }
            true
        })?;
    }
    Ok(pairs
        .into_iter()
        .filter_map(|(s, o)| {
            let mut t = TripleRecord::new(surface(&s, &labels)?, relation.clone(), surface(&o, &labels)?);
            t.head_description = s.iri().and_then(|i| comments.get(i).cloned());
            t.tail_description = o.iri().and_then(|i| comments.get(i).cloned());
            Some(t)
        })
        .collect())
}
