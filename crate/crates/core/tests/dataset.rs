mod common;

use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use rel2text::dataset::{
    dataset_stats, delexicalize, filter_examples, load_dataset, load_responses, quality_filter, save_dataset,
    Dataset, DatasetError, DelexError, EntitySlot, Example, Quality, Selection, VerbalizationRecord,
};

use common::example;

fn record(triple_ref: &str, quality: Quality, annotator: &str) -> VerbalizationRecord {
    VerbalizationRecord {
        triple_ref: triple_ref.into(),
        text: format!("{triple_ref} by {annotator}"),
        quality,
        annotator_id: annotator.into(),
        entity_overrides: None,
    }
}

#[test]
fn empty_file_loads_empty() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.jsonl");
    std::fs::write(&p, "\n").unwrap();
    let d = load_dataset(&p).unwrap();
    assert!(d.is_empty());
    let s = dataset_stats(&d);
    assert_eq!((s.examples, s.distinct_relations, s.with_reference), (0, 0, 0));
}

#[test]
fn duplicate_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    let e = example("A", "r", "B", None);
    common::write_jsonl(&p, &[e.clone(), e.clone()]);
    match load_dataset(&p) {
        Err(DatasetError::DuplicateTripleId { line, id }) => {
            assert_eq!(line, 2);
            assert_eq!(id, e.id);
        }
        other => panic!("unexpected {other:?}"),
    }
    // The response loader accepts repeated triples.
    assert_eq!(load_responses(&p).unwrap().len(), 2);
}

#[test]
fn schema_violations_name_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.jsonl");
    std::fs::write(
        &p,
        "{\"triple\":{\"head\":\"A\",\"relation\":{\"id\":\"r\",\"label\":\"r\",\"source\":\"wikidata\"},\"tail\":\"B\"}}\n\
         {\"triple\":{\"head\":\"A\",\"relation\":{\"id\":\"r\",\"label\":\"r\",\"source\":\"freebase\"},\"tail\":\"B\"}}\n",
    )
    .unwrap();
    match load_dataset(&p) {
        Err(DatasetError::SchemaViolation { line, field, .. }) => {
            assert_eq!(line, 2);
            assert_eq!(field, "triple.relation.source");
        }
        other => panic!("unexpected {other:?}"),
    }
    std::fs::write(
        &p,
        "{\"triple\":{\"head\":\"\",\"relation\":{\"id\":\"r\",\"label\":\"r\",\"source\":\"wikidata\"},\"tail\":\"B\"}}\n",
    )
    .unwrap();
    assert!(matches!(load_dataset(&p), Err(DatasetError::SchemaViolation { line: 1, .. })));
}

#[test]
fn provenance_hash_matches_file() {
    use sha2::{Digest, Sha256};
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    common::write_jsonl(&p, &[example("A", "r", "B", Some("A r B"))]);
    let d = load_dataset(&p).unwrap();
    let expected = hex::encode(Sha256::digest(std::fs::read(&p).unwrap()));
    assert_eq!(d.provenance.sha256.as_deref(), Some(expected.as_str()));
    assert_eq!(d.provenance.lines, 1);
}

#[test]
fn delexicalize_examples() {
    let t = delexicalize("Sharnbrook Academy is in Bedfordshire.", "Sharnbrook Academy", "Bedfordshire").unwrap();
    assert_eq!(t.pattern, "X is in Y.");
    assert_eq!(delexicalize("X lasted for Y.", "X", "Y").unwrap().pattern, "X lasted for Y.");
    assert_eq!(
        delexicalize("Morocco is great.", "Yousra Matine", "Morocco"),
        Err(DelexError::EntityNotFound(EntitySlot::Head))
    );
    assert_eq!(
        delexicalize("New York is big.", "New York", "York"),
        Err(DelexError::OverlappingEntities)
    );
    let t = delexicalize("York is near New York.", "New York", "York").unwrap();
    assert_eq!(t.pattern, "Y is near X.");
}

#[test]
fn quality_filter_examples() {
    let recs = vec![
        record("t1", Quality::Ok, "b"),
        record("t1", Quality::Ok, "a"),
        record("t1", Quality::Ok, "c"),
        record("t2", Quality::Noisy, "a"),
        record("t3", Quality::Corrupted, "a"),
        record("t4", Quality::ExtraInfo, "z"),
    ];
    let all: BTreeSet<Quality> = Quality::ALL.into_iter().collect();
    assert_eq!(quality_filter(&recs, &all, Selection::All), recs);
    let ok = BTreeSet::from([Quality::Ok]);
    assert_eq!(quality_filter(&recs, &ok, Selection::All).len(), 3);
    let one = quality_filter(&recs, &ok, Selection::OnePerTriple);
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].annotator_id, "a");
}

#[test]
fn stats_fraction_on_ten_examples() {
    let mut examples = Vec::new();
    for i in 0..8 {
        let h = format!("Head{i}");
        examples.push(example(&h, "rel", "Tail", Some(&format!("{h} has Tail."))));
    }
    examples.push(example("Alpha", "rel2", "Beta", Some("alpha has beta.")));
    examples.push(example("Gamma", "rel2", "Delta", Some("Gamma only.")));
    let d = Dataset::from_examples(examples).unwrap();
    let s = dataset_stats(&d);
    assert_eq!(s.examples, 10);
    assert_eq!(s.distinct_relations, 2);
    assert_eq!(s.with_reference, 10);
    assert_eq!(s.delexicalizable, 8);
    assert!((s.delexicalizable_fraction - 0.8).abs() < 1e-12);

    let single = Dataset::from_examples(vec![example("A", "r", "B", Some("A meets B."))]).unwrap();
    assert_eq!(dataset_stats(&single).delexicalizable_fraction, 1.0);
}

// ---------------------------------------------------------------------------
// Properties
// ---------------------------------------------------------------------------

fn entity() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9 '.-]{0,20}".prop_map(|s| s.trim_end().to_string())
}

fn arb_example() -> impl Strategy<Value = Example> {
    (entity(), "[a-z]{1,6}( [a-z]{1,6}){0,2}", entity(), prop::option::of("[ -~]{1,40}"), 0..4usize).prop_map(
        |(h, label, t, text, q)| {
            let mut e = example(&h, &label, &t, text.as_deref().filter(|s| !s.trim().is_empty()));
            if let Some(r) = e.reference.as_mut() {
                r.quality = Quality::ALL[q];
            }
            e
        },
    )
}

fn naive_stats(examples: &[Example]) -> (usize, usize, usize, usize) {
    let mut labels = BTreeSet::new();
    let (mut with_ref, mut ok) = (0, 0);
    for e in examples {
        labels.insert(e.triple.relation.label.clone());
        if let Some(r) = &e.reference {
            with_ref += 1;
            // Delexicalizable iff the two entities can be found in
            // non-overlapping spans: search all occurrence pairs.
            let occ = |needle: &str| -> Vec<usize> {
                (0..=r.text.len())
                    .filter(|&i| r.text.is_char_boundary(i) && r.text[i..].starts_with(needle))
                    .collect()
            };
            let (h, t) = (&e.triple.head, &e.triple.tail);
            let found = occ(h).iter().any(|&a| {
                occ(t)
                    .iter()
                    .any(|&b| a + h.len() <= b || b + t.len() <= a)
            });
            if found {
                ok += 1;
            }
        }
    }
    (examples.len(), labels.len(), with_ref, ok)
}

proptest! {
    #[test]
    fn save_load_round_trip(examples in prop::collection::vec(arb_example(), 0..20)) {
        let mut seen = BTreeSet::new();
        let examples: Vec<Example> = examples.into_iter().filter(|e| seen.insert(e.id.clone())).collect();
        let d = Dataset::from_examples(examples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_dataset(&p, &d).unwrap();
        let back = load_dataset(&p).unwrap();
        prop_assert_eq!(back.examples(), d.examples());
        let p2 = dir.path().join("d2.jsonl");
        save_dataset(&p2, &back).unwrap();
        prop_assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn delex_fill_restores_text(
        pre in "[a-z ]{0,8}", mid in "[a-z ]{1,8}", post in "[a-z .]{0,8}",
        head in "[A-Z][a-z]{0,6}", tail in "[A-Z][a-z]{0,6}", head_first in any::<bool>(),
    ) {
        let text = if head_first {
            format!("{pre}{head}{mid}{tail}{post}")
        } else {
            format!("{pre}{tail}{mid}{head}{post}")
        };
        if let Ok(t) = delexicalize(&text, &head, &tail) {
            prop_assert_eq!(t.fill(&head, &tail), text.clone());
            prop_assert_eq!(t.pattern.len() + head.len() + tail.len(), text.len() + 2);
        } else {
            prop_assert!(head.contains(&tail) || tail.contains(&head));
        }
    }

    #[test]
    fn stats_equal_naive_recount(examples in prop::collection::vec(arb_example(), 0..30)) {
        let mut seen = BTreeSet::new();
        let examples: Vec<Example> = examples.into_iter().filter(|e| seen.insert(e.id.clone())).collect();
        let d = Dataset::from_examples(examples.clone()).unwrap();
        let s = dataset_stats(&d);
        let (n, rels, with_ref, ok) = naive_stats(&examples);
        prop_assert_eq!((s.examples, s.distinct_relations, s.with_reference, s.delexicalizable), (n, rels, with_ref, ok));
        let per_source: usize = s.per_source.values().map(|b| b.examples).sum();
        prop_assert_eq!(per_source, n);
    }

    #[test]
    fn quality_filter_properties(
        recs in prop::collection::vec(("t[0-4]", 0..5usize, "[a-c]"), 0..40),
        keep_mask in 1u8..32,
    ) {
        let recs: Vec<VerbalizationRecord> = recs
            .into_iter()
            .map(|(t, q, a)| record(&t, Quality::ALL[q], &a))
            .collect();
        let keep: BTreeSet<Quality> = Quality::ALL
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep_mask & (1 << i) != 0)
            .map(|(_, q)| q)
            .collect();
        let all = quality_filter(&recs, &keep, Selection::All);
        let naive: Vec<_> = recs.iter().filter(|r| keep.contains(&r.quality)).cloned().collect();
        prop_assert_eq!(&all, &naive);
        let one = quality_filter(&recs, &keep, Selection::OnePerTriple);
        let mut per: HashMap<&str, usize> = HashMap::new();
        for r in &one {
            *per.entry(r.triple_ref.as_str()).or_insert(0) += 1;
        }
        prop_assert!(per.values().all(|&c| c == 1));
        let triples: BTreeSet<&str> = naive.iter().map(|r| r.triple_ref.as_str()).collect();
        prop_assert_eq!(per.len(), triples.len());
        // Chosen record is the minimum by (annotator, position).
        for r in &one {
            let best = naive
                .iter()
                .enumerate()
                .filter(|(_, x)| x.triple_ref == r.triple_ref)
                .min_by(|a, b| (&a.1.annotator_id, a.0).cmp(&(&b.1.annotator_id, b.0)))
                .unwrap();
            prop_assert_eq!(&best.1.annotator_id, &r.annotator_id);
        }
        // Example-level filter agrees with the record-level one.
        let examples: Vec<Example> = recs
            .iter()
            .map(|r| {
                let mut e = example(&r.triple_ref, "rel", "x", Some(&r.text));
                let rr = e.reference.as_mut().unwrap();
                rr.quality = r.quality;
                rr.annotator_id = r.annotator_id.clone();
                e
            })
            .collect();
        let ex = filter_examples(&examples, &keep, Selection::OnePerTriple);
        prop_assert_eq!(ex.len(), one.len());
    }
}
