//! Python bindings for the rel2text toolkit.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList, PyString};
use pyo3::IntoPyObjectExt;
use serde::Serialize;

use rel2text::annotation::{self, ErrorAnnotation};
use rel2text::dataset::{self, EntityOverrides};
use rel2text::kg::{self, RelationRecord, Source, TripleRecord};
use rel2text::metrics::{self, EvalConfig, ScorerConfig};
use rel2text::split::{self, EmbeddingTable, SplitConfig};
use rel2text::transforms::{self, Variant};
use rel2text::verbalize::{self, TemplateEntry};

create_exception!(rel2text_py, Rel2TextError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    Rel2TextError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    match v {
        Value::Null => Ok(py.None().into_bound(py)),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_bound_py_any(py),
            (None, Some(u)) => u.into_bound_py_any(py),
            _ => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py),
        },
        Value::String(s) => Ok(PyString::new(py, s).into_any()),
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            Ok(PyList::new(py, items)?.into_any())
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            Ok(d.into_any())
        }
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &serde_json::to_value(value).map_err(err)?)
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

/// A knowledge-graph triple.
#[pyclass(name = "Triple", from_py_object)]
#[derive(Clone)]
struct PyTriple {
    inner: TripleRecord,
}

#[pymethods]
impl PyTriple {
    #[new]
    #[pyo3(signature = (head, relation, tail, source = "wikidata", relation_id = None, relation_description = None))]
    fn new(
        head: &str,
        relation: &str,
        tail: &str,
        source: &str,
        relation_id: Option<&str>,
        relation_description: Option<&str>,
    ) -> PyResult<Self> {
        let source: Source = source.parse().map_err(err)?;
        let mut rel = RelationRecord::new(relation_id.unwrap_or(relation), relation, source);
        rel.description = relation_description.map(str::to_string);
        Ok(Self {
            inner: TripleRecord::new(head, rel, tail),
        })
    }

    #[getter]
    fn head(&self) -> &str {
        &self.inner.head
    }

    #[getter]
    fn tail(&self) -> &str {
        &self.inner.tail
    }

    #[getter]
    fn relation(&self) -> &str {
        &self.inner.relation.label
    }

    #[getter]
    fn source(&self) -> &'static str {
        self.inner.relation.source.as_str()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Triple({:?}, {:?}, {:?})",
            self.inner.head, self.inner.relation.label, self.inner.tail
        )
    }
}

/// A loaded dataset (read-only).
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::load_dataset(&path).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn relation_labels(&self) -> Vec<String> {
        self.inner.relation_labels().into_iter().map(str::to_string).collect()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &dataset::dataset_stats(&self.inner))
    }

    fn examples<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.examples())
    }

    fn triples(&self) -> Vec<PyTriple> {
        self.inner
            .examples()
            .iter()
            .map(|e| PyTriple { inner: e.triple.clone() })
            .collect()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dataset::save_dataset(&path, &self.inner).map_err(err)
    }

    /// Train/val/test example ids with the split manifest.
    #[pyo3(signature = (seed = 0, references = None, embeddings = None, test_fraction = 0.15, val_fraction = 0.1, threshold = 0.9))]
    fn build_splits<'py>(
        &self,
        py: Python<'py>,
        seed: u64,
        references: Option<BTreeMap<String, Vec<String>>>,
        embeddings: Option<BTreeMap<String, Vec<f64>>>,
        test_fraction: f64,
        val_fraction: f64,
        threshold: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let table = embeddings.map(EmbeddingTable::from_pairs).transpose().map_err(err)?;
        let candidates: Vec<String> = self.relation_labels();
        let excluded = split::exclusion_set(&candidates, &references.unwrap_or_default(), table.as_ref(), threshold)
            .map_err(err)?;
        let config = SplitConfig {
            test_fraction,
            val_fraction_of_rest: val_fraction,
            threshold,
            seed,
        };
        to_py(py, &split::build_splits(&self.inner, &excluded, table.as_ref(), &config).map_err(err)?)
    }

    #[pyo3(signature = (sizes = vec![25, 50, 100, 200], seed = 0))]
    fn build_fewshot<'py>(&self, py: Python<'py>, sizes: Vec<usize>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &split::build_fewshot(&self.inner, &sizes, seed).map_err(err)?)
    }
}

#[pyfunction]
fn split_camel_case(label: &str) -> String {
    transforms::split_camel_case(label)
}

#[pyfunction]
#[pyo3(signature = (triple, variant = "plain", description = None))]
fn linearize(triple: &PyTriple, variant: &str, description: Option<&str>) -> PyResult<String> {
    let v: Variant = variant.parse().map_err(err)?;
    let desc = description.or(triple.inner.relation.description.as_deref());
    Ok(transforms::linearize(&triple.inner, v, desc).map_err(err)?.text)
}

#[pyfunction]
fn parse_linearized<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &transforms::parse_linearized(text).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (triple, raw_label = false))]
fn copy_verbalize(triple: &PyTriple, raw_label: bool) -> String {
    if raw_label {
        verbalize::copy_verbalize_raw(&triple.inner)
    } else {
        verbalize::copy_verbalize(&triple.inner)
    }
}

#[pyfunction]
#[pyo3(signature = (triple, templates, default_pattern = verbalize::DEFAULT_PATTERN))]
fn template_verbalize(triple: &PyTriple, templates: BTreeMap<String, String>, default_pattern: &str) -> PyResult<String> {
    let entries: Vec<TemplateEntry> = templates
        .into_iter()
        .map(|(relation_label, pattern)| TemplateEntry { relation_label, pattern })
        .collect();
    verbalize::template_verbalize(&triple.inner, &entries, default_pattern).map_err(err)
}

/// Returns the X/Y pattern, raising if an entity is missing or overlaps.
#[pyfunction]
fn delexicalize(text: &str, head: &str, tail: &str) -> PyResult<String> {
    Ok(dataset::delexicalize(text, head, tail).map_err(err)?.pattern)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    metrics::tokenize(text)
}

#[derive(FromPyObject)]
enum Refs {
    Multi(Vec<Vec<String>>),
    Single(Vec<String>),
}

impl Refs {
    fn into_multi(self) -> Vec<Vec<String>> {
        match self {
            Refs::Multi(m) => m,
            Refs::Single(s) => s.into_iter().map(|r| vec![r]).collect(),
        }
    }
}

#[pyfunction]
fn corpus_bleu(hypotheses: Vec<String>, references: Refs) -> PyResult<f64> {
    metrics::corpus_bleu(&hypotheses, &references.into_multi()).map_err(err)
}

#[pyfunction]
fn meteor(hypotheses: Vec<String>, references: Refs) -> PyResult<f64> {
    metrics::meteor(&hypotheses, &references.into_multi()).map_err(err)
}

#[pyfunction]
fn diversity<'py>(py: Python<'py>, texts: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &metrics::diversity(&texts).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (outputs, references, scorer = None))]
fn evaluate<'py>(py: Python<'py>, outputs: Vec<String>, references: Refs, scorer: Option<String>) -> PyResult<Bound<'py, PyAny>> {
    let config = EvalConfig {
        scorer: scorer.map(ScorerConfig::new),
    };
    let refs = references.into_multi();
    let report = py
        .detach(|| metrics::evaluate(&outputs, &refs, &config))
        .map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn cosine_similarity(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    split::cosine_similarity(&u, &v).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (text, head, tail, head_override = None, tail_override = None))]
fn validate_submission<'py>(
    py: Python<'py>,
    text: &str,
    head: &str,
    tail: &str,
    head_override: Option<String>,
    tail_override: Option<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let o = EntityOverrides {
        head: head_override,
        tail: tail_override,
    };
    let o = (!o.is_empty()).then_some(o);
    to_py(py, &annotation::validate_submission(text, head, tail, o.as_ref()))
}

/// Takes a list of dicts {output_id, model_id, flags: [..], annotator_id}.
#[pyfunction]
fn aggregate_errors<'py>(py: Python<'py>, annotations: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let anns: Vec<ErrorAnnotation> = from_py(annotations)?;
    to_py(py, &annotation::aggregate_errors(&anns))
}

/// Returns (kept, reason).
#[pyfunction]
#[pyo3(signature = (label, description = None, source = "wikidata"))]
fn filter_relation(label: &str, description: Option<&str>, source: &str) -> PyResult<(bool, String)> {
    let source: Source = source.parse().map_err(err)?;
    let mut r = RelationRecord::new(label, label, source);
    r.description = description.map(str::to_string);
    let v = kg::filter_relation(&r);
    Ok((v.kept, format!("{:?}", v.reason)))
}

#[pyfunction]
fn filter_triple(triple: &PyTriple) -> (bool, String) {
    let v = kg::filter_triple(&triple.inner);
    (v.kept, format!("{:?}", v.reason))
}

#[pyfunction]
fn quality_counts<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let responses = dataset::load_responses(&path).map_err(err)?;
    let records: Vec<_> = responses.into_iter().filter_map(|e| e.reference).collect();
    let counts: BTreeMap<String, usize> = dataset::quality_counts(&records)
        .into_iter()
        .map(|(q, n)| (q.to_string(), n))
        .collect();
    to_py(py, &counts)
}

#[pyfunction]
fn variants() -> Vec<&'static str> {
    Variant::ALL.iter().map(|v| v.as_str()).collect()
}

#[pyfunction]
fn error_flags() -> BTreeSet<String> {
    ["SEM", "DIR", "LIT", "LEX", "ENT", "LBL"].iter().map(|s| s.to_string()).collect()
}

#[pymodule]
fn rel2text_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("Rel2TextError", m.py().get_type::<Rel2TextError>())?;
    m.add_class::<PyTriple>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(split_camel_case, m)?)?;
    m.add_function(wrap_pyfunction!(linearize, m)?)?;
    m.add_function(wrap_pyfunction!(parse_linearized, m)?)?;
    m.add_function(wrap_pyfunction!(copy_verbalize, m)?)?;
    m.add_function(wrap_pyfunction!(template_verbalize, m)?)?;
    m.add_function(wrap_pyfunction!(delexicalize, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(meteor, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(validate_submission, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_errors, m)?)?;
    m.add_function(wrap_pyfunction!(filter_relation, m)?)?;
    m.add_function(wrap_pyfunction!(filter_triple, m)?)?;
    m.add_function(wrap_pyfunction!(quality_counts, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(error_flags, m)?)?;
    Ok(())
}
