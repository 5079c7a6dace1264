//! The `r2t` command line.
//!
//! Option values come from, in decreasing priority: flags, environment
//! variables, the `--config` file (TOML, or JSON by extension), defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::adapters::AdapterError;
use crate::annotation::{self, AnnotationError, ErrorAnnotation, Store, StoreConfig};
use crate::dataset::{
    dataset_stats, filter_examples, load_dataset, load_responses, quality_counts, write_examples, Dataset,
    DatasetError, Example, Quality, Selection,
};
use crate::kg::{EndpointConfig, IngestError, RequestPolicy, Source};
use crate::metrics::{self, EvalConfig, MetricError, ScorerConfig};
use crate::split::{self, EmbeddingTable, SplitConfig, SplitError};
use crate::transforms::{linearize, Phase, TransformError, Variant};
use crate::verbalize::{
    RemoteConfig, TemplateTable, VerbalizeError, Verbalizer, DEFAULT_PATTERN, DEFAULT_PATTERN_PLURAL,
};

pub const SCORER_ENDPOINT_ENV: &str = "R2T_SCORER_ENDPOINT";
pub const GENERATION_ENDPOINT_ENV: &str = "R2T_GENERATION_ENDPOINT";

#[derive(Debug, Parser)]
#[command(name = "r2t", version, about = "Knowledge-graph-to-text dataset and evaluation toolkit")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// TOML or JSON file with option defaults (top-level keys or a table
    /// per subcommand).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Fetch, filter and dedupe relations and triples from knowledge graphs.
    Ingest(IngestArgs),
    /// Keep responses of the given review qualities.
    Filter(FilterArgs),
    /// Dataset statistics as JSON.
    Stats(StatsArgs),
    /// Build leakage-aware train/val/test splits.
    Split(SplitArgs),
    /// Build nested few-shot training subsets.
    Fewshot(FewshotArgs),
    /// Linearize triples into model inputs.
    Transform(TransformArgs),
    /// Produce sentences for triples.
    Verbalize(VerbalizeArgs),
    /// Score outputs against references.
    Eval(EvalArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
    /// Write collected annotations as dataset JSONL.
    Export(ExportArgs),
}

fn parse_source(s: &str) -> Result<Source, String> {
    s.parse().map_err(|e: IngestError| e.to_string())
}

fn parse_quality(s: &str) -> Result<Quality, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown quality {s:?}"))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: TransformError| e.to_string())
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => {
            let p = PathBuf::from(s);
            let name = p
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .ok_or_else(|| format!("expected NAME=PATH or PATH, got {s:?}"))?;
            Ok((name, p))
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long = "source", required = true, value_parser = parse_source)]
    pub sources: Vec<Source>,
    /// Read every source from a dataset-schema JSONL dump instead of a live
    /// endpoint.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long, env = crate::kg::WIKIDATA_ENDPOINT_ENV)]
    pub wikidata_endpoint: Option<String>,
    #[arg(long, env = crate::kg::DBPEDIA_ENDPOINT_ENV)]
    pub dbpedia_endpoint: Option<String>,
    #[arg(long, env = crate::kg::YAGO_DUMP_ENV)]
    pub yago_dump: Option<PathBuf>,
    /// Triples per relation.
    #[arg(long, default_value_t = 5)]
    pub limit: usize,
    /// Requests per second per endpoint.
    #[arg(long, default_value_t = 2.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 3)]
    pub max_attempts: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "quality", value_parser = parse_quality, default_values_t = [Quality::Ok])]
    pub qualities: Vec<Quality>,
    /// Keep every matching response rather than one per triple.
    #[arg(long)]
    pub all_per_triple: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Input may repeat triples (a raw response file).
    #[arg(long)]
    pub responses: bool,
    /// Only count examples whose reference is reviewed OK.
    #[arg(long)]
    pub ok_only: bool,
    /// Also aggregate a JSONL file of manual error annotations.
    #[arg(long)]
    pub error_annotations: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relation inventory that test relations must not overlap, as
    /// NAME=PATH (one label per line). Repeatable.
    #[arg(long = "reference", value_parser = parse_named_path)]
    pub references: Vec<(String, PathBuf)>,
    /// Label embeddings JSONL ({"label", "vector"}).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = split::DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = split::DEFAULT_VAL_FRACTION)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = split::DEFAULT_SIMILARITY_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FewshotArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = split::DEFAULT_FEWSHOT_SIZES)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseArg {
    Train,
    Test,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Train => Phase::Train,
            PhaseArg::Test => Phase::Test,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TransformArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_variant, default_value = "plain")]
    pub variant: Variant,
    #[arg(long, value_enum, default_value_t = PhaseArg::Test)]
    pub phase: PhaseArg,
    /// One linearized input per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Aligned reference texts, one per line.
    #[arg(long)]
    pub refs_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Copy,
    Template,
    Remote,
}

#[derive(Debug, Args, Serialize)]
pub struct VerbalizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub system: System,
    /// Template table JSON ({label: pattern}).
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Use the plural default pattern ("are").
    #[arg(long)]
    pub plural: bool,
    /// Copy baseline without camel-case splitting.
    #[arg(long)]
    pub raw_label: bool,
    #[arg(long, env = GENERATION_ENDPOINT_ENV)]
    pub endpoint: Option<String>,
    #[arg(long, value_parser = parse_variant, default_value = "plain")]
    pub variant: Variant,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// System outputs, one per line.
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    /// Aligned references, one per line. Repeat for multiple references.
    #[arg(long = "refs")]
    pub refs: Vec<PathBuf>,
    /// Directory holding outputs.txt and references.txt; report.json is
    /// written there unless --out is given.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, env = SCORER_ENDPOINT_ENV)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    /// Dataset JSONL of triples to annotate.
    #[arg(long)]
    pub pool: PathBuf,
    /// Event log; created if missing, replayed if present.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = annotation::ANNOTATION_PORT_ENV, default_value_t = annotation::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value_t = annotation::DEFAULT_SESSION_SIZE)]
    pub session_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_assignments: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// Config file merging
// ---------------------------------------------------------------------------

fn load_config(path: &Path) -> Result<serde_json::Map<String, serde_json::Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        let t: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        serde_json::to_value(t)?
    };
    match value {
        serde_json::Value::Object(m) => Ok(m),
        _ => bail!("config {} must be a table", path.display()),
    }
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn scalar_to_arg(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Inserts config-file values as flags after the subcommand name, for
/// options the user did not pass and whose environment variable is unset.
fn apply_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let config = load_config(&path)?;
    let cmd = Cli::command();
    let Some((pos, sub)) = argv.iter().enumerate().skip(1).find_map(|(i, a)| {
        cmd.get_subcommands()
            .find(|s| s.get_name() == a.to_string_lossy())
            .map(|s| (i, s))
    }) else {
        return Ok(argv);
    };
    let user_flags: BTreeSet<String> = argv[pos + 1..]
        .iter()
        .filter_map(|a| {
            let s = a.to_string_lossy();
            s.strip_prefix("--").map(|f| f.split('=').next().unwrap_or_default().to_string())
        })
        .collect();

    let mut entries: Vec<(String, &serde_json::Value, bool)> = config
        .iter()
        .filter(|(_, v)| !v.is_object())
        .map(|(k, v)| (k.clone(), v, false))
        .collect();
    if let Some(serde_json::Value::Object(section)) = config.get(sub.get_name()) {
        entries.retain(|(k, _, _)| !section.contains_key(k));
        entries.extend(section.iter().map(|(k, v)| (k.clone(), v, true)));
    }

    let mut injected: Vec<OsString> = Vec::new();
    for (key, value, strict) in entries {
        let flag = key.replace('_', "-");
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(flag.as_str())) else {
            if strict {
                bail!("config {}: unknown option {key:?} for {}", path.display(), sub.get_name());
            }
            continue;
        };
        if user_flags.contains(&flag) {
            continue;
        }
        if arg.get_env().is_some_and(|e| std::env::var_os(e).is_some()) {
            continue;
        }
        let takes_value = arg.get_num_args().is_none_or(|n| n.takes_values());
        let values: Vec<&serde_json::Value> = match value {
            serde_json::Value::Array(a) => a.iter().collect(),
            v => vec![v],
        };
        for v in values {
            if !takes_value {
                if v.as_bool() == Some(true) {
                    injected.push(format!("--{flag}").into());
                }
                continue;
            }
            let s = scalar_to_arg(v).ok_or_else(|| anyhow!("config {}: bad value for {key:?}", path.display()))?;
            injected.push(format!("--{flag}").into());
            injected.push(s.into());
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}

fn write_manifest(at: &Path, command: &Command, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    let m = Manifest {
        tool: "r2t",
        version: env!("CARGO_PKG_VERSION"),
        command,
        inputs: hashes(inputs)?,
        outputs: hashes(outputs)?,
    };
    write_json(at, &m)
}

fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for l in lines {
        let l = l.as_ref();
        if l.contains('\n') {
            log::warn!("{}: a line contains a newline and will split", path.display());
        }
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_ingest(a: &IngestArgs, command: &Command) -> Result<()> {
    let policy = RequestPolicy {
        requests_per_second: a.rate,
        max_attempts: a.max_attempts,
        ..RequestPolicy::default()
    };
    let mut configs = BTreeMap::new();
    for &source in &a.sources {
        let config = match (&a.fixture, source) {
            (Some(p), _) => EndpointConfig::fixture(p),
            (None, Source::Wikidata) => match &a.wikidata_endpoint {
                Some(u) => EndpointConfig::sparql(u),
                None => EndpointConfig::from_env(source)?,
            },
            (None, Source::DBPedia) => match &a.dbpedia_endpoint {
                Some(u) => EndpointConfig::sparql(u),
                None => EndpointConfig::from_env(source)?,
            },
            (None, Source::Yago) => match &a.yago_dump {
                Some(p) => EndpointConfig::yago_dump(p),
                None => EndpointConfig::from_env(source)?,
            },
        };
        configs.insert(source, config.with_policy(policy.clone()));
    }
    let (triples, report) = crate::kg::ingest(&configs, a.limit)?;
    let examples: Vec<Example> = triples.into_iter().map(|t| Example::new(t, None)).collect();
    // The same triple can be returned twice by an endpoint; keep the first.
    let mut seen = BTreeSet::new();
    let examples: Vec<Example> = examples.into_iter().filter(|e| seen.insert(e.id.clone())).collect();
    write_examples(&a.out, &examples)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    let mut inputs: Vec<&Path> = Vec::new();
    if let Some(f) = &a.fixture {
        inputs.push(f);
    }
    write_manifest(&manifest_beside(&a.out), command, &inputs, &[&a.out])
}

fn cmd_filter(a: &FilterArgs, command: &Command) -> Result<()> {
    let responses = load_responses(&a.input)?;
    let keep: BTreeSet<Quality> = a.qualities.iter().copied().collect();
    let selection = if a.all_per_triple { Selection::All } else { Selection::OnePerTriple };
    let kept = filter_examples(&responses, &keep, selection);
    write_examples(&a.out, &kept)?;
    let records: Vec<_> = responses.iter().filter_map(|e| e.reference.clone()).collect();
    let counts: BTreeMap<String, usize> = quality_counts(&records)
        .into_iter()
        .map(|(q, n)| (q.to_string(), n))
        .collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({"input": responses.len(), "kept": kept.len(), "qualities": counts}))?
    );
    write_manifest(&manifest_beside(&a.out), command, &[&a.input], &[&a.out])
}

fn cmd_stats(a: &StatsArgs, command: &Command) -> Result<()> {
    let mut examples = if a.responses {
        load_responses(&a.input)?
    } else {
        load_dataset(&a.input)?.into_examples()
    };
    if a.ok_only {
        examples.retain(|e| e.reference.as_ref().is_some_and(|r| r.quality == Quality::Ok));
    }
    let mut value = if a.responses {
        // Repeated triples: count responses, not unique examples.
        let records: Vec<_> = examples.iter().filter_map(|e| e.reference.clone()).collect();
        let counts: BTreeMap<String, usize> = quality_counts(&records)
            .into_iter()
            .map(|(q, n)| (q.to_string(), n))
            .collect();
        serde_json::json!({"responses": examples.len(), "qualities": counts})
    } else {
        serde_json::to_value(dataset_stats(&Dataset::from_examples(examples)?))?
    };
    if let Some(p) = &a.error_annotations {
        let anns: Vec<ErrorAnnotation> = read_lines(p)?
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", p.display(), i + 1)))
            .collect::<Result<_>>()?;
        value["errors"] = serde_json::to_value(annotation::aggregate_errors(&anns))?;
    }
    match &a.out {
        Some(out) => {
            write_json(out, &value)?;
            let mut inputs: Vec<&Path> = vec![&a.input];
            if let Some(p) = &a.error_annotations {
                inputs.push(p);
            }
            write_manifest(&manifest_beside(out), command, &inputs, &[out])
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(())
        }
    }
}

fn cmd_split(a: &SplitArgs, command: &Command) -> Result<()> {
    let dataset = load_dataset(&a.input)?;
    let embeddings = a.embeddings.as_deref().map(EmbeddingTable::load).transpose()?;
    let mut references = BTreeMap::new();
    for (name, path) in &a.references {
        references.insert(name.clone(), split::load_label_list(path)?);
    }
    let candidates: Vec<String> = dataset.relation_labels().into_iter().map(str::to_string).collect();
    let excluded = split::exclusion_set(&candidates, &references, embeddings.as_ref(), a.threshold)?;
    let config = SplitConfig {
        test_fraction: a.test_fraction,
        val_fraction_of_rest: a.val_fraction,
        threshold: a.threshold,
        seed: a.seed,
    };
    let splits = split::build_splits(&dataset, &excluded, embeddings.as_ref(), &config)?;
    ensure_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    for s in [&splits.train, &splits.val, &splits.test] {
        let path = a.out_dir.join(format!("{}.jsonl", s.name));
        let subset = dataset.subset(s.example_ids.iter().map(String::as_str));
        write_examples(&path, subset.examples())?;
        outputs.push(path);
    }
    let split_manifest = a.out_dir.join("split_manifest.json");
    write_json(&split_manifest, &splits)?;
    outputs.push(split_manifest);
    if splits.manifest.insufficient_eligible_relations {
        log::warn!(
            "test split has {} of {} targeted examples",
            splits.test.example_ids.len(),
            splits.manifest.target_test_examples
        );
    }
    let mut inputs: Vec<&Path> = vec![&a.input];
    inputs.extend(a.references.iter().map(|(_, p)| p.as_path()));
    if let Some(e) = &a.embeddings {
        inputs.push(e);
    }
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&a.out_dir.join("manifest.json"), command, &inputs, &outs)
}

fn cmd_fewshot(a: &FewshotArgs, command: &Command) -> Result<()> {
    let train = load_dataset(&a.input)?;
    let splits = split::build_fewshot(&train, &a.sizes, a.seed)?;
    ensure_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    for s in &splits {
        let path = a.out_dir.join(format!("{}.jsonl", s.name));
        let subset = train.subset(s.example_ids.iter().map(String::as_str));
        write_examples(&path, subset.examples())?;
        outputs.push(path);
    }
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&a.out_dir.join("manifest.json"), command, &[&a.input], &outs)
}

fn cmd_transform(a: &TransformArgs, command: &Command) -> Result<()> {
    let examples = load_responses(&a.input)?;
    let variant = a.variant.for_phase(a.phase.into());
    let inputs = examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            linearize(&e.triple, variant, e.triple.relation.description.as_deref())
                .map(|l| l.text)
                .with_context(|| format!("example {i} ({})", e.id))
        })
        .collect::<Result<Vec<_>>>()?;
    write_lines(&a.out, &inputs)?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(r) = &a.refs_out {
        let refs: Vec<&str> = examples
            .iter()
            .map(|e| e.reference.as_ref().map_or("", |r| r.text.as_str()))
            .collect();
        write_lines(r, &refs)?;
        outputs.push(r);
    }
    write_manifest(&manifest_beside(&a.out), command, &[&a.input], &outputs)
}

fn cmd_verbalize(a: &VerbalizeArgs, command: &Command) -> Result<()> {
    let examples = load_responses(&a.input)?;
    let default = if a.plural { DEFAULT_PATTERN_PLURAL } else { DEFAULT_PATTERN };
    let verbalizer = match a.system {
        System::Copy => Verbalizer::Copy { raw_label: a.raw_label },
        System::Template => match &a.templates {
            Some(p) => Verbalizer::Template(TemplateTable::load(p, default)?),
            None => Verbalizer::Template(TemplateTable::new(&[], default)?),
        },
        System::Remote => {
            let endpoint = a
                .endpoint
                .clone()
                .ok_or_else(|| anyhow!("--system remote needs --endpoint or {GENERATION_ENDPOINT_ENV}"))?;
            let mut config = RemoteConfig::new(endpoint);
            config.batch_size = a.batch_size;
            Verbalizer::Remote {
                config,
                variant: a.variant,
            }
        }
    };
    let triples: Vec<_> = examples.iter().map(|e| e.triple.clone()).collect();
    let outputs = verbalizer
        .verbalize_all(&triples)
        .map_err(|(i, e)| anyhow::Error::new(e).context(format!("triple {i}")))?;
    write_lines(&a.out, &outputs)?;
    let mut inputs: Vec<&Path> = vec![&a.input];
    if let Some(t) = &a.templates {
        inputs.push(t);
    }
    write_manifest(&manifest_beside(&a.out), command, &inputs, &[&a.out])
}

fn cmd_eval(a: &EvalArgs, command: &Command) -> Result<()> {
    let outputs_path = match (&a.outputs, &a.run_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join("outputs.txt"),
        (None, None) => bail!("eval needs --outputs or --run-dir"),
    };
    let ref_paths: Vec<PathBuf> = match (&a.refs[..], &a.run_dir) {
        ([], Some(d)) => vec![d.join("references.txt")],
        ([], None) => bail!("eval needs --refs or --run-dir"),
        (r, _) => r.to_vec(),
    };
    let out = match (&a.out, &a.run_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) => d.join("report.json"),
        (None, None) => PathBuf::from("report.json"),
    };
    let outputs = read_lines(&outputs_path)?;
    let ref_files = ref_paths.iter().map(|p| read_lines(p)).collect::<Result<Vec<_>>>()?;
    for (p, r) in ref_paths.iter().zip(&ref_files) {
        if r.len() != outputs.len() {
            bail!(MetricError::LengthMismatch {
                hyps: outputs.len(),
                refs: r.len()
            });
        }
        log::debug!("{}: {} references", p.display(), r.len());
    }
    let references: Vec<Vec<String>> = (0..outputs.len())
        .map(|i| ref_files.iter().map(|f| f[i].clone()).collect())
        .collect();
    let config = EvalConfig {
        scorer: a.scorer.as_ref().map(ScorerConfig::new),
    };
    let report = metrics::evaluate(&outputs, &references, &config)?;
    write_json(&out, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    let mut inputs: Vec<&Path> = vec![&outputs_path];
    inputs.extend(ref_paths.iter().map(PathBuf::as_path));
    write_manifest(&manifest_beside(&out), command, &inputs, &[&out])
}

fn open_store(pool: &Path, log: &Path, config: StoreConfig) -> Result<Store> {
    let pool = load_dataset(pool)?;
    Ok(Store::open(pool, config, log)?)
}

fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let config = StoreConfig {
        session_size: a.session_size,
        seed: a.seed,
        max_assignments: a.max_assignments,
    };
    let store = Arc::new(open_store(&a.pool, &a.log, config)?);
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .with_context(|| format!("bad address {}:{}", a.host, a.port))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(annotation::serve(store, addr))?;
    Ok(())
}

fn cmd_export(a: &ExportArgs, command: &Command) -> Result<()> {
    let store = open_store(&a.pool, &a.log, StoreConfig::default())?;
    let n = store.compact_to(&a.out)?;
    log::info!("exported {n} records");
    write_manifest(&manifest_beside(&a.out), command, &[&a.pool, &a.log], &[&a.out])
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let c = &cli.command;
    match c {
        Command::Ingest(a) => cmd_ingest(a, c),
        Command::Filter(a) => cmd_filter(a, c),
        Command::Stats(a) => cmd_stats(a, c),
        Command::Split(a) => cmd_split(a, c),
        Command::Fewshot(a) => cmd_fewshot(a, c),
        Command::Transform(a) => cmd_transform(a, c),
        Command::Verbalize(a) => cmd_verbalize(a, c),
        Command::Eval(a) => cmd_eval(a, c),
        Command::Serve(a) => cmd_serve(a),
        Command::Export(a) => cmd_export(a, c),
    }
}

fn variant_name(debug: &str) -> &str {
    let end = debug.find(|c: char| !c.is_alphanumeric() && c != '_').unwrap_or(debug.len());
    &debug[..end]
}

/// Machine-readable error kind, e.g. `DatasetError::SchemaViolation`.
pub fn error_kind(e: &anyhow::Error) -> String {
    macro_rules! kinds {
        ($($t:ty => $name:literal),* $(,)?) => {
            for cause in e.chain() {
                $(
                    if let Some(x) = cause.downcast_ref::<$t>() {
                        return format!("{}::{}", $name, variant_name(&format!("{x:?}")));
                    }
                )*
            }
        };
    }
    kinds!(
        DatasetError => "DatasetError",
        IngestError => "IngestError",
        SplitError => "SplitError",
        TransformError => "TransformError",
        VerbalizeError => "VerbalizeError",
        MetricError => "MetricError",
        AdapterError => "AdapterError",
        AnnotationError => "AnnotationError",
    );
    if e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some()) {
        return "IoError".into();
    }
    "Error".into()
}

/// Runs the CLI and returns the process exit code: 0 on success, 2 for
/// usage errors, 1 for failures (with a JSON error object on stderr).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": "ConfigError", "message": format!("{e:#}")}));
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": error_kind(&e), "message": format!("{e:#}")}));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_valid() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_values_fill_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("r2t.toml");
        fs::write(&cfg, "seed = 3\n[split]\ntest_fraction = 0.2\nreference = [\"a=x.txt\", \"b=y.txt\"]\n").unwrap();
        let argv: Vec<OsString> = ["r2t", "--config", cfg.to_str().unwrap(), "split", "--input", "d", "--out-dir", "o", "--seed", "9"]
            .iter()
            .map(OsString::from)
            .collect();
        let cli = Cli::try_parse_from(apply_config(argv).unwrap()).unwrap();
        let Command::Split(a) = cli.command else { panic!() };
        assert_eq!(a.seed, 9);
        assert_eq!(a.test_fraction, 0.2);
        assert_eq!(a.references.len(), 2);

        fs::write(&cfg, "[split]\nbogus = 1\n").unwrap();
        let argv: Vec<OsString> = ["r2t", "--config", cfg.to_str().unwrap(), "split"].iter().map(OsString::from).collect();
        assert!(apply_config(argv).is_err());
    }

    #[test]
    fn kinds() {
        let e = anyhow::Error::new(MetricError::EmptyCorpus);
        assert_eq!(error_kind(&e), "MetricError::EmptyCorpus");
        let e = anyhow::Error::new(DatasetError::DuplicateTripleId { line: 1, id: "x".into() }).context("loading");
        assert_eq!(error_kind(&e), "DatasetError::DuplicateTripleId");
    }
}
