//! Commands behind the CLI, usable as library calls: each reads explicit
//! input files, writes its artifacts into one run directory and records a
//! manifest with the configuration, seed and SHA-256 of every input and
//! output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{load_corpus, Document};
use crate::error::{Error, Result};
use crate::eval::{
    all_positive, all_positive_from_counts, evaluate, hard_subset, load_gold, render_table, write_jsonl, Metrics,
    Prediction, ReportRow, TupleKey,
};
use crate::inference::{explain, extract_batch, prepare, ExtractConfig, ExtractionResult, Models};
use crate::learning::{self_train_resolution, SelfTrainConfig};
use crate::protocol::{ClientConfig, ExternalPairScorer, ExternalRelationScorer, ProtocolClient};
use crate::relation::{train_relation_detector, AlwaysPositive, DetectorConfig, NativeRelationScorer, RelationScorer};
use crate::resolution::{PairScorer, PairScoring};
use crate::supervision::{generate_relation_examples, load_examples, load_kb, write_examples, DsConfig, Polarity};
use crate::synth::{generate, write_outputs, SynthConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where scores come from: the in-process models or a protocol endpoint.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum ScorerBackend {
    #[default]
    Native,
    External(String),
}

impl FromStr for ScorerBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            _ if s == "native" => Ok(ScorerBackend::Native),
            Some(("external", addr)) if !addr.is_empty() => Ok(ScorerBackend::External(addr.to_string())),
            _ => Err(Error::Config(format!("scorer `{s}`: expected native or external:<address>"))),
        }
    }
}

impl fmt::Display for ScorerBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerBackend::Native => f.write_str("native"),
            ScorerBackend::External(a) => write!(f, "external:{a}"),
        }
    }
}

impl Serialize for ScorerBackend {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScorerBackend {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Defaults to the command name.
    pub run_id: Option<String>,
    /// Copied into every component's own seed.
    pub seed: u64,
    pub jobs: Option<usize>,
    pub scorer: ScorerBackend,
    pub client: ClientConfig,
    pub synth: SynthConfig,
    pub ds: DsConfig,
    pub detector: DetectorConfig,
    pub self_train: SelfTrainConfig,
    pub extract: ExtractConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("runs"),
            run_id: None,
            seed: 7,
            jobs: None,
            scorer: ScorerBackend::Native,
            client: ClientConfig::default(),
            synth: SynthConfig::default(),
            ds: DsConfig::default(),
            detector: DetectorConfig::default(),
            self_train: SelfTrainConfig::default(),
            extract: ExtractConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// The configuration with `seed` pushed into every component.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.synth.seed = c.seed;
        c.ds.seed = c.seed;
        c.detector.seed = c.seed;
        c.self_train.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.ds.validate()?;
        self.self_train.validate()?;
        self.extract.validate()?;
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn run_dir(&self, command: &str) -> PathBuf {
        self.out_dir.join(self.run_id.as_deref().unwrap_or(command))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

pub fn hash_file(path: &Path) -> Result<FileHash> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileHash>,
    /// Paths relative to the run directory.
    pub outputs: Vec<FileHash>,
}

pub const MANIFEST: &str = "manifest.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: format!("{}: {e}", path.display()) }))
        .collect()
}

fn finish(cfg: &RunConfig, command: &str, dir: &Path, inputs: &[&Path], outputs: &[&str]) -> Result<Manifest> {
    let manifest = Manifest {
        command: command.to_string(),
        version: VERSION.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        inputs: inputs.iter().map(|p| hash_file(p)).collect::<Result<_>>()?,
        outputs: outputs
            .iter()
            .map(|o| {
                let mut h = hash_file(&dir.join(o))?;
                h.path = o.to_string();
                Ok(h)
            })
            .collect::<Result<_>>()?,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    log::info!("{command}: wrote {} artifact(s) to {}", outputs.len(), dir.display());
    Ok(manifest)
}

/// Synthetic corpus, KB, gold and queries.
pub fn cmd_synth(cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    let cfg = cfg.seeded();
    let out = generate(&cfg.synth)?;
    write_outputs(dir, &out)?;
    finish(&cfg, "synth", dir, &[], &crate::synth::FILES)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsSummary {
    pub documents: usize,
    pub kb_facts: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// Distantly supervised relation examples.
pub fn cmd_gen_ds(cfg: &RunConfig, corpus: &Path, kb: &Path, dir: &Path) -> Result<Manifest> {
    ensure_dir(dir)?;
    let cfg = cfg.seeded();
    let docs = load_corpus(corpus)?;
    let kb_data = load_kb(kb)?;
    let ex = generate_relation_examples(&docs, &kb_data, &cfg.ds)?;
    write_examples(dir.join("examples.jsonl"), &ex)?;
    let pos = ex.iter().filter(|e| e.polarity == Polarity::Positive).count();
    write_json(
        &dir.join("ds_summary.json"),
        &DsSummary { documents: docs.len(), kb_facts: kb_data.len(), positives: pos, negatives: ex.len() - pos },
    )?;
    finish(&cfg, "gen-ds", dir, &[corpus, kb], &["examples.jsonl", "ds_summary.json"])
}

pub const RELATION_MODEL: &str = "relation.json";
pub const PAIR_MODEL: &str = "pair.json";

/// Trains the relation detector on `examples` and self-trains the resolver
/// on `corpus`.
pub fn cmd_train(cfg: &RunConfig, examples: &Path, corpus: &Path, dir: &Path) -> Result<Manifest> {
    ensure_dir(dir)?;
    let cfg = cfg.seeded();
    if let ScorerBackend::External(addr) = &cfg.scorer {
        return Err(Error::Config(format!("external scorer {addr} trains itself; use the native backend to train")));
    }
    let ex = load_examples(examples)?;
    let docs = load_corpus(corpus)?;
    let (det, report) = train_relation_detector(&ex, &cfg.detector)?;
    let st = self_train_resolution(&docs, &cfg.self_train, |_, _| {})?;
    write_text(&dir.join(RELATION_MODEL), &(det.to_json()? + "\n"))?;
    write_text(&dir.join(PAIR_MODEL), &(st.scorer.to_json()? + "\n"))?;
    write_json(&dir.join("detector_report.json"), &report)?;
    write_jsonl(dir.join("self_training.jsonl"), &st.history)?;
    finish(
        &cfg,
        "train",
        dir,
        &[examples, corpus],
        &[RELATION_MODEL, PAIR_MODEL, "detector_report.json", "self_training.jsonl"],
    )
}

/// Loaded scorers, native or remote.
pub struct LoadedModels {
    pub relation: Box<dyn RelationScorer>,
    pub pair: Option<Box<dyn PairScoring>>,
}

impl LoadedModels {
    pub fn load(cfg: &RunConfig, models: Option<&Path>) -> Result<Self> {
        match &cfg.scorer {
            ScorerBackend::Native => {
                let dir = models.ok_or_else(|| Error::Config("the native backend needs a models directory".into()))?;
                let read = |name: &str| {
                    let p = dir.join(name);
                    fs::read_to_string(&p).map_err(|e| Error::io(p, e))
                };
                Ok(LoadedModels {
                    relation: Box::new(NativeRelationScorer::from_json(&read(RELATION_MODEL)?)?),
                    pair: Some(Box::new(PairScorer::from_json(&read(PAIR_MODEL)?)?)),
                })
            }
            ScorerBackend::External(addr) => {
                let client = Arc::new(ProtocolClient::new(addr.clone(), cfg.client.clone())?);
                Ok(LoadedModels {
                    relation: Box::new(ExternalRelationScorer::new(client.clone())),
                    pair: Some(Box::new(ExternalPairScorer::new(client))),
                })
            }
        }
    }

    pub fn models(&self, always_positive: bool) -> Models<'_> {
        Models {
            relation: if always_positive { &AlwaysPositive } else { self.relation.as_ref() },
            pair: self.pair.as_deref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub id: usize,
    pub query: TupleKey,
    pub result: ExtractionResult,
}

pub const EXTRACT_CONFIG: &str = "extract_config.json";

/// Batch inference over `queries`. `always_positive` swaps the detector for
/// the constant scorer.
pub fn cmd_extract(
    cfg: &RunConfig,
    corpus: &Path,
    queries: &Path,
    models: Option<&Path>,
    always_positive: bool,
    dir: &Path,
) -> Result<Manifest> {
    ensure_dir(dir)?;
    let cfg = cfg.seeded();
    let docs = load_corpus(corpus)?;
    let qs: Vec<TupleKey> = read_jsonl(queries)?;
    let loaded = LoadedModels::load(&cfg, models)?;
    let results = extract_batch(&docs, &qs, &loaded.models(always_positive), &cfg.extract)?;
    let preds: Vec<Prediction> = results.iter().zip(&qs).map(|(r, q)| r.prediction(q)).collect();
    let records: Vec<ResultRecord> = results
        .into_iter()
        .zip(&qs)
        .enumerate()
        .map(|(id, (result, q))| ResultRecord { id, query: q.clone(), result })
        .collect();
    write_jsonl(dir.join("results.jsonl"), &records)?;
    write_jsonl(dir.join("predictions.jsonl"), &preds)?;
    write_json(&dir.join(EXTRACT_CONFIG), &cfg.extract)?;
    let mut inputs: Vec<PathBuf> = vec![corpus.to_path_buf(), queries.to_path_buf()];
    if let (ScorerBackend::Native, Some(m)) = (&cfg.scorer, models) {
        inputs.push(m.join(RELATION_MODEL));
        inputs.push(m.join(PAIR_MODEL));
    }
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    finish(&cfg, "extract", dir, &inputs, &["results.jsonl", "predictions.jsonl", EXTRACT_CONFIG])
}

/// A baseline given only as counts: every candidate predicted positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountsRow {
    pub system: String,
    pub positives: usize,
    pub candidates: usize,
    #[serde(default)]
    pub hard_positives: Option<usize>,
    #[serde(default)]
    pub hard_candidates: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

/// Scores each named prediction file against `gold` (and its hard subset
/// when the corpus is given), adds an All-Positive row and any count-only
/// rows, and writes metrics.json plus report.txt.
pub fn cmd_eval(
    cfg: &RunConfig,
    predictions: &[(String, PathBuf)],
    gold: &Path,
    corpus: Option<&Path>,
    counts: Option<&Path>,
    dir: &Path,
) -> Result<(Manifest, MetricsReport)> {
    ensure_dir(dir)?;
    let gold_set = load_gold(gold)?;
    let hard = match corpus {
        Some(c) => Some(hard_subset(&gold_set, &load_corpus(c)?)),
        None => None,
    };
    let score = |preds: &[Prediction]| -> Result<ReportRow> {
        Ok(ReportRow {
            system: String::new(),
            full: evaluate(preds, &gold_set)?,
            hard: hard.as_ref().map(|h| evaluate(preds, h)).transpose()?,
        })
    };
    let mut rows = Vec::new();
    let mut inputs: Vec<&Path> = vec![gold];
    for (name, path) in predictions {
        let preds: Vec<Prediction> = read_jsonl(path)?;
        rows.push(ReportRow { system: name.clone(), ..score(&preds)? });
        inputs.push(path);
    }
    rows.push(ReportRow { system: "All Positive".into(), ..score(&all_positive(&gold_set))? });
    if let Some(c) = counts {
        for r in read_jsonl::<CountsRow>(c)? {
            let hard = match (r.hard_positives, r.hard_candidates) {
                (Some(p), Some(n)) => Some(all_positive_from_counts(p, n)?),
                _ => None,
            };
            rows.push(ReportRow { system: r.system, full: all_positive_from_counts(r.positives, r.candidates)?, hard });
        }
        inputs.push(c);
    }
    if let Some(c) = corpus {
        inputs.push(c);
    }
    let report = MetricsReport { rows };
    write_json(&dir.join("metrics.json"), &report)?;
    write_text(&dir.join("report.txt"), &render_table(&report.rows))?;
    let manifest = finish(cfg, "eval", dir, &inputs, &["metrics.json", "report.txt"])?;
    Ok((manifest, report))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainFormat {
    #[default]
    Text,
    Json,
}

/// Report for result `id` of a results file. The document's graph is
/// rebuilt with the extraction settings stored next to the results and
/// must reach the same generation.
pub fn cmd_explain(cfg: &RunConfig, results: &Path, corpus: &Path, models: Option<&Path>, id: usize, format: ExplainFormat) -> Result<String> {
    let records: Vec<ResultRecord> = read_jsonl(results)?;
    let rec = records
        .into_iter()
        .find(|r| r.id == id)
        .ok_or_else(|| Error::lookup("result", id.to_string()))?;
    let ecfg_path = results.with_file_name(EXTRACT_CONFIG);
    let ecfg: ExtractConfig = if ecfg_path.exists() { read_json(&ecfg_path)? } else { cfg.extract.clone() };
    let docs = load_corpus(corpus)?;
    let doc: &Document = docs
        .iter()
        .find(|d| d.id == rec.result.document)
        .ok_or_else(|| Error::lookup("document", rec.result.document.clone()))?;
    let loaded = LoadedModels::load(cfg, models)?;
    let prep = prepare(doc, &loaded.models(false), &ecfg)?;
    let text = explain(&rec.result, doc, &prep.graph, &ecfg)?;
    Ok(match format {
        ExplainFormat::Text => text,
        ExplainFormat::Json => {
            serde_json::to_string_pretty(&serde_json::json!({ "id": id, "query": rec.query, "report": text, "result": rec.result }))? + "\n"
        }
    })
}

/// Every stage in sequence under `dir`: synth, gen-ds, train, then
/// extraction with the full system and the two ablations, then eval.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> Result<MetricsReport> {
    let cfg = cfg.seeded();
    cfg.validate()?;
    let data = dir.join("synth");
    cmd_synth(&cfg, &data)?;
    cmd_gen_ds(&cfg, &data.join("train.jsonl"), &data.join("kb.jsonl"), &dir.join("gen-ds"))?;
    let models = dir.join("train");
    cmd_train(&cfg, &dir.join("gen-ds/examples.jsonl"), &data.join("train.jsonl"), &models)?;
    let mut preds = Vec::new();
    let local = RunConfig { extract: ExtractConfig { resolution: false, ..cfg.extract.clone() }, ..cfg.clone() };
    for (name, c, always) in [("Full", &cfg, false), ("Local", &local, false), ("Always-Positive detector", &cfg, true)] {
        let sub = dir.join(format!("extract-{}", name.split(' ').next().unwrap().to_lowercase()));
        cmd_extract(c, &data.join("test.jsonl"), &data.join("queries.jsonl"), Some(&models), always, &sub)?;
        preds.push((name.to_string(), sub.join("predictions.jsonl")));
    }
    let (_, report) = cmd_eval(&cfg, &preds, &data.join("gold.jsonl"), Some(&data.join("test.jsonl")), None, &dir.join("eval"))?;
    Ok(report)
}

/// Metrics row by system name.
pub fn row<'a>(report: &'a MetricsReport, system: &str) -> Option<&'a ReportRow> {
    report.rows.iter().find(|r| r.system == system)
}

/// Hard-subset metrics of a row, if computed.
pub fn hard_metrics<'a>(report: &'a MetricsReport, system: &str) -> Option<&'a Metrics> {
    row(report, system).and_then(|r| r.hard.as_ref())
}
