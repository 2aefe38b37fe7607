//! Scoring against gold annotations: precision/recall/F1, the hard
//! cross-paragraph subset, the All-Positive baseline and multi-seed reports.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EntityType, MentionKind};
use crate::error::{Error, Result};

/// Identity of one ternary candidate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TupleKey {
    pub doc: String,
    pub drug: String,
    pub gene: String,
    pub mutation: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Pos,
    Neg,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldEntry {
    #[serde(flatten)]
    pub key: TupleKey,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoldSet {
    entries: Vec<GoldEntry>,
}

impl GoldSet {
    pub fn new(entries: Vec<GoldEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(&e.key) {
                return Err(Error::Validation(format!("duplicate gold key {:?}", e.key)));
            }
        }
        Ok(GoldSet { entries })
    }

    pub fn entries(&self) -> &[GoldEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.label == Label::Pos).count()
    }
}

pub fn read_gold(reader: impl BufRead) -> Result<GoldSet> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<gold>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    GoldSet::new(entries)
}

pub fn load_gold(path: impl AsRef<Path>) -> Result<GoldSet> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_gold(BufReader::new(f))
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_gold(path: impl AsRef<Path>, gold: &GoldSet) -> Result<()> {
    write_jsonl(path, gold.entries())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(flatten)]
    pub key: TupleKey,
    pub decision: bool,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    /// Names of metrics whose denominator was zero (reported as 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

impl Metrics {
    pub fn from_counts(counts: Counts) -> Self {
        let mut undefined = Vec::new();
        let (tp, fp, fn_) = (counts.tp as f64, counts.fp as f64, counts.fn_ as f64);
        let precision = ratio(tp, tp + fp, "precision", &mut undefined);
        let recall = ratio(tp, tp + fn_, "recall", &mut undefined);
        let f1 = ratio(2.0 * precision * recall, precision + recall, "f1", &mut undefined);
        Metrics {
            precision,
            recall,
            f1,
            counts,
            undefined,
        }
    }
}

/// Scores predictions against gold. Gold keys without a prediction count as
/// negative predictions; predictions for keys outside the gold set are
/// ignored.
pub fn evaluate(predictions: &[Prediction], gold: &GoldSet) -> Result<Metrics> {
    let mut by_key: HashMap<&TupleKey, bool> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_key.insert(&p.key, p.decision).is_some() {
            return Err(Error::Validation(format!("duplicate prediction for {:?}", p.key)));
        }
    }
    let mut c = Counts::default();
    for e in gold.entries() {
        let predicted = by_key.get(&e.key).copied().unwrap_or(false);
        match (predicted, e.label) {
            (true, Label::Pos) => c.tp += 1,
            (true, Label::Neg) => c.fp += 1,
            (false, Label::Pos) => c.fn_ += 1,
            (false, Label::Neg) => c.tn += 1,
        }
    }
    Ok(Metrics::from_counts(c))
}

pub fn all_positive(gold: &GoldSet) -> Vec<Prediction> {
    gold.entries()
        .iter()
        .map(|e| Prediction {
            key: e.key.clone(),
            decision: true,
            score: 1.0,
        })
        .collect()
}

/// All-Positive metrics from aggregate counts alone.
pub fn all_positive_from_counts(positives: usize, candidates: usize) -> Result<Metrics> {
    if positives > candidates {
        return Err(Error::Validation(format!("{positives} positives of {candidates} candidates")));
    }
    Ok(Metrics::from_counts(Counts {
        tp: positives,
        fp: candidates - positives,
        fn_: 0,
        tn: 0,
    }))
}

/// Paragraphs holding a named mention of the named entity, or `None` when the
/// document has no such entity or it is never mentioned.
fn entity_paragraphs(doc: &Document, name: &str, ty: EntityType) -> Option<BTreeSet<usize>> {
    let e = doc.entity_by_name(name, Some(&ty))?;
    let paras: BTreeSet<usize> = e
        .mentions
        .iter()
        .filter_map(|id| doc.mention(id))
        .filter(|m| m.kind == MentionKind::NamedEntity)
        .map(|m| m.sentence.paragraph)
        .collect();
    (!paras.is_empty()).then_some(paras)
}

/// Entries whose drug and mutation never have named mentions in a common
/// paragraph. Entries whose document or entities cannot be found are dropped
/// with a warning.
pub fn hard_subset(gold: &GoldSet, corpus: &[Document]) -> GoldSet {
    let docs: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut out = Vec::new();
    for e in gold.entries() {
        let Some(doc) = docs.get(e.key.doc.as_str()) else {
            log::warn!("hard subset: document {} not in corpus", e.key.doc);
            continue;
        };
        let (Some(d), Some(m)) = (
            entity_paragraphs(doc, &e.key.drug, EntityType::Drug),
            entity_paragraphs(doc, &e.key.mutation, EntityType::Mutation),
        ) else {
            log::warn!("hard subset: {:?} has an entity without mentions", e.key);
            continue;
        };
        if d.is_disjoint(&m) {
            out.push(e.clone());
        }
    }
    GoldSet { entries: out }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return MeanSd { mean: 0.0, sd: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanSd { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seeds: Vec<u64>,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
}

pub fn seed_report(runs: &[(u64, Metrics)]) -> SeedReport {
    let col = |f: fn(&Metrics) -> f64| MeanSd::of(&runs.iter().map(|(_, m)| f(m)).collect::<Vec<_>>());
    SeedReport {
        seeds: runs.iter().map(|(s, _)| *s).collect(),
        precision: col(|m| m.precision),
        recall: col(|m| m.recall),
        f1: col(|m| m.f1),
    }
}

/// One system row: metrics on the full gold set and on the hard subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub full: Metrics,
    pub hard: Option<Metrics>,
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Aligned plain-text table: system, then P/R/F1 (percent) for full and hard.
pub fn render_table(rows: &[ReportRow]) -> String {
    let header = ["System", "P", "R", "F1", "Hard P", "Hard R", "Hard F1"];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        let mut line = vec![r.system.clone(), pct(r.full.precision), pct(r.full.recall), pct(r.full.f1)];
        match &r.hard {
            Some(h) => line.extend([pct(h.precision), pct(h.recall), pct(h.f1)]),
            None => line.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
        }
        cells.push(line);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, line) in cells.iter().enumerate() {
        for (c, cell) in line.iter().enumerate() {
            if c == 0 {
                let _ = write!(out, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(out, "  {cell:>w$}", w = widths[c]);
            }
        }
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(d: &str, m: &str) -> TupleKey {
        TupleKey {
            doc: d.into(),
            drug: "x".into(),
            gene: "g".into(),
            mutation: m.into(),
        }
    }

    fn gold(labels: &[(&str, Label)]) -> GoldSet {
        GoldSet::new(
            labels
                .iter()
                .map(|(m, l)| GoldEntry { key: key("d", m), label: *l })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let g = gold(&[("a", Label::Pos), ("b", Label::Neg)]);
        let preds = vec![Prediction { key: key("d", "a"), decision: true, score: 0.9 }];
        let m = evaluate(&preds, &g).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert_eq!(m.counts.tn, 1);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let g = gold(&[("a", Label::Pos)]);
        let m = evaluate(&[], &g).unwrap();
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.undefined, vec!["precision", "f1"]);
    }

    #[test]
    fn duplicates_rejected() {
        let g = gold(&[("a", Label::Pos)]);
        let p = Prediction { key: key("d", "a"), decision: true, score: 1.0 };
        assert!(evaluate(&[p.clone(), p], &g).is_err());
        assert!(GoldSet::new(vec![
            GoldEntry { key: key("d", "a"), label: Label::Pos },
            GoldEntry { key: key("d", "a"), label: Label::Neg },
        ])
        .is_err());
    }

    #[test]
    fn all_positive_precision_is_prevalence() {
        let g = gold(&[("a", Label::Pos), ("b", Label::Neg), ("c", Label::Neg), ("e", Label::Neg)]);
        let m = evaluate(&all_positive(&g), &g).unwrap();
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.precision, 0.25);
    }

    #[test]
    fn seed_report_uses_sample_sd() {
        let m = |f1: f64| Metrics { precision: f1, recall: f1, f1, counts: Counts::default(), undefined: vec![] };
        let r = seed_report(&[(7, m(0.5)), (12, m(0.7)), (17, m(0.6))]);
        assert!((r.f1.mean - 0.6).abs() < 1e-12);
        assert!((r.f1.sd - 0.1).abs() < 1e-12);
    }

    #[test]
    fn table_is_aligned() {
        let m = all_positive_from_counts(1904, 17744).unwrap();
        let t = render_table(&[ReportRow { system: "All Positive".into(), full: m, hard: None }]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].len(), lines[2].len());
        assert!(lines[2].contains("19.4"));
    }

    #[test]
    fn gold_lines_use_pos_neg() {
        let e = GoldEntry { key: key("d", "a"), label: Label::Neg };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"doc":"d","drug":"x","gene":"g","mutation":"a","label":"neg"}"#);
        assert_eq!(read_gold(s.as_bytes()).unwrap().len(), 1);
    }
}
