//! Distant supervision for the relation detector: align KB facts with
//! co-occurring mention pairs, apply the noise restrictions, and sample
//! balanced minibatches.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{co_occurring_pairs, enumerate_segments, Document, DocumentId, EntityId, MentionId, MentionKind, Segment};
use crate::error::{Error, Result};
use crate::relation::{dummify, Role, Template};

pub fn normalize_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub relation: String,
    pub args: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KnowledgeBase {
    facts: BTreeSet<Fact>,
    arity: BTreeMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a fact with normalized names. Returns false if it was already known.
    pub fn insert(&mut self, relation: &str, args: &[impl AsRef<str>]) -> Result<bool> {
        let relation = relation.trim().to_string();
        let n = *self.arity.entry(relation.clone()).or_insert(args.len());
        if n != args.len() {
            return Err(Error::Validation(format!(
                "relation {relation} has arity {n}, fact has {} arguments",
                args.len()
            )));
        }
        Ok(self.facts.insert(Fact {
            relation,
            args: args.iter().map(|a| normalize_name(a.as_ref())).collect(),
        }))
    }

    pub fn contains(&self, relation: &str, args: &[impl AsRef<str>]) -> bool {
        self.facts.contains(&Fact {
            relation: relation.to_string(),
            args: args.iter().map(|a| normalize_name(a.as_ref())).collect(),
        })
    }

    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.facts.iter()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn arity(&self, relation: &str) -> Option<usize> {
        self.arity.get(relation).copied()
    }

    /// Projection of a relation onto two roles: normalized name pair to the
    /// first fact (in sorted order) that supports it.
    pub fn pairs(&self, relation: &str, roles: (Role, Role)) -> Result<BTreeMap<(String, String), Fact>> {
        let n = self
            .arity(relation)
            .ok_or_else(|| Error::Config(format!("relation `{relation}` absent from the knowledge base")))?;
        let (a, b) = (roles.0 .0 as usize, roles.1 .0 as usize);
        if a == 0 || b == 0 || a > n || b > n {
            return Err(Error::Config(format!(
                "roles ({a}, {b}) out of range for arity {n}"
            )));
        }
        let mut out = BTreeMap::new();
        for f in self.facts.iter().filter(|f| f.relation == relation) {
            out.entry((f.args[a - 1].clone(), f.args[b - 1].clone()))
                .or_insert_with(|| f.clone());
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct KbRecord {
    relation: String,
    args: Vec<String>,
}

pub fn read_kb(reader: impl BufRead) -> Result<KnowledgeBase> {
    let mut kb = KnowledgeBase::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<kb>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: KbRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        kb.insert(&rec.relation, &rec.args).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
    }
    Ok(kb)
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_kb(BufReader::new(f))
}

pub fn write_kb(path: impl AsRef<Path>, kb: &KnowledgeBase) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for fact in kb.facts() {
        serde_json::to_writer(
            &mut w,
            &KbRecord {
                relation: fact.relation.clone(),
                args: fact.args.clone(),
            },
        )?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsConfig {
    pub relation: String,
    pub anchor: (Role, Role),
    pub k_max: usize,
    pub min_segments: usize,
    pub negative_ratio: f64,
    pub seed: u64,
}

impl Default for DsConfig {
    fn default() -> Self {
        DsConfig {
            relation: "sensitivity".into(),
            anchor: (Role::DRUG, Role::MUTATION),
            k_max: 2,
            min_segments: 2,
            negative_ratio: 5.0,
            seed: 7,
        }
    }
}

impl DsConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: DsConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if self.min_segments == 0 {
            return Err(Error::Config("min_segments must be at least 1".into()));
        }
        if !(self.negative_ratio > 0.0) {
            return Err(Error::Config("negative_ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExampleProvenance {
    DistantSupervision,
    PseudoLabel { iteration: usize },
    SeedRule { name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub template: Template,
    pub label: f64,
    pub polarity: Polarity,
    pub provenance: ExampleProvenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact: Option<Fact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<Segment>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub slots: BTreeMap<Role, MentionId>,
}

impl LabeledExample {
    /// An example with only its template and label, as used in toy tests.
    pub fn bare(template: Template, label: f64, polarity: Polarity, provenance: ExampleProvenance) -> Self {
        LabeledExample {
            template,
            label,
            polarity,
            provenance,
            fact: None,
            segment: None,
            slots: BTreeMap::new(),
        }
    }
}

/// A co-occurring typed mention pair in one segment, before filtering.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub document: DocumentId,
    pub entities: (EntityId, EntityId),
    pub mentions: (MentionId, MentionId),
    pub segment: Segment,
    pub polarity: Polarity,
    pub fact: Option<Fact>,
}

fn doc_candidates(
    doc: &Document,
    pairs: &BTreeMap<(String, String), Fact>,
    cfg: &DsConfig,
) -> Vec<Candidate> {
    let ta = cfg.anchor.0.entity_type();
    let tb = cfg.anchor.1.entity_type();
    let mut out = Vec::new();
    for seg in enumerate_segments(doc, cfg.k_max) {
        for (a, b) in co_occurring_pairs(doc, &seg, (&ta, &tb)) {
            let (ma, mb) = (doc.mention(&a).unwrap(), doc.mention(&b).unwrap());
            if ma.kind != MentionKind::NamedEntity || mb.kind != MentionKind::NamedEntity {
                continue;
            }
            let (ea, eb) = (ma.entity.clone().unwrap(), mb.entity.clone().unwrap());
            let key = (
                normalize_name(&doc.entity(&ea).unwrap().canonical_name),
                normalize_name(&doc.entity(&eb).unwrap().canonical_name),
            );
            let fact = pairs.get(&key).cloned();
            out.push(Candidate {
                document: doc.id.clone(),
                entities: (ea, eb),
                mentions: (a, b),
                segment: seg.clone(),
                polarity: if fact.is_some() {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                },
                fact,
            });
        }
    }
    out
}

/// Restriction (1): segments of at most `k_max` sentences inside one
/// paragraph. Restriction (2): a positive (document, entity pair) group is
/// kept only if it occurs in at least `min_segments` distinct segments.
/// Negatives are subject to (1) only.
pub fn apply_noise_filters(candidates: Vec<Candidate>, cfg: &DsConfig) -> Vec<Candidate> {
    let bounded: Vec<Candidate> = candidates
        .into_iter()
        .filter(|c| c.segment.sentence_range.0 <= c.segment.sentence_range.1 && c.segment.len() <= cfg.k_max)
        .collect();
    let mut support: HashMap<(&str, &str, &str), BTreeSet<(usize, usize, usize)>> = HashMap::new();
    for c in bounded.iter().filter(|c| c.polarity == Polarity::Positive) {
        support
            .entry((&c.document, &c.entities.0, &c.entities.1))
            .or_default()
            .insert((c.segment.paragraph, c.segment.sentence_range.0, c.segment.sentence_range.1));
    }
    let keep: BTreeSet<(String, String, String)> = support
        .into_iter()
        .filter(|(_, segs)| segs.len() >= cfg.min_segments)
        .map(|((d, a, b), _)| (d.to_string(), a.to_string(), b.to_string()))
        .collect();
    bounded
        .into_iter()
        .filter(|c| {
            c.polarity == Polarity::Negative
                || keep.contains(&(c.document.clone(), c.entities.0.clone(), c.entities.1.clone()))
        })
        .collect()
}

fn to_example(doc: &Document, c: &Candidate, cfg: &DsConfig) -> Result<LabeledExample> {
    let slots = BTreeMap::from([
        (cfg.anchor.0, c.mentions.0.clone()),
        (cfg.anchor.1, c.mentions.1.clone()),
    ]);
    let template = dummify(doc, &c.segment, &slots)?;
    Ok(LabeledExample {
        template,
        label: if c.polarity == Polarity::Positive { 1.0 } else { 0.0 },
        polarity: c.polarity,
        provenance: ExampleProvenance::DistantSupervision,
        fact: c.fact.clone(),
        segment: Some(c.segment.clone()),
        slots,
    })
}

/// All filtered positives plus negatives sampled at `negative_ratio` times
/// the positive count. Output order is deterministic: positives then
/// negatives, each in (document, segment) order.
pub fn generate_relation_examples(
    corpus: &[Document],
    kb: &KnowledgeBase,
    cfg: &DsConfig,
) -> Result<Vec<LabeledExample>> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Ok(Vec::new());
    }
    let pairs = kb.pairs(&cfg.relation, cfg.anchor)?;
    let per_doc: Vec<Vec<Candidate>> = corpus
        .par_iter()
        .map(|d| apply_noise_filters(doc_candidates(d, &pairs, cfg), cfg))
        .collect();
    let by_id: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();

    let all: Vec<Candidate> = per_doc.into_iter().flatten().collect();
    let (pos, mut neg): (Vec<Candidate>, Vec<Candidate>) =
        all.into_iter().partition(|c| c.polarity == Polarity::Positive);
    let want = ((pos.len() as f64) * cfg.negative_ratio).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    neg.shuffle(&mut rng);
    neg.truncate(want);
    let order = |c: &Candidate| {
        (
            c.document.clone(),
            c.segment.paragraph,
            c.segment.sentence_range,
            c.mentions.clone(),
        )
    };
    neg.sort_by_key(order);

    pos.iter()
        .chain(neg.iter())
        .map(|c| to_example(by_id[c.document.as_str()], c, cfg))
        .collect()
}

/// Infinite stream of minibatches (indices into the example list) drawn with
/// replacement, each example weighted `1 / (2 * count of its polarity)`.
#[derive(Clone, Debug)]
pub struct BalancedBatches {
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
    batch_size: usize,
}

impl BalancedBatches {
    pub fn next_batch(&mut self) -> Vec<usize> {
        (0..self.batch_size).map(|_| self.dist.sample(&mut self.rng)).collect()
    }
}

impl Iterator for BalancedBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

pub fn balanced_batches(examples: &[LabeledExample], batch_size: usize, seed: u64) -> Result<BalancedBatches> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let n_pos = examples.iter().filter(|e| e.polarity == Polarity::Positive).count();
    let n_neg = examples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Validation(format!(
            "balanced sampling needs both polarities, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let weights: Vec<f64> = examples
        .iter()
        .map(|e| match e.polarity {
            Polarity::Positive => 0.5 / n_pos as f64,
            Polarity::Negative => 0.5 / n_neg as f64,
        })
        .collect();
    let dist = WeightedIndex::new(weights).map_err(|e| Error::Validation(e.to_string()))?;
    Ok(BalancedBatches {
        dist,
        rng: ChaCha8Rng::seed_from_u64(seed),
        batch_size,
    })
}

pub fn write_examples(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for e in examples {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_examples(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawDocument, RawEntity, RawMention, RawParagraph, RawSentence};

    /// Paragraph 0 has `n` sentences "D0 with M0 ." (drug at 0, mutation at 2);
    /// paragraph 1 holds the drug alone and paragraph 2 the mutation alone.
    fn doc(n: usize) -> Document {
        let mut mentions = Vec::new();
        let mut dm = Vec::new();
        let mut mm = Vec::new();
        for s in 0..n {
            mentions.push(RawMention { id: format!("d{s}"), entity: Some("D".into()), kind: MentionKind::NamedEntity, p: 0, s, t0: 0, t1: 1 });
            mentions.push(RawMention { id: format!("m{s}"), entity: Some("M".into()), kind: MentionKind::NamedEntity, p: 0, s, t0: 2, t1: 3 });
            dm.push(format!("d{s}"));
            mm.push(format!("m{s}"));
        }
        mentions.push(RawMention { id: "dx".into(), entity: Some("D".into()), kind: MentionKind::NamedEntity, p: 1, s: 0, t0: 0, t1: 1 });
        mentions.push(RawMention { id: "mx".into(), entity: Some("M".into()), kind: MentionKind::NamedEntity, p: 2, s: 0, t0: 0, t1: 1 });
        dm.push("dx".into());
        mm.push("mx".into());
        let sent = |w: &str| RawSentence { tokens: w.split(' ').map(String::from).collect() };
        Document::from_raw(RawDocument {
            id: "doc".into(),
            paragraphs: vec![
                RawParagraph { sentences: (0..n).map(|_| sent("drugA with mutX .")).collect() },
                RawParagraph { sentences: vec![sent("drugA alone .")] },
                RawParagraph { sentences: vec![sent("mutX alone .")] },
            ],
            entities: vec![
                RawEntity { id: "D".into(), entity_type: "drug".to_string().into(), name: "drugA".into(), mentions: dm },
                RawEntity { id: "M".into(), entity_type: "mutation".to_string().into(), name: "mutX".into(), mentions: mm },
            ],
            mentions,
        })
        .unwrap()
    }

    fn kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        kb.insert("sensitivity", &["DrugA", "GENE", "mutx"]).unwrap();
        kb
    }

    fn cfg(k_max: usize, min_segments: usize) -> DsConfig {
        DsConfig { k_max, min_segments, ..DsConfig::default() }
    }

    #[test]
    fn three_single_sentence_segments_pass_threshold_two() {
        let ex = generate_relation_examples(&[doc(3)], &kb(), &cfg(1, 2)).unwrap();
        let pos: Vec<_> = ex.iter().filter(|e| e.polarity == Polarity::Positive).collect();
        assert_eq!(pos.len(), 3);
        assert!(pos.iter().all(|e| e.fact.is_some() && e.label == 1.0));
        assert_eq!(pos[0].template.to_string(), "[CLS] [X1] with [X3] .");
    }

    #[test]
    fn threshold_above_support_drops_fact() {
        let ex = generate_relation_examples(&[doc(3)], &kb(), &cfg(1, 4)).unwrap();
        assert!(ex.iter().all(|e| e.polarity == Polarity::Negative));
    }

    #[test]
    fn cross_paragraph_pair_gives_nothing() {
        let ex = generate_relation_examples(&[doc(0)], &kb(), &cfg(2, 1)).unwrap();
        assert!(ex.is_empty());
    }

    #[test]
    fn absent_relation_is_config_error() {
        let c = DsConfig { relation: "other".into(), ..DsConfig::default() };
        assert!(matches!(generate_relation_examples(&[doc(2)], &kb(), &c), Err(Error::Config(_))));
        assert!(generate_relation_examples(&[], &kb(), &c).unwrap().is_empty());
    }

    #[test]
    fn kb_normalizes_and_dedups() {
        let mut kb = kb();
        assert!(!kb.insert("sensitivity", &["drugA", "gene", " MUTX "]).unwrap());
        assert_eq!(kb.len(), 1);
        assert!(kb.insert("sensitivity", &["a", "b"]).is_err());
    }

    #[test]
    fn sampler_is_balanced_and_deterministic() {
        let mk = |p: Polarity| LabeledExample::bare(Template(vec![]), 0.0, p, ExampleProvenance::DistantSupervision);
        let mut ex: Vec<_> = (0..2).map(|_| mk(Polarity::Positive)).collect();
        ex.extend((0..200).map(|_| mk(Polarity::Negative)));
        let mut total = 0usize;
        let mut pos = 0usize;
        for b in balanced_batches(&ex, 32, 7).unwrap().take(1000) {
            total += b.len();
            pos += b.iter().filter(|&&i| i < 2).count();
        }
        let frac = pos as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
        let a: Vec<_> = balanced_batches(&ex, 4, 3).unwrap().take(50).collect();
        let b: Vec<_> = balanced_batches(&ex, 4, 3).unwrap().take(50).collect();
        assert_eq!(a, b);
        assert!(balanced_batches(&ex[2..], 4, 3).is_err());
    }

    #[test]
    fn config_from_toml() {
        let c = DsConfig::from_toml_str("k_max = 3\nmin_segments = 1\nnegative_ratio = 2.0\nseed = 12\n").unwrap();
        assert_eq!(c.k_max, 3);
        assert_eq!(c.relation, "sensitivity");
        assert!(DsConfig::from_toml_str("k_max = 0").is_err());
    }
}
