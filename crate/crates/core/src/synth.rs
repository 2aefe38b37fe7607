//! Synthetic corpus generator. Plants drug-gene-mutation facts whose textual
//! support is either one direct sentence or a cross-paragraph pattern: the
//! drug introduced by apposition or alias as a class inhibitor, the mutation
//! introduced as a gene mutation, and a third paragraph relating the two
//! noun phrases. Decoy entities, distractor sentences and broken patterns
//! supply negatives. Every planted positive carries a certificate naming the
//! sentences and links that support it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_corpus, Document, EntityType, MentionId, MentionKind, RawDocument, RawEntity, RawMention, RawParagraph,
    RawSentence, SentenceRef,
};
use crate::error::{Error, Result};
use crate::eval::{write_gold, write_jsonl, GoldEntry, GoldSet, Label, TupleKey};
use crate::resolution::{close_graph, LinkKind, Provenance, ResolutionGraph, ResolutionLink};
use crate::supervision::{write_kb, KnowledgeBase};

pub const RELATION: &str = "sensitivity";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Training documents (text for self-training and distant supervision).
    pub num_docs: usize,
    /// Held-out documents with gold annotations.
    pub num_test_docs: usize,
    pub paragraphs: usize,
    pub drugs: usize,
    pub classes: usize,
    pub genes: usize,
    /// Mutations per split; train and test never share a mutation.
    pub mutations: usize,
    /// Share of documents carrying a planted positive.
    pub relation_rate: f64,
    pub cross_paragraph_fraction: f64,
    /// (links in the drug chain, weight). The mutation chain always has two.
    pub chain_lengths: Vec<(usize, f64)>,
    pub distractor_rate: f64,
    pub copula_rate: f64,
    pub alias_rate: f64,
    pub repeat_rate: f64,
    pub decoy_mutation_rate: f64,
    pub max_fillers: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 200,
            num_test_docs: 100,
            paragraphs: 5,
            drugs: 40,
            classes: 8,
            genes: 12,
            mutations: 80,
            relation_rate: 0.9,
            cross_paragraph_fraction: 0.5,
            chain_lengths: vec![(2, 0.7), (3, 0.3)],
            distractor_rate: 0.6,
            copula_rate: 0.4,
            alias_rate: 0.3,
            repeat_rate: 0.5,
            decoy_mutation_rate: 0.7,
            max_fillers: 2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("relation_rate", self.relation_rate),
            ("cross_paragraph_fraction", self.cross_paragraph_fraction),
            ("distractor_rate", self.distractor_rate),
            ("copula_rate", self.copula_rate),
            ("alias_rate", self.alias_rate),
            ("repeat_rate", self.repeat_rate),
            ("decoy_mutation_rate", self.decoy_mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.chain_lengths.is_empty() {
            return Err(Error::Config("chain_lengths is empty".into()));
        }
        for &(len, w) in &self.chain_lengths {
            if !(2..=8).contains(&len) {
                return Err(Error::Config(format!("chain length {len} is outside 2..=8")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("chain length weight {w}")));
            }
        }
        let longest = self.chain_lengths.iter().map(|c| c.0).max().unwrap_or(2);
        if longest + 1 > self.paragraphs {
            return Err(Error::Config(format!(
                "a {longest}-link chain needs {} paragraphs but documents have {}",
                longest + 1,
                self.paragraphs
            )));
        }
        if self.drugs < 2 || self.classes < 3 || self.genes < 2 || self.mutations < 2 {
            return Err(Error::Config(
                "need at least 2 drugs, 3 classes, 2 genes and 2 mutations per split".into(),
            ));
        }
        if self.drugs < self.classes {
            return Err(Error::Config("every class needs a drug: drugs must be >= classes".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedLink {
    pub from: MentionId,
    pub to: MentionId,
    pub kind: LinkKind,
}

/// Ground truth for one planted positive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub doc: String,
    pub split: Split,
    pub drug: String,
    pub gene: String,
    pub mutation: String,
    pub cross_paragraph: bool,
    /// Sentence stating the relation.
    pub relation_sentence: SentenceRef,
    /// Sentence where the gene and mutation co-occur.
    pub gene_sentence: SentenceRef,
    /// Links from the drug mention to the drug slot of the relation
    /// sentence, in order; empty when the drug is named there.
    pub drug_chain: Vec<PlantedLink>,
    pub mutation_chain: Vec<PlantedLink>,
    pub drug_mention: MentionId,
    pub mutation_mention: MentionId,
    pub drug_slot: MentionId,
    pub mutation_slot: MentionId,
}

impl Certificate {
    /// Graph holding only the certificate's links (Coref both ways).
    pub fn oracle_graph(&self, doc: &Document) -> Result<ResolutionGraph> {
        let mut g = ResolutionGraph::new(doc);
        for l in self.drug_chain.iter().chain(&self.mutation_chain) {
            g.add(ResolutionLink::new(
                l.from.clone(),
                l.to.clone(),
                l.kind,
                1.0,
                Provenance::SeedRule { name: "oracle".into() },
            ))?;
        }
        Ok(g)
    }

    /// Closing the oracle links must connect each named mention to its slot.
    pub fn replay(&self, doc: &Document) -> Result<()> {
        let closed = close_graph(&self.oracle_graph(doc)?);
        for (from, to) in [(&self.drug_mention, &self.drug_slot), (&self.mutation_mention, &self.mutation_slot)] {
            if from != to && !closed.contains(from, to, LinkKind::Resolve) {
                return Err(Error::Consistency(format!(
                    "{}: closure of the certificate links lacks Resolve({from}, {to})",
                    self.doc
                )));
            }
        }
        Ok(())
    }

    pub fn links(&self) -> impl Iterator<Item = &PlantedLink> {
        self.drug_chain.iter().chain(&self.mutation_chain)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub train_docs: usize,
    pub test_docs: usize,
    pub kb_facts: usize,
    pub gold_entries: usize,
    pub gold_positives: usize,
    /// Hard-subset counts as tracked by the generator while laying out text.
    pub hard_positives: usize,
    pub hard_candidates: usize,
    pub planted_links: usize,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub train: Vec<Document>,
    pub test: Vec<Document>,
    pub kb: KnowledgeBase,
    pub gold: GoldSet,
    pub queries: Vec<TupleKey>,
    pub certificates: Vec<Certificate>,
    pub summary: SynthSummary,
}

// ---------------------------------------------------------------------------
// Vocabulary

const DRUG_HEAD: &[&str] = &[
    "cobi", "vemu", "dabra", "trame", "selu", "bini", "enco", "alpe", "capi", "sora", "lapa", "nera", "afa", "osi",
    "gefi", "erlo", "ibru", "ruxo", "pexi", "olmu",
];
const DRUG_MID: &[&str] = &["ra", "ti", "fe", "lo", "zo", "me", "ca", "vi"];
const DRUG_TAIL: &[&str] = &["nib", "tinib", "fenib", "lisib", "ciclib", "parib"];
const AMINO: &[u8] = b"ACDEFGHIKLMNPQRSTVWY";
const FILLERS: &[&str] = &[
    "the study enrolled forty patients .",
    "samples were collected at baseline .",
    "response was assessed every eight weeks .",
    "adverse events were mostly mild .",
    "median follow-up was fourteen months .",
    "tumor biopsies were sequenced before treatment .",
    "results were consistent across sites .",
    "dose reductions were rare .",
    "imaging was reviewed centrally .",
    "the cohort included several tumor types .",
];

struct Vocab {
    drugs: Vec<String>,
    drug_class: Vec<usize>,
    classes: Vec<String>,
    genes: Vec<String>,
    /// (name, gene index) per split.
    mutations: [Vec<(String, usize)>; 2],
}

fn unique_names(n: usize, what: &str, rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>, mut make: impl FnMut(&mut ChaCha8Rng) -> String) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 200 * n + 1000 {
            return Err(Error::Config(format!("cannot draw {n} distinct {what} names")));
        }
        let s = make(rng);
        if taken.insert(s.to_lowercase()) {
            out.push(s);
        }
    }
    Ok(out)
}

fn gene_symbol(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(3..=4);
    let mut s: String = (0..len).map(|_| (b'A' + rng.gen_range(0..26u8)) as char).collect();
    if rng.gen_bool(0.6) {
        s.push(char::from(b'1' + rng.gen_range(0..9u8)));
    }
    s
}

impl Vocab {
    fn draw(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut taken = BTreeSet::new();
        let drugs = unique_names(cfg.drugs, "drug", rng, &mut taken, |r| {
            format!(
                "{}{}{}",
                DRUG_HEAD.choose(r).unwrap(),
                DRUG_MID.choose(r).unwrap(),
                DRUG_TAIL.choose(r).unwrap()
            )
        })?;
        let classes = unique_names(cfg.classes, "class gene", rng, &mut taken, gene_symbol)?;
        let genes = unique_names(cfg.genes, "gene", rng, &mut taken, gene_symbol)?;
        let muts = unique_names(2 * cfg.mutations, "mutation", rng, &mut taken, |r| {
            let a = AMINO[r.gen_range(0..AMINO.len())] as char;
            let mut b = a;
            while b == a {
                b = AMINO[r.gen_range(0..AMINO.len())] as char;
            }
            format!("{a}{}{b}", r.gen_range(10..1300))
        })?;
        let with_gene = |names: &[String], rng: &mut ChaCha8Rng| -> Vec<(String, usize)> {
            names.iter().map(|m| (m.clone(), rng.gen_range(0..cfg.genes))).collect()
        };
        let train = with_gene(&muts[..cfg.mutations], rng);
        let test = with_gene(&muts[cfg.mutations..], rng);
        let drug_class = (0..cfg.drugs).map(|i| i % cfg.classes).collect();
        Ok(Vocab {
            drugs,
            drug_class,
            classes,
            genes,
            mutations: [train, test],
        })
    }
}

// ---------------------------------------------------------------------------
// Text assembly

#[derive(Clone, Debug)]
struct Pending {
    handle: usize,
    entity: Option<(EntityType, String)>,
    kind: MentionKind,
    span: (usize, usize),
}

#[derive(Clone, Debug, Default)]
struct Sent {
    tokens: Vec<String>,
    mentions: Vec<Pending>,
    /// Content marker used to find the sentence again after layout.
    tag: Option<&'static str>,
}

#[derive(Default)]
struct Builder {
    next: usize,
}

impl Builder {
    /// Parses a template such as `{D} , a [ {C} inhibitor ] .`. `{X}` is a
    /// named mention of the entity bound to `X`; `[ ... ]` is a candidate
    /// noun phrase. Returns mention handles in opening order.
    fn sent(&mut self, template: &str, bind: &[(&str, EntityType, &str)], tag: Option<&'static str>) -> (Sent, Vec<usize>) {
        let mut s = Sent { tag, ..Sent::default() };
        let mut handles = Vec::new();
        let mut open: Vec<(usize, usize)> = Vec::new();
        for w in template.split_whitespace() {
            match w {
                "[" => {
                    let h = self.next;
                    self.next += 1;
                    handles.push(h);
                    open.push((h, s.tokens.len()));
                }
                "]" => {
                    let (h, t0) = open.pop().expect("balanced template");
                    s.mentions.push(Pending {
                        handle: h,
                        entity: None,
                        kind: MentionKind::CandidateNounPhrase,
                        span: (t0, s.tokens.len()),
                    });
                }
                _ if w.starts_with('{') && w.ends_with('}') => {
                    let key = &w[1..w.len() - 1];
                    let (_, ty, name) = bind.iter().find(|b| b.0 == key).expect("bound placeholder");
                    let h = self.next;
                    self.next += 1;
                    handles.push(h);
                    let t0 = s.tokens.len();
                    s.tokens.push(name.to_string());
                    s.mentions.push(Pending {
                        handle: h,
                        entity: Some((ty.clone(), name.to_string())),
                        kind: MentionKind::NamedEntity,
                        span: (t0, t0 + 1),
                    });
                }
                _ => s.tokens.push(w.to_string()),
            }
        }
        (s, handles)
    }

    fn filler(&mut self, rng: &mut ChaCha8Rng) -> Sent {
        self.sent(FILLERS.choose(rng).unwrap(), &[], None).0
    }
}

fn entity_id(ty: &EntityType, name: &str) -> String {
    format!("{ty}:{name}")
}

/// Turns laid-out paragraphs into a validated document. Mention ids follow
/// reading order; returns the handle-to-id map.
fn assemble(id: &str, paragraphs: &[Vec<Sent>]) -> Result<(Document, HashMap<usize, MentionId>)> {
    let mut raw_pars = Vec::new();
    let mut mentions = Vec::new();
    let mut entities: Vec<RawEntity> = Vec::new();
    let mut ids = HashMap::new();
    for (p, par) in paragraphs.iter().enumerate() {
        let mut sents = Vec::new();
        for (s, sent) in par.iter().enumerate() {
            let mut ms: Vec<&Pending> = sent.mentions.iter().collect();
            ms.sort_by_key(|m| (m.span.0, std::cmp::Reverse(m.span.1)));
            for m in ms {
                let mid = format!("m{}", mentions.len());
                ids.insert(m.handle, mid.clone());
                let entity = m.entity.as_ref().map(|(ty, name)| {
                    let eid = entity_id(ty, name);
                    match entities.iter_mut().find(|e| e.id == eid) {
                        Some(e) => e.mentions.push(mid.clone()),
                        None => entities.push(RawEntity {
                            id: eid.clone(),
                            entity_type: ty.clone(),
                            name: name.clone(),
                            mentions: vec![mid.clone()],
                        }),
                    }
                    eid
                });
                mentions.push(RawMention {
                    id: mid,
                    entity,
                    kind: m.kind,
                    p,
                    s,
                    t0: m.span.0,
                    t1: m.span.1,
                });
            }
            sents.push(RawSentence { tokens: sent.tokens.clone() });
        }
        raw_pars.push(RawParagraph { sentences: sents });
    }
    let doc = Document::from_raw(RawDocument {
        id: id.to_string(),
        paragraphs: raw_pars,
        entities,
        mentions,
    })?;
    Ok((doc, ids))
}

fn locate(paragraphs: &[Vec<Sent>], tag: &str) -> Option<SentenceRef> {
    for (p, par) in paragraphs.iter().enumerate() {
        for (s, sent) in par.iter().enumerate() {
            if sent.tag == Some(tag) {
                return Some(SentenceRef { paragraph: p, sentence: s });
            }
        }
    }
    None
}

/// Paragraphs holding a named mention of each entity, computed from the
/// layout before the document is built.
fn layout_paragraphs(paragraphs: &[Vec<Sent>]) -> HashMap<(EntityType, String), BTreeSet<usize>> {
    let mut out: HashMap<(EntityType, String), BTreeSet<usize>> = HashMap::new();
    for (p, par) in paragraphs.iter().enumerate() {
        for sent in par {
            for m in &sent.mentions {
                if let Some(e) = &m.entity {
                    out.entry(e.clone()).or_default().insert(p);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Documents

struct DocPlan {
    id: String,
    split: Split,
    /// (drug, mutation) indices of the main pair; `planted` says whether the
    /// text supports it.
    drug: usize,
    mutation: usize,
    planted: bool,
    cross: bool,
    chain_len: usize,
    decoy_drug: usize,
    decoy_mutation: Option<usize>,
}

struct Built {
    doc: Document,
    certificate: Option<Certificate>,
    gold: Vec<GoldEntry>,
    hard: Vec<bool>,
}

fn pick_chain_len(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = cfg.chain_lengths.iter().map(|c| c.1).sum();
    let mut x = rng.gen::<f64>() * total;
    for &(len, w) in &cfg.chain_lengths {
        if x < w {
            return len;
        }
        x -= w;
    }
    cfg.chain_lengths.last().unwrap().0
}

fn build_doc(plan: &DocPlan, vocab: &Vocab, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Built> {
    use EntityType::{Drug, Gene, Mutation};
    let si = plan.split as usize;
    let d = vocab.drugs[plan.drug].as_str();
    let c = vocab.classes[vocab.drug_class[plan.drug]].as_str();
    let (m, gi) = (&vocab.mutations[si][plan.mutation].0, vocab.mutations[si][plan.mutation].1);
    let g = vocab.genes[gi].as_str();
    let d2 = vocab.drugs[plan.decoy_drug].as_str();
    let c2 = vocab.classes[vocab.drug_class[plan.decoy_drug]].as_str();
    let bind = |extra: &[(&'static str, EntityType, &str)]| -> Vec<(&'static str, EntityType, String)> {
        let mut v = vec![("D", Drug, d.to_string()), ("C", Gene, c.to_string()), ("M", Mutation, m.clone()), ("G", Gene, g.to_string())];
        v.extend(extra.iter().map(|(k, t, n)| (*k, t.clone(), n.to_string())));
        v
    };
    let mut extra = vec![("D2", Drug, d2), ("C2", Gene, c2)];
    let decoy_mut = plan.decoy_mutation.map(|i| {
        let (name, gene) = &vocab.mutations[si][i];
        (name.clone(), vocab.genes[*gene].clone())
    });
    if let Some((m2, g2)) = &decoy_mut {
        extra.push(("M2", Mutation, m2.as_str()));
        extra.push(("G2", Gene, g2.as_str()));
    }
    // A class that is neither the drug's nor the decoy's, for broken patterns.
    let other_class = (0..vocab.classes.len())
        .map(|k| (vocab.drug_class[plan.drug] + 1 + k) % vocab.classes.len())
        .find(|&k| k != vocab.drug_class[plan.decoy_drug] && k != vocab.drug_class[plan.drug])
        .expect("at least three classes");
    let c3 = vocab.classes[other_class].as_str();
    extra.push(("C3", Gene, c3));
    let binding = bind(&extra);
    let b: Vec<(&str, EntityType, &str)> = binding.iter().map(|(k, t, n)| (*k, t.clone(), n.as_str())).collect();

    let mut bld = Builder::default();
    let mut ordered: Vec<Vec<Sent>> = Vec::new();
    let mut free: Vec<Vec<Sent>> = Vec::new();
    let mut drug_chain = Vec::new();
    let mut mutation_chain = Vec::new();
    let (drug_mention, mutation_mention, drug_slot, mutation_slot);

    if plan.cross {
        let alias = rng.gen_bool(cfg.alias_rate);
        let (s, h) = if alias {
            bld.sent("{D} ( [ {C} inhibitor ] ) was administered daily .", &b, Some("drug_intro"))
        } else if rng.gen_bool(0.5) {
            bld.sent("{D} , a [ {C} inhibitor ] , was tested in this study .", &b, Some("drug_intro"))
        } else {
            bld.sent("{D} , a selective [ {C} inhibitor ] , was given orally .", &b, Some("drug_intro"))
        };
        let (hd, h_np_a) = (h[0], h[1]);
        let mut par_a = vec![s];
        if rng.gen_bool(cfg.copula_rate) {
            par_a.push(bld.sent("{D} is a [ {C} inhibitor ] .", &b, None).0);
        }
        ordered.push(par_a);
        drug_chain.push((hd, h_np_a, LinkKind::Isa));
        let mut last = h_np_a;
        for step in 0..plan.chain_len - 2 {
            let (s, h) = if step == 0 {
                bld.sent("[ {C} inhibitors ] have shown activity in several tumor types .", &b, None)
            } else {
                bld.sent("responses to [ {C} inhibitors ] were durable .", &b, None)
            };
            ordered.push(vec![s]);
            drug_chain.push((last, h[0], if step == 0 { LinkKind::Resolve } else { LinkKind::Coref }));
            last = h[0];
        }
        let appositive = rng.gen_bool(0.5);
        let (s, h) = if appositive {
            bld.sent("{M} , a [ {G} mutation ] , was detected in this tumor .", &b, Some("gene_sentence"))
        } else {
            bld.sent("{M} is a [ {G} mutation ] .", &b, Some("gene_sentence"))
        };
        let (hm, h_np_b) = (h[0], h[1]);
        let mut par_b = vec![s];
        if appositive && rng.gen_bool(cfg.copula_rate) {
            par_b.push(bld.sent("{M} is a [ {G} mutation ] .", &b, None).0);
        }
        ordered.push(par_b);
        mutation_chain.push((hm, h_np_b, LinkKind::Isa));
        let class = if plan.planted { "C" } else { "C3" };
        let rel = if rng.gen_bool(0.5) {
            format!("cells with [ {{G}} mutants ] were sensitive to [ {{{class}}} inhibitors ] .")
        } else {
            format!("tumors harboring [ {{G}} mutants ] were sensitive to [ {{{class}}} inhibitors ] .")
        };
        let (s, h) = bld.sent(&rel, &b, Some("relation"));
        let (h_mut_slot, h_drug_slot) = (h[0], h[2]);
        ordered.push(vec![s]);
        mutation_chain.push((h_np_b, h_mut_slot, LinkKind::Resolve));
        let kind = if plan.chain_len == 2 { LinkKind::Resolve } else { LinkKind::Coref };
        drug_chain.push((last, h_drug_slot, kind));
        drug_mention = hd;
        mutation_mention = hm;
        drug_slot = h_drug_slot;
        mutation_slot = h_mut_slot;
        if rng.gen_bool(cfg.repeat_rate) {
            free.push(vec![bld.sent("[ {G} mutation ] status was determined by sequencing .", &b, None).0]);
        }
        if rng.gen_bool(cfg.repeat_rate) {
            free.push(vec![bld.sent("[ {C} inhibitor ] exposure was well tolerated .", &b, None).0]);
        }
    } else {
        let verb = if plan.planted { "sensitive" } else { "resistant" };
        let t = if rng.gen_bool(0.5) {
            format!("{{G}} {{M}} tumors were {verb} to {{D}} .")
        } else {
            format!("cells harboring {{G}} {{M}} were {verb} to {{D}} .")
        };
        let (s, h) = bld.sent(&t, &b, Some("relation"));
        ordered.push(vec![s]);
        drug_mention = h[2];
        mutation_mention = h[1];
        drug_slot = h[2];
        mutation_slot = h[1];
        if rng.gen_bool(cfg.copula_rate) {
            free.push(vec![bld.sent("{M} is a [ {G} mutation ] .", &b, None).0]);
        }
        if rng.gen_bool(cfg.copula_rate) {
            free.push(vec![bld.sent("{D} , a [ {C} inhibitor ] , was tested in this study .", &b, None).0]);
        }
    }

    free.push(vec![bld.sent("{D2} , a [ {C2} inhibitor ] , was tested in this study .", &b, None).0]);
    if decoy_mut.is_some() {
        free.push(vec![bld.sent("{M2} is a [ {G2} mutation ] .", &b, None).0]);
    }
    let mut loose: Vec<Sent> = Vec::new();
    if plan.cross && rng.gen_bool(cfg.distractor_rate) {
        loose.push(bld.sent("[ {C2} inhibitors ] and [ {G} mutants ] were listed in separate tables .", &b, None).0);
    }
    if rng.gen_bool(cfg.distractor_rate) {
        let mut pairs = vec![("D2", "M")];
        if decoy_mut.is_some() {
            pairs.push(("D", "M2"));
            pairs.push(("D2", "M2"));
        }
        let (x, y) = *pairs.choose(rng).unwrap();
        let t = [
            "{X} and {Y} were listed in separate tables .",
            "{Y} was not evaluated in the {X} cohort .",
            "the {X} trial excluded patients with {Y} .",
        ]
        .choose(rng)
        .unwrap()
        .replace('X', x)
        .replace('Y', y);
        loose.push(bld.sent(&t, &b, None).0);
    }

    // Layout: chain paragraphs keep their order at random positions; the
    // rest fill the remaining slots.
    let total = cfg.paragraphs.max(ordered.len());
    free.shuffle(rng);
    while ordered.len() + free.len() > total {
        let extra = free.pop().unwrap();
        if free.is_empty() {
            let k = rng.gen_range(0..ordered.len() - 1);
            ordered[k].extend(extra);
        } else {
            let k = rng.gen_range(0..free.len());
            free[k].extend(extra);
        }
    }
    while ordered.len() + free.len() < total {
        free.push(Vec::new());
    }
    let mut slots: Vec<usize> = (0..total).collect();
    slots.shuffle(rng);
    let mut chain_slots: Vec<usize> = slots[..ordered.len()].to_vec();
    chain_slots.sort_unstable();
    let mut paragraphs: Vec<Vec<Sent>> = vec![Vec::new(); total];
    let mut is_chain = vec![false; total];
    for (par, &slot) in ordered.into_iter().zip(&chain_slots) {
        paragraphs[slot] = par;
        is_chain[slot] = true;
    }
    let mut rest = free.into_iter();
    for (slot, par) in paragraphs.iter_mut().enumerate() {
        if !is_chain[slot] {
            *par = rest.next().unwrap();
        }
    }
    let relation_par = paragraphs
        .iter()
        .position(|p| p.iter().any(|s| s.tag == Some("relation")))
        .unwrap();
    for s in loose {
        let choices: Vec<usize> = (0..total).filter(|&p| p != relation_par).collect();
        let p = *choices.choose(rng).unwrap();
        let at = rng.gen_range(0..=paragraphs[p].len());
        paragraphs[p].insert(at, s);
    }
    for (p, par) in paragraphs.iter_mut().enumerate() {
        let min = usize::from(par.is_empty() || p == relation_par);
        let n = rng.gen_range(min..=cfg.max_fillers.max(min));
        for _ in 0..n {
            let at = rng.gen_range(0..=par.len());
            par.insert(at, bld.filler(rng));
        }
    }

    let (doc, ids) = assemble(&plan.id, &paragraphs)?;
    let link = |(f, t, kind): (usize, usize, LinkKind)| PlantedLink {
        from: ids[&f].clone(),
        to: ids[&t].clone(),
        kind,
    };
    let relation_sentence = locate(&paragraphs, "relation").unwrap();
    let certificate = plan.planted.then(|| Certificate {
        doc: plan.id.clone(),
        split: plan.split,
        drug: d.to_string(),
        gene: g.to_string(),
        mutation: m.clone(),
        cross_paragraph: plan.cross,
        relation_sentence,
        gene_sentence: locate(&paragraphs, "gene_sentence").unwrap_or(relation_sentence),
        drug_chain: drug_chain.into_iter().map(link).collect(),
        mutation_chain: mutation_chain.into_iter().map(link).collect(),
        drug_mention: ids[&drug_mention].clone(),
        mutation_mention: ids[&mutation_mention].clone(),
        drug_slot: ids[&drug_slot].clone(),
        mutation_slot: ids[&mutation_slot].clone(),
    });

    let where_ = layout_paragraphs(&paragraphs);
    let mut drugs = vec![d.to_string(), d2.to_string()];
    drugs.dedup();
    let mut muts = vec![(m.clone(), g.to_string())];
    if let Some(x) = &decoy_mut {
        muts.push(x.clone());
    }
    let mut gold = Vec::new();
    let mut hard = Vec::new();
    for dn in &drugs {
        for (mn, gn) in &muts {
            let label = if plan.planted && dn == d && mn == m { Label::Pos } else { Label::Neg };
            gold.push(GoldEntry {
                key: TupleKey {
                    doc: plan.id.clone(),
                    drug: dn.clone(),
                    gene: gn.clone(),
                    mutation: mn.clone(),
                },
                label,
            });
            let dp = &where_[&(Drug, dn.clone())];
            let mp = &where_[&(Mutation, mn.clone())];
            hard.push(dp.is_disjoint(mp));
        }
    }
    Ok(Built {
        doc,
        certificate,
        gold,
        hard,
    })
}

/// Draws the whole synthetic dataset. Deterministic in `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = Vocab::draw(cfg, &mut rng)?;

    // Plan the main pairs first so decoys can avoid every planted pair.
    let mut plans = Vec::new();
    let mut planted_pairs: BTreeSet<(usize, usize, Split)> = BTreeSet::new();
    for (split, n, prefix) in [(Split::Train, cfg.num_docs, "train"), (Split::Test, cfg.num_test_docs, "test")] {
        for i in 0..n {
            let drug = rng.gen_range(0..cfg.drugs);
            let mutation = rng.gen_range(0..cfg.mutations);
            let planted = rng.gen_bool(cfg.relation_rate);
            let cross = rng.gen_bool(cfg.cross_paragraph_fraction);
            let chain_len = if cross { pick_chain_len(cfg, &mut rng) } else { 2 };
            if planted {
                planted_pairs.insert((drug, mutation, split));
            }
            plans.push(DocPlan {
                id: format!("{prefix}-{i:04}"),
                split,
                drug,
                mutation,
                planted,
                cross,
                chain_len,
                decoy_drug: 0,
                decoy_mutation: None,
            });
        }
    }
    for plan in &mut plans {
        let class = vocab.drug_class[plan.drug];
        let mut candidates: Vec<usize> = (0..cfg.drugs)
            .filter(|&x| vocab.drug_class[x] != class && !planted_pairs.contains(&(x, plan.mutation, plan.split)))
            .collect();
        if candidates.is_empty() {
            candidates = (0..cfg.drugs).filter(|&x| vocab.drug_class[x] != class).collect();
        }
        plan.decoy_drug = *candidates.choose(&mut rng).unwrap();
        if rng.gen_bool(cfg.decoy_mutation_rate) {
            let si = plan.split as usize;
            let gene = vocab.mutations[si][plan.mutation].1;
            let options: Vec<usize> = (0..cfg.mutations)
                .filter(|&x| {
                    vocab.mutations[si][x].1 != gene
                        && !planted_pairs.contains(&(plan.drug, x, plan.split))
                        && !planted_pairs.contains(&(plan.decoy_drug, x, plan.split))
                })
                .collect();
            plan.decoy_mutation = options.choose(&mut rng).copied();
        }
    }

    let mut out = SynthOutput {
        train: Vec::new(),
        test: Vec::new(),
        kb: KnowledgeBase::new(),
        gold: GoldSet::default(),
        queries: Vec::new(),
        certificates: Vec::new(),
        summary: SynthSummary::default(),
    };
    let mut gold = Vec::new();
    for plan in &plans {
        let built = build_doc(plan, &vocab, cfg, &mut rng)?;
        match plan.split {
            Split::Train => {
                if let Some(c) = &built.certificate {
                    out.kb.insert(RELATION, &[&c.drug, &c.gene, &c.mutation])?;
                }
                out.train.push(built.doc);
            }
            Split::Test => {
                for (e, h) in built.gold.iter().zip(&built.hard) {
                    if *h {
                        out.summary.hard_candidates += 1;
                        out.summary.hard_positives += usize::from(e.label == Label::Pos);
                    }
                }
                gold.extend(built.gold);
                out.test.push(built.doc);
            }
        }
        out.certificates.extend(built.certificate);
    }
    out.queries = gold.iter().map(|e| e.key.clone()).collect();
    out.gold = GoldSet::new(gold)?;
    out.summary.train_docs = out.train.len();
    out.summary.test_docs = out.test.len();
    out.summary.kb_facts = out.kb.len();
    out.summary.gold_entries = out.gold.len();
    out.summary.gold_positives = out.gold.positives();
    out.summary.planted_links = out.certificates.iter().map(|c| c.links().count()).sum();
    Ok(out)
}

/// File names written by [`write_outputs`].
pub const FILES: [&str; 7] = [
    "train.jsonl",
    "test.jsonl",
    "kb.jsonl",
    "gold.jsonl",
    "queries.jsonl",
    "certificates.jsonl",
    "summary.json",
];

pub fn write_outputs(dir: impl AsRef<Path>, out: &SynthOutput) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_corpus(dir.join("train.jsonl"), &out.train)?;
    write_corpus(dir.join("test.jsonl"), &out.test)?;
    write_kb(dir.join("kb.jsonl"), &out.kb)?;
    write_gold(dir.join("gold.jsonl"), &out.gold)?;
    write_jsonl(dir.join("queries.jsonl"), &out.queries)?;
    write_jsonl(dir.join("certificates.jsonl"), &out.certificates)?;
    let summary = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&out.summary)? + "\n";
    fs::write(&summary, text).map_err(|e| Error::io(summary, e))
}

pub fn load_certificates(path: impl AsRef<Path>) -> Result<Vec<Certificate>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Planted links (of certificates whose document is in `closed`) that the
/// closed graphs contain: Coref links as Coref, the rest as Resolve.
pub fn planted_link_recall(certificates: &[Certificate], closed: &BTreeMap<String, ResolutionGraph>) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for c in certificates {
        let Some(g) = closed.get(&c.doc) else {
            continue;
        };
        for l in c.links() {
            total += 1;
            let kind = if l.kind == LinkKind::Coref { LinkKind::Coref } else { LinkKind::Resolve };
            hits += usize::from(g.contains(&l.from, &l.to, kind));
        }
    }
    (hits, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_docs: 20,
            num_test_docs: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        let text = |o: &SynthOutput| o.train.iter().chain(&o.test).map(|d| serde_json::to_string(&d.to_raw()).unwrap()).collect::<Vec<_>>();
        assert_eq!(text(&a), text(&b));
        assert_eq!(a.certificates, b.certificates);
    }

    #[test]
    fn certificates_replay() {
        let out = generate(&small()).unwrap();
        let docs: HashMap<&str, &Document> = out.train.iter().chain(&out.test).map(|d| (d.id.as_str(), d)).collect();
        assert!(!out.certificates.is_empty());
        for c in &out.certificates {
            c.replay(docs[c.doc.as_str()]).unwrap();
        }
    }

    #[test]
    fn infeasible_chain_rejected() {
        let cfg = SynthConfig {
            paragraphs: 3,
            chain_lengths: vec![(3, 1.0)],
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn kb_and_gold_are_disjoint() {
        let out = generate(&small()).unwrap();
        for e in out.gold.entries() {
            assert!(!out.kb.contains(RELATION, &[&e.key.drug, &e.key.gene, &e.key.mutation]));
        }
    }
}
