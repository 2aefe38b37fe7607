//! Argument resolution: typed mention-to-mention links, the per-document
//! resolution graph and its closure under the reasoning rules, seed rules,
//! sieves and the learned pairwise scorer.

mod closure;
mod pair;
mod sieves;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, DocumentId, MentionId};
use crate::error::{Error, Result};

pub use closure::{close_graph, close_graph_with, verify_provenance, ClosureRule};
pub use pair::{relevant_pairs, score_pair, PairFeaturizer, PairScorer, PairScoring, PAIR_SCHEMA};
pub use sieves::{ds_links, mention_key, run_sieves, seed_links, Sieve};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Coref,
    Isa,
    PartOf,
    Resolve,
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkKind::Coref => "Coref",
            LinkKind::Isa => "ISA",
            LinkKind::PartOf => "PartOf",
            LinkKind::Resolve => "Resolve",
        })
    }
}

/// Identity of a link: ordered endpoints plus kind.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkKey {
    pub from: MentionId,
    pub to: MentionId,
    pub kind: LinkKind,
}

impl LinkKey {
    pub fn new(from: impl Into<MentionId>, to: impl Into<MentionId>, kind: LinkKind) -> Self {
        LinkKey {
            from: from.into(),
            to: to.into(),
            kind,
        }
    }
}

impl fmt::Display for LinkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {})", self.kind, self.from, self.to)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    SeedRule { name: String },
    Sieve { name: String },
    Learned { iteration: usize },
    DistantSupervision { trigger: LinkKey },
    Closure { rule: ClosureRule, premises: Vec<LinkKey> },
}

impl Provenance {
    pub fn is_closure(&self) -> bool {
        matches!(self, Provenance::Closure { .. })
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::SeedRule { name } => write!(f, "seed rule {name}"),
            Provenance::Sieve { name } => write!(f, "sieve {name}"),
            Provenance::Learned { iteration } => write!(f, "learned at iteration {iteration}"),
            Provenance::DistantSupervision { trigger } => write!(f, "distant supervision from {trigger}"),
            Provenance::Closure { rule, premises } => {
                let p: Vec<String> = premises.iter().map(|k| k.to_string()).collect();
                write!(f, "{rule} over {}", p.join(" + "))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionLink {
    pub from: MentionId,
    pub to: MentionId,
    pub kind: LinkKind,
    pub confidence: f64,
    pub provenance: Provenance,
}

impl ResolutionLink {
    pub fn new(from: impl Into<MentionId>, to: impl Into<MentionId>, kind: LinkKind, confidence: f64, provenance: Provenance) -> Self {
        ResolutionLink {
            from: from.into(),
            to: to.into(),
            kind,
            confidence,
            provenance,
        }
    }

    pub fn key(&self) -> LinkKey {
        LinkKey::new(self.from.clone(), self.to.clone(), self.kind)
    }

    /// The same link with endpoints swapped.
    pub fn reversed(&self) -> Self {
        ResolutionLink {
            from: self.to.clone(),
            to: self.from.clone(),
            ..self.clone()
        }
    }
}

/// Directed, typed links between the mentions of one document. Every new
/// edge bumps `generation`, so results computed against an older state can
/// be detected.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionGraph {
    pub document: DocumentId,
    nodes: BTreeSet<MentionId>,
    edges: BTreeMap<LinkKey, ResolutionLink>,
    generation: u64,
}

impl ResolutionGraph {
    pub fn new(doc: &Document) -> Self {
        Self::with_nodes(doc.id.clone(), doc.mentions.iter().map(|m| m.id.clone()))
    }

    pub fn with_nodes(document: DocumentId, nodes: impl IntoIterator<Item = MentionId>) -> Self {
        ResolutionGraph {
            document,
            nodes: nodes.into_iter().collect(),
            edges: BTreeMap::new(),
            generation: 0,
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn nodes(&self) -> &BTreeSet<MentionId> {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Inserts one directed edge as given. Returns false if the key was
    /// already present (the stored link is kept). Coref self-loops are
    /// dropped silently; other self-loops are rejected.
    pub fn insert(&mut self, link: ResolutionLink) -> Result<bool> {
        for end in [&link.from, &link.to] {
            if !self.nodes.contains(end) {
                return Err(Error::lookup("mention", end.clone()));
            }
        }
        if link.from == link.to {
            if link.kind == LinkKind::Coref {
                return Ok(false);
            }
            return Err(Error::Validation(format!("self-loop {}", link.key())));
        }
        if !(0.0..=1.0).contains(&link.confidence) {
            return Err(Error::Domain(format!("link confidence {}", link.confidence)));
        }
        let key = link.key();
        if self.edges.contains_key(&key) {
            return Ok(false);
        }
        self.edges.insert(key, link);
        self.generation += 1;
        Ok(true)
    }

    /// Inserts a link, storing Coref in both directions. Returns how many
    /// edges were new.
    pub fn add(&mut self, link: ResolutionLink) -> Result<usize> {
        let mut n = 0;
        if link.kind == LinkKind::Coref {
            n += self.insert(link.reversed())? as usize;
        }
        n += self.insert(link)? as usize;
        Ok(n)
    }

    pub fn extend(&mut self, links: impl IntoIterator<Item = ResolutionLink>) -> Result<usize> {
        let mut n = 0;
        for l in links {
            n += self.add(l)?;
        }
        Ok(n)
    }

    pub fn get(&self, key: &LinkKey) -> Option<&ResolutionLink> {
        self.edges.get(key)
    }

    pub fn contains(&self, from: &str, to: &str, kind: LinkKind) -> bool {
        self.edges.contains_key(&LinkKey::new(from, to, kind))
    }

    /// True if any edge of any kind goes from `from` to `to`.
    pub fn linked(&self, from: &str, to: &str) -> bool {
        self.out_edges(from).any(|l| l.to == to)
    }

    pub fn links(&self) -> impl Iterator<Item = &ResolutionLink> {
        self.edges.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &LinkKey> {
        self.edges.keys()
    }

    pub fn out_edges<'a>(&'a self, from: &'a str) -> impl Iterator<Item = &'a ResolutionLink> + 'a {
        let start = LinkKey::new(from, String::new(), LinkKind::Coref);
        self.edges
            .range(start..)
            .take_while(move |(k, _)| k.from == from)
            .map(|(_, l)| l)
    }

    /// Mentions joined to `m` by direct Coref edges, plus `m` itself.
    pub fn coref_cluster(&self, m: &str) -> BTreeSet<MentionId> {
        let mut out: BTreeSet<MentionId> = self
            .out_edges(m)
            .filter(|l| l.kind == LinkKind::Coref)
            .map(|l| l.to.clone())
            .collect();
        out.insert(m.to_string());
        out
    }

    pub fn key_set(&self) -> BTreeSet<LinkKey> {
        self.edges.keys().cloned().collect()
    }

    /// Line-delimited dump in key order.
    pub fn write_dump(&self, mut w: impl Write) -> Result<()> {
        for l in self.links() {
            let rec = GraphDumpRecord {
                doc: self.document.clone(),
                from: l.from.clone(),
                to: l.to.clone(),
                kind: l.kind,
                conf: l.confidence,
                provenance: l.provenance.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io("<graph dump>", e))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDumpRecord {
    pub doc: DocumentId,
    pub from: MentionId,
    pub to: MentionId,
    pub kind: LinkKind,
    pub conf: f64,
    pub provenance: Provenance,
}
