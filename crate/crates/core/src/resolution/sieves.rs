//! Seed rules, distant-supervision link expansion, and the ordered sieve pass.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::pair::relevant_pairs;
use super::{LinkKey, LinkKind, PairScoring, Provenance, ResolutionGraph, ResolutionLink};
use crate::corpus::{Document, Mention};
use crate::error::{Error, Result};

const APPOSITION_MODIFIERS: usize = 3;

/// Grouping key for distant supervision: the linked entity, or the
/// lowercased surface for unlinked phrases.
pub fn mention_key(m: &Mention) -> String {
    match &m.entity {
        Some(e) => format!("e:{e}"),
        None => format!("np:{}", m.normalized_surface()),
    }
}

/// Mentions not nested strictly inside another mention of the same sentence.
fn maximal<'a>(doc: &'a Document, m: &'a Mention) -> bool {
    !doc.mentions_in(m.sentence)
        .iter()
        .any(|&i| doc.mentions[i].strictly_contains(m))
}

fn exact_match(doc: &Document) -> Vec<(usize, usize, LinkKind)> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, m) in doc.mentions.iter().enumerate() {
        groups.entry(m.normalized_surface()).or_default().push(i);
    }
    let mut out = Vec::new();
    for ids in groups.values() {
        for (k, &i) in ids.iter().enumerate() {
            for &j in &ids[k + 1..] {
                if !doc.mentions[i].overlaps(&doc.mentions[j]) {
                    out.push((i, j, LinkKind::Coref));
                }
            }
        }
    }
    out
}

/// Maximal mentions of one sentence keyed by (start, end).
fn spans(doc: &Document, m: &Mention) -> BTreeMap<(usize, usize), usize> {
    doc.mentions_in(m.sentence)
        .iter()
        .filter(|&&i| maximal(doc, &doc.mentions[i]))
        .map(|&i| (doc.mentions[i].token_span, i))
        .collect()
}

/// `X ( Y )` inside one sentence gives ISA(X, Y).
fn alias(doc: &Document) -> Vec<(usize, usize, LinkKind)> {
    let mut out = Vec::new();
    for (i, x) in doc.mentions.iter().enumerate() {
        if !maximal(doc, x) {
            continue;
        }
        let toks = &doc.sentence(x.sentence).tokens;
        let t = x.token_span.1;
        if toks.get(t).map(String::as_str) != Some("(") {
            continue;
        }
        for ((s, e), j) in spans(doc, x) {
            if s == t + 1 && toks.get(e).map(String::as_str) == Some(")") {
                out.push((i, j, LinkKind::Isa));
            }
        }
    }
    out
}

/// `X , a|an [up to three modifiers] Y` gives ISA(X, Y) for the nearest Y.
fn apposition(doc: &Document) -> Vec<(usize, usize, LinkKind)> {
    let mut out = Vec::new();
    for (i, x) in doc.mentions.iter().enumerate() {
        if !maximal(doc, x) {
            continue;
        }
        let toks = &doc.sentence(x.sentence).tokens;
        let t = x.token_span.1;
        if toks.get(t).map(String::as_str) != Some(",") {
            continue;
        }
        let article = toks.get(t + 1).map(|a| a.to_lowercase());
        if !matches!(article.as_deref(), Some("a") | Some("an")) {
            continue;
        }
        let spans = spans(doc, x);
        let first = t + 2;
        let found = spans.iter().find(|((s, _), _)| {
            *s >= first
                && *s <= first + APPOSITION_MODIFIERS
                && !toks[first..*s].iter().any(|w| w == "," || w == ".")
        });
        if let Some((_, &j)) = found {
            out.push((i, j, LinkKind::Isa));
        }
    }
    out
}

fn to_links(
    doc: &Document,
    raw: Vec<(usize, usize, LinkKind)>,
    provenance: impl Fn() -> Provenance,
    symmetric_coref: bool,
) -> Vec<ResolutionLink> {
    let mut out: BTreeMap<LinkKey, ResolutionLink> = BTreeMap::new();
    for (i, j, kind) in raw {
        let l = ResolutionLink::new(doc.mentions[i].id.clone(), doc.mentions[j].id.clone(), kind, 1.0, provenance());
        if symmetric_coref && kind == LinkKind::Coref {
            let r = l.reversed();
            out.entry(r.key()).or_insert(r);
        }
        out.entry(l.key()).or_insert(l);
    }
    out.into_values().collect()
}

/// High-precision seed links: Coref between surface-identical mentions (both
/// directions), ISA from parenthetical aliases and appositions.
pub fn seed_links(doc: &Document) -> Vec<ResolutionLink> {
    let mut out: BTreeMap<LinkKey, ResolutionLink> = BTreeMap::new();
    for (name, raw) in [
        ("exact_match", exact_match(doc)),
        ("alias", alias(doc)),
        ("apposition", apposition(doc)),
    ] {
        for l in to_links(doc, raw, || Provenance::SeedRule { name: name.into() }, true) {
            out.entry(l.key()).or_insert(l);
        }
    }
    out.into_values().collect()
}

/// For every existing link, adds a link of the same kind between each other
/// mention pair with the same grouping keys that shares a sentence.
/// Closure-derived links do not trigger expansion.
pub fn ds_links(existing: &[ResolutionLink], doc: &Document) -> Vec<ResolutionLink> {
    let have: BTreeSet<LinkKey> = existing.iter().map(|l| l.key()).collect();
    let mut triggers: BTreeMap<(String, String, LinkKind), &ResolutionLink> = BTreeMap::new();
    let mut sorted: Vec<&ResolutionLink> = existing.iter().filter(|l| !l.provenance.is_closure()).collect();
    sorted.sort_by(|a, b| a.key().cmp(&b.key()));
    for l in sorted {
        let (Some(a), Some(b)) = (doc.mention(&l.from), doc.mention(&l.to)) else {
            continue;
        };
        triggers.entry((mention_key(a), mention_key(b), l.kind)).or_insert(l);
    }
    let mut out: BTreeMap<LinkKey, ResolutionLink> = BTreeMap::new();
    for at in doc.sentence_refs() {
        let ms = doc.mentions_in(at);
        for &i in ms {
            for &j in ms {
                let (x, y) = (&doc.mentions[i], &doc.mentions[j]);
                if i == j || x.overlaps(y) {
                    continue;
                }
                let (kx, ky) = (mention_key(x), mention_key(y));
                for kind in [LinkKind::Coref, LinkKind::Isa, LinkKind::PartOf, LinkKind::Resolve] {
                    let Some(t) = triggers.get(&(kx.clone(), ky.clone(), kind)) else {
                        continue;
                    };
                    let key = LinkKey::new(x.id.clone(), y.id.clone(), kind);
                    if have.contains(&key) || out.contains_key(&key) {
                        continue;
                    }
                    out.insert(
                        key,
                        ResolutionLink::new(
                            x.id.clone(),
                            y.id.clone(),
                            kind,
                            t.confidence,
                            Provenance::DistantSupervision { trigger: t.key() },
                        ),
                    );
                }
            }
        }
    }
    out.into_values().collect()
}

/// One tier of the resolution pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sieve", rename_all = "snake_case")]
pub enum Sieve {
    ExactMatch,
    Alias,
    Apposition,
    /// Resolve(m, n) when the best score between any mention Coref-linked to
    /// `m` (or `m` itself) and `n` reaches `threshold`.
    Learned { threshold: f64 },
}

impl Sieve {
    pub fn default_order(threshold: f64) -> Vec<Sieve> {
        vec![Sieve::ExactMatch, Sieve::Alias, Sieve::Apposition, Sieve::Learned { threshold }]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Sieve::ExactMatch => "exact_match",
            Sieve::Alias => "alias",
            Sieve::Apposition => "apposition",
            Sieve::Learned { .. } => "learned",
        }
    }

    pub fn apply(&self, doc: &Document, graph: &ResolutionGraph, scorer: Option<&dyn PairScoring>) -> Result<Vec<ResolutionLink>> {
        let prov = || Provenance::Sieve { name: self.name().into() };
        let raw = match self {
            Sieve::ExactMatch => exact_match(doc),
            Sieve::Alias => alias(doc),
            Sieve::Apposition => apposition(doc),
            Sieve::Learned { threshold } => {
                let scorer = scorer.ok_or_else(|| Error::Config("the learned sieve needs a pair scorer".into()))?;
                let mut out = Vec::new();
                for (i, j) in relevant_pairs(doc) {
                    let (m, n) = (&doc.mentions[i], &doc.mentions[j]);
                    if graph.linked(&m.id, &n.id) {
                        continue;
                    }
                    let mut best = f64::NEG_INFINITY;
                    for c in graph.coref_cluster(&m.id) {
                        let cm = doc.require_mention(&c)?;
                        if c == n.id || cm.overlaps(n) {
                            continue;
                        }
                        best = best.max(scorer.score_pair(doc, &c, &n.id)?);
                    }
                    if best >= *threshold {
                        out.push(ResolutionLink::new(m.id.clone(), n.id.clone(), LinkKind::Resolve, best, prov()));
                    }
                }
                return Ok(out);
            }
        };
        Ok(to_links(doc, raw, prov, true))
    }
}

/// Applies sieves in order; each sieve sees every link its predecessors added.
pub fn run_sieves(doc: &Document, sieves: &[Sieve], scorer: Option<&dyn PairScoring>) -> Result<ResolutionGraph> {
    if sieves.is_empty() {
        return Err(Error::Config("no sieves configured".into()));
    }
    if scorer.is_none() && sieves.iter().any(|s| matches!(s, Sieve::Learned { .. })) {
        return Err(Error::Config("the learned sieve needs a pair scorer".into()));
    }
    let mut g = ResolutionGraph::new(doc);
    for s in sieves {
        let links = s.apply(doc, &g, scorer)?;
        g.extend(links)?;
    }
    Ok(g)
}
