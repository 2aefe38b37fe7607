//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use docrel::corpus::{Document, EntityType, MentionKind, RawDocument, RawEntity, RawMention, RawParagraph, RawSentence};
use docrel::learning::{Factor, FactorGraph};
use docrel::resolution::{LinkKey, LinkKind, Provenance, ResolutionGraph, ResolutionLink};
use docrel::supervision::KnowledgeBase;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Documents

pub const DRUGS: [&str; 4] = ["alphanib", "betanib", "gammanib", "deltanib"];
pub const GENES: [&str; 3] = ["GENA", "GENB", "GENC"];
pub const MUTATIONS: [&str; 4] = ["A1B", "C2D", "E3F", "G4H"];

/// A random document: 1-4 paragraphs of 1-4 sentences, named mentions of
/// drugs, genes and mutations as single tokens, and two-token noun phrases
/// that sometimes wrap a named mention.
pub fn random_document(id: &str, r: &mut impl Rng) -> Document {
    let mut paragraphs = Vec::new();
    let mut mentions = Vec::new();
    let mut entity_mentions: BTreeMap<(usize, usize), Vec<String>> = BTreeMap::new();
    let pools: [(usize, &[&str]); 3] = [(0, &DRUGS), (1, &GENES), (2, &MUTATIONS)];
    let mut next = 0;
    for p in 0..r.gen_range(1..=4) {
        let mut sentences = Vec::new();
        for s in 0..r.gen_range(1..=4) {
            let n = r.gen_range(3..=9);
            let mut tokens: Vec<String> = (0..n).map(|i| format!("w{}", (i * 7 + s + p) % 11)).collect();
            let mut used = BTreeSet::new();
            let named_here = r.gen_range(0..=3.min(n - 1));
            let mut named_pos = Vec::new();
            for _ in 0..named_here {
                let t = r.gen_range(0..n - 1);
                if !used.insert(t) {
                    continue;
                }
                let (ty, pool) = pools[r.gen_range(0..3)];
                let e = r.gen_range(0..pool.len());
                tokens[t] = pool[e].to_string();
                let mid = format!("m{next}");
                next += 1;
                mentions.push(RawMention { id: mid.clone(), entity: Some(format!("e{ty}_{e}")), kind: MentionKind::NamedEntity, p, s, t0: t, t1: t + 1 });
                entity_mentions.entry((ty, e)).or_default().push(mid);
                named_pos.push(t);
            }
            if r.gen_bool(0.6) {
                let t0 = match named_pos.choose(r) {
                    Some(&t) if r.gen_bool(0.7) => t,
                    _ => r.gen_range(0..n - 1),
                };
                let t1 = (t0 + 2).min(n);
                if t1 > t0 + 1 && !(t0 + 1..t1).any(|t| used.contains(&t)) {
                    mentions.push(RawMention { id: format!("m{next}"), entity: None, kind: MentionKind::CandidateNounPhrase, p, s, t0, t1 });
                    next += 1;
                }
            }
            sentences.push(RawSentence { tokens });
        }
        paragraphs.push(RawParagraph { sentences });
    }
    let types = [EntityType::Drug, EntityType::Gene, EntityType::Mutation];
    let entities = entity_mentions
        .into_iter()
        .map(|((ty, e), ms)| RawEntity {
            id: format!("e{ty}_{e}"),
            entity_type: types[ty].clone(),
            name: pools[ty].1[e].to_string(),
            mentions: ms,
        })
        .collect();
    Document::from_raw(RawDocument { id: id.into(), paragraphs, entities, mentions }).expect("generated document is valid")
}

pub fn random_corpus(n: usize, seed: u64) -> Vec<Document> {
    let mut r = rng(seed);
    (0..n).map(|i| random_document(&format!("doc{i:04}"), &mut r)).collect()
}

/// A KB holding each (drug, gene, mutation) combination with probability `p`.
pub fn random_kb(p: f64, seed: u64) -> KnowledgeBase {
    let mut r = rng(seed);
    let mut kb = KnowledgeBase::new();
    for d in DRUGS {
        for g in GENES {
            for m in MUTATIONS {
                if r.gen_bool(p) {
                    kb.insert("sensitivity", &[d, g, m]).unwrap();
                }
            }
        }
    }
    kb
}

// ---------------------------------------------------------------------------
// Resolution graphs

pub fn seed_link(from: &str, to: &str, kind: LinkKind, confidence: f64) -> ResolutionLink {
    ResolutionLink::new(from, to, kind, confidence, Provenance::SeedRule { name: "test".into() })
}

/// Up to `max_nodes` nodes and a random mix of Coref, ISA and PartOf edges
/// (with an occasional stored Resolve edge).
pub fn random_graph(r: &mut impl Rng, max_nodes: usize) -> ResolutionGraph {
    let n = r.gen_range(2..=max_nodes);
    let nodes: Vec<String> = (0..n).map(|i| format!("n{i:02}")).collect();
    let mut g = ResolutionGraph::with_nodes("g".into(), nodes.iter().cloned());
    let edges = r.gen_range(0..=n + n / 2);
    for _ in 0..edges {
        let (a, b) = (r.gen_range(0..n), r.gen_range(0..n));
        if a == b {
            continue;
        }
        let kind = match r.gen_range(0..10) {
            0..=3 => LinkKind::Coref,
            4..=6 => LinkKind::Isa,
            7..=8 => LinkKind::PartOf,
            _ => LinkKind::Resolve,
        };
        let conf = r.gen_range(1..=20) as f64 / 20.0;
        g.add(seed_link(&nodes[a], &nodes[b], kind, conf)).unwrap();
    }
    g
}

/// Least fixed point by naive iteration over all edge pairs until nothing
/// changes.
pub fn closure_oracle(edges: &BTreeSet<LinkKey>) -> BTreeSet<LinkKey> {
    use LinkKind::*;
    let mut s = edges.clone();
    loop {
        let mut add = Vec::new();
        for p in &s {
            match p.kind {
                Coref => {
                    add.push(LinkKey::new(p.to.clone(), p.from.clone(), Coref));
                    add.push(LinkKey::new(p.from.clone(), p.to.clone(), Resolve));
                }
                Isa | PartOf => add.push(LinkKey::new(p.from.clone(), p.to.clone(), Resolve)),
                Resolve => {}
            }
            for q in &s {
                if p.kind == Coref && q.kind == Coref && p.to == q.from {
                    add.push(LinkKey::new(p.from.clone(), q.to.clone(), Coref));
                }
                if p.kind == Resolve && q.kind == Resolve && p.to == q.from {
                    add.push(LinkKey::new(p.from.clone(), q.to.clone(), Resolve));
                }
                if p.kind == Resolve && q.kind == Coref && q.to == p.to {
                    add.push(LinkKey::new(p.from.clone(), q.from.clone(), Resolve));
                }
            }
        }
        let before = s.len();
        s.extend(add.into_iter().filter(|k| k.from != k.to));
        if s.len() == before {
            return s;
        }
    }
}

// ---------------------------------------------------------------------------
// Factor graphs

/// Random binary factor graph over `n` variables: a unary factor on each,
/// random positive pairwise and triple tables, and some hard implications
/// (always satisfiable by the all-true assignment).
pub fn random_factor_graph(r: &mut impl Rng, n: usize) -> FactorGraph {
    let mut g = FactorGraph::new();
    for i in 0..n {
        g.add_var(format!("v{i}"));
    }
    for i in 0..n {
        g.add_factor(Factor::unary(format!("u{i}"), i, r.gen_range(0.05..0.95)));
    }
    if n >= 2 {
        for k in 0..r.gen_range(0..=n) {
            let mut vars: Vec<usize> = (0..n).collect();
            vars.shuffle(r);
            let arity = if n >= 3 && r.gen_bool(0.3) { 3 } else { 2 };
            vars.truncate(arity);
            match r.gen_range(0..4) {
                0 => g.add_factor(Factor::implication(format!("imp{k}"), &vars[..arity - 1], vars[arity - 1])),
                1 => g.add_factor(Factor::soft_implication(format!("soft{k}"), &vars[..arity - 1], vars[arity - 1], r.gen_range(0.0..1.0))),
                _ => {
                    let table = (0..1 << arity).map(|_| r.gen_range(0.1..3.0)).collect();
                    g.add_factor(Factor::table(format!("t{k}"), vars, table));
                }
            }
        }
    }
    g
}

/// Random tree-structured graph: unary factors plus one pairwise factor per
/// tree edge.
pub fn random_tree_factor_graph(r: &mut impl Rng, n: usize) -> FactorGraph {
    let mut g = FactorGraph::new();
    for i in 0..n {
        g.add_var(format!("v{i}"));
        g.add_factor(Factor::unary(format!("u{i}"), i, r.gen_range(0.05..0.95)));
    }
    for i in 1..n {
        let parent = r.gen_range(0..i);
        let table = (0..4).map(|_| r.gen_range(0.1..3.0)).collect();
        g.add_factor(Factor::table(format!("e{i}"), vec![parent, i], table));
    }
    g
}

/// Marginals by summing the factor product over every assignment. Tables
/// are indexed with bit `i` holding the value of the factor's `i`-th
/// variable.
pub fn brute_marginals(g: &FactorGraph) -> Vec<f64> {
    let n = g.num_vars();
    let mut z = 0.0;
    let mut on = vec![0.0; n];
    for a in 0u64..1 << n {
        let mut w = 1.0;
        for f in &g.factors {
            let idx = f.vars.iter().enumerate().fold(0usize, |acc, (i, &v)| acc | (((a >> v) & 1) as usize) << i);
            w *= f.table[idx];
        }
        z += w;
        for (v, t) in on.iter_mut().enumerate() {
            if a >> v & 1 == 1 {
                *t += w;
            }
        }
    }
    on.into_iter().map(|t| t / z).collect()
}
