//! Least fixed point of the resolution graph under the reasoning rules,
//! computed with a FIFO worklist so each derived edge records the rule and
//! premises that first produced it.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{LinkKey, LinkKind, Provenance, ResolutionGraph, ResolutionLink};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureRule {
    /// Coref(a,b) -> Coref(b,a)
    CorefSymmetry,
    /// Coref(a,b) & Coref(b,c) -> Coref(a,c)
    CorefTransitivity,
    /// Coref(a,b) | ISA(a,b) | PartOf(a,b) -> Resolve(a,b)
    ImpliesResolve,
    /// Resolve(a,b) & Resolve(b,c) -> Resolve(a,c)
    ResolveTransitivity,
    /// Resolve(a,b) & Coref(c,b) -> Resolve(a,c)
    CorefSubstitution,
}

impl ClosureRule {
    pub const ALL: [ClosureRule; 5] = [
        ClosureRule::CorefSymmetry,
        ClosureRule::CorefTransitivity,
        ClosureRule::ImpliesResolve,
        ClosureRule::ResolveTransitivity,
        ClosureRule::CorefSubstitution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClosureRule::CorefSymmetry => "coref_symmetry",
            ClosureRule::CorefTransitivity => "coref_transitivity",
            ClosureRule::ImpliesResolve => "implies_resolve",
            ClosureRule::ResolveTransitivity => "resolve_transitivity",
            ClosureRule::CorefSubstitution => "coref_substitution",
        }
    }

    /// The edge this rule derives from `premises`, if they match its body.
    pub fn conclude(self, premises: &[LinkKey]) -> Option<LinkKey> {
        use LinkKind::*;
        let out = match (self, premises) {
            (ClosureRule::CorefSymmetry, [p]) if p.kind == Coref => LinkKey::new(p.to.clone(), p.from.clone(), Coref),
            (ClosureRule::ImpliesResolve, [p]) if p.kind != Resolve => {
                LinkKey::new(p.from.clone(), p.to.clone(), Resolve)
            }
            (ClosureRule::CorefTransitivity, [p, q]) if p.kind == Coref && q.kind == Coref && p.to == q.from => {
                LinkKey::new(p.from.clone(), q.to.clone(), Coref)
            }
            (ClosureRule::ResolveTransitivity, [p, q])
                if p.kind == Resolve && q.kind == Resolve && p.to == q.from =>
            {
                LinkKey::new(p.from.clone(), q.to.clone(), Resolve)
            }
            (ClosureRule::CorefSubstitution, [p, q]) if p.kind == Resolve && q.kind == Coref && p.to == q.to => {
                LinkKey::new(p.from.clone(), q.from.clone(), Resolve)
            }
            _ => return None,
        };
        (out.from != out.to).then_some(out)
    }
}

impl fmt::Display for ClosureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Default)]
struct Index {
    out: HashMap<(String, LinkKind), BTreeSet<String>>,
    inc: HashMap<(String, LinkKind), BTreeSet<String>>,
}

impl Index {
    fn add(&mut self, k: &LinkKey) {
        self.out
            .entry((k.from.clone(), k.kind))
            .or_default()
            .insert(k.to.clone());
        self.inc
            .entry((k.to.clone(), k.kind))
            .or_default()
            .insert(k.from.clone());
    }

    fn out(&self, node: &str, kind: LinkKind) -> impl Iterator<Item = &String> {
        self.out.get(&(node.to_string(), kind)).into_iter().flatten()
    }

    fn inc(&self, node: &str, kind: LinkKind) -> impl Iterator<Item = &String> {
        self.inc.get(&(node.to_string(), kind)).into_iter().flatten()
    }
}

/// Premise lists for every rule instance in which `k` takes part, given the
/// edges indexed so far.
fn instances(rule: ClosureRule, k: &LinkKey, idx: &Index) -> Vec<Vec<LinkKey>> {
    use LinkKind::*;
    let (a, b) = (k.from.as_str(), k.to.as_str());
    let mut out = Vec::new();
    match rule {
        ClosureRule::CorefSymmetry | ClosureRule::ImpliesResolve => out.push(vec![k.clone()]),
        ClosureRule::CorefTransitivity if k.kind == Coref => {
            for c in idx.out(b, Coref) {
                out.push(vec![k.clone(), LinkKey::new(b, c.clone(), Coref)]);
            }
            for x in idx.inc(a, Coref) {
                out.push(vec![LinkKey::new(x.clone(), a, Coref), k.clone()]);
            }
        }
        ClosureRule::ResolveTransitivity if k.kind == Resolve => {
            for c in idx.out(b, Resolve) {
                out.push(vec![k.clone(), LinkKey::new(b, c.clone(), Resolve)]);
            }
            for x in idx.inc(a, Resolve) {
                out.push(vec![LinkKey::new(x.clone(), a, Resolve), k.clone()]);
            }
        }
        ClosureRule::CorefSubstitution if k.kind == Resolve => {
            for c in idx.inc(b, Coref) {
                out.push(vec![k.clone(), LinkKey::new(c.clone(), b, Coref)]);
            }
        }
        ClosureRule::CorefSubstitution if k.kind == Coref => {
            for x in idx.inc(b, Resolve) {
                out.push(vec![LinkKey::new(x.clone(), b, Resolve), k.clone()]);
            }
        }
        _ => {}
    }
    out
}

/// Closure with rules tried in the default order.
pub fn close_graph(graph: &ResolutionGraph) -> ResolutionGraph {
    close_graph_with(graph, &ClosureRule::ALL)
}

/// Closure trying rules in `order` for each dequeued edge. The edge set of
/// the result does not depend on the order; provenance may.
pub fn close_graph_with(graph: &ResolutionGraph, order: &[ClosureRule]) -> ResolutionGraph {
    let mut out = graph.clone();
    let mut idx = Index::default();
    let mut queue: VecDeque<LinkKey> = graph.keys().cloned().collect();
    for k in graph.keys() {
        idx.add(k);
    }
    while let Some(k) = queue.pop_front() {
        let mut derived = Vec::new();
        for &rule in order {
            for premises in instances(rule, &k, &idx) {
                let Some(head) = rule.conclude(&premises) else {
                    continue;
                };
                if out.get(&head).is_some() {
                    continue;
                }
                let conf = premises
                    .iter()
                    .map(|p| out.get(p).map_or(1.0, |l| l.confidence))
                    .fold(1.0, f64::min);
                derived.push((head, rule, premises, conf));
            }
        }
        for (head, rule, premises, conf) in derived {
            let link = ResolutionLink::new(
                head.from.clone(),
                head.to.clone(),
                head.kind,
                conf,
                Provenance::Closure { rule, premises },
            );
            if out.insert(link).expect("closure edges join existing nodes") {
                idx.add(&head);
                queue.push_back(head);
            }
        }
    }
    out
}

/// Replays one edge's derivation step: closure edges must follow from their
/// premises by the named rule, and every premise must be in the graph.
pub fn verify_provenance(graph: &ResolutionGraph, key: &LinkKey) -> Result<()> {
    let link = graph
        .get(key)
        .ok_or_else(|| Error::Consistency(format!("{key} is not in the graph")))?;
    if let Provenance::Closure { rule, premises } = &link.provenance {
        for p in premises {
            if graph.get(p).is_none() {
                return Err(Error::Consistency(format!("premise {p} of {key} is missing")));
            }
        }
        if rule.conclude(premises).as_ref() != Some(key) {
            return Err(Error::Consistency(format!(
                "{rule} over {premises:?} does not derive {key}"
            )));
        }
    }
    Ok(())
}
