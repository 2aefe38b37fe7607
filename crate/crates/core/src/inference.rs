//! Two-stage document-level inference. Stage 1 builds the resolution graph
//! with the sieves and closes it; stage 2 looks for segments where mentions
//! resolving to each query entity co-occur, scores them with the relation
//! detector and aggregates. Results carry the resolution chains that justify
//! them, and `explain` replays those chains against the graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{enumerate_segments, Document, EntityId, EntityType, Mention, MentionId, MentionKind, SentenceRef};
use crate::error::{Error, Result};
use crate::eval::{Prediction, TupleKey};
use crate::learning::{e_step, BpConfig, Factor, FactorGraph};
use crate::relation::{compose_nary, noisy_or, RelationEvidence, RelationScorer, Role, SubrelationPlan};
use crate::resolution::{
    close_graph, relevant_pairs, run_sieves, verify_provenance, ClosureRule, LinkKey, LinkKind, PairScoring, Provenance,
    ResolutionGraph, ResolutionLink, Sieve,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Positive if any evidence clears the threshold; score is the maximum.
    #[default]
    Existential,
    NoisyOr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub k_max: usize,
    /// Cut-off of the learned sieve.
    pub sieve_threshold: f64,
    pub decision_threshold: f64,
    pub aggregation: Aggregation,
    /// Off: no resolution graph at all, so only named mentions of the query
    /// entities can fill slots (the paragraph-local baseline).
    pub resolution: bool,
    /// Re-score learned links with loopy BP over soft transitivity factors
    /// before the hard closure.
    pub bp_rescoring: bool,
    /// Links below this score get no variable in BP re-scoring.
    pub bp_floor: f64,
    pub bp_penalty: f64,
    pub bp: BpConfig,
    pub plan: SubrelationPlan,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            k_max: 2,
            sieve_threshold: 0.5,
            decision_threshold: 0.5,
            aggregation: Aggregation::Existential,
            resolution: true,
            bp_rescoring: false,
            bp_floor: 0.1,
            bp_penalty: 0.1,
            bp: BpConfig::default(),
            plan: SubrelationPlan::default(),
        }
    }
}

impl ExtractConfig {
    /// Named mentions only, no resolution.
    pub fn local() -> Self {
        ExtractConfig { resolution: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        for (name, v) in [
            ("sieve_threshold", self.sieve_threshold),
            ("decision_threshold", self.decision_threshold),
            ("bp_floor", self.bp_floor),
            ("bp_penalty", self.bp_penalty),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        self.plan.validate()
    }
}

/// The trained components. Without a pair scorer only the rule sieves run.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub relation: &'a dyn RelationScorer,
    pub pair: Option<&'a dyn PairScoring>,
}

/// Resolution steps from a query-entity mention to a slot filler. `links`
/// are the stored (non-derived) edges in path order; `derived` lists every
/// closure edge used to connect them, so the chain can be replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionChain {
    pub role: Role,
    pub source: MentionId,
    pub target: MentionId,
    pub links: Vec<ResolutionLink>,
    pub derived: Vec<LinkKey>,
}

impl ResolutionChain {
    pub fn is_trivial(&self) -> bool {
        self.source == self.target
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub relation: RelationEvidence,
    pub chains: BTreeMap<Role, ResolutionChain>,
}

impl Evidence {
    pub fn score(&self) -> f64 {
        self.relation.score.unwrap_or(0.0)
    }
}

/// Sentence where the augmenting pair of a subrelation co-occurs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub roles: (Role, Role),
    pub sentence: SentenceRef,
    pub mentions: (MentionId, MentionId),
    pub chains: (ResolutionChain, ResolutionChain),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub document: String,
    pub entities: BTreeMap<Role, EntityId>,
    pub decision: bool,
    pub score: f64,
    /// Anchor evidences, best first.
    pub evidences: Vec<Evidence>,
    pub associations: Vec<Association>,
    pub candidates: BTreeMap<Role, Vec<MentionId>>,
    pub graph_generation: u64,
}

impl ExtractionResult {
    pub fn prediction(&self, key: &TupleKey) -> Prediction {
        Prediction {
            key: key.clone(),
            decision: self.decision,
            score: self.score,
        }
    }
}

/// Stage 1 output for one document, shared by all queries on it.
#[derive(Clone, Debug)]
pub struct PreparedDocument<'a> {
    pub doc: &'a Document,
    pub graph: ResolutionGraph,
}

fn rule_sieves() -> Vec<Sieve> {
    vec![Sieve::ExactMatch, Sieve::Alias, Sieve::Apposition]
}

/// Stage 1: sieves, optional BP re-scoring, closure.
pub fn prepare<'a>(doc: &'a Document, models: &Models<'_>, cfg: &ExtractConfig) -> Result<PreparedDocument<'a>> {
    cfg.validate()?;
    if !cfg.resolution {
        return Ok(PreparedDocument {
            doc,
            graph: ResolutionGraph::new(doc),
        });
    }
    let graph = match (models.pair, cfg.bp_rescoring) {
        (Some(pair), true) => {
            let mut g = run_sieves(doc, &rule_sieves(), None)?;
            let extra = bp_rescore(doc, &g, pair, cfg)?;
            g.extend(extra)?;
            g
        }
        (Some(pair), false) => run_sieves(doc, &Sieve::default_order(cfg.sieve_threshold), Some(pair))?,
        (None, _) => run_sieves(doc, &rule_sieves(), None)?,
    };
    Ok(PreparedDocument {
        doc,
        graph: close_graph(&graph),
    })
}

/// Soft joint inference over learned links: one variable per relevant pair
/// scoring at least `bp_floor`, rule links fixed to true, and a soft
/// transitivity factor for every triangle the variables and fixed links form.
fn bp_rescore(doc: &Document, fixed: &ResolutionGraph, pair: &dyn PairScoring, cfg: &ExtractConfig) -> Result<Vec<ResolutionLink>> {
    let closed = close_graph(fixed);
    let mut fg = FactorGraph::new();
    let mut var: BTreeMap<(MentionId, MentionId), usize> = BTreeMap::new();
    for (i, j) in relevant_pairs(doc) {
        let (m, n) = (&doc.mentions[i], &doc.mentions[j]);
        if closed.contains(&m.id, &n.id, LinkKind::Resolve) {
            continue;
        }
        let p = pair.score_pair(doc, &m.id, &n.id)?;
        if p < cfg.bp_floor {
            continue;
        }
        let v = fg.add_var(format!("{}->{}", m.id, n.id));
        fg.add_factor(Factor::unary(format!("psi:{v}"), v, p));
        var.insert((m.id.clone(), n.id.clone()), v);
    }
    enum Edge {
        Fixed,
        Var(usize),
    }
    let edge = |a: &str, b: &str| -> Option<Edge> {
        if closed.contains(a, b, LinkKind::Resolve) {
            Some(Edge::Fixed)
        } else {
            var.get(&(a.to_string(), b.to_string())).map(|&v| Edge::Var(v))
        }
    };
    let mut by_source: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in var.keys() {
        by_source.entry(a.as_str()).or_default().push(b.as_str());
    }
    for l in closed.links().filter(|l| l.kind == LinkKind::Resolve) {
        by_source.entry(l.from.as_str()).or_default().push(l.to.as_str());
    }
    let mut triangles = BTreeSet::new();
    for (&a, mids) in &by_source {
        for &b in mids {
            let Some(next) = by_source.get(b) else { continue };
            for &c in next {
                if c == a {
                    continue;
                }
                let Some(Edge::Var(ac)) = edge(a, c) else { continue };
                let premises: Vec<usize> = [edge(a, b), edge(b, c)]
                    .into_iter()
                    .filter_map(|e| match e {
                        Some(Edge::Var(v)) => Some(v),
                        _ => None,
                    })
                    .collect();
                if premises.is_empty() || !triangles.insert((premises.clone(), ac)) {
                    continue;
                }
                fg.add_factor(Factor::soft_implication(
                    format!("trans:{a}>{b}>{c}"),
                    &premises,
                    ac,
                    cfg.bp_penalty,
                ));
            }
        }
    }
    if fg.num_vars() == 0 {
        return Ok(Vec::new());
    }
    let marg = e_step(&fg, &cfg.bp)?;
    Ok(var
        .into_iter()
        .filter(|&(_, v)| marg.q[v] > cfg.sieve_threshold)
        .map(|((a, b), v)| {
            ResolutionLink::new(a, b, LinkKind::Resolve, marg.q[v], Provenance::Sieve { name: "bp_rescored".into() })
        })
        .collect())
}

fn query_entities(doc: &Document, key: &TupleKey) -> Result<BTreeMap<Role, EntityId>> {
    let mut out = BTreeMap::new();
    for (role, name) in [(Role::DRUG, &key.drug), (Role::GENE, &key.gene), (Role::MUTATION, &key.mutation)] {
        let ty = role.entity_type();
        let e = doc
            .entity_by_name(name, Some(&ty))
            .ok_or_else(|| Error::lookup(entity_kind(&ty), format!("{name} in {}", doc.id)))?;
        if e.mentions.is_empty() {
            return Err(Error::Validation(format!("entity {} has no mentions in {}", e.id, doc.id)));
        }
        out.insert(role, e.id.clone());
    }
    Ok(out)
}

fn entity_kind(ty: &EntityType) -> &'static str {
    match ty {
        EntityType::Drug => "drug",
        EntityType::Gene => "gene",
        EntityType::Mutation => "mutation",
        EntityType::Other(_) => "entity",
    }
}

fn entity_mentions<'d>(doc: &'d Document, entity: &str) -> Vec<&'d Mention> {
    doc.mentions.iter().filter(|m| m.entity.as_deref() == Some(entity)).collect()
}

fn has_typed_sub(doc: &Document, m: &Mention) -> bool {
    doc.sub_mentions(m).any(|s| doc.mention_type(s).is_some())
}

/// Mentions that may fill the slot of `entity`: its named mentions plus noun
/// phrases that contain a typed mention and are reached by a Resolve edge
/// from one of its named mentions. Reading order.
pub fn candidate_mentions(doc: &Document, graph: &ResolutionGraph, entity: &str) -> Vec<MentionId> {
    let named = entity_mentions(doc, entity);
    let mut out: BTreeSet<usize> = named.iter().filter_map(|m| doc.mention_position(&m.id)).collect();
    for q in &named {
        for l in graph.out_edges(&q.id).filter(|l| l.kind == LinkKind::Resolve) {
            let Some(i) = doc.mention_position(&l.to) else { continue };
            let m = &doc.mentions[i];
            if m.kind == MentionKind::CandidateNounPhrase && has_typed_sub(doc, m) {
                out.insert(i);
            }
        }
    }
    out.into_iter().map(|i| doc.mentions[i].id.clone()).collect()
}

/// Unfolds a closure edge into the stored links it was derived from, in path
/// order, collecting every derived edge on the way. With `forward` false the
/// edge is walked from `to` back to `from`, which only Coref allows; stored
/// Coref links are then taken in their mirrored direction.
fn unfold(
    graph: &ResolutionGraph,
    key: &LinkKey,
    forward: bool,
    links: &mut Vec<ResolutionLink>,
    derived: &mut Vec<LinkKey>,
    depth: usize,
) -> Result<()> {
    if depth > graph.len() + 1 {
        return Err(Error::Consistency(format!("cyclic derivation at {key}")));
    }
    let link = graph
        .get(key)
        .ok_or_else(|| Error::Consistency(format!("{key} is not in the graph")))?;
    if !forward && key.kind != LinkKind::Coref {
        return Err(Error::Consistency(format!("{key} walked backwards")));
    }
    let Provenance::Closure { rule, premises } = &link.provenance else {
        if forward {
            links.push(link.clone());
        } else {
            let back = LinkKey::new(key.to.clone(), key.from.clone(), LinkKind::Coref);
            links.push(graph.get(&back).cloned().unwrap_or_else(|| link.reversed()));
        }
        return Ok(());
    };
    derived.push(key.clone());
    // Each premise with the direction it is walked in, for a forward walk.
    let steps: Vec<(&LinkKey, bool)> = match (rule, premises.as_slice()) {
        (ClosureRule::CorefSymmetry, [p]) => vec![(p, false)],
        (ClosureRule::CorefSubstitution, [p, q]) => vec![(p, true), (q, false)],
        _ => premises.iter().map(|p| (p, true)).collect(),
    };
    let mut walk = |p: &LinkKey, f: bool| unfold(graph, p, f, links, derived, depth + 1);
    if forward {
        for (p, f) in steps {
            walk(p, f)?;
        }
    } else {
        for (p, f) in steps.into_iter().rev() {
            walk(p, !f)?;
        }
    }
    Ok(())
}

/// The chain behind Resolve(`source`, `target`), or a trivial chain when the
/// two are the same mention.
pub fn resolution_chain(graph: &ResolutionGraph, role: Role, source: &str, target: &str) -> Result<ResolutionChain> {
    let mut chain = ResolutionChain {
        role,
        source: source.to_string(),
        target: target.to_string(),
        links: Vec::new(),
        derived: Vec::new(),
    };
    if source != target {
        let key = LinkKey::new(source, target, LinkKind::Resolve);
        unfold(graph, &key, true, &mut chain.links, &mut chain.derived, 0)?;
    }
    Ok(chain)
}

/// Shortest chain from any named mention of `entity` to `target`: a direct
/// mention first, then the derivation with fewest stored links, ties by
/// mention order.
fn best_chain(doc: &Document, graph: &ResolutionGraph, role: Role, entity: &str, target: &str) -> Result<ResolutionChain> {
    let mut best: Option<ResolutionChain> = None;
    for q in entity_mentions(doc, entity) {
        if q.id == target {
            return resolution_chain(graph, role, target, target);
        }
        if !graph.contains(&q.id, target, LinkKind::Resolve) {
            continue;
        }
        let c = resolution_chain(graph, role, &q.id, target)?;
        if best.as_ref().map_or(true, |b| c.links.len() < b.links.len()) {
            best = Some(c);
        }
    }
    best.ok_or_else(|| Error::Consistency(format!("{target} does not resolve to {entity}")))
}

/// Sentences where a candidate of each associated role co-occurs. A mention
/// nested in the other counts.
fn associations(
    doc: &Document,
    graph: &ResolutionGraph,
    entities: &BTreeMap<Role, EntityId>,
    candidates: &BTreeMap<Role, Vec<MentionId>>,
    roles: (Role, Role),
) -> Result<Vec<Association>> {
    let mut out = Vec::new();
    let (xs, ys) = (&candidates[&roles.0], &candidates[&roles.1]);
    for x in xs {
        let mx = doc.require_mention(x)?;
        for y in ys {
            let my = doc.require_mention(y)?;
            if mx.sentence != my.sentence || x == y {
                continue;
            }
            out.push(Association {
                roles,
                sentence: mx.sentence,
                mentions: (x.clone(), y.clone()),
                chains: (
                    best_chain(doc, graph, roles.0, &entities[&roles.0], x)?,
                    best_chain(doc, graph, roles.1, &entities[&roles.1], y)?,
                ),
            });
        }
    }
    out.sort_by(|a, b| {
        let len = |a: &Association| a.chains.0.links.len() + a.chains.1.links.len();
        (a.sentence, len(a)).cmp(&(b.sentence, len(b)))
    });
    Ok(out)
}

/// Stage 2 for one query against a prepared document.
pub fn extract_prepared(prep: &PreparedDocument<'_>, key: &TupleKey, models: &Models<'_>, cfg: &ExtractConfig) -> Result<ExtractionResult> {
    let doc = prep.doc;
    if key.doc != doc.id {
        return Err(Error::Validation(format!("query for {} run on {}", key.doc, doc.id)));
    }
    let entities = query_entities(doc, key)?;
    let graph = &prep.graph;
    let candidates: BTreeMap<Role, Vec<MentionId>> = entities
        .iter()
        .map(|(&r, e)| (r, candidate_mentions(doc, graph, e)))
        .collect();

    let (ra, rb) = cfg.plan.anchor;
    let mut seen = BTreeSet::new();
    let mut evidences = Vec::new();
    for seg in enumerate_segments(doc, cfg.k_max) {
        let inside: BTreeSet<&str> = seg.mentions.iter().map(String::as_str).collect();
        for a in candidates[&ra].iter().filter(|m| inside.contains(m.as_str())) {
            for b in candidates[&rb].iter().filter(|m| inside.contains(m.as_str())) {
                let (ma, mb) = (doc.require_mention(a)?, doc.require_mention(b)?);
                if ma.overlaps(mb) || !seen.insert((seg.clone(), a.clone(), b.clone())) {
                    continue;
                }
                let slots = BTreeMap::from([(ra, a.clone()), (rb, b.clone())]);
                let rel = RelationEvidence::new(doc, seg.clone(), slots)?;
                let chains = BTreeMap::from([
                    (ra, best_chain(doc, graph, ra, &entities[&ra], a)?),
                    (rb, best_chain(doc, graph, rb, &entities[&rb], b)?),
                ]);
                evidences.push(Evidence { relation: rel, chains });
            }
        }
    }
    let templates: Vec<_> = evidences.iter().map(|e| e.relation.template.clone()).collect();
    let scores = if templates.is_empty() {
        Vec::new()
    } else {
        models.relation.score_many(&templates)?
    };
    for (e, s) in evidences.iter_mut().zip(&scores) {
        if !(0.0..=1.0).contains(s) {
            return Err(Error::Domain(format!("relation score {s}")));
        }
        e.relation.score = Some(*s);
    }
    // Best first; ties by earliest position in the document.
    evidences.sort_by(|x, y| {
        y.score()
            .total_cmp(&x.score())
            .then_with(|| x.relation.segment.cmp(&y.relation.segment))
            .then_with(|| x.relation.role_slots.cmp(&y.relation.role_slots))
    });

    let score = match cfg.aggregation {
        Aggregation::Existential => evidences.first().map_or(0.0, Evidence::score),
        Aggregation::NoisyOr => noisy_or(&scores)?,
    };
    let mut assoc = Vec::new();
    let mut results = BTreeMap::from([(cfg.plan.anchor, score > cfg.decision_threshold)]);
    for &pair in &cfg.plan.augment {
        let found = associations(doc, graph, &entities, &candidates, pair)?;
        results.insert(pair, !found.is_empty());
        assoc.extend(found.into_iter().take(1));
    }
    let decision = compose_nary(&results, &cfg.plan)?;
    Ok(ExtractionResult {
        document: doc.id.clone(),
        entities,
        decision,
        score,
        evidences,
        associations: assoc,
        candidates,
        graph_generation: graph.generation(),
    })
}

/// Both stages for a single query.
pub fn extract(doc: &Document, key: &TupleKey, models: &Models<'_>, cfg: &ExtractConfig) -> Result<ExtractionResult> {
    let prep = prepare(doc, models, cfg)?;
    extract_prepared(&prep, key, models, cfg)
}

/// Runs every query, documents in parallel; results follow query order.
pub fn extract_batch(docs: &[Document], queries: &[TupleKey], models: &Models<'_>, cfg: &ExtractConfig) -> Result<Vec<ExtractionResult>> {
    cfg.validate()?;
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        if !by_id.contains_key(q.doc.as_str()) {
            return Err(Error::lookup("document", q.doc.clone()));
        }
        groups.entry(q.doc.as_str()).or_default().push(i);
    }
    let groups: Vec<(&str, Vec<usize>)> = groups.into_iter().collect();
    let done: Vec<Vec<(usize, ExtractionResult)>> = groups
        .par_iter()
        .map(|(d, idx)| {
            let prep = prepare(by_id[d], models, cfg)?;
            idx.iter()
                .map(|&i| Ok((i, extract_prepared(&prep, &queries[i], models, cfg)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Option<ExtractionResult>> = vec![None; queries.len()];
    for (i, r) in done.into_iter().flatten() {
        out[i] = Some(r);
    }
    Ok(out.into_iter().map(|r| r.expect("every query answered")).collect())
}

fn replay_chain(graph: &ResolutionGraph, chain: &ResolutionChain) -> Result<()> {
    if chain.is_trivial() {
        return Ok(());
    }
    for k in &chain.derived {
        verify_provenance(graph, k)?;
    }
    for l in &chain.links {
        if graph.get(&l.key()) != Some(l) {
            return Err(Error::Consistency(format!("chain link {} differs from the graph", l.key())));
        }
    }
    let fresh = resolution_chain(graph, chain.role, &chain.source, &chain.target)?;
    if fresh != *chain {
        return Err(Error::Consistency(format!(
            "chain {} -> {} no longer derives the same way",
            chain.source, chain.target
        )));
    }
    Ok(())
}

/// Checks a result against the graph it came from: same generation and every
/// chain re-derivable edge by edge.
pub fn verify_result(result: &ExtractionResult, graph: &ResolutionGraph) -> Result<()> {
    if graph.document != result.document {
        return Err(Error::Consistency(format!(
            "graph of {} used for a result on {}",
            graph.document, result.document
        )));
    }
    if graph.generation() != result.graph_generation {
        return Err(Error::Consistency(format!(
            "graph generation {} but the result was computed at {}",
            graph.generation(),
            result.graph_generation
        )));
    }
    for e in &result.evidences {
        for c in e.chains.values() {
            replay_chain(graph, c)?;
        }
    }
    for a in &result.associations {
        replay_chain(graph, &a.chains.0)?;
        replay_chain(graph, &a.chains.1)?;
    }
    Ok(())
}

fn surface(doc: &Document, id: &str) -> String {
    doc.mention(id).map_or_else(|| id.to_string(), |m| m.surface.clone())
}

fn write_chain(out: &mut String, doc: &Document, c: &ResolutionChain) {
    let role = c.role.name();
    if c.is_trivial() {
        let _ = writeln!(out, "    {role}: \"{}\" named directly", surface(doc, &c.target));
        return;
    }
    let _ = writeln!(
        out,
        "    {role}: \"{}\" -> \"{}\" in {} step(s)",
        surface(doc, &c.source),
        surface(doc, &c.target),
        c.links.len()
    );
    for l in &c.links {
        let _ = writeln!(
            out,
            "      {}(\"{}\" -> \"{}\") conf {:.3}, {}",
            l.kind,
            surface(doc, &l.from),
            surface(doc, &l.to),
            l.confidence,
            l.provenance
        );
    }
}

fn where_(at: SentenceRef) -> String {
    format!("paragraph {}, sentence {}", at.paragraph + 1, at.sentence + 1)
}

/// Plain-text report. Fails with a consistency error if `graph` is not the
/// state the result was computed against or a chain no longer replays.
pub fn explain(result: &ExtractionResult, doc: &Document, graph: &ResolutionGraph, cfg: &ExtractConfig) -> Result<String> {
    verify_result(result, graph)?;
    let name = |r: Role| {
        result
            .entities
            .get(&r)
            .and_then(|e| doc.entity(e))
            .map_or_else(|| "?".to_string(), |e| e.canonical_name.clone())
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}: drug {} / gene {} / mutation {} -> {} (score {:.3}, threshold {:.2})",
        result.document,
        name(Role::DRUG),
        name(Role::GENE),
        name(Role::MUTATION),
        if result.decision { "POSITIVE" } else { "negative" },
        result.score,
        cfg.decision_threshold
    );
    let shown: Vec<&Evidence> = if result.decision {
        result
            .evidences
            .iter()
            .filter(|e| e.score() > cfg.decision_threshold)
            .collect()
    } else {
        Vec::new()
    };
    for (i, e) in shown.iter().enumerate() {
        let seg = &e.relation.segment;
        let _ = writeln!(
            out,
            "  evidence {} (paragraph {}, sentences {}-{}), detector {:.3}",
            i + 1,
            seg.paragraph + 1,
            seg.sentence_range.0 + 1,
            seg.sentence_range.1 + 1,
            e.score()
        );
        let _ = writeln!(out, "    text: {}", doc.segment_text(seg));
        let _ = writeln!(out, "    template: {}", e.relation.template);
        for c in e.chains.values() {
            write_chain(&mut out, doc, c);
        }
    }
    for a in &result.associations {
        let _ = writeln!(
            out,
            "  association {}-{} in {}: \"{}\" with \"{}\"",
            a.roles.0.name(),
            a.roles.1.name(),
            where_(a.sentence),
            surface(doc, &a.mentions.0),
            surface(doc, &a.mentions.1)
        );
    }
    if !result.decision {
        if result.evidences.is_empty() {
            let _ = writeln!(out, "  no resolvable evidence");
            for (r, c) in &result.candidates {
                let _ = writeln!(out, "    {} candidates: {}", r.name(), c.len());
            }
            if let Some((d, a, b)) = nearest_miss(doc, result, cfg) {
                let _ = writeln!(
                    out,
                    "    nearest miss: \"{}\" and \"{}\" are {d} paragraph(s) apart",
                    surface(doc, &a),
                    surface(doc, &b)
                );
            }
        } else {
            let e = &result.evidences[0];
            let _ = writeln!(
                out,
                "  nearest miss: detector {:.3} on \"{}\"",
                e.score(),
                doc.segment_text(&e.relation.segment)
            );
        }
        for &pair in &cfg.plan.augment {
            if !result.associations.iter().any(|a| a.roles == pair) {
                let _ = writeln!(out, "  no {}-{} association found", pair.0.name(), pair.1.name());
            }
        }
    }
    Ok(out)
}

/// Closest pair of anchor candidates, by paragraph distance then reading order.
fn nearest_miss(doc: &Document, result: &ExtractionResult, cfg: &ExtractConfig) -> Option<(usize, MentionId, MentionId)> {
    let (ra, rb) = cfg.plan.anchor;
    let xs = result.candidates.get(&ra)?;
    let ys = result.candidates.get(&rb)?;
    let mut best = None;
    for x in xs {
        for y in ys {
            let (mx, my) = (doc.mention(x)?, doc.mention(y)?);
            let d = mx.sentence.paragraph.abs_diff(my.sentence.paragraph);
            if best.as_ref().map_or(true, |(bd, _, _)| d < *bd) {
                best = Some((d, x.clone(), y.clone()));
            }
        }
    }
    best
}

/// Every mention with any Resolve path from a named mention of `entity`,
/// following edges of all kinds (Coref in both directions). Unfiltered.
pub fn resolvable_mentions(doc: &Document, graph: &ResolutionGraph, entity: &str) -> BTreeSet<MentionId> {
    let mut seen: BTreeSet<MentionId> = entity_mentions(doc, entity).iter().map(|m| m.id.clone()).collect();
    let mut queue: VecDeque<MentionId> = seen.iter().cloned().collect();
    while let Some(m) = queue.pop_front() {
        let mut next: Vec<MentionId> = graph.out_edges(&m).map(|l| l.to.clone()).collect();
        next.extend(graph.links().filter(|l| l.kind == LinkKind::Coref && l.to == m).map(|l| l.from.clone()));
        for n in next {
            if seen.insert(n.clone()) {
                queue.push_back(n);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawDocument, RawEntity, RawMention, RawParagraph, RawSentence};
    use crate::relation::{AlwaysPositive, ScorerKind, Template};

    /// Drug introduced by apposition, class statement elsewhere, relation
    /// sentence with neither named argument.
    fn toy() -> Document {
        let sent = |w: &str| RawSentence { tokens: w.split(' ').map(String::from).collect() };
        let m = |id: &str, e: Option<&str>, kind, p, s, t0, t1| RawMention { id: id.into(), entity: e.map(String::from), kind, p, s, t0, t1 };
        let ent = |id: &str, ty, name: &str, ms: &[&str]| RawEntity {
            id: id.into(),
            entity_type: ty,
            name: name.into(),
            mentions: ms.iter().map(|s| s.to_string()).collect(),
        };
        use EntityType::*;
        use MentionKind::*;
        Document::from_raw(RawDocument {
            id: "toy".into(),
            paragraphs: vec![
                RawParagraph { sentences: vec![sent("cobimetinib , a selective MEK inhibitor , was given .")] },
                RawParagraph { sentences: vec![sent("K57T is a MAP2K1 mutation .")] },
                RawParagraph { sentences: vec![sent("MAP2K1 mutants remained sensitive to MEK inhibitors .")] },
            ],
            entities: vec![
                ent("d", Drug, "cobimetinib", &["d1"]),
                ent("mu", Mutation, "K57T", &["mu1"]),
                ent("g", Gene, "MAP2K1", &["g1", "g2"]),
                ent("c", Gene, "MEK", &["c1", "c2"]),
            ],
            mentions: vec![
                m("d1", Some("d"), NamedEntity, 0, 0, 0, 1),
                m("np1", None, CandidateNounPhrase, 0, 0, 4, 6),
                m("c1", Some("c"), NamedEntity, 0, 0, 4, 5),
                m("mu1", Some("mu"), NamedEntity, 1, 0, 0, 1),
                m("np2", None, CandidateNounPhrase, 1, 0, 3, 5),
                m("g1", Some("g"), NamedEntity, 1, 0, 3, 4),
                m("np3", None, CandidateNounPhrase, 2, 0, 0, 2),
                m("g2", Some("g"), NamedEntity, 2, 0, 0, 1),
                m("np4", None, CandidateNounPhrase, 2, 0, 5, 7),
                m("c2", Some("c"), NamedEntity, 2, 0, 5, 6),
            ],
        })
        .unwrap()
    }

    /// Links the copula pair and the two same-stem pairs across paragraphs.
    struct StemPairs;

    impl PairScoring for StemPairs {
        fn score_pair(&self, doc: &Document, m: &str, n: &str) -> Result<f64> {
            let ok = [("mu1", "np2"), ("np2", "np3"), ("np1", "np4")].contains(&(m, n));
            let _ = doc;
            Ok(if ok { 0.95 } else { 0.05 })
        }
    }

    struct Keyword;

    impl RelationScorer for Keyword {
        fn kind(&self) -> ScorerKind {
            ScorerKind::NativeFeature
        }

        fn score(&self, t: &Template) -> Result<f64> {
            Ok(if t.tokens().iter().any(|w| w == "sensitive") { 0.9 } else { 0.1 })
        }
    }

    fn key() -> TupleKey {
        TupleKey { doc: "toy".into(), drug: "cobimetinib".into(), gene: "MAP2K1".into(), mutation: "K57T".into() }
    }

    #[test]
    fn cross_paragraph_result_with_two_chains() {
        let d = toy();
        let models = Models { relation: &Keyword, pair: Some(&StemPairs) };
        let cfg = ExtractConfig::default();
        let prep = prepare(&d, &models, &cfg).unwrap();
        let r = extract_prepared(&prep, &key(), &models, &cfg).unwrap();
        assert!(r.decision);
        let e = &r.evidences[0];
        assert_eq!(e.relation.role_slots[&Role::DRUG], "np4");
        assert_eq!(e.relation.role_slots[&Role::MUTATION], "np3");
        let drug = &e.chains[&Role::DRUG];
        assert_eq!(drug.links.len(), 2);
        assert_eq!(drug.links[0].kind, LinkKind::Isa);
        assert_eq!((drug.links[0].from.as_str(), drug.links[0].to.as_str()), ("d1", "np1"));
        assert_eq!(drug.links[1].to, "np4");
        assert_eq!(e.chains[&Role::MUTATION].links.len(), 2);
        let text = explain(&r, &d, &prep.graph, &cfg).unwrap();
        assert!(text.contains("ISA(\"cobimetinib\" -> \"MEK inhibitor\")"), "{text}");
        let isa = text.find("ISA(\"cobimetinib\"").unwrap();
        let hop = text.find("Resolve(\"MEK inhibitor\" -> \"MEK inhibitors\")").unwrap();
        assert!(isa < hop);
    }

    #[test]
    fn local_mode_finds_nothing_across_paragraphs() {
        let d = toy();
        let models = Models { relation: &AlwaysPositive, pair: Some(&StemPairs) };
        let r = extract(&d, &key(), &models, &ExtractConfig::local()).unwrap();
        assert!(!r.decision);
        assert!(r.evidences.is_empty());
        let prep = prepare(&d, &models, &ExtractConfig::local()).unwrap();
        let text = explain(&r, &d, &prep.graph, &ExtractConfig::local()).unwrap();
        assert!(text.contains("no resolvable evidence"));
    }

    #[test]
    fn stale_graph_is_rejected() {
        let d = toy();
        let models = Models { relation: &Keyword, pair: Some(&StemPairs) };
        let cfg = ExtractConfig::default();
        let prep = prepare(&d, &models, &cfg).unwrap();
        let r = extract_prepared(&prep, &key(), &models, &cfg).unwrap();
        let mut g = prep.graph.clone();
        g.add(ResolutionLink::new("mu1", "np4", LinkKind::Resolve, 0.5, Provenance::Sieve { name: "x".into() }))
            .unwrap();
        assert!(matches!(explain(&r, &d, &g, &cfg), Err(Error::Consistency(_))));
    }

    #[test]
    fn missing_entity_is_an_error() {
        let d = toy();
        let models = Models { relation: &Keyword, pair: None };
        let mut k = key();
        k.drug = "trametinib".into();
        assert!(matches!(extract(&d, &k, &models, &ExtractConfig::default()), Err(Error::Lookup { .. })));
    }

    #[test]
    fn candidates_are_filtered_resolvable_mentions() {
        let d = toy();
        let models = Models { relation: &Keyword, pair: Some(&StemPairs) };
        let prep = prepare(&d, &models, &ExtractConfig::default()).unwrap();
        let c = candidate_mentions(&d, &prep.graph, "d");
        assert_eq!(c, vec!["d1", "np1", "np4"]);
        let all = resolvable_mentions(&d, &prep.graph, "d");
        assert!(c.iter().all(|m| all.contains(m)));
    }

    #[test]
    fn bp_rescoring_keeps_confident_links() {
        let d = toy();
        let models = Models { relation: &Keyword, pair: Some(&StemPairs) };
        let cfg = ExtractConfig { bp_rescoring: true, ..ExtractConfig::default() };
        let r = extract(&d, &key(), &models, &cfg).unwrap();
        assert!(r.decision);
    }
}
