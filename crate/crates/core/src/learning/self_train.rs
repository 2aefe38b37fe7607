//! Iterative self-training of the pairwise resolver over a corpus: fit the
//! scorer to the current links, take the confident new pairs (with pairs the
//! closure already implies pinned to true), then re-apply distant expansion.
//! Sampled unlinked pairs are fit to their marginal from the previous E-step,
//! so a pair counts as a hard negative only until it has been scored.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::factor::{mean_field, Factor, FactorGraph};
use super::m_step;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::features::SparseVec;
use crate::linear::GdConfig;
use crate::resolution::{
    close_graph, ds_links, relevant_pairs, seed_links, LinkKey, LinkKind, PairFeaturizer, PairScorer, Provenance,
    ResolutionGraph, ResolutionLink,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTrainConfig {
    pub iterations: usize,
    pub threshold: f64,
    /// Sampled unlinked pairs per positive in each refit.
    pub negative_ratio: f64,
    pub seed: u64,
    pub featurizer: PairFeaturizer,
    pub gd: GdConfig,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            iterations: 8,
            threshold: 0.9,
            negative_ratio: 2.0,
            seed: 7,
            featurizer: PairFeaturizer::default(),
            gd: GdConfig::default(),
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(self.negative_ratio >= 0.0 && self.negative_ratio.is_finite()) {
            return Err(Error::Config(format!("negative_ratio {}", self.negative_ratio)));
        }
        if !(1..=24).contains(&self.featurizer.bits) {
            return Err(Error::Config(format!("pair feature bits {}", self.featurizer.bits)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub links: usize,
    pub added_learned: usize,
    pub added_implied: usize,
    pub added_ds: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Sampled unlinked pairs whose target came from an earlier marginal.
    #[serde(default)]
    pub soft_negatives: usize,
    pub loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SelfTrainOutput {
    pub scorer: PairScorer,
    /// Final link set per document, in corpus order (not closed).
    pub graphs: Vec<ResolutionGraph>,
    pub history: Vec<IterationStats>,
}

/// Seed links plus their distant expansion.
pub fn initial_links(doc: &Document) -> Result<ResolutionGraph> {
    let mut g = ResolutionGraph::new(doc);
    let seed = seed_links(doc);
    g.extend(seed.iter().cloned())?;
    g.extend(ds_links(&seed, doc))?;
    Ok(g)
}

/// Marginals of the unlinked candidate pairs of one document, by mention
/// index.
pub type PairMarginals = BTreeMap<(usize, usize), f64>;

struct TrainingSet {
    xs: Vec<SparseVec>,
    ys: Vec<f64>,
    positives: usize,
    negatives: usize,
    soft: usize,
}

fn training_pairs(
    docs: &[Document],
    graphs: &[ResolutionGraph],
    closed: &[ResolutionGraph],
    previous: &[PairMarginals],
    featurizer: &PairFeaturizer,
    ratio: f64,
    seed: u64,
) -> TrainingSet {
    let per_doc: Vec<(Vec<SparseVec>, Vec<(usize, usize, usize)>)> = docs
        .par_iter()
        .enumerate()
        .map(|(d, doc)| {
            let pos: Vec<SparseVec> = graphs[d]
                .links()
                .filter(|l| !l.provenance.is_closure())
                .filter_map(|l| Some(featurizer.featurize(doc, doc.mention(&l.from)?, doc.mention(&l.to)?)))
                .collect();
            let n = doc.mentions.len();
            let pool = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| {
                    let (m, k) = (&doc.mentions[i], &doc.mentions[j]);
                    i != j && !m.overlaps(k) && !closed[d].linked(&m.id, &k.id)
                })
                .map(|(i, j)| (d, i, j))
                .collect();
            (pos, pool)
        })
        .collect();
    let mut xs = Vec::new();
    let mut pool = Vec::new();
    for (pos, p) in per_doc {
        xs.extend(pos);
        pool.extend(p);
    }
    let n_pos = xs.len();
    let want = ((ratio * n_pos as f64).round() as usize).min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(want);
    pool.sort_unstable();
    let negs: Vec<SparseVec> = pool
        .par_iter()
        .map(|&(d, i, j)| featurizer.featurize(&docs[d], &docs[d].mentions[i], &docs[d].mentions[j]))
        .collect();
    let mut ys = vec![1.0; n_pos];
    let mut soft = 0;
    for &(d, i, j) in &pool {
        let q = previous.get(d).and_then(|m| m.get(&(i, j))).copied().unwrap_or(0.0);
        soft += usize::from(q > 0.0);
        ys.push(q);
    }
    let n_neg = negs.len();
    xs.extend(negs);
    TrainingSet { xs, ys, positives: n_pos, negatives: n_neg, soft }
}

/// One E-step over a document: a variable per relevant pair not yet linked,
/// a prediction factor from the scorer, and a pin to true when the closure
/// of the current links already entails Resolve. Returns links for the pairs
/// whose marginal exceeds `threshold`, and the marginals of the rest.
pub fn propose_links(
    doc: &Document,
    graph: &ResolutionGraph,
    closed: &ResolutionGraph,
    scorer: &PairScorer,
    threshold: f64,
    iteration: usize,
) -> (Vec<ResolutionLink>, PairMarginals) {
    let cands: Vec<(usize, usize)> = relevant_pairs(doc)
        .into_iter()
        .filter(|&(i, j)| !graph.linked(&doc.mentions[i].id, &doc.mentions[j].id))
        .collect();
    let mut fg = FactorGraph::new();
    let mut implied = Vec::with_capacity(cands.len());
    for &(i, j) in &cands {
        let (m, n) = (&doc.mentions[i], &doc.mentions[j]);
        let v = fg.add_var(format!("{}->{}", m.id, n.id));
        fg.add_factor(Factor::unary(format!("psi:{}", v), v, scorer.prob(doc, m, n)));
        let key = LinkKey::new(m.id.clone(), n.id.clone(), LinkKind::Resolve);
        let hit = closed.get(&key).cloned();
        if hit.is_some() {
            fg.add_factor(Factor::pin(format!("implied:{key}"), v, true));
        }
        implied.push(hit);
    }
    let init = vec![0.5; cands.len()];
    let q = mean_field(&fg, &init, 50, 1e-9).q;
    let mut out = Vec::new();
    let mut rest = PairMarginals::new();
    for (v, &(i, j)) in cands.iter().enumerate() {
        if q[v] <= threshold {
            rest.insert((i, j), q[v]);
            continue;
        }
        let (m, n) = (&doc.mentions[i], &doc.mentions[j]);
        out.push(match &implied[v] {
            Some(l) => l.clone(),
            None => ResolutionLink::new(
                m.id.clone(),
                n.id.clone(),
                LinkKind::Resolve,
                q[v],
                Provenance::Learned { iteration },
            ),
        });
    }
    (out, rest)
}

/// Runs the self-training loop. `observer` sees the link sets after
/// initialization (iteration 0) and after every iteration.
pub fn self_train_resolution(
    docs: &[Document],
    cfg: &SelfTrainConfig,
    mut observer: impl FnMut(usize, &[ResolutionGraph]),
) -> Result<SelfTrainOutput> {
    cfg.validate()?;
    let mut graphs: Vec<ResolutionGraph> = docs.par_iter().map(initial_links).collect::<Result<_>>()?;
    let mut scorer = PairScorer::zeros(cfg.featurizer);
    let mut history = vec![IterationStats {
        iteration: 0,
        links: graphs.iter().map(ResolutionGraph::len).sum(),
        added_learned: 0,
        added_implied: 0,
        added_ds: 0,
        positives: 0,
        negatives: 0,
        soft_negatives: 0,
        loss: None,
    }];
    observer(0, &graphs);
    let mut marginals: Vec<PairMarginals> = Vec::new();
    for t in 1..=cfg.iterations {
        let closed: Vec<ResolutionGraph> = graphs.par_iter().map(close_graph).collect();
        let set = training_pairs(
            docs,
            &graphs,
            &closed,
            &marginals,
            &cfg.featurizer,
            cfg.negative_ratio,
            cfg.seed.wrapping_add(t as u64),
        );
        let trace = m_step(&set.ys, &set.xs, &mut scorer.model, &cfg.gd)?;
        let (proposals, next): (Vec<Vec<ResolutionLink>>, Vec<PairMarginals>) = docs
            .par_iter()
            .enumerate()
            .map(|(d, doc)| propose_links(doc, &graphs[d], &closed[d], &scorer, cfg.threshold, t))
            .unzip();
        marginals = next;
        let (mut learned, mut implied, mut ds) = (0, 0, 0);
        for ((g, doc), props) in graphs.iter_mut().zip(docs).zip(proposals) {
            for l in props {
                let closure = l.provenance.is_closure();
                let n = g.add(l)?;
                if closure {
                    implied += n;
                } else {
                    learned += n;
                }
            }
            let current: Vec<ResolutionLink> = g.links().cloned().collect();
            ds += g.extend(ds_links(&current, doc))?;
        }
        history.push(IterationStats {
            iteration: t,
            links: graphs.iter().map(ResolutionGraph::len).sum(),
            added_learned: learned,
            added_implied: implied,
            added_ds: ds,
            positives: set.positives,
            negatives: set.negatives,
            soft_negatives: set.soft,
            loss: trace.last().copied(),
        });
        log::info!(
            "self-training iteration {t}: +{learned} learned, +{implied} implied, +{ds} distant, loss {:?}",
            trace.last()
        );
        observer(t, &graphs);
    }
    Ok(SelfTrainOutput { scorer, graphs, history })
}
