//! Pairwise resolution scorer. The native form is a logistic model whose
//! features split into per-mention terms (shared weights for both sides) and
//! pair terms, so its logit decomposes as `s_m(x) + s_m(y) + s_c(x, y)`.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EntityType, Mention, MentionKind};
use crate::error::{Error, Result};
use crate::features::{FeatureHasher, SparseVec};
use crate::linear::{LogisticModel, ModelDump};

pub const PAIR_SCHEMA: &str = "docrel.pair-scorer.v1";

/// Probability that mention `m` can fill the argument slot held by `n`.
pub trait PairScoring: Send + Sync {
    fn score_pair(&self, doc: &Document, m: &str, n: &str) -> Result<f64>;
}

pub fn score_pair(scorer: &dyn PairScoring, doc: &Document, m: &str, n: &str) -> Result<f64> {
    doc.require_mention(m)?;
    doc.require_mention(n)?;
    scorer.score_pair(doc, m, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFeaturizer {
    pub bits: u32,
    pub max_gap: usize,
}

impl Default for PairFeaturizer {
    fn default() -> Self {
        PairFeaturizer { bits: 16, max_gap: 5 }
    }
}

fn stem(token: &str) -> String {
    token.to_lowercase().chars().take(4).collect()
}

fn head(m: &Mention, doc: &Document) -> String {
    doc.sentence(m.sentence).tokens[m.token_span.1 - 1].to_lowercase()
}

/// Type signature: the linked type, or `np:<types of nested mentions>`.
fn signature(doc: &Document, m: &Mention) -> String {
    if let Some(t) = doc.mention_type(m) {
        return t.to_string();
    }
    let mut subs: Vec<String> = doc
        .sub_mentions(m)
        .filter_map(|s| doc.mention_type(s).map(EntityType::to_string))
        .collect();
    subs.sort();
    subs.dedup();
    format!("np:{}", subs.join("+"))
}

fn para_bucket(d: usize) -> &'static str {
    match d {
        0 => "0",
        1 => "1",
        2 => "2",
        _ => "3+",
    }
}

impl PairFeaturizer {
    fn mention_features(&self, doc: &Document, m: &Mention, h: &mut Vec<String>) {
        let kind = match m.kind {
            MentionKind::NamedEntity => "named",
            MentionKind::CandidateNounPhrase => "np",
        };
        h.push(format!("m:kind:{kind}"));
        h.push(format!("m:sig:{}", signature(doc, m)));
        // Names are too sparse to generalize; only phrase heads get a stem.
        if m.kind == MentionKind::CandidateNounPhrase {
            h.push(format!("m:stem:{}", stem(&head(m, doc))));
        }
    }

    /// Features of the directed pair (x -> y).
    pub fn featurize(&self, doc: &Document, x: &Mention, y: &Mention) -> SparseVec {
        let mut h = FeatureHasher::new(self.bits);
        for name in self.feature_names(doc, x, y) {
            h.add(&name, 1.0);
        }
        h.finish()
    }

    /// Readable names of the active binary features of (x -> y).
    pub fn feature_names(&self, doc: &Document, x: &Mention, y: &Mention) -> Vec<String> {
        let mut h = Vec::new();
        self.mention_features(doc, x, &mut h);
        self.mention_features(doc, y, &mut h);

        let same_para = x.sentence.paragraph == y.sentence.paragraph;
        let same_sent = x.sentence == y.sentence;
        let pd = x.sentence.paragraph.abs_diff(y.sentence.paragraph);
        h.push(format!("c:pdist:{}", para_bucket(pd)));
        if same_para {
            h.push("c:same_para".to_string());
        }
        let forward = x.order_key() < y.order_key();
        h.push(if forward { "c:dir:fwd" } else { "c:dir:rev" }.to_string());
        let tp = format!("{}>{}", signature(doc, x), signature(doc, y));
        h.push(format!("c:tp:{tp}"));

        if same_sent {
            h.push("c:same_sent".to_string());
            let toks = &doc.sentence(x.sentence).tokens;
            let (first, second, tag) = if forward { (x, y, "") } else { (y, x, "r") };
            if first.token_span.1 <= second.token_span.0 {
                let between: Vec<String> = toks[first.token_span.1..second.token_span.0]
                    .iter()
                    .map(|t| t.to_lowercase())
                    .collect();
                if between.len() <= self.max_gap {
                    for t in &between {
                        h.push(format!("c:{tag}btw:{t}"));
                    }
                    h.push(format!("c:{tag}seq:{}", between.join(" ")));
                    h.push(format!("c:{tag}seq:{}>{}", between.join(" "), signature(doc, y)));
                }
            }
        }

        let ex = doc.referenced_entities(x);
        let ey = doc.referenced_entities(y);
        let shared = !ex.is_disjoint(&ey);
        let stem_eq = stem(&head(x, doc)) == stem(&head(y, doc));
        if shared {
            h.push("c:shared".to_string());
            h.push(format!("c:shared&tp:{tp}"));
        }
        if stem_eq {
            h.push("c:stem_eq".to_string());
        }
        if shared && stem_eq {
            h.push("c:shared&stem_eq".to_string());
            h.push(format!("c:shared&stem_eq&tp:{tp}"));
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairScorer {
    pub featurizer: PairFeaturizer,
    pub model: LogisticModel,
}

impl PairScorer {
    pub fn zeros(featurizer: PairFeaturizer) -> Self {
        PairScorer {
            featurizer,
            model: LogisticModel::zeros(featurizer.bits),
        }
    }

    pub fn features(&self, doc: &Document, m: &Mention, n: &Mention) -> SparseVec {
        self.featurizer.featurize(doc, m, n)
    }

    pub fn prob(&self, doc: &Document, m: &Mention, n: &Mention) -> f64 {
        self.model.prob(&self.features(doc, m, n))
    }

    pub fn to_json(&self) -> Result<String> {
        let extra = serde_json::to_value(self.featurizer)?;
        Ok(serde_json::to_string(&self.model.to_dump(PAIR_SCHEMA, extra))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let dump: ModelDump = serde_json::from_str(s)?;
        let model = LogisticModel::from_dump(&dump, PAIR_SCHEMA)?;
        let featurizer: PairFeaturizer = serde_json::from_value(dump.extra)?;
        if featurizer.bits != model.bits {
            return Err(Error::Validation("featurizer width disagrees with model".into()));
        }
        Ok(PairScorer { featurizer, model })
    }
}

impl PairScoring for PairScorer {
    fn score_pair(&self, doc: &Document, m: &str, n: &str) -> Result<f64> {
        let (a, b) = (doc.require_mention(m)?, doc.require_mention(n)?);
        Ok(self.prob(doc, a, b))
    }
}

fn has_typed_sub(doc: &Document, m: &Mention) -> bool {
    m.kind == MentionKind::CandidateNounPhrase && doc.sub_mentions(m).any(|s| doc.mention_type(s).is_some())
}

/// Ordered mention pairs the learned resolver considers: the target is a
/// candidate noun phrase containing a typed mention, and the source is a
/// typed named mention or another such phrase. Overlapping spans are
/// excluded. Indices refer to `doc.mentions`.
pub fn relevant_pairs(doc: &Document) -> Vec<(usize, usize)> {
    let targets: Vec<usize> = (0..doc.mentions.len())
        .filter(|&i| has_typed_sub(doc, &doc.mentions[i]))
        .collect();
    let sources: Vec<usize> = (0..doc.mentions.len())
        .filter(|&i| {
            let m = &doc.mentions[i];
            (m.kind == MentionKind::NamedEntity && doc.mention_type(m).is_some()) || has_typed_sub(doc, m)
        })
        .collect();
    let mut out = Vec::new();
    for &s in &sources {
        for &t in &targets {
            if s != t && !doc.mentions[s].overlaps(&doc.mentions[t]) {
                out.push((s, t));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawDocument, RawEntity, RawMention, RawParagraph, RawSentence};

    fn doc() -> Document {
        let sent = |w: &str| RawSentence { tokens: w.split(' ').map(String::from).collect() };
        let m = |id: &str, e: Option<&str>, kind, p, s, t0, t1| RawMention {
            id: id.into(),
            entity: e.map(String::from),
            kind,
            p,
            s,
            t0,
            t1,
        };
        use MentionKind::*;
        Document::from_raw(RawDocument {
            id: "d".into(),
            paragraphs: vec![
                RawParagraph { sentences: vec![sent("H1047R is a PIK3CA mutation .")] },
                RawParagraph { sentences: vec![sent("cells with PIK3CA mutants grew .")] },
            ],
            entities: vec![
                RawEntity { id: "mu".into(), entity_type: EntityType::Mutation, name: "H1047R".into(), mentions: vec!["a".into()] },
                RawEntity { id: "g".into(), entity_type: EntityType::Gene, name: "PIK3CA".into(), mentions: vec!["g1".into(), "g2".into()] },
            ],
            mentions: vec![
                m("a", Some("mu"), NamedEntity, 0, 0, 0, 1),
                m("np1", None, CandidateNounPhrase, 0, 0, 3, 5),
                m("g1", Some("g"), NamedEntity, 0, 0, 3, 4),
                m("np2", None, CandidateNounPhrase, 1, 0, 2, 4),
                m("g2", Some("g"), NamedEntity, 1, 0, 2, 3),
            ],
        })
        .unwrap()
    }

    #[test]
    fn zero_model_scores_one_half() {
        let d = doc();
        let s = PairScorer::zeros(PairFeaturizer::default());
        assert_eq!(score_pair(&s, &d, "a", "np1").unwrap(), 0.5);
        assert!(matches!(score_pair(&s, &d, "a", "zz"), Err(Error::Lookup { .. })));
    }

    #[test]
    fn pair_features_capture_copula_and_variants() {
        let d = doc();
        let f = PairFeaturizer::default();
        let mut h = FeatureHasher::new(f.bits);
        h.add("c:seq:is a", 1.0);
        let seq = h.finish().0[0].0;
        let x = f.featurize(&d, d.mention("a").unwrap(), d.mention("np1").unwrap());
        assert!(x.iter().any(|&(i, _)| i == seq));
        let mut h = FeatureHasher::new(f.bits);
        h.add("c:shared&stem_eq", 1.0);
        let var = h.finish().0[0].0;
        let y = f.featurize(&d, d.mention("np1").unwrap(), d.mention("np2").unwrap());
        assert!(y.iter().any(|&(i, _)| i == var));
    }

    #[test]
    fn relevant_pairs_target_phrases() {
        let d = doc();
        let pairs: Vec<(String, String)> = relevant_pairs(&d)
            .into_iter()
            .map(|(a, b)| (d.mentions[a].id.clone(), d.mentions[b].id.clone()))
            .collect();
        assert!(pairs.contains(&("a".into(), "np1".into())));
        assert!(pairs.contains(&("np1".into(), "np2".into())));
        assert!(pairs.contains(&("g1".into(), "np2".into())));
        assert!(!pairs.contains(&("g1".into(), "np1".into())));
        assert!(pairs.iter().all(|(_, t)| t.starts_with("np")));
    }

    #[test]
    fn json_round_trip() {
        let mut s = PairScorer::zeros(PairFeaturizer::default());
        s.model.weights[3] = 0.25;
        s.model.bias = -1.0;
        assert_eq!(PairScorer::from_json(&s.to_json().unwrap()).unwrap(), s);
    }
}
