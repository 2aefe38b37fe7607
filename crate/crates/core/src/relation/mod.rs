//! Paragraph-local relation detection: dummified segment templates, the
//! scorer interface, binary-subrelation composition and noisy-or.

mod native;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EntityType, MentionId, Segment, SentenceRef};
use crate::error::{Error, Result};

pub use native::{
    train_relation_detector, DetectorConfig, EpochStats, NativeRelationScorer, TemplateFeaturizer,
    TrainReport, RELATION_SCHEMA,
};

pub const START_TOKEN: &str = "[CLS]";

/// Argument role of the n-ary relation, numbered from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Role(pub u8);

impl Role {
    pub const DRUG: Role = Role(1);
    pub const GENE: Role = Role(2);
    pub const MUTATION: Role = Role(3);

    pub fn placeholder(self) -> String {
        format!("[X{}]", self.0)
    }

    /// Inverse of [`Role::placeholder`].
    pub fn from_placeholder(tok: &str) -> Option<Role> {
        tok.strip_prefix("[X")
            .and_then(|r| r.strip_suffix(']'))
            .and_then(|d| d.parse().ok())
            .map(Role)
    }

    pub fn entity_type(self) -> EntityType {
        match self.0 {
            1 => EntityType::Drug,
            2 => EntityType::Gene,
            3 => EntityType::Mutation,
            n => EntityType::Other(format!("role{n}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            1 => "drug",
            2 => "gene",
            3 => "mutation",
            _ => "role",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Token sequence with role placeholders, starting with [`START_TOKEN`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Template(pub Vec<String>);

impl Template {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Positions of role placeholders, in template order.
    pub fn slots(&self) -> Vec<(Role, usize)> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, t)| Role::from_placeholder(t).map(|r| (r, i)))
            .collect()
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Replaces each slot mention's span with its role placeholder and prepends
/// the start token. Tokens outside slot spans are kept verbatim.
pub fn dummify(doc: &Document, segment: &Segment, slots: &BTreeMap<Role, MentionId>) -> Result<Template> {
    let mut spans: Vec<(SentenceRef, usize, usize, Role)> = Vec::with_capacity(slots.len());
    for (&role, mid) in slots {
        let m = doc.require_mention(mid)?;
        if !segment.contains(m.sentence) {
            return Err(Error::Dummify(format!(
                "slot {role} mention {mid} lies outside the segment"
            )));
        }
        spans.push((m.sentence, m.token_span.0, m.token_span.1, role));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[0].0 == w[1].0 && w[1].1 < w[0].2 {
            return Err(Error::Dummify(format!(
                "slots {} and {} overlap",
                w[0].3, w[1].3
            )));
        }
    }
    let mut out = vec![START_TOKEN.to_string()];
    for s in segment.sentence_range.0..=segment.sentence_range.1 {
        let at = SentenceRef {
            paragraph: segment.paragraph,
            sentence: s,
        };
        let tokens = &doc.sentence(at).tokens;
        let mut i = 0;
        for &(_, t0, t1, role) in spans.iter().filter(|sp| sp.0 == at) {
            out.extend(tokens[i..t0].iter().cloned());
            out.push(role.placeholder());
            i = t1;
        }
        out.extend(tokens[i..].iter().cloned());
    }
    Ok(Template(out))
}

/// A scored occurrence of the (sub)relation in one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationEvidence {
    pub segment: Segment,
    pub role_slots: BTreeMap<Role, MentionId>,
    pub template: Template,
    pub score: Option<f64>,
}

impl RelationEvidence {
    pub fn new(doc: &Document, segment: Segment, role_slots: BTreeMap<Role, MentionId>) -> Result<Self> {
        let template = dummify(doc, &segment, &role_slots)?;
        Ok(RelationEvidence {
            segment,
            role_slots,
            template,
            score: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    NativeFeature,
    ExternalProtocol,
}

/// Maps a template to the probability that it expresses the relation.
pub trait RelationScorer: Send + Sync {
    fn kind(&self) -> ScorerKind;

    fn score(&self, template: &Template) -> Result<f64>;

    fn score_many(&self, templates: &[Template]) -> Result<Vec<f64>> {
        templates.iter().map(|t| self.score(t)).collect()
    }
}

/// Scores every template as certainly positive; the detection ablation.
#[derive(Clone, Copy, Debug, Default)]
pub struct AlwaysPositive;

impl RelationScorer for AlwaysPositive {
    fn kind(&self) -> ScorerKind {
        ScorerKind::NativeFeature
    }

    fn score(&self, _: &Template) -> Result<f64> {
        Ok(1.0)
    }
}

pub fn score_relation(scorer: &dyn RelationScorer, template: &Template) -> Result<f64> {
    scorer.score(template)
}

/// Which binary subrelations make up the n-ary decision: one anchor that the
/// detector classifies and associations that augment it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubrelationPlan {
    pub arity: u8,
    pub anchor: (Role, Role),
    pub augment: Vec<(Role, Role)>,
}

impl Default for SubrelationPlan {
    fn default() -> Self {
        SubrelationPlan {
            arity: 3,
            anchor: (Role::DRUG, Role::MUTATION),
            augment: vec![(Role::GENE, Role::MUTATION)],
        }
    }
}

impl SubrelationPlan {
    pub fn validate(&self) -> Result<()> {
        let covered: BTreeSet<Role> = std::iter::once(self.anchor)
            .chain(self.augment.iter().copied())
            .flat_map(|(a, b)| [a, b])
            .collect();
        let required: BTreeSet<Role> = (1..=self.arity).map(Role).collect();
        if covered != required {
            return Err(Error::Config(format!(
                "subrelations cover roles {covered:?}, arity {} needs {required:?}",
                self.arity
            )));
        }
        Ok(())
    }
}

/// N-ary decision: the anchor subrelation holds and every augmenting
/// association holds.
pub fn compose_nary(results: &BTreeMap<(Role, Role), bool>, plan: &SubrelationPlan) -> Result<bool> {
    plan.validate()?;
    let get = |pair: (Role, Role)| {
        results
            .get(&pair)
            .copied()
            .ok_or(Error::MissingSubrelation(pair.0 .0, pair.1 .0))
    };
    let mut decision = get(plan.anchor)?;
    for &pair in &plan.augment {
        decision &= get(pair)?;
    }
    Ok(decision)
}

/// `1 - prod(1 - p)`; empty input gives 0.
pub fn noisy_or(probs: &[f64]) -> Result<f64> {
    let mut keep = 1.0;
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
        }
        keep *= 1.0 - p;
    }
    Ok(1.0 - keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{MentionKind, RawDocument, RawEntity, RawMention, RawParagraph, RawSentence};

    fn sentence(words: &str) -> RawSentence {
        RawSentence {
            tokens: words.split(' ').map(String::from).collect(),
        }
    }

    fn mention(id: &str, entity: Option<&str>, kind: MentionKind, s: usize, t0: usize, t1: usize) -> RawMention {
        RawMention {
            id: id.into(),
            entity: entity.map(String::from),
            kind,
            p: 0,
            s,
            t0,
            t1,
        }
    }

    fn example_doc() -> Document {
        Document::from_raw(RawDocument {
            id: "d".into(),
            paragraphs: vec![RawParagraph {
                sentences: vec![
                    sentence("Expression of the MAP2K1 mutants in cells remained sensitive to MEK inhibitors ."),
                    sentence("Other text here ."),
                ],
            }],
            entities: vec![RawEntity {
                id: "g".into(),
                entity_type: "gene".to_string().into(),
                name: "MAP2K1".into(),
                mentions: vec!["g0".into()],
            }],
            mentions: vec![
                mention("np_mut", None, MentionKind::CandidateNounPhrase, 0, 3, 5),
                mention("g0", Some("g"), MentionKind::NamedEntity, 0, 3, 4),
                mention("np_drug", None, MentionKind::CandidateNounPhrase, 0, 10, 12),
            ],
        })
        .unwrap()
    }

    #[test]
    fn dummify_walkthrough_sentence() {
        let doc = example_doc();
        let seg = doc.segment(0, 0, 0);
        let slots = BTreeMap::from([
            (Role::DRUG, "np_drug".to_string()),
            (Role::MUTATION, "np_mut".to_string()),
        ]);
        let t = dummify(&doc, &seg, &slots).unwrap();
        assert_eq!(
            t.to_string(),
            "[CLS] Expression of the [X3] in cells remained sensitive to [X1] ."
        );
        assert_eq!(t.slots(), vec![(Role::MUTATION, 4), (Role::DRUG, 10)]);
    }

    #[test]
    fn dummify_without_slots_only_prepends() {
        let doc = example_doc();
        let seg = doc.segment(0, 0, 1);
        let t = dummify(&doc, &seg, &BTreeMap::new()).unwrap();
        assert_eq!(t.len(), 1 + 13 + 4);
        assert_eq!(t.0[0], START_TOKEN);
    }

    #[test]
    fn overlapping_slots_rejected() {
        let doc = example_doc();
        let seg = doc.segment(0, 0, 0);
        let slots = BTreeMap::from([
            (Role::GENE, "g0".to_string()),
            (Role::MUTATION, "np_mut".to_string()),
        ]);
        assert!(matches!(dummify(&doc, &seg, &slots), Err(Error::Dummify(_))));
    }

    #[test]
    fn slot_outside_segment_rejected() {
        let doc = example_doc();
        let seg = doc.segment(0, 1, 1);
        let slots = BTreeMap::from([(Role::DRUG, "np_drug".to_string())]);
        assert!(dummify(&doc, &seg, &slots).is_err());
    }

    #[test]
    fn noisy_or_cases() {
        assert_eq!(noisy_or(&[]).unwrap(), 0.0);
        assert_eq!(noisy_or(&[1.0, 0.2]).unwrap(), 1.0);
        assert!((noisy_or(&[0.5, 0.5]).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(noisy_or(&[1.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn compose_truth_table() {
        let plan = SubrelationPlan::default();
        for dm in [false, true] {
            for gm in [false, true] {
                let r = BTreeMap::from([
                    ((Role::DRUG, Role::MUTATION), dm),
                    ((Role::GENE, Role::MUTATION), gm),
                ]);
                assert_eq!(compose_nary(&r, &plan).unwrap(), dm && gm);
            }
        }
        let missing = BTreeMap::from([((Role::DRUG, Role::MUTATION), true)]);
        assert!(matches!(
            compose_nary(&missing, &plan),
            Err(Error::MissingSubrelation(2, 3))
        ));
    }

    #[test]
    fn plan_must_cover_roles() {
        let plan = SubrelationPlan {
            arity: 3,
            anchor: (Role::DRUG, Role::MUTATION),
            augment: vec![],
        };
        assert!(matches!(plan.validate(), Err(Error::Config(_))));
    }
}
