use docrel::corpus::{
    Document, EntityType, MentionKind, RawDocument, RawEntity, RawMention, RawParagraph, RawSentence,
};
use docrel::learning::{self_train_resolution, SelfTrainConfig};
use docrel::resolution::{score_pair, PairScorer};
use docrel::synth::{generate, SynthConfig};

fn copula_doc() -> Document {
    let sent = |w: &str| RawSentence { tokens: w.split(' ').map(String::from).collect() };
    let m = |id: &str, e: Option<&str>, kind, p, t0, t1| RawMention { id: id.into(), entity: e.map(String::from), kind, p, s: 0, t0, t1 };
    use MentionKind::*;
    Document::from_raw(RawDocument {
        id: "d".into(),
        paragraphs: vec![
            RawParagraph { sentences: vec![sent("H1047R is a PIK3CA mutation .")] },
            RawParagraph { sentences: vec![sent("tumors with PIK3CA mutations responded .")] },
        ],
        entities: vec![
            RawEntity { id: "mu".into(), entity_type: EntityType::Mutation, name: "H1047R".into(), mentions: vec!["h".into()] },
            RawEntity { id: "g".into(), entity_type: EntityType::Gene, name: "PIK3CA".into(), mentions: vec!["g1".into(), "g2".into()] },
        ],
        mentions: vec![
            m("h", Some("mu"), NamedEntity, 0, 0, 1),
            m("np1", None, CandidateNounPhrase, 0, 3, 5),
            m("g1", Some("g"), NamedEntity, 0, 3, 4),
            m("np2", None, CandidateNounPhrase, 1, 2, 4),
            m("g2", Some("g"), NamedEntity, 1, 2, 3),
        ],
    })
    .unwrap()
}

fn trained(seed: u64) -> (PairScorer, Vec<docrel::learning::IterationStats>) {
    let data = generate(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
    let out = self_train_resolution(&data.train, &SelfTrainConfig { seed, ..SelfTrainConfig::default() }, |_, _| {}).unwrap();
    (out.scorer, out.history)
}

#[test]
fn self_trained_scorer_links_a_mutation_to_its_gene_phrase() {
    let doc = copula_doc();
    for seed in [7, 12] {
        let (scorer, _) = trained(seed);
        let p = score_pair(&scorer, &doc, "h", "np1").unwrap();
        assert!(p >= 0.9, "seed {seed}: {p}");
        // The same mutation and a phrase in another paragraph stay apart.
        let far = score_pair(&scorer, &doc, "h", "np2").unwrap();
        assert!(far < 0.5, "seed {seed}: {far}");
    }
}

#[test]
fn unlinked_pairs_are_hard_negatives_only_before_they_are_scored() {
    let (_, history) = trained(3);
    assert_eq!(history[1].soft_negatives, 0);
    assert!(history[2..].iter().all(|h| h.soft_negatives > 0 && h.soft_negatives <= h.negatives));
    assert!(history.windows(2).all(|w| w[1].links >= w[0].links));
}
