//! Scores the full system, the paragraph-local ablation and the
//! always-positive detector on synthetic data, plus the All-Positive rows
//! recomputed from published candidate counts.

use docrel::eval::{all_positive, all_positive_from_counts, evaluate, hard_subset, render_table, ReportRow};
use docrel::inference::{extract_batch, ExtractConfig, Models};
use docrel::learning::{self_train_resolution, SelfTrainConfig};
use docrel::relation::{train_relation_detector, AlwaysPositive, DetectorConfig};
use docrel::supervision::{generate_relation_examples, DsConfig};
use docrel::synth::{generate, SynthConfig};

fn main() -> docrel::Result<()> {
    let data = generate(&SynthConfig::default())?;
    let ex = generate_relation_examples(&data.train, &data.kb, &DsConfig::default())?;
    let (det, _) = train_relation_detector(&ex, &DetectorConfig::default())?;
    let st = self_train_resolution(&data.train, &SelfTrainConfig::default(), |_, _| {})?;
    let hard = hard_subset(&data.gold, &data.test);
    let mut rows = Vec::new();
    let systems = [
        ("Full", Models { relation: &det, pair: Some(&st.scorer) }, ExtractConfig::default()),
        ("Local", Models { relation: &det, pair: Some(&st.scorer) }, ExtractConfig::local()),
        ("Always-positive detector", Models { relation: &AlwaysPositive, pair: Some(&st.scorer) }, ExtractConfig::default()),
    ];
    for (name, models, cfg) in systems {
        let res = extract_batch(&data.test, &data.queries, &models, &cfg)?;
        let preds: Vec<_> = res.iter().zip(&data.queries).map(|(r, q)| r.prediction(q)).collect();
        rows.push(ReportRow { system: name.into(), full: evaluate(&preds, &data.gold)?, hard: Some(evaluate(&preds, &hard)?) });
    }
    let ap = all_positive(&data.gold);
    rows.push(ReportRow { system: "All Positive".into(), full: evaluate(&ap, &data.gold)?, hard: Some(evaluate(&ap, &hard)?) });
    print!("{}", render_table(&rows));

    let published = vec![ReportRow {
        system: "All Positive (1904/17744, 332/12122)".into(),
        full: all_positive_from_counts(1904, 17744)?,
        hard: Some(all_positive_from_counts(332, 12122)?),
    }];
    print!("\n{}", render_table(&published));
    Ok(())
}
