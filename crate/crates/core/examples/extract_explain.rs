//! Trains both components on synthetic data, extracts every test query and
//! explains the first positive whose arguments never share a paragraph.

use docrel::eval::hard_subset;
use docrel::inference::{explain, extract_prepared, prepare, ExtractConfig, Models};
use docrel::learning::{self_train_resolution, SelfTrainConfig};
use docrel::relation::{train_relation_detector, DetectorConfig};
use docrel::supervision::{generate_relation_examples, DsConfig};
use docrel::synth::{generate, SynthConfig};

fn main() -> docrel::Result<()> {
    let data = generate(&SynthConfig::default())?;
    let ex = generate_relation_examples(&data.train, &data.kb, &DsConfig::default())?;
    let (det, _) = train_relation_detector(&ex, &DetectorConfig::default())?;
    let st = self_train_resolution(&data.train, &SelfTrainConfig::default(), |_, _| {})?;
    let models = Models { relation: &det, pair: Some(&st.scorer) };
    let cfg = ExtractConfig::default();
    let hard = hard_subset(&data.gold, &data.test);
    for entry in hard.entries() {
        let doc = data.test.iter().find(|d| d.id == entry.key.doc).unwrap();
        let prep = prepare(doc, &models, &cfg)?;
        let r = extract_prepared(&prep, &entry.key, &models, &cfg)?;
        if r.decision {
            print!("{}", explain(&r, doc, &prep.graph, &cfg)?);
            return Ok(());
        }
    }
    println!("no hard positive extracted");
    Ok(())
}
