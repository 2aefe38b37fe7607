//! Trains the native relation detector on distantly supervised examples and
//! scores a few hand-written templates.

use docrel::relation::{train_relation_detector, DetectorConfig, RelationScorer, Template};
use docrel::supervision::{generate_relation_examples, DsConfig};
use docrel::synth::{generate, SynthConfig};

fn main() -> docrel::Result<()> {
    let data = generate(&SynthConfig::default())?;
    let ex = generate_relation_examples(&data.train, &data.kb, &DsConfig::default())?;
    let (det, report) = train_relation_detector(&ex, &DetectorConfig::default())?;
    for e in &report.epochs {
        println!("epoch {:2}  train loss {:.4}  dev loss {:.4}  dev F1 {:.3}", e.epoch, e.train_loss, e.dev_loss, e.dev_f1);
    }
    println!("kept epoch {:?}", report.best_epoch);
    for text in [
        "[CLS] cells with [X3] were sensitive to [X1] .",
        "[CLS] cells with [X3] were resistant to [X1] .",
        "[CLS] [X1] and [X3] were listed in separate tables .",
    ] {
        let t = Template(text.split(' ').map(String::from).collect());
        println!("{:.3}  {text}", det.score(&t)?);
    }
    Ok(())
}
