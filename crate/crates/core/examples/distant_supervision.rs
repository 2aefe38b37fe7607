//! Aligns the synthetic KB with the training corpus and prints a few of
//! the resulting dummified relation examples.

use docrel::supervision::{generate_relation_examples, DsConfig, Polarity};
use docrel::synth::{generate, SynthConfig};

fn main() -> docrel::Result<()> {
    let data = generate(&SynthConfig::default())?;
    let cfg = DsConfig::default();
    let ex = generate_relation_examples(&data.train, &data.kb, &cfg)?;
    let pos = ex.iter().filter(|e| e.polarity == Polarity::Positive).count();
    println!("{} KB facts, {} examples ({pos} positive, {} negative)", data.kb.len(), ex.len(), ex.len() - pos);
    for e in ex.iter().filter(|e| e.polarity == Polarity::Positive).take(3) {
        println!("+ {}", e.template);
    }
    for e in ex.iter().filter(|e| e.polarity == Polarity::Negative).take(3) {
        println!("- {}", e.template);
    }
    let widest = ex.iter().filter_map(|e| e.segment.as_ref()).map(|s| s.len()).max().unwrap_or(0);
    println!("widest segment: {widest} sentence(s), limit {}", cfg.k_max);
    Ok(())
}
