//! Self-trains the pairwise resolver on a synthetic corpus and prints how
//! many planted resolution links the closed link sets recover per iteration.

use std::collections::BTreeMap;

use docrel::learning::{self_train_resolution, SelfTrainConfig};
use docrel::resolution::close_graph;
use docrel::synth::{generate, planted_link_recall, Split, SynthConfig};

fn main() -> docrel::Result<()> {
    let data = generate(&SynthConfig::default())?;
    let certs: Vec<_> = data
        .certificates
        .iter()
        .filter(|c| c.split == Split::Train && c.cross_paragraph)
        .cloned()
        .collect();
    let out = self_train_resolution(&data.train, &SelfTrainConfig::default(), |t, graphs| {
        let closed: BTreeMap<_, _> = graphs.iter().map(|g| (g.document.clone(), close_graph(g))).collect();
        let (hits, total) = planted_link_recall(&certs, &closed);
        println!("iteration {t}: {hits}/{total} planted links ({:.1}%)", 100.0 * hits as f64 / total as f64);
    })?;
    for h in &out.history {
        println!("{}", serde_json::to_string(h).unwrap());
    }
    Ok(())
}
