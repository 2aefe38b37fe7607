//! Serves a trained relation detector over the line-delimited JSON scoring
//! protocol and scores the same templates through a pooled client.

use std::sync::Arc;

use docrel::protocol::{scorer_handler, serve, ClientConfig, ExternalRelationScorer, ProtocolClient};
use docrel::relation::{train_relation_detector, DetectorConfig, RelationScorer, Template};
use docrel::supervision::{generate_relation_examples, DsConfig};
use docrel::synth::{generate, SynthConfig};

fn main() -> docrel::Result<()> {
    let data = generate(&SynthConfig::default())?;
    let ex = generate_relation_examples(&data.train, &data.kb, &DsConfig::default())?;
    let (det, _) = train_relation_detector(&ex, &DetectorConfig::default())?;
    let local: Arc<dyn RelationScorer> = Arc::new(det);
    let server = serve("127.0.0.1:0", scorer_handler(Some(local.clone()), None))?;
    println!("serving on {}", server.addr());
    let client = Arc::new(ProtocolClient::new(server.addr(), ClientConfig::default())?);
    let remote = ExternalRelationScorer::new(client);
    let templates: Vec<Template> = ex.iter().take(8).map(|e| e.template.clone()).collect();
    let got = remote.score_many(&templates)?;
    for (t, p) in templates.iter().zip(&got) {
        let want = local.score(t)?;
        println!("{p:.6} (in-process {want:.6})  {t}");
    }
    server.shutdown();
    Ok(())
}
