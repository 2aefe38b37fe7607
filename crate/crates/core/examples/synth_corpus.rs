//! Generates the synthetic corpus and prints its summary, one planted
//! cross-paragraph document and the certificate that justifies it.
//! Pass a directory to also write the files.

use docrel::synth::{generate, write_outputs, SynthConfig};

fn main() -> docrel::Result<()> {
    let out = generate(&SynthConfig::default())?;
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    let cert = out.certificates.iter().find(|c| c.cross_paragraph).expect("a cross-paragraph document");
    let doc = out.train.iter().chain(&out.test).find(|d| d.id == cert.doc).unwrap();
    println!("\n{} ({} + {} + {}):\n{}", doc.id, cert.drug, cert.gene, cert.mutation, doc.text());
    println!("\nplanted chain:");
    for l in cert.links() {
        let (a, b) = (doc.mention(&l.from).unwrap(), doc.mention(&l.to).unwrap());
        println!("  {:?}: \"{}\" -> \"{}\"", l.kind, a.surface, b.surface);
    }
    if let Some(dir) = std::env::args().nth(1) {
        write_outputs(&dir, &out)?;
        println!("\nwrote {dir}");
    }
    Ok(())
}
