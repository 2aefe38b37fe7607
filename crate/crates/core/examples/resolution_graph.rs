//! Builds the resolution graph of the walkthrough example by hand, closes
//! it, and replays the provenance of every derived edge.

use docrel::resolution::{close_graph, verify_provenance, LinkKind, Provenance, ResolutionGraph, ResolutionLink};

fn main() -> docrel::Result<()> {
    let names = ["cobimetinib", "MEK inhibitor", "MEK inhibitors", "K57T", "MAP2K1 mutation", "MAP2K1 mutants"];
    let mut g = ResolutionGraph::with_nodes("fig1".into(), names.iter().map(|s| s.to_string()));
    let rule = |name: &str| Provenance::SeedRule { name: name.into() };
    g.add(ResolutionLink::new("cobimetinib", "MEK inhibitor", LinkKind::Isa, 1.0, rule("apposition")))?;
    g.add(ResolutionLink::new("MEK inhibitor", "MEK inhibitors", LinkKind::Coref, 0.8, rule("learned")))?;
    g.add(ResolutionLink::new("K57T", "MAP2K1 mutation", LinkKind::Isa, 0.9, rule("copula")))?;
    g.add(ResolutionLink::new("MAP2K1 mutation", "MAP2K1 mutants", LinkKind::Resolve, 0.95, rule("learned")))?;
    let closed = close_graph(&g);
    println!("{} stored edges, {} after closure", g.len(), closed.len());
    for l in closed.links().filter(|l| l.provenance.is_closure()) {
        verify_provenance(&closed, &l.key())?;
        println!("{}  conf {:.2}  <- {}", l.key(), l.confidence, l.provenance);
    }
    let mut dump = Vec::new();
    closed.write_dump(&mut dump)?;
    println!("\ndump: {} line(s)", dump.iter().filter(|&&b| b == b'\n').count());
    Ok(())
}
