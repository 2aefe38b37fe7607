//! Marginals of a small loopy factor graph over link variables: exact
//! enumeration against damped loopy BP, and a contradiction report.

use docrel::learning::{e_step, exact_marginals, BpConfig, Factor, FactorGraph};

fn main() -> docrel::Result<()> {
    // Three candidate links forming a transitivity triangle plus a fourth
    // that closes a loop.
    let mut g = FactorGraph::new();
    let ab = g.add_var("a->b");
    let bc = g.add_var("b->c");
    let ac = g.add_var("a->c");
    let cd = g.add_var("c->d");
    for (v, p) in [(ab, 0.9), (bc, 0.7), (ac, 0.3), (cd, 0.6)] {
        g.add_factor(Factor::unary(format!("psi{v}"), v, p));
    }
    g.add_factor(Factor::soft_implication("trans", &[ab, bc], ac, 0.1));
    g.add_factor(Factor::soft_implication("loop", &[ac, cd], ab, 0.2));
    let exact = exact_marginals(&g)?;
    let bp = e_step(&g, &BpConfig { exact_limit: 0, ..BpConfig::default() })?;
    println!("var      exact     loopy BP");
    for (i, name) in g.names.iter().enumerate() {
        println!("{name:6}  {:.5}  {:.5}", exact.q[i], bp.q[i]);
    }
    println!("BP converged: {} after {} iteration(s)", bp.converged, bp.iterations);

    let mut bad = FactorGraph::new();
    let x = bad.add_var("x");
    let y = bad.add_var("y");
    bad.add_factor(Factor::implication("x_implies_y", &[x], y));
    bad.add_factor(Factor::pin("x_true", x, true));
    bad.add_factor(Factor::pin("y_false", y, false));
    bad.add_factor(Factor::unary("noise", x, 0.5));
    match e_step(&bad, &BpConfig::default()) {
        Err(e) => println!("{e}"),
        Ok(_) => println!("unexpectedly satisfiable"),
    }
    Ok(())
}
