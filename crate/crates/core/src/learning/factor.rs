//! Binary factor graphs and marginal inference: exact enumeration, sum-product
//! belief propagation, and mean-field coordinate updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonnegative table over binary variables. Entry `a` holds the value for
/// the assignment whose bit `i` is the value of `vars[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub vars: Vec<usize>,
    pub table: Vec<f64>,
    pub hard: bool,
}

impl Factor {
    pub fn table(name: impl Into<String>, vars: Vec<usize>, table: Vec<f64>) -> Self {
        Factor {
            name: name.into(),
            vars,
            table,
            hard: false,
        }
    }

    /// Prediction factor: `p` for true, `1 - p` for false.
    pub fn unary(name: impl Into<String>, var: usize, p: f64) -> Self {
        Self::table(name, vec![var], vec![1.0 - p, p])
    }

    /// Hard constraint fixing one variable.
    pub fn pin(name: impl Into<String>, var: usize, value: bool) -> Self {
        let table = if value { vec![0.0, 1.0] } else { vec![1.0, 0.0] };
        Factor {
            hard: true,
            ..Self::table(name, vec![var], table)
        }
    }

    /// Hard rule `premises => conclusion`.
    pub fn implication(name: impl Into<String>, premises: &[usize], conclusion: usize) -> Self {
        let mut f = Self::soft_implication(name, premises, conclusion, 0.0);
        f.hard = true;
        f
    }

    /// Rule whose violation multiplies the weight by `penalty` instead of
    /// zeroing it. Defaults elsewhere keep rules hard.
    pub fn soft_implication(name: impl Into<String>, premises: &[usize], conclusion: usize, penalty: f64) -> Self {
        let mut vars = premises.to_vec();
        vars.push(conclusion);
        let k = vars.len();
        let all_premises = (1usize << (k - 1)) - 1;
        let table = (0..1usize << k)
            .map(|a| {
                let body = a & all_premises == all_premises;
                let head = a >> (k - 1) & 1 == 1;
                if body && !head {
                    penalty
                } else {
                    1.0
                }
            })
            .collect();
        Self::table(name, vars, table)
    }

    pub fn value(&self, assign: &[bool]) -> f64 {
        let idx = self
            .vars
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &v)| acc | ((assign[v] as usize) << i));
        self.table[idx]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorGraph {
    pub names: Vec<String>,
    pub factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.names.push(name.into());
        self.names.len() - 1
    }

    pub fn add_factor(&mut self, f: Factor) {
        self.factors.push(f);
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut touched = vec![false; self.num_vars()];
        for f in &self.factors {
            if f.vars.is_empty() {
                return Err(Error::Validation(format!("factor {} has no variables", f.name)));
            }
            if f.table.len() != 1 << f.vars.len() {
                return Err(Error::Validation(format!(
                    "factor {} has {} entries for {} variables",
                    f.name,
                    f.table.len(),
                    f.vars.len()
                )));
            }
            for (i, &v) in f.vars.iter().enumerate() {
                if v >= self.num_vars() {
                    return Err(Error::Validation(format!("factor {} uses unknown variable {v}", f.name)));
                }
                if f.vars[..i].contains(&v) {
                    return Err(Error::Validation(format!("factor {} repeats variable {v}", f.name)));
                }
                touched[v] = true;
            }
            for &x in &f.table {
                if !x.is_finite() || x < 0.0 || (f.hard && x != 0.0 && x != 1.0) {
                    return Err(Error::Validation(format!("factor {} has entry {x}", f.name)));
                }
            }
        }
        if let Some(v) = touched.iter().position(|t| !t) {
            return Err(Error::Validation(format!("variable {} has no factor", self.names[v])));
        }
        Ok(())
    }

    /// Unnormalized weight of a full assignment.
    pub fn weight(&self, assign: &[bool]) -> f64 {
        self.factors.iter().map(|f| f.value(assign)).product()
    }

    /// Connected components as (variables, factor indices), in order of
    /// their smallest variable.
    pub fn components(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let n = self.num_vars();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.factors {
            for w in f.vars.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut slot = vec![usize::MAX; n];
        let mut out: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            if slot[r] == usize::MAX {
                slot[r] = out.len();
                out.push((Vec::new(), Vec::new()));
            }
            out[slot[r]].0.push(v);
        }
        for (fi, f) in self.factors.iter().enumerate() {
            let r = find(&mut parent, f.vars[0]);
            out[slot[r]].1.push(fi);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    /// Probability that each variable is true.
    pub q: Vec<f64>,
    pub converged: bool,
    /// Largest number of message-passing rounds used by any component.
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BpConfig {
    pub max_iters: usize,
    pub damping: f64,
    pub tolerance: f64,
    /// Components with at most this many variables are solved by enumeration.
    pub exact_limit: usize,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            max_iters: 100,
            damping: 0.5,
            tolerance: 1e-6,
            exact_limit: 16,
        }
    }
}

fn component_partition(graph: &FactorGraph, vars: &[usize], factors: &[usize], skip: Option<usize>) -> (f64, Vec<f64>) {
    let mut assign = vec![false; graph.num_vars()];
    let mut z = 0.0;
    let mut z1 = vec![0.0; vars.len()];
    for a in 0..1usize << vars.len() {
        for (i, &v) in vars.iter().enumerate() {
            assign[v] = a >> i & 1 == 1;
        }
        let w: f64 = factors
            .iter()
            .filter(|&&f| Some(f) != skip)
            .map(|&f| graph.factors[f].value(&assign))
            .product();
        if w == 0.0 {
            continue;
        }
        z += w;
        for (i, t) in z1.iter_mut().enumerate() {
            if a >> i & 1 == 1 {
                *t += w;
            }
        }
    }
    (z, z1)
}

/// Smallest-by-deletion set of factors whose product is identically zero.
fn unsat_core(graph: &FactorGraph, vars: &[usize], factors: &[usize]) -> Vec<String> {
    let mut core: Vec<usize> = factors.to_vec();
    let mut i = 0;
    while i < core.len() {
        let trial: Vec<usize> = core.iter().copied().filter(|&f| f != core[i]).collect();
        if component_partition(graph, vars, &trial, None).0 == 0.0 {
            core = trial;
        } else {
            i += 1;
        }
    }
    core.iter().map(|&f| graph.factors[f].name.clone()).collect()
}

fn hard_names(graph: &FactorGraph, factors: &[usize]) -> Vec<String> {
    factors
        .iter()
        .filter(|&&f| graph.factors[f].hard || graph.factors[f].table.iter().any(|&x| x == 0.0))
        .map(|&f| graph.factors[f].name.clone())
        .collect()
}

/// Exact marginals by enumerating every assignment of every component.
pub fn exact_marginals(graph: &FactorGraph) -> Result<Marginals> {
    graph.validate()?;
    let mut q = vec![0.0; graph.num_vars()];
    for (vars, factors) in graph.components() {
        if vars.len() > 24 {
            return Err(Error::Domain(format!("{} variables are too many to enumerate", vars.len())));
        }
        solve_exact(graph, &vars, &factors, &mut q)?;
    }
    Ok(Marginals {
        q,
        converged: true,
        iterations: 0,
    })
}

fn solve_exact(graph: &FactorGraph, vars: &[usize], factors: &[usize], q: &mut [f64]) -> Result<()> {
    let (z, z1) = component_partition(graph, vars, factors, None);
    if z == 0.0 {
        return Err(Error::Inconsistent {
            factors: unsat_core(graph, vars, factors),
        });
    }
    for (i, &v) in vars.iter().enumerate() {
        q[v] = z1[i] / z;
    }
    Ok(())
}

struct Bp<'a> {
    graph: &'a FactorGraph,
    factors: &'a [usize],
    /// For each variable in the component: (slot into `factors`, position).
    incident: Vec<Vec<(usize, usize)>>,
    local: Vec<usize>,
    to_var: Vec<Vec<[f64; 2]>>,
    to_factor: Vec<Vec<[f64; 2]>>,
}

fn normalize(m: [f64; 2]) -> Option<[f64; 2]> {
    let s = m[0] + m[1];
    (s > 0.0 && s.is_finite()).then(|| [m[0] / s, m[1] / s])
}

impl<'a> Bp<'a> {
    fn new(graph: &'a FactorGraph, vars: &[usize], factors: &'a [usize]) -> Self {
        let mut local = vec![usize::MAX; graph.num_vars()];
        for (i, &v) in vars.iter().enumerate() {
            local[v] = i;
        }
        let mut incident = vec![Vec::new(); vars.len()];
        for (s, &f) in factors.iter().enumerate() {
            for (p, &v) in graph.factors[f].vars.iter().enumerate() {
                incident[local[v]].push((s, p));
            }
        }
        let shape: Vec<Vec<[f64; 2]>> = factors
            .iter()
            .map(|&f| vec![[0.5, 0.5]; graph.factors[f].vars.len()])
            .collect();
        Bp {
            graph,
            factors,
            incident,
            local,
            to_var: shape.clone(),
            to_factor: shape,
        }
    }

    fn inconsistent(&self) -> Error {
        Error::Inconsistent {
            factors: hard_names(self.graph, self.factors),
        }
    }

    /// One synchronous round; returns the largest change of a factor-to-
    /// variable message.
    fn round(&mut self, damping: f64) -> Result<f64> {
        for (s, &f) in self.factors.iter().enumerate() {
            for (p, &v) in self.graph.factors[f].vars.iter().enumerate() {
                let mut m = [1.0, 1.0];
                for &(s2, p2) in &self.incident[self.local[v]] {
                    if (s2, p2) != (s, p) {
                        m[0] *= self.to_var[s2][p2][0];
                        m[1] *= self.to_var[s2][p2][1];
                    }
                }
                self.to_factor[s][p] = normalize(m).ok_or_else(|| self.inconsistent())?;
            }
        }
        let mut residual: f64 = 0.0;
        let mut next = self.to_var.clone();
        for (s, &f) in self.factors.iter().enumerate() {
            let fac = &self.graph.factors[f];
            let k = fac.vars.len();
            for p in 0..k {
                let mut m = [0.0, 0.0];
                for a in 0..1usize << k {
                    let mut w = fac.table[a];
                    if w == 0.0 {
                        continue;
                    }
                    for p2 in 0..k {
                        if p2 != p {
                            w *= self.to_factor[s][p2][a >> p2 & 1];
                        }
                    }
                    m[a >> p & 1] += w;
                }
                let m = normalize(m).ok_or_else(|| self.inconsistent())?;
                let old = self.to_var[s][p];
                let new = [
                    (1.0 - damping) * m[0] + damping * old[0],
                    (1.0 - damping) * m[1] + damping * old[1],
                ];
                residual = residual.max((new[0] - old[0]).abs()).max((new[1] - old[1]).abs());
                next[s][p] = new;
            }
        }
        self.to_var = next;
        Ok(residual)
    }

    fn beliefs(&self, vars: &[usize], q: &mut [f64]) -> Result<()> {
        for (i, &v) in vars.iter().enumerate() {
            let mut b = [1.0, 1.0];
            for &(s, p) in &self.incident[i] {
                b[0] *= self.to_var[s][p][0];
                b[1] *= self.to_var[s][p][1];
            }
            q[v] = normalize(b).ok_or_else(|| self.inconsistent())?[1];
        }
        Ok(())
    }
}

fn is_tree(graph: &FactorGraph, vars: &[usize], factors: &[usize]) -> bool {
    let edges: usize = factors.iter().map(|&f| graph.factors[f].vars.len()).sum();
    edges + 1 == vars.len() + factors.len()
}

/// Posterior marginals of every variable. Components small enough are
/// enumerated; tree components run plain sum-product (exact at
/// convergence); the rest run damped loopy BP. Contradictory hard factors
/// raise [`Error::Inconsistent`] with the factors involved.
pub fn e_step(graph: &FactorGraph, cfg: &BpConfig) -> Result<Marginals> {
    graph.validate()?;
    let mut q = vec![0.0; graph.num_vars()];
    let mut converged = true;
    let mut iterations = 0;
    for (vars, factors) in graph.components() {
        if vars.len() <= cfg.exact_limit {
            solve_exact(graph, &vars, &factors, &mut q)?;
            continue;
        }
        let tree = is_tree(graph, &vars, &factors);
        let damping = if tree { 0.0 } else { cfg.damping };
        let mut bp = Bp::new(graph, &vars, &factors);
        let mut done = false;
        let mut rounds = 0;
        while rounds < cfg.max_iters.max(1) {
            rounds += 1;
            if bp.round(damping)? < cfg.tolerance {
                done = true;
                break;
            }
        }
        bp.beliefs(&vars, &mut q)?;
        converged &= done;
        iterations = iterations.max(rounds);
    }
    Ok(Marginals { q, converged, iterations })
}

/// Coordinate update `q_i ∝ exp(sum over factors of E[ln f])`, with the
/// expectation over the other variables under `q`. A zero entry whose
/// assignment has zero probability contributes nothing.
pub fn mean_field_update(q: &[f64], i: usize, graph: &FactorGraph) -> f64 {
    let mut s = [0.0f64, 0.0f64];
    for f in graph.factors.iter().filter(|f| f.vars.contains(&i)) {
        let pos = f.vars.iter().position(|&v| v == i).unwrap();
        for (x, acc) in s.iter_mut().enumerate() {
            let mut e = 0.0;
            for a in 0..1usize << f.vars.len() {
                if a >> pos & 1 != x {
                    continue;
                }
                let mut w = 1.0;
                for (p, &v) in f.vars.iter().enumerate() {
                    if p != pos {
                        w *= if a >> p & 1 == 1 { q[v] } else { 1.0 - q[v] };
                    }
                }
                if w == 0.0 {
                    continue;
                }
                let t = f.table[a];
                e += if t == 0.0 { f64::NEG_INFINITY } else { w * t.ln() };
            }
            *acc += e;
        }
    }
    match (s[0] == f64::NEG_INFINITY, s[1] == f64::NEG_INFINITY) {
        (true, true) => q[i],
        (true, false) => 1.0,
        (false, true) => 0.0,
        _ => {
            let m = s[0].max(s[1]);
            let (e0, e1) = ((s[0] - m).exp(), (s[1] - m).exp());
            e1 / (e0 + e1)
        }
    }
}

/// Sequential mean-field sweeps from `init` until no coordinate moves more
/// than `tolerance`.
pub fn mean_field(graph: &FactorGraph, init: &[f64], max_sweeps: usize, tolerance: f64) -> Marginals {
    let mut q = init.to_vec();
    for sweep in 1..=max_sweeps {
        let mut delta: f64 = 0.0;
        for i in 0..q.len() {
            let new = mean_field_update(&q, i, graph);
            delta = delta.max((new - q[i]).abs());
            q[i] = new;
        }
        if delta < tolerance {
            return Marginals {
                q,
                converged: true,
                iterations: sweep,
            };
        }
    }
    Marginals {
        q,
        converged: false,
        iterations: max_sweeps,
    }
}
