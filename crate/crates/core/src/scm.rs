//! Ground-truth structural causal models with additive Gaussian noise.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::expr::StructuralFunction;

/// A DAG given by ordered parent lists. The order of `parents(n)` fixes the
/// coordinate order of the inputs of `f_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    parents: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl Graph {
    pub fn new(parents: Vec<Vec<usize>>) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        for (child, pa) in parents.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for &p in pa {
                if p >= n {
                    return Err(Error::InvalidGraph(format!(
                        "node {child} has parent {p}, but there are only {n} nodes"
                    )));
                }
                if p == child {
                    return Err(Error::InvalidGraph(format!("node {child} is its own parent")));
                }
                if !seen.insert(p) {
                    return Err(Error::InvalidGraph(format!(
                        "node {child} lists parent {p} twice"
                    )));
                }
            }
        }
        let order = kahn(&parents)?;
        Ok(Self { parents, order })
    }

    /// Builds a graph from an edge list; parent lists come out ascending.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut parents = vec![Vec::new(); n_nodes];
        for &(from, to) in edges {
            if to >= n_nodes {
                return Err(Error::InvalidGraph(format!("edge target {to} out of range")));
            }
            parents[to].push(from);
        }
        for pa in &mut parents {
            pa.sort_unstable();
        }
        Self::new(parents)
    }

    /// The chain `0 -> 1 -> ... -> n-1`.
    pub fn chain(n_nodes: usize) -> Self {
        let parents = (0..n_nodes)
            .map(|i| if i == 0 { vec![] } else { vec![i - 1] })
            .collect();
        Self::new(parents).expect("a chain is acyclic")
    }

    pub fn n_nodes(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    /// Topological order with ties broken by ascending node id.
    pub fn topo_order(&self) -> &[usize] {
        &self.order
    }

    /// Node ids along the chain when the graph is a single directed path,
    /// `None` otherwise.
    pub fn chain_order(&self) -> Option<Vec<usize>> {
        let n = self.n_nodes();
        let mut child_count = vec![0usize; n];
        for pa in &self.parents {
            if pa.len() > 1 {
                return None;
            }
            for &p in pa {
                child_count[p] += 1;
            }
        }
        if child_count.iter().any(|&c| c > 1) {
            return None;
        }
        let roots: Vec<usize> = (0..n).filter(|&i| self.parents[i].is_empty()).collect();
        if roots.len() != 1 {
            return None;
        }
        // With one root, in-degree <= 1 and out-degree <= 1, the topological
        // order is the path itself.
        let order = self.order.clone();
        for w in order.windows(2) {
            if self.parents[w[1]] != [w[0]] {
                return None;
            }
        }
        Some(order)
    }

    pub(crate) fn gather(&self, node: usize, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.parents[node].iter().map(|&p| x[p]));
    }

    pub fn parent_values(&self, node: usize, x: &[f64]) -> Vec<f64> {
        self.parents[node].iter().map(|&p| x[p]).collect()
    }
}

fn kahn(parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (c, pa) in parents.iter().enumerate() {
        for &p in pa {
            children[p].push(c);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(next) = ready.pop_first() {
        order.push(next);
        for &c in &children[next] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != n {
        return Err(Error::InvalidGraph("graph contains a cycle".into()));
    }
    Ok(order)
}

pub fn topo_order(graph: &Graph) -> Vec<usize> {
    graph.topo_order().to_vec()
}

/// `do(X_var = x_val)`. Clamps are kept sorted by node id; the empty list is
/// the null intervention.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Intervention {
    clamps: Vec<(usize, f64)>,
}

impl Intervention {
    pub fn null() -> Self {
        Self::default()
    }

    pub fn new(mut clamps: Vec<(usize, f64)>) -> Result<Self> {
        clamps.sort_by_key(|c| c.0);
        for w in clamps.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidIntervention(format!(
                    "node {} clamped twice",
                    w[0].0
                )));
            }
        }
        if let Some((node, v)) = clamps.iter().find(|c| !c.1.is_finite()) {
            return Err(Error::InvalidIntervention(format!(
                "clamp value {v} for node {node} is not finite"
            )));
        }
        Ok(Self { clamps })
    }

    pub fn single(node: usize, value: f64) -> Result<Self> {
        Self::new(vec![(node, value)])
    }

    pub fn clamps(&self) -> &[(usize, f64)] {
        &self.clamps
    }

    pub fn is_null(&self) -> bool {
        self.clamps.is_empty()
    }

    pub fn clamp_of(&self, node: usize) -> Option<f64> {
        self.clamps
            .binary_search_by_key(&node, |c| c.0)
            .ok()
            .map(|k| self.clamps[k].1)
    }

    pub fn clamps_node(&self, node: usize) -> bool {
        self.clamp_of(node).is_some()
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.clamps.iter().map(|c| c.0)
    }

    pub fn validate_for(&self, n_nodes: usize) -> Result<()> {
        match self.clamps.last() {
            Some(&(node, _)) if node >= n_nodes => Err(Error::InvalidIntervention(format!(
                "node {node} out of range for {n_nodes} nodes"
            ))),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for Intervention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_null() {
            return f.write_str("do()");
        }
        f.write_str("do(")?;
        for (k, (node, v)) in self.clamps.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "X{node}={v}")?;
        }
        f.write_str(")")
    }
}

/// One sample tagged with the intervention it was drawn under.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub intervention: Intervention,
    pub x: Vec<f64>,
}

impl Draw {
    pub fn validate_for(&self, graph: &Graph) -> Result<()> {
        if self.x.len() != graph.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: graph.n_nodes(),
                found: self.x.len(),
            });
        }
        if let Some(v) = self.x.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidDraw(format!("non-finite value {v}")));
        }
        self.intervention.validate_for(graph.n_nodes())?;
        for &(node, v) in self.intervention.clamps() {
            if self.x[node] != v {
                return Err(Error::InvalidDraw(format!(
                    "node {node} is clamped at {v} but the draw has {}",
                    self.x[node]
                )));
            }
        }
        Ok(())
    }
}

/// Anything with the shape of an additive-Gaussian SCM: a graph, a
/// conditional mean per node and a noise variance per node. Both the ground
/// truth and the plug-in estimate implement it.
pub trait GaussianScm {
    fn graph(&self) -> &Graph;
    fn mean(&self, node: usize, parent_values: &[f64]) -> f64;
    fn noise_var(&self, node: usize) -> f64;
}

/// Ancestral sampling under `do(i)`.
pub fn sample_model<M, R>(model: &M, i: &Intervention, rng: &mut R) -> Result<Draw>
where
    M: GaussianScm + ?Sized,
    R: Rng + ?Sized,
{
    let graph = model.graph();
    i.validate_for(graph.n_nodes())?;
    let mut x = vec![0.0; graph.n_nodes()];
    let mut pa = Vec::new();
    for &node in graph.topo_order() {
        x[node] = match i.clamp_of(node) {
            Some(v) => v,
            None => {
                graph.gather(node, &x, &mut pa);
                let z: f64 = StandardNormal.sample(rng);
                model.mean(node, &pa) + model.noise_var(node).sqrt() * z
            }
        };
    }
    Ok(Draw {
        intervention: i.clone(),
        x,
    })
}

/// Log-density of the non-intervened coordinates of `x` under `do(i)`;
/// clamped coordinates are point masses and contribute nothing.
pub fn model_log_density<M>(model: &M, i: &Intervention, x: &[f64]) -> Result<f64>
where
    M: GaussianScm + ?Sized,
{
    let graph = model.graph();
    if x.len() != graph.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: graph.n_nodes(),
            found: x.len(),
        });
    }
    i.validate_for(graph.n_nodes())?;
    for &(node, v) in i.clamps() {
        if x[node] != v {
            return Err(Error::InvalidPoint(format!(
                "coordinate {node} is {} but the intervention clamps it at {v}",
                x[node]
            )));
        }
    }
    let mut pa = Vec::new();
    let mut total = 0.0;
    for node in 0..graph.n_nodes() {
        if i.clamps_node(node) {
            continue;
        }
        graph.gather(node, x, &mut pa);
        total += gaussian_log_pdf(x[node], model.mean(node, &pa), model.noise_var(node));
    }
    Ok(total)
}

pub(crate) fn gaussian_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

/// The ground-truth model `X_n = f_n(X_pa(n)) + E_n`, `E_n ~ N(0, σ_n²)`.
#[derive(Debug, Clone)]
pub struct ScmSpec {
    graph: Graph,
    functions: Vec<StructuralFunction>,
    noise_vars: Vec<f64>,
}

impl ScmSpec {
    pub fn new(
        graph: Graph,
        functions: Vec<StructuralFunction>,
        noise_vars: Vec<f64>,
    ) -> Result<Self> {
        let n = graph.n_nodes();
        if functions.len() != n || noise_vars.len() != n {
            return Err(Error::InvalidModel(format!(
                "{n} nodes but {} functions and {} noise variances",
                functions.len(),
                noise_vars.len()
            )));
        }
        for (node, f) in functions.iter().enumerate() {
            if f.arity() != graph.parents(node).len() {
                return Err(Error::InvalidModel(format!(
                    "function for node {node} has arity {} but the node has {} parents",
                    f.arity(),
                    graph.parents(node).len()
                )));
            }
        }
        if let Some(v) = noise_vars.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidModel(format!(
                "noise variances must be positive, got {v}"
            )));
        }
        Ok(Self {
            graph,
            functions,
            noise_vars,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn function(&self, node: usize) -> &StructuralFunction {
        &self.functions[node]
    }

    pub fn noise_vars(&self) -> &[f64] {
        &self.noise_vars
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }
}

impl GaussianScm for ScmSpec {
    fn graph(&self) -> &Graph {
        &self.graph
    }

    fn mean(&self, node: usize, parent_values: &[f64]) -> f64 {
        self.functions[node].eval(parent_values)
    }

    fn noise_var(&self, node: usize) -> f64 {
        self.noise_vars[node]
    }
}

pub fn sample_scm<R: Rng + ?Sized>(scm: &ScmSpec, i: &Intervention, rng: &mut R) -> Result<Draw> {
    sample_model(scm, i, rng)
}

pub fn log_density(scm: &ScmSpec, i: &Intervention, x: &[f64]) -> Result<f64> {
    model_log_density(scm, i, x)
}
