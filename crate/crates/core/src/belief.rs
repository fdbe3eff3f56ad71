//! Joint GP belief over the structural functions and the expected total risk
//! it implies.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gp::{self, constant_posterior_var, fit_posterior, Kernel, KernelKind, NodePosterior, RegressionData};
use crate::scm::{Draw, GaussianScm, Graph, Intervention};

/// Importance measure and weight of one node: `Π_n` uniform on
/// `[lo, hi]^|pa(n)|`, weight `α_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRisk {
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskSpec {
    pub nodes: Vec<NodeRisk>,
    /// Midpoint-rule points per axis for one-dimensional inputs.
    pub grid_1d: usize,
    /// Points per axis for inputs of dimension two or more.
    pub grid_nd: usize,
}

impl RiskSpec {
    pub const DEFAULT_GRID_1D: usize = 200;
    pub const DEFAULT_GRID_ND: usize = 60;

    pub fn uniform(n_nodes: usize, lo: f64, hi: f64) -> Self {
        Self {
            nodes: vec![NodeRisk { lo, hi, alpha: 1.0 }; n_nodes],
            grid_1d: Self::DEFAULT_GRID_1D,
            grid_nd: Self::DEFAULT_GRID_ND,
        }
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        if self.nodes.len() != n_nodes {
            return Err(Error::DimensionMismatch {
                expected: n_nodes,
                found: self.nodes.len(),
            });
        }
        for (n, r) in self.nodes.iter().enumerate() {
            if !(r.lo < r.hi) || !r.lo.is_finite() || !r.hi.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "risk box of node {n} is [{}, {}]",
                    r.lo, r.hi
                )));
            }
            if !(r.alpha >= 0.0) || !r.alpha.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "risk weight of node {n} is {}",
                    r.alpha
                )));
            }
        }
        if self.grid_1d == 0 || self.grid_nd == 0 {
            return Err(Error::InvalidArgument("quadrature resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn resolution(&self, dim: usize) -> usize {
        if dim <= 1 {
            self.grid_1d
        } else {
            self.grid_nd
        }
    }

    pub fn grid(&self, node: usize, dim: usize) -> QuadratureGrid {
        let r = self.nodes[node];
        QuadratureGrid::midpoint(dim, r.lo, r.hi, self.resolution(dim))
    }
}

/// Tensor-product midpoint rule on `[lo, hi]^dim` with equal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    dim: usize,
    axis: Vec<f64>,
}

impl QuadratureGrid {
    pub fn midpoint(dim: usize, lo: f64, hi: f64, per_axis: usize) -> Self {
        let h = (hi - lo) / per_axis as f64;
        let axis = (0..per_axis).map(|g| lo + (g as f64 + 0.5) * h).collect();
        Self { dim, axis }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn len(&self) -> usize {
        self.axis.len().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Points in row-major order (last coordinate fastest).
    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let g = self.axis.len();
        (0..self.len()).map(move |mut q| {
            let mut p = vec![0.0; self.dim];
            for d in (0..self.dim).rev() {
                p[d] = self.axis[q % g];
                q /= g;
            }
            p
        })
    }

    /// `∫ h dΠ` by the midpoint rule.
    pub fn integrate(&self, mut h: impl FnMut(&[f64]) -> f64) -> f64 {
        let w = self.weight();
        self.points().map(|p| h(&p)).sum::<f64>() * w
    }
}

/// Belief about one structural function.
#[derive(Debug, Clone)]
pub enum NodeBelief {
    /// Parentless node: the unknown is a constant with a Gaussian prior.
    Constant {
        prior_var: f64,
        noise_var: f64,
        count: usize,
        mean: f64,
        var: f64,
    },
    Gp(NodePosterior),
}

impl NodeBelief {
    pub fn mean_var(&self, x_pa: &[f64]) -> (f64, f64) {
        match self {
            NodeBelief::Constant { mean, var, .. } => (*mean, *var),
            NodeBelief::Gp(p) => p.mean_var_unchecked(x_pa),
        }
    }

    pub fn mean(&self, x_pa: &[f64]) -> f64 {
        match self {
            NodeBelief::Constant { mean, .. } => *mean,
            NodeBelief::Gp(p) => p.mean_unchecked(x_pa),
        }
    }

    pub fn count(&self) -> usize {
        match self {
            NodeBelief::Constant { count, .. } => *count,
            NodeBelief::Gp(p) => p.len(),
        }
    }
}

/// Prior ingredients shared by every belief snapshot: graph, known noise
/// variances and one kernel per node.
#[derive(Debug, Clone)]
pub struct Prior {
    pub graph: Graph,
    pub noise_vars: Vec<f64>,
    pub kernels: Vec<Kernel>,
}

impl Prior {
    pub fn new(graph: Graph, noise_vars: Vec<f64>, kernels: Vec<Kernel>) -> Result<Self> {
        let n = graph.n_nodes();
        if noise_vars.len() != n || kernels.len() != n {
            return Err(Error::InvalidModel(format!(
                "{n} nodes but {} noise variances and {} kernels",
                noise_vars.len(),
                kernels.len()
            )));
        }
        if let Some(v) = noise_vars.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidModel(format!("noise variance {v} must be positive")));
        }
        Ok(Self {
            graph,
            noise_vars,
            kernels,
        })
    }

    /// The same kernel for every node.
    pub fn shared_kernel(graph: Graph, noise_vars: Vec<f64>, kernel: Kernel) -> Result<Self> {
        let n = graph.n_nodes();
        Self::new(graph, noise_vars, vec![kernel; n])
    }
}

/// Regression pairs for node `n`: one per draw that does not clamp `n`.
/// Draws that clamp a parent of `n` are kept; their clamp is the input.
pub fn extract_node_data(
    draws: &[Draw],
    node: usize,
    graph: &Graph,
    noise_var: f64,
) -> Result<RegressionData> {
    let mut data = RegressionData::new(graph.parents(node).len(), noise_var)?;
    for d in draws.iter().filter(|d| !d.intervention.clamps_node(node)) {
        data.push(graph.parent_values(node, &d.x), d.x[node])?;
    }
    Ok(data)
}

/// An immutable snapshot of the belief `f | D`.
#[derive(Debug, Clone)]
pub struct BeliefState {
    prior: Prior,
    draws: Vec<Draw>,
    nodes: Vec<NodeBelief>,
}

impl BeliefState {
    pub fn empty(prior: Prior) -> Result<Self> {
        Self::fit(prior, Vec::new())
    }

    pub fn fit(prior: Prior, draws: Vec<Draw>) -> Result<Self> {
        for d in &draws {
            d.validate_for(&prior.graph)?;
        }
        let graph = &prior.graph;
        let nodes = (0..graph.n_nodes())
            .map(|n| {
                let data = extract_node_data(&draws, n, graph, prior.noise_vars[n])?;
                let kernel = prior.kernels[n];
                Ok(if graph.parents(n).is_empty() {
                    let (mean, var) = gp::constant_posterior(kernel.amplitude, data.noise_var(), data.outputs());
                    NodeBelief::Constant {
                        prior_var: kernel.amplitude,
                        noise_var: data.noise_var(),
                        count: data.len(),
                        mean,
                        var,
                    }
                } else {
                    NodeBelief::Gp(fit_posterior(&kernel, &data)?)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { prior, draws, nodes })
    }

    /// A new snapshot with one more draw; refits from scratch.
    pub fn with_draw(&self, draw: Draw) -> Result<Self> {
        let mut draws = self.draws.clone();
        draws.push(draw);
        Self::fit(self.prior.clone(), draws)
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn graph(&self) -> &Graph {
        &self.prior.graph
    }

    pub fn n_nodes(&self) -> usize {
        self.prior.graph.n_nodes()
    }

    pub fn draws(&self) -> &[Draw] {
        &self.draws
    }

    pub fn node(&self, n: usize) -> &NodeBelief {
        &self.nodes[n]
    }

    pub fn noise_var(&self, n: usize) -> f64 {
        self.prior.noise_vars[n]
    }

    /// The plug-in model `X_n = μ_n(X_pa(n)) + E_n`.
    pub fn plug_in(&self) -> PlugInModel<'_> {
        PlugInModel(self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlugInModel<'a>(&'a BeliefState);

impl GaussianScm for PlugInModel<'_> {
    fn graph(&self) -> &Graph {
        self.0.graph()
    }

    fn mean(&self, node: usize, parent_values: &[f64]) -> f64 {
        self.0.nodes[node].mean(parent_values)
    }

    fn noise_var(&self, node: usize) -> f64 {
        self.0.noise_var(node)
    }
}

/// `E_{f|D}[L(f̂ || f)] = Σ α_n ∫ (f̂_n − μ_n)² + k_n|D(x,x) dΠ_n`.
pub fn expected_risk_of_estimate(
    b: &BeliefState,
    fhat: impl Fn(usize, &[f64]) -> f64,
    spec: &RiskSpec,
) -> f64 {
    (0..b.n_nodes())
        .map(|n| {
            let alpha = spec.nodes[n].alpha;
            if alpha == 0.0 {
                return 0.0;
            }
            let grid = spec.grid(n, b.graph().parents(n).len());
            alpha
                * grid.integrate(|x| {
                    let (m, v) = b.node(n).mean_var(x);
                    let d = fhat(n, x) - m;
                    d * d + v
                })
        })
        .sum()
}

/// Contribution `α_n ∫ k_n|D(x,x) dΠ_n` of one node.
pub fn node_expected_risk(b: &BeliefState, node: usize, spec: &RiskSpec) -> f64 {
    let alpha = spec.nodes[node].alpha;
    if alpha == 0.0 {
        return 0.0;
    }
    let grid = spec.grid(node, b.graph().parents(node).len());
    alpha * grid.integrate(|x| b.node(node).mean_var(x).1)
}

/// `R(D)`: the expected total risk at the posterior-mean estimate.
pub fn expected_total_risk(b: &BeliefState, spec: &RiskSpec) -> f64 {
    (0..b.n_nodes()).map(|n| node_expected_risk(b, n, spec)).sum()
}

/// One ancestral draw from the belief predictive under `do(i)`, each node
/// drawn from `N(μ_n(x_pa), k_n|D(x_pa, x_pa) + σ_n²)`.
pub fn sample_predictive<R: Rng + ?Sized>(
    b: &BeliefState,
    i: &Intervention,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let graph = b.graph();
    i.validate_for(graph.n_nodes())?;
    let mut x = vec![0.0; graph.n_nodes()];
    let mut pa = Vec::new();
    for &node in graph.topo_order() {
        x[node] = match i.clamp_of(node) {
            Some(v) => v,
            None => {
                graph.gather(node, &x, &mut pa);
                let (m, v) = b.node(node).mean_var(&pa);
                let z: f64 = StandardNormal.sample(rng);
                m + (v + b.noise_var(node)).sqrt() * z
            }
        };
    }
    Ok(x)
}

/// Cached quadrature state for fast "one more datum" risk queries.
///
/// Adding an input `z` to a GP posterior lowers the variance at `q` by
/// `c(q, z)² / (v(z) + σ²)` where `c` is the current posterior covariance.
/// Summed over the grid, `Σ_q c(q, z)²` expands into kernel products that
/// factor over the grid axes, so nothing of grid size is ever stored and a
/// query costs `O(n·G·d + n²)` instead of `O(n·G^d)`. Outputs never enter.
#[derive(Debug, Clone)]
pub struct RiskProfile<'a> {
    belief: &'a BeliefState,
    nodes: Vec<NodeProfile>,
    current: Vec<f64>,
}

#[derive(Debug, Clone)]
enum NodeProfile {
    Skip,
    Constant {
        alpha: f64,
        prior_var: f64,
        noise_var: f64,
        count: usize,
    },
    Gp {
        alpha: f64,
        grid: QuadratureGrid,
        /// Per datum, per axis: kernel factor against every axis point.
        factors: Vec<Vec<Vec<f64>>>,
        /// `L⁻¹ Q L⁻ᵀ` with `Q_ij = Σ_q k(q, x_i) k(q, x_j)`, row-major.
        m: Vec<f64>,
    },
}

/// One-axis factor of the kernel between every axis point and `c`.
fn axis_factor(kernel: &Kernel, axis: &[f64], c: f64) -> Vec<f64> {
    match kernel.kind {
        KernelKind::Constant => vec![1.0; axis.len()],
        KernelKind::Rbf => {
            let s = 2.0 * kernel.bandwidth * kernel.bandwidth;
            axis.iter().map(|a| (-(a - c) * (a - c) / s).exp()).collect()
        }
    }
}

/// `Σ_q k(q, a) k(q, b)` from per-axis factors.
fn grid_product(amp: f64, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(fa, fb)| gp::dot(fa, fb))
        .product::<f64>()
        * amp
        * amp
}

impl<'a> RiskProfile<'a> {
    pub fn new(belief: &'a BeliefState, spec: &RiskSpec) -> Self {
        let graph = belief.graph();
        let mut nodes = Vec::with_capacity(graph.n_nodes());
        let mut current = Vec::with_capacity(graph.n_nodes());
        for n in 0..graph.n_nodes() {
            let alpha = spec.nodes[n].alpha;
            if alpha == 0.0 {
                nodes.push(NodeProfile::Skip);
                current.push(0.0);
                continue;
            }
            match belief.node(n) {
                NodeBelief::Constant {
                    prior_var,
                    noise_var,
                    count,
                    var,
                    ..
                } => {
                    current.push(alpha * var);
                    nodes.push(NodeProfile::Constant {
                        alpha,
                        prior_var: *prior_var,
                        noise_var: *noise_var,
                        count: *count,
                    });
                }
                NodeBelief::Gp(post) => {
                    let grid = spec.grid(n, graph.parents(n).len());
                    let kernel = post.kernel();
                    let amp = kernel.amplitude;
                    let factors: Vec<Vec<Vec<f64>>> = post
                        .data()
                        .inputs()
                        .iter()
                        .map(|x| x.iter().map(|&c| axis_factor(kernel, grid.axis(), c)).collect())
                        .collect();
                    let size = factors.len();
                    // Q, then L⁻¹ Q, then L⁻¹ (L⁻¹ Q)ᵀ = L⁻¹ Q L⁻ᵀ (Q symmetric)
                    let mut cols = vec![vec![0.0; size]; size];
                    for i in 0..size {
                        for j in 0..=i {
                            let q = grid_product(amp, &factors[i], &factors[j]);
                            cols[i][j] = q;
                            cols[j][i] = q;
                        }
                    }
                    for col in cols.iter_mut() {
                        post.solve_lower(col);
                    }
                    let mut m = vec![0.0; size * size];
                    let mut row = vec![0.0; size];
                    for i in 0..size {
                        for (j, r) in row.iter_mut().enumerate() {
                            *r = cols[j][i];
                        }
                        post.solve_lower(&mut row);
                        m[i * size..(i + 1) * size].copy_from_slice(&row);
                    }
                    let trace: f64 = (0..size).map(|i| m[i * size + i]).sum();
                    let var_sum = (amp * grid.len() as f64 - trace).max(0.0);
                    current.push(alpha * var_sum * grid.weight());
                    nodes.push(NodeProfile::Gp {
                        alpha,
                        grid,
                        factors,
                        m,
                    });
                }
            }
        }
        Self {
            belief,
            nodes,
            current,
        }
    }

    pub fn belief(&self) -> &BeliefState {
        self.belief
    }

    /// Current contribution of node `n` (`U_n^curr`).
    pub fn current(&self, node: usize) -> f64 {
        self.current[node]
    }

    pub fn total(&self) -> f64 {
        self.current.iter().sum()
    }

    /// Contribution of node `n` after one more observation of `f_n` at
    /// input `z` (ignored for parentless nodes).
    pub fn after_input(&self, node: usize, z: &[f64]) -> f64 {
        match &self.nodes[node] {
            NodeProfile::Skip => 0.0,
            NodeProfile::Constant {
                alpha,
                prior_var,
                noise_var,
                count,
            } => alpha * constant_posterior_var(*prior_var, *noise_var, count + 1),
            NodeProfile::Gp {
                alpha,
                grid,
                factors,
                m,
            } => {
                let NodeBelief::Gp(post) = self.belief.node(node) else {
                    unreachable!("profile mirrors the belief")
                };
                let kernel = post.kernel();
                let amp = kernel.amplitude;
                let wz = post.whitened_cross(z);
                let var_z = (kernel.k(z, z) - gp::dot(&wz, &wz)).max(0.0);
                let fz: Vec<Vec<f64>> =
                    z.iter().map(|&c| axis_factor(kernel, grid.axis(), c)).collect();
                // Σ_q (k(q,z) − k(q,X) K⁻¹ k(X,z))²
                //   = Σ k(q,z)² − 2 wzᵀ L⁻¹ c + wzᵀ M wz,  c_j = Σ_q k(q,z) k(q,x_j)
                let kk = grid_product(amp, &fz, &fz);
                let mut u: Vec<f64> = factors.iter().map(|f| grid_product(amp, &fz, f)).collect();
                post.solve_lower(&mut u);
                let size = wz.len();
                let quad: f64 = (0..size)
                    .map(|i| wz[i] * gp::dot(&m[i * size..(i + 1) * size], &wz))
                    .sum();
                let cov_sq = (kk - 2.0 * gp::dot(&wz, &u) + quad).max(0.0);
                let reduction =
                    cov_sq * grid.weight() / (var_z + post.noise_var() + post.jitter());
                (self.current[node] - alpha * reduction).max(0.0)
            }
        }
    }

    /// `R(D ∪ {(i, x)})`; only the parent coordinates of unclamped nodes
    /// matter.
    pub fn risk_after_datum(&self, i: &Intervention, x: &[f64]) -> f64 {
        let graph = self.belief.graph();
        let mut pa = Vec::new();
        (0..graph.n_nodes())
            .map(|n| {
                if i.clamps_node(n) {
                    self.current[n]
                } else {
                    graph.gather(n, x, &mut pa);
                    self.after_input(n, &pa)
                }
            })
            .sum()
    }
}
