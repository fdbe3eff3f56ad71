//! Experiment configuration files (TOML, versioned, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::belief::{NodeRisk, Prior, RiskSpec};
use crate::error::{Error, Result};
use crate::expr::parse_expression;
use crate::gp::Kernel;
use crate::metrics::MetricsParams;
use crate::scm::{Graph, Intervention, ScmSpec};
use crate::strategy::{CandidateSet, CostModel, DpGridSpec, Policy, PolicyParams};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable consulted for the output directory when neither the
/// command line nor the config names one.
pub const OUTPUT_DIR_ENV: &str = "SCM_ACTIVE_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub scm: ScmConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub candidates: CandidateConfig,
    pub risk: RiskConfig,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub costs: CostConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmConfig {
    pub nodes: usize,
    /// `[parent, child]` pairs.
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    /// One expression per node over `p0 .. p(k-1)`, where `pj` is the `j`-th
    /// parent in ascending id order.
    pub expressions: Vec<String>,
    pub noise_vars: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub bandwidth: f64,
    pub amplitude: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: 1.0,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `do(X_m = x)` for one node at a time.
    SingleVariable,
    /// `do(X_m = x, X_{m-1} = …)` on a chain; upstream clamps reuse `x`.
    UpstreamChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateConfig {
    pub family: Family,
    pub lo: f64,
    pub hi: f64,
    pub values_per_node: usize,
    #[serde(default = "yes")]
    pub include_null: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default = "default_grid_1d")]
    pub grid_1d: usize,
    #[serde(default = "default_grid_nd")]
    pub grid_nd: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub names: Vec<String>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_dp_points")]
    pub dp_grid_points: usize,
    /// Widening of the DP grid beyond the risk boxes, in kernel length-scales.
    #[serde(default = "default_dp_margin")]
    pub dp_grid_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_kl_samples")]
    pub kl_samples: usize,
    #[serde(default = "default_mmd_samples")]
    pub mmd_samples: usize,
    #[serde(default = "default_bandwidth")]
    pub mmd_bandwidth: f64,
    /// Evaluate at steps divisible by `stride` and always at the last step.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            kl_samples: default_kl_samples(),
            mmd_samples: default_mmd_samples(),
            mmd_bandwidth: default_bandwidth(),
            stride: default_stride(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeCost {
    pub nodes: Vec<usize>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default = "default_cost")]
    pub default: f64,
    #[serde(default)]
    pub shapes: Vec<ShapeCost>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            default: default_cost(),
            shapes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Write wall-clock times into the trace; off by default because it
    /// breaks byte-for-byte reproducibility.
    #[serde(default)]
    pub record_timing: bool,
}

fn yes() -> bool {
    true
}
fn default_grid_1d() -> usize {
    RiskSpec::DEFAULT_GRID_1D
}
fn default_grid_nd() -> usize {
    RiskSpec::DEFAULT_GRID_ND
}
fn default_samples() -> usize {
    64
}
fn default_dp_points() -> usize {
    DpGridSpec::DEFAULT_POINTS
}
fn default_dp_margin() -> f64 {
    DpGridSpec::DEFAULT_MARGIN
}
fn default_kl_samples() -> usize {
    MetricsParams::default().kl_samples
}
fn default_mmd_samples() -> usize {
    MetricsParams::default().mmd_samples
}
fn default_bandwidth() -> f64 {
    1.0
}
fn default_stride() -> usize {
    1
}
fn default_cost() -> f64 {
    1.0
}
fn default_trials() -> usize {
    10
}
fn default_steps() -> usize {
    30
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every precondition and builds the runtime objects.
    pub fn resolve(&self) -> Result<Experiment> {
        let cfg = |msg: String| Error::Config(msg);
        if self.version != CONFIG_VERSION {
            return Err(cfg(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let s = &self.scm;
        let edges: Vec<(usize, usize)> = s.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = Graph::from_edges(s.nodes, &edges).map_err(|e| cfg(e.to_string()))?;
        if s.expressions.len() != s.nodes {
            return Err(cfg(format!(
                "{} nodes but {} expressions",
                s.nodes,
                s.expressions.len()
            )));
        }
        let functions = s
            .expressions
            .iter()
            .enumerate()
            .map(|(n, src)| {
                parse_expression(src, graph.parents(n).len())
                    .map_err(|e| cfg(format!("expression of node {n}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let truth = ScmSpec::new(graph.clone(), functions, s.noise_vars.clone())
            .map_err(|e| cfg(e.to_string()))?;

        let kernel = Kernel::rbf(self.kernel.bandwidth, self.kernel.amplitude)
            .map_err(|e| cfg(e.to_string()))?;
        let prior = Prior::shared_kernel(graph.clone(), s.noise_vars.clone(), kernel)
            .map_err(|e| cfg(e.to_string()))?;

        let r = &self.risk;
        let alpha = r.alpha.clone().unwrap_or_else(|| vec![1.0; s.nodes]);
        if alpha.len() != s.nodes {
            return Err(cfg(format!("{} nodes but {} risk weights", s.nodes, alpha.len())));
        }
        let risk = RiskSpec {
            nodes: alpha
                .iter()
                .map(|&a| NodeRisk {
                    lo: r.lo,
                    hi: r.hi,
                    alpha: a,
                })
                .collect(),
            grid_1d: r.grid_1d,
            grid_nd: r.grid_nd,
        };
        risk.validate(s.nodes).map_err(|e| cfg(e.to_string()))?;

        let candidates = build_candidates(self, &graph)?;

        let costs = CostModel::new(
            self.costs.default,
            self.costs.shapes.iter().map(|c| (c.nodes.clone(), c.cost)).collect(),
        )
        .map_err(|e| cfg(e.to_string()))?;

        let p = &self.policy;
        if p.names.is_empty() {
            return Err(cfg("no policies configured".into()));
        }
        let policies = p
            .names
            .iter()
            .map(|n| n.parse::<Policy>())
            .collect::<Result<Vec<_>>>()?;
        for (k, pol) in policies.iter().enumerate() {
            if policies[..k].contains(pol) {
                return Err(cfg(format!("policy `{pol}` listed twice")));
            }
            check_policy_fits(*pol, &graph, self.candidates.family)?;
        }
        if p.samples == 0 || p.dp_grid_points < 2 || !(p.dp_grid_margin >= 0.0) {
            return Err(cfg("policy parameters must be positive".into()));
        }
        let params = PolicyParams {
            samples: p.samples,
            dp_grid: DpGridSpec::covering(&risk, p.dp_grid_points, p.dp_grid_margin, self.kernel.bandwidth),
        };

        let m = &self.metrics;
        if m.enabled && (m.kl_samples == 0 || m.mmd_samples < 2 || m.stride == 0 || !(m.mmd_bandwidth > 0.0)) {
            return Err(cfg(
                "metrics need kl_samples >= 1, mmd_samples >= 2, stride >= 1 and a positive bandwidth"
                    .into(),
            ));
        }
        Ok(Experiment {
            truth,
            prior,
            risk,
            candidates,
            costs,
            policies,
            params,
            metrics: self.metrics.clone(),
            run: self.run.clone(),
        })
    }
}

fn check_policy_fits(policy: Policy, graph: &Graph, family: Family) -> Result<()> {
    let needs = match policy {
        Policy::DpUpstream => Some(Family::UpstreamChain),
        Policy::DpSingle => Some(Family::SingleVariable),
        _ => None,
    };
    if let Some(fam) = needs {
        if graph.chain_order().is_none() {
            return Err(Error::Config(format!("policy `{policy}` needs a chain graph")));
        }
        if fam != family {
            return Err(Error::Config(format!(
                "policy `{policy}` needs the {fam:?} candidate family"
            )));
        }
    }
    Ok(())
}

/// Evenly spaced clamps, node-major and value-ascending, with the null
/// intervention appended last when configured.
pub fn build_candidates(cfg: &ExperimentConfig, graph: &Graph) -> Result<CandidateSet> {
    let c = &cfg.candidates;
    if c.values_per_node == 0 || !(c.lo <= c.hi) || !c.lo.is_finite() || !c.hi.is_finite() {
        return Err(Error::Config("candidate range or count is invalid".into()));
    }
    let values: Vec<f64> = if c.values_per_node == 1 {
        vec![0.5 * (c.lo + c.hi)]
    } else {
        let h = (c.hi - c.lo) / (c.values_per_node - 1) as f64;
        (0..c.values_per_node).map(|k| c.lo + k as f64 * h).collect()
    };
    let mut out = Vec::new();
    match c.family {
        Family::SingleVariable => {
            for node in 0..graph.n_nodes() {
                for &v in &values {
                    out.push(Intervention::single(node, v)?);
                }
            }
        }
        Family::UpstreamChain => {
            let chain = graph.chain_order().ok_or_else(|| {
                Error::Config("the upstream-chain family needs a chain graph".into())
            })?;
            for m in 0..chain.len() {
                for &v in &values {
                    out.push(Intervention::new(chain[..=m].iter().map(|&n| (n, v)).collect())?);
                }
            }
        }
    }
    if c.include_null {
        out.push(Intervention::null());
    }
    CandidateSet::new(out).map_err(|e| Error::Config(e.to_string()))
}

/// A validated configuration with every runtime object built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub truth: ScmSpec,
    pub prior: Prior,
    pub risk: RiskSpec,
    pub candidates: CandidateSet,
    pub costs: CostModel,
    pub policies: Vec<Policy>,
    pub params: PolicyParams,
    pub metrics: MetricsConfig,
    pub run: RunConfig,
}

impl Experiment {
    pub fn metrics_params(&self) -> MetricsParams {
        MetricsParams {
            kl_samples: self.metrics.kl_samples,
            mmd_samples: self.metrics.mmd_samples,
            mmd_bandwidth: self.metrics.mmd_bandwidth,
        }
    }
}

/// Built-in configurations.
pub mod presets {
    /// Five-node chain with sine/cosine mechanisms and upstream interventions.
    pub const CHAIN: &str = include_str!("../configs/chain.toml");
    /// Five-node DAG with two-parent mechanisms and single-node interventions.
    pub const DAG: &str = include_str!("../configs/dag.toml");
    /// The three-node square/sine example.
    pub const SMALL: &str = include_str!("../configs/small.toml");
}
