//! Scoring and selecting interventions.
//!
//! The value of an intervention is the expected drop in expected total risk
//! after one draw under it, divided by its cost. The expectation over the
//! unknown draw is taken under the belief predictive and estimated either by
//! Monte Carlo (any graph) or by dynamic programming over discretized node
//! values (chains only).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngExt};

use crate::belief::{expected_total_risk, sample_predictive, BeliefState, RiskProfile, RiskSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::scm::{Draw, Intervention};

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    interventions: Vec<Intervention>,
}

impl CandidateSet {
    pub fn new(interventions: Vec<Intervention>) -> Result<Self> {
        if interventions.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        for (k, a) in interventions.iter().enumerate() {
            if interventions[..k].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate candidate {a}")));
            }
        }
        Ok(Self { interventions })
    }

    pub fn len(&self) -> usize {
        self.interventions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interventions.is_empty()
    }

    pub fn get(&self, k: usize) -> &Intervention {
        &self.interventions[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Intervention> {
        self.interventions.iter()
    }
}

/// Cost `c(i)` by the set of clamped nodes; anything unlisted costs
/// `default`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    default: f64,
    by_shape: Vec<(Vec<usize>, f64)>,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            default: 1.0,
            by_shape: Vec::new(),
        }
    }
}

impl CostModel {
    pub fn constant(cost: f64) -> Result<Self> {
        Self::new(cost, Vec::new())
    }

    pub fn new(default: f64, mut by_shape: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let positive = |c: f64| c > 0.0 && c.is_finite();
        if !positive(default) || by_shape.iter().any(|(_, c)| !positive(*c)) {
            return Err(Error::InvalidArgument("costs must be positive".into()));
        }
        for (nodes, _) in &mut by_shape {
            nodes.sort_unstable();
        }
        Ok(Self { default, by_shape })
    }

    pub fn cost(&self, i: &Intervention) -> f64 {
        let shape: Vec<usize> = i.nodes().collect();
        self.by_shape
            .iter()
            .find(|(nodes, _)| *nodes == shape)
            .map_or(self.default, |(_, c)| *c)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.default * factor,
            self.by_shape.iter().map(|(n, c)| (n.clone(), c * factor)).collect(),
        )
    }
}

pub fn value_of(current_risk: f64, post_risk: f64, cost: f64) -> f64 {
    debug_assert!(cost > 0.0);
    (current_risk - post_risk) / cost
}

/// `R(D ∪ {(i, x)})` by refitting every affected node from scratch.
pub fn risk_after_datum(b: &BeliefState, i: &Intervention, x: &[f64], spec: &RiskSpec) -> Result<f64> {
    let next = b.with_draw(Draw {
        intervention: i.clone(),
        x: x.to_vec(),
    })?;
    Ok(expected_total_risk(&next, spec))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Monte-Carlo estimate of `E_{x ~ belief predictive} R(D ∪ {(i, x)})`.
pub fn estimate_post_risk_sampling<R: Rng + ?Sized>(
    b: &BeliefState,
    i: &Intervention,
    samples: usize,
    spec: &RiskSpec,
    rng: &mut R,
) -> Result<Estimate> {
    let profile = RiskProfile::new(b, spec);
    sampling_estimate(&profile, i, samples, rng)
}

pub fn sampling_estimate<R: Rng + ?Sized>(
    profile: &RiskProfile<'_>,
    i: &Intervention,
    samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let b = profile.belief();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let x = sample_predictive(b, i, rng)?;
        let r = profile.risk_after_datum(i, &x);
        sum += r;
        sum_sq += r * r;
    }
    let t = samples as f64;
    let mean = sum / t;
    let std_err = if samples > 1 {
        ((sum_sq - t * mean * mean).max(0.0) / (t - 1.0) / t).sqrt()
    } else {
        0.0
    };
    Ok(Estimate { mean, std_err })
}

/// Evenly spaced discretization points for the chain nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpGridSpec {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl DpGridSpec {
    pub const DEFAULT_POINTS: usize = 101;
    pub const DEFAULT_MARGIN: f64 = 2.0;

    /// The hull of all risk boxes widened by `margin` length-scales.
    pub fn covering(spec: &RiskSpec, points: usize, margin: f64, length_scale: f64) -> Self {
        let lo = spec.nodes.iter().map(|r| r.lo).fold(f64::INFINITY, f64::min);
        let hi = spec.nodes.iter().map(|r| r.hi).fold(f64::NEG_INFINITY, f64::max);
        Self {
            points,
            lo: lo - margin * length_scale,
            hi: hi + margin * length_scale,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![0.5 * (self.lo + self.hi)];
        }
        let h = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|k| self.lo + k as f64 * h).collect()
    }
}

/// Precomputed quantities for the chain dynamic programs. Index `k` is the
/// position along the chain, not the node id.
#[derive(Debug, Clone)]
pub struct DpTables {
    pub chain: Vec<usize>,
    pub grids: Vec<Vec<f64>>,
    /// Distribution of the root over `grids[0]`.
    pub root_probs: Vec<f64>,
    /// `transitions[k][r][c] ∝ p(x_k = grids[k][c] | x_{k-1} = grids[k-1][r])`;
    /// empty at `k = 0`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `u[k][r]`: contribution of position `k` after one more observation at
    /// input `grids[k-1][r]`; empty at `k = 0`.
    pub u: Vec<Vec<f64>>,
    /// Contribution of the root after one more observation.
    pub u_root: f64,
    /// Current contributions per position.
    pub current: Vec<f64>,
}

pub fn build_dp_tables(b: &BeliefState, grid: &DpGridSpec, spec: &RiskSpec) -> Result<DpTables> {
    let profile = RiskProfile::new(b, spec);
    build_dp_tables_with(&profile, grid)
}

pub fn build_dp_tables_with(profile: &RiskProfile<'_>, grid: &DpGridSpec) -> Result<DpTables> {
    let b = profile.belief();
    let chain = b.graph().chain_order().ok_or_else(|| Error::PolicyMismatch {
        policy: "dynamic programming".into(),
        reason: "the graph is not a chain".into(),
    })?;
    if grid.points == 0 || !(grid.lo < grid.hi) {
        return Err(Error::InvalidArgument("empty discretization grid".into()));
    }
    let n = chain.len();
    let grids = vec![grid.values(); n];
    let root = chain[0];
    let (m0, v0) = b.node(root).mean_var(&[]);
    let root_probs = normalized_gaussian(&grids[0], m0, v0 + b.noise_var(root));
    let mut transitions = vec![Vec::new()];
    let mut u = vec![Vec::new()];
    for k in 1..n {
        let node = chain[k];
        let noise = b.noise_var(node);
        transitions.push(
            grids[k - 1]
                .iter()
                .map(|&x| {
                    let (m, v) = b.node(node).mean_var(&[x]);
                    normalized_gaussian(&grids[k], m, v + noise)
                })
                .collect(),
        );
        u.push(grids[k - 1].iter().map(|&x| profile.after_input(node, &[x])).collect());
    }
    Ok(DpTables {
        u_root: profile.after_input(root, &[]),
        current: chain.iter().map(|&node| profile.current(node)).collect(),
        chain,
        grids,
        root_probs,
        transitions,
        u,
    })
}

/// Gaussian weights at `points`, normalized to sum to one. Computed in log
/// space so a mean far outside the grid still yields a distribution.
fn normalized_gaussian(points: &[f64], mean: f64, var: f64) -> Vec<f64> {
    let logs: Vec<f64> = points.iter().map(|x| -(x - mean) * (x - mean) / (2.0 * var)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

impl DpTables {
    pub fn len(&self) -> usize {
        self.chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chain.is_empty()
    }

    /// `w[k][r]`: expected `Σ_{j ≥ k} U_j(x_{j-1})` given `x_{k-1} =
    /// grids[k-1][r]`. `w[n]` is all zeros.
    fn downstream(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut w = vec![Vec::new(); n + 1];
        w[n] = vec![0.0; self.grids[n - 1].len()];
        for k in (1..n).rev() {
            let ahead = if k + 1 < n {
                mat_vec(&self.transitions[k], &w[k + 1])
            } else {
                vec![0.0; self.grids[k - 1].len()]
            };
            w[k] = self.u[k].iter().zip(ahead).map(|(a, b)| a + b).collect();
        }
        w
    }

    /// `prefix[j] = Σ_{k=1}^{j} E[U_k(x_{k-1})]` with the chain following
    /// the unclamped predictive from the root.
    fn upstream_prefix(&self) -> Vec<f64> {
        let n = self.len();
        let mut prefix = vec![0.0; n];
        // Law of x_{k-1} at the top of each iteration.
        let mut marginal = self.root_probs.clone();
        for k in 1..n {
            let e: f64 = marginal.iter().zip(&self.u[k]).map(|(p, u)| p * u).sum();
            prefix[k] = prefix[k - 1] + e;
            let mut next = vec![0.0; self.grids[k].len()];
            for (p, row) in marginal.iter().zip(&self.transitions[k]) {
                for (nv, r) in next.iter_mut().zip(row) {
                    *nv += p * r;
                }
            }
            marginal = next;
        }
        prefix
    }
}

/// Estimated post-intervention risk for `do(X_m = x, X_{m-1} = …)` at every
/// chain position `m` and grid value `x`.
pub fn dp_upstream_post_risks(t: &DpTables) -> Vec<Vec<f64>> {
    let n = t.len();
    let w = t.downstream();
    let mut clamped_sum = 0.0;
    (0..n)
        .map(|m| {
            clamped_sum += t.current[m];
            w[m + 1].iter().map(|v| clamped_sum + v).collect()
        })
        .collect()
}

/// Estimated post-intervention risk for the single clamp `do(X_m = x)` at
/// every chain position `m` and grid value `x`.
pub fn dp_single_post_risks(t: &DpTables) -> Vec<Vec<f64>> {
    let n = t.len();
    let w = t.downstream();
    let prefix = t.upstream_prefix();
    (0..n)
        .map(|m| {
            // Positions before m stay observational: the root gets one more
            // observation and positions 1..m-1 get predictive inputs.
            let upstream = if m == 0 {
                0.0
            } else {
                t.u_root + prefix[m - 1]
            };
            w[m + 1].iter().map(|v| upstream + t.current[m] + v).collect()
        })
        .collect()
}

/// Estimated post-intervention risk for the null intervention.
pub fn dp_null_post_risk(t: &DpTables) -> f64 {
    t.u_root + t.upstream_prefix()[t.len() - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Observe,
    Random,
    Sampling,
    DpUpstream,
    DpSingle,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Observe,
        Policy::Random,
        Policy::Sampling,
        Policy::DpUpstream,
        Policy::DpSingle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Observe => "observe",
            Policy::Random => "random",
            Policy::Sampling => "sampling",
            Policy::DpUpstream => "dp_upstream",
            Policy::DpSingle => "dp_single",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams {
    /// Predictive draws per candidate for the sampling policy.
    pub samples: usize,
    pub dp_grid: DpGridSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub intervention: Intervention,
    /// Value of every candidate; empty for the baselines.
    pub values: Vec<f64>,
}

/// Picks the next intervention. `seed` identifies the selection step;
/// candidate `c` uses the substream `(seed, c)`.
pub fn select_intervention(
    policy: Policy,
    b: &BeliefState,
    cands: &CandidateSet,
    costs: &CostModel,
    spec: &RiskSpec,
    params: &PolicyParams,
    seed: u64,
) -> Result<Selection> {
    if cands.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    match policy {
        Policy::Observe => Ok(Selection {
            index: usize::MAX,
            intervention: Intervention::null(),
            values: Vec::new(),
        }),
        Policy::Random => {
            let index = rng::stream(seed, &[u64::MAX]).random_range(0..cands.len());
            Ok(Selection {
                index,
                intervention: cands.get(index).clone(),
                values: Vec::new(),
            })
        }
        Policy::Sampling => {
            let profile = RiskProfile::new(b, spec);
            let current = profile.total();
            let values = cands
                .iter()
                .enumerate()
                .map(|(c, i)| {
                    let mut r = rng::stream(seed, &[c as u64]);
                    let est = sampling_estimate(&profile, i, params.samples, &mut r)?;
                    Ok(value_of(current, est.mean, costs.cost(i)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(argmax_selection(cands, values))
        }
        Policy::DpUpstream | Policy::DpSingle => {
            let profile = RiskProfile::new(b, spec);
            let current = profile.total();
            let tables = build_dp_tables_with(&profile, &params.dp_grid)?;
            let table = if policy == Policy::DpUpstream {
                dp_upstream_post_risks(&tables)
            } else {
                dp_single_post_risks(&tables)
            };
            let null_risk = dp_null_post_risk(&tables);
            let values = cands
                .iter()
                .map(|i| {
                    let post = if i.is_null() {
                        null_risk
                    } else {
                        let (m, x) = dp_coordinates(policy, &tables.chain, i)?;
                        table[m][nearest(&params.dp_grid, x)]
                    };
                    Ok(value_of(current, post, costs.cost(i)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(argmax_selection(cands, values))
        }
    }
}

fn argmax_selection(cands: &CandidateSet, values: Vec<f64>) -> Selection {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    Selection {
        index: best,
        intervention: cands.get(best).clone(),
        values,
    }
}

/// Chain position and clamp value that a DP policy reads for a candidate.
fn dp_coordinates(policy: Policy, chain: &[usize], i: &Intervention) -> Result<(usize, f64)> {
    let positions: Vec<usize> = i
        .nodes()
        .map(|node| chain.iter().position(|&c| c == node).expect("validated node"))
        .collect();
    let deepest = *positions.iter().max().expect("non-null");
    let fits = match policy {
        Policy::DpUpstream => {
            let mut sorted = positions.clone();
            sorted.sort_unstable();
            sorted == (0..=deepest).collect::<Vec<_>>()
        }
        _ => positions.len() == 1,
    };
    if !fits {
        return Err(Error::PolicyMismatch {
            policy: policy.name().into(),
            reason: format!("candidate {i} is outside the policy's intervention family"),
        });
    }
    let x = i.clamp_of(chain[deepest]).expect("clamped");
    Ok((deepest, x))
}

fn nearest(grid: &DpGridSpec, x: f64) -> usize {
    if grid.points == 1 {
        return 0;
    }
    let h = (grid.hi - grid.lo) / (grid.points - 1) as f64;
    ((x - grid.lo) / h).round().clamp(0.0, (grid.points - 1) as f64) as usize
}
