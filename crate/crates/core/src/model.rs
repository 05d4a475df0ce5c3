//! Problem model for multi-server multi-user computation offloading.
//!
//! An instance is a directed bipartite graph with edges from users to the
//! servers they can reach. Every edge carries a five-dimensional feature
//! `(c_local, c_trans, c_offload_full, rho, psi)` derived from the raw task,
//! channel and server parameters. A [`Solution`] assigns each edge a binary
//! offloading decision and a share of the destination server's compute.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GdsgError, Result};

/// Relative tolerance used when comparing cached features with a recomputation.
pub const FEATURE_RTOL: f64 = 1e-12;

/// Slack allowed on the per-server capacity constraint.
pub const CAPACITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub user: usize,
    pub server: usize,
}

/// Server and radio parameters shared by every edge of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Channel bandwidth B in Hz.
    pub bandwidth: f64,
    /// Uplink transmit power P_t in W.
    pub tx_power: f64,
    /// Noise power N_0 in W.
    pub noise: f64,
    /// Server compute F in cycles per second.
    pub server_cps: f64,
    /// Server processing power P_e in W.
    pub server_power: f64,
    /// Energy efficiency coefficient of the local chip.
    pub kappa: f64,
    /// When false the co-server interference sum in the SINR is dropped.
    #[serde(default = "default_true")]
    pub interference: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            bandwidth: 20e6,
            tx_power: 0.5,
            noise: 1e-9,
            server_cps: 10e9,
            server_power: 5.0,
            kappa: 1e-26,
            interference: true,
        }
    }
}

/// Raw per-edge parameters. Task fields are identical across edges that
/// share a source user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawEdgeParams {
    pub input_bits: f64,
    pub cycles: f64,
    pub local_cps: f64,
    pub alpha: f64,
    pub channel_gain: f64,
    pub tau_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatures {
    pub c_local: f64,
    pub c_trans: f64,
    pub c_offload_full: f64,
    pub rho: f64,
    pub psi: u8,
}

impl EdgeFeatures {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.c_local,
            self.c_trans,
            self.c_offload_full,
            self.rho,
            f64::from(self.psi),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadInstance {
    pub num_servers: usize,
    pub num_users: usize,
    pub edges: Vec<Edge>,
    pub edge_features: Vec<EdgeFeatures>,
    /// Users occupy nodes `0..M` (flag 0), servers nodes `M..M+K` (flag 1).
    pub node_types: Vec<u8>,
    pub raw_params: Vec<RawEdgeParams>,
    pub system: SystemParams,
}

impl OffloadInstance {
    /// Builds an instance from raw parameters, computing the cached features.
    pub fn from_raw(
        num_servers: usize,
        num_users: usize,
        edges: Vec<Edge>,
        raw_params: Vec<RawEdgeParams>,
        system: SystemParams,
    ) -> Result<Self> {
        if num_servers < 1 || num_users < 1 {
            return Err(GdsgError::Config(format!(
                "need at least one server and one user (K={num_servers}, M={num_users})"
            )));
        }
        if edges.len() != raw_params.len() {
            return Err(GdsgError::Shape(format!(
                "{} edges but {} raw parameter records",
                edges.len(),
                raw_params.len()
            )));
        }
        let edge_features = compute_features(num_servers, &edges, &raw_params, &system);
        let node_types = (0..num_users + num_servers)
            .map(|n| u8::from(n >= num_users))
            .collect();
        let inst = Self {
            num_servers,
            num_users,
            edges,
            edge_features,
            node_types,
            raw_params,
            system,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_servers
    }

    /// Node index of a server in the user-then-server node numbering.
    pub fn server_node(&self, server: usize) -> usize {
        self.num_users + server
    }

    /// Edge indices grouped by source user.
    pub fn edges_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for (i, e) in self.edges.iter().enumerate() {
            out[e.user].push(i);
        }
        out
    }

    /// Edge indices grouped by destination server.
    pub fn edges_by_server(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_servers];
        for (i, e) in self.edges.iter().enumerate() {
            out[e.server].push(i);
        }
        out
    }

    /// Uplink rate r_u of every edge.
    pub fn transmission_rates(&self) -> Vec<f64> {
        transmission_rates(self.num_servers, &self.edges, &self.raw_params, &self.system)
    }

    /// Checks every structural and feature invariant.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GdsgError::Generation(msg));
        if self.edges.len() != self.edge_features.len() || self.edges.len() != self.raw_params.len()
        {
            return bad("edge, feature and raw parameter lists differ in length".into());
        }
        if self.node_types.len() != self.num_nodes()
            || self
                .node_types
                .iter()
                .enumerate()
                .any(|(n, &t)| t != u8::from(n >= self.num_users))
        {
            return bad("node types do not follow the user-then-server layout".into());
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.edges {
            if e.user >= self.num_users || e.server >= self.num_servers {
                return bad(format!("edge {e:?} references a missing node"));
            }
            if !seen.insert(*e) {
                return bad(format!("duplicate edge {e:?}"));
            }
        }
        let by_user = self.edges_by_user();
        for (u, list) in by_user.iter().enumerate() {
            let Some(&first) = list.first() else {
                return bad(format!("user {u} has no reachable server"));
            };
            let r0 = &self.raw_params[first];
            for &i in list {
                let r = &self.raw_params[i];
                if r.input_bits != r0.input_bits
                    || r.cycles != r0.cycles
                    || r.local_cps != r0.local_cps
                    || r.alpha != r0.alpha
                {
                    return bad(format!("user {u} has inconsistent task parameters"));
                }
            }
        }
        for (i, r) in self.raw_params.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.alpha) || !(0.0..=1.0).contains(&r.channel_gain) {
                return bad(format!("edge {i}: alpha or channel gain outside [0,1]"));
            }
        }
        let fresh = compute_features(self.num_servers, &self.edges, &self.raw_params, &self.system);
        for (i, (cached, f)) in self.edge_features.iter().zip(&fresh).enumerate() {
            for (a, b) in cached.as_array().iter().zip(f.as_array()) {
                if !a.is_finite() || *a < 0.0 {
                    return bad(format!("edge {i}: feature {a} is not a finite nonnegative value"));
                }
                if (a - b).abs() > FEATURE_RTOL * a.abs().max(b.abs()) {
                    return bad(format!("edge {i}: cached feature {a} != recomputed {b}"));
                }
            }
            if !(0.0..=1.0).contains(&cached.rho) || cached.psi > 1 {
                return bad(format!("edge {i}: rho or psi out of range"));
            }
        }
        Ok(())
    }

    /// The solution that runs every task locally. Always feasible.
    pub fn all_local(&self) -> Solution {
        Solution::all_local(self.num_edges())
    }
}

fn transmission_rates(
    num_servers: usize,
    edges: &[Edge],
    raw: &[RawEdgeParams],
    sys: &SystemParams,
) -> Vec<f64> {
    let mut gain_sq_sum = vec![0.0; num_servers];
    for (e, r) in edges.iter().zip(raw) {
        gain_sq_sum[e.server] += r.channel_gain * r.channel_gain;
    }
    edges
        .iter()
        .zip(raw)
        .map(|(e, r)| {
            let own = r.channel_gain * r.channel_gain;
            let interference = if sys.interference {
                // co-server edges other than this one
                (gain_sq_sum[e.server] - own).max(0.0)
            } else {
                0.0
            };
            let sinr = sys.tx_power * own / (sys.noise + sys.tx_power * interference);
            sys.bandwidth * (1.0 + sinr).log2()
        })
        .collect()
}

/// Evaluates the five cached edge features from raw parameters.
pub fn compute_features(
    num_servers: usize,
    edges: &[Edge],
    raw: &[RawEdgeParams],
    sys: &SystemParams,
) -> Vec<EdgeFeatures> {
    let rates = transmission_rates(num_servers, edges, raw, sys);
    raw.iter()
        .zip(&rates)
        .map(|(r, &rate)| {
            let t_local = r.cycles / r.local_cps;
            let e_local = sys.kappa * r.cycles * r.cycles * r.input_bits;
            let c_local = r.alpha * t_local + (1.0 - r.alpha) * e_local;
            let t_up = r.input_bits / rate;
            let c_trans = r.alpha * t_up + (1.0 - r.alpha) * sys.tx_power * t_up;
            let t_exec = r.cycles / sys.server_cps;
            let c_offload_full = r.alpha * t_exec + (1.0 - r.alpha) * sys.server_power * t_exec;
            let rho = if t_up + t_exec > r.tau_max {
                0.0
            } else {
                r.cycles / ((r.tau_max - t_up) * sys.server_cps)
            };
            let psi = u8::from(t_local <= r.tau_max);
            EdgeFeatures {
                c_local,
                c_trans,
                c_offload_full,
                rho,
                psi,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(GdsgError::Config(format!("range {name} is invalid: {self:?}")));
        }
        Ok(())
    }
}

/// Sampling distribution for random instances.
///
/// `tau_factor` scales each task's deadline relative to its local execution
/// time; with the default ranges roughly a fifth of the edges miss their
/// offloading deadline and the optimum offloads a little under half of the
/// tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_servers: usize,
    pub num_users: usize,
    pub degree_min: usize,
    pub degree_max: usize,
    pub input_bits: Range,
    pub cycles: Range,
    pub local_cps: Range,
    pub alpha: Range,
    pub channel_gain: Range,
    pub tau_factor: Range,
    pub system: SystemParams,
    pub retry_limit: usize,
}

impl GenConfig {
    pub fn new(num_servers: usize, num_users: usize) -> Self {
        Self {
            num_servers,
            num_users,
            degree_min: 1,
            degree_max: 3,
            input_bits: Range::new(0.1e6, 5e6),
            cycles: Range::new(0.1e9, 2e9),
            local_cps: Range::new(0.5e9, 1.5e9),
            alpha: Range::new(0.3, 0.9),
            channel_gain: Range::new(0.3, 1.0),
            tau_factor: Range::new(0.3, 3.0),
            system: SystemParams::default(),
            retry_limit: 100,
        }
    }

    fn check(&self) -> Result<()> {
        if self.num_servers < 1 || self.num_users < 1 {
            return Err(GdsgError::Config(format!(
                "need K>=1 and M>=1 (K={}, M={})",
                self.num_servers, self.num_users
            )));
        }
        if self.degree_min > self.degree_max {
            return Err(GdsgError::Config("degree_min > degree_max".into()));
        }
        self.input_bits.check("input_bits")?;
        self.cycles.check("cycles")?;
        self.local_cps.check("local_cps")?;
        self.alpha.check("alpha")?;
        self.channel_gain.check("channel_gain")?;
        self.tau_factor.check("tau_factor")?;
        if self.alpha.lo < 0.0 || self.alpha.hi > 1.0 {
            return Err(GdsgError::Config("alpha must lie in [0,1]".into()));
        }
        if self.channel_gain.lo < 0.0 || self.channel_gain.hi > 1.0 {
            return Err(GdsgError::Config("channel gain must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Draws a random instance. Deterministic in `(cfg, seed)`.
pub fn generate_instance(cfg: &GenConfig, seed: u64) -> Result<OffloadInstance> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.num_servers;
    let dmax = cfg.degree_max.min(k);
    let dmin = cfg.degree_min.min(dmax);

    let mut edges = Vec::new();
    let mut raw = Vec::new();
    for user in 0..cfg.num_users {
        let mut attempts = 0;
        let servers = loop {
            let d = rng.random_range(dmin..=dmax);
            if d > 0 {
                let mut s = sample(&mut rng, k, d).into_vec();
                s.sort_unstable();
                break s;
            }
            attempts += 1;
            if attempts >= cfg.retry_limit {
                return Err(GdsgError::Generation(format!(
                    "user {user} has no reachable server after {attempts} attempts"
                )));
            }
        };
        let input_bits = cfg.input_bits.sample(&mut rng);
        let cycles = cfg.cycles.sample(&mut rng);
        let local_cps = cfg.local_cps.sample(&mut rng);
        let alpha = cfg.alpha.sample(&mut rng);
        let tau_max = cycles / local_cps * cfg.tau_factor.sample(&mut rng);
        for server in servers {
            edges.push(Edge { user, server });
            raw.push(RawEdgeParams {
                input_bits,
                cycles,
                local_cps,
                alpha,
                channel_gain: cfg.channel_gain.sample(&mut rng),
                tau_max,
            });
        }
    }
    OffloadInstance::from_raw(k, cfg.num_users, edges, raw, cfg.system)
}

/// Per-edge offloading decisions and compute allocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub decisions: Vec<bool>,
    pub allocations: Vec<f64>,
}

impl Solution {
    pub fn all_local(num_edges: usize) -> Self {
        Self {
            decisions: vec![false; num_edges],
            allocations: vec![0.0; num_edges],
        }
    }

    pub fn offload_count(&self) -> usize {
        self.decisions.iter().filter(|&&d| d).count()
    }
}

/// A violated constraint of the offloading problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// Allocation outside `[0, 1]` or not finite.
    C2 { edge: usize, value: f64 },
    /// A user offloads to more than one server.
    C3 { user: usize, count: usize },
    /// A server's allocated share exceeds its capacity.
    C4 { server: usize, load: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::C2 { edge, value } => write!(f, "C2: edge {edge} allocation {value}"),
            Violation::C3 { user, count } => write!(f, "C3: user {user} offloads {count} tasks"),
            Violation::C4 { server, load } => write!(f, "C4: server {server} load {load}"),
        }
    }
}

/// Lists every violated constraint. An empty list means feasible.
pub fn check_feasible(inst: &OffloadInstance, sol: &Solution) -> Result<Vec<Violation>> {
    let l = inst.num_edges();
    if sol.decisions.len() != l || sol.allocations.len() != l {
        return Err(GdsgError::LengthMismatch {
            expected: l,
            decisions: sol.decisions.len(),
            allocations: sol.allocations.len(),
        });
    }
    let mut out = Vec::new();
    for (i, &a) in sol.allocations.iter().enumerate() {
        if !(0.0..=1.0).contains(&a) {
            out.push(Violation::C2 { edge: i, value: a });
        }
    }
    let mut per_user = vec![0usize; inst.num_users];
    let mut per_server = vec![0.0f64; inst.num_servers];
    for (i, e) in inst.edges.iter().enumerate() {
        if sol.decisions[i] {
            per_user[e.user] += 1;
            per_server[e.server] += sol.allocations[i];
        }
    }
    for (user, &count) in per_user.iter().enumerate() {
        if count > 1 {
            out.push(Violation::C3 { user, count });
        }
    }
    for (server, &load) in per_server.iter().enumerate() {
        if load > 1.0 + CAPACITY_SLACK {
            out.push(Violation::C4 { server, load });
        }
    }
    Ok(out)
}

/// Total weighted cost of a feasible solution.
pub fn objective(inst: &OffloadInstance, sol: &Solution) -> Result<f64> {
    let violations = check_feasible(inst, sol)?;
    if !violations.is_empty() {
        return Err(GdsgError::Infeasible(violations));
    }
    for (i, (&d, &a)) in sol.decisions.iter().zip(&sol.allocations).enumerate() {
        if d && a <= 0.0 {
            return Err(GdsgError::ZeroAllocation { edge: i });
        }
    }
    Ok(objective_unchecked(inst, sol))
}

/// Cost evaluation without feasibility checks.
pub fn objective_unchecked(inst: &OffloadInstance, sol: &Solution) -> f64 {
    inst.edge_features
        .iter()
        .zip(sol.decisions.iter().zip(&sol.allocations))
        .map(|(f, (&d, &a))| {
            if d {
                f.c_trans + f.c_offload_full / a
            } else {
                f.c_local
            }
        })
        .sum()
}
