//! Min-cost max-flow formulation of the offloading decision for a fixed
//! allocation.
//!
//! Node layout: `0` is the super-source, users follow, then servers, and the
//! super-sink is last. Each user has a unit-capacity local arc straight to the
//! sink and one arc per reachable server. Server-to-sink arcs carry the
//! server's in-degree, so the max flow always equals the number of users.

use std::collections::VecDeque;

use crate::error::{GdsgError, Result};
use crate::model::{OffloadInstance, Solution};

/// Rounds half away from zero at three decimals, then scales by 1000.
pub fn scale_cost(cost: f64) -> i64 {
    (cost * 1000.0).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArcKind {
    Source,
    Local { user: usize },
    Offload { edge: usize },
    Sink { server: usize },
}

#[derive(Debug, Clone)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub capacity: i64,
    pub cost: i64,
    pub kind: ArcKind,
}

#[derive(Debug, Clone)]
pub struct FlowNetwork {
    pub num_nodes: usize,
    pub num_users: usize,
    pub num_servers: usize,
    /// Forward arcs in insertion order; the index is the tie-breaking key.
    pub arcs: Vec<Arc>,
}

impl FlowNetwork {
    pub fn source(&self) -> usize {
        0
    }

    pub fn sink(&self) -> usize {
        self.num_nodes - 1
    }

    pub fn user_node(&self, user: usize) -> usize {
        1 + user
    }

    pub fn server_node(&self, server: usize) -> usize {
        1 + self.num_users + server
    }
}

/// Builds the network for allocation `alloc`. When `offload_requires_rho` is
/// set, edges whose deadline cannot be met (`rho = 0`) get no offload arc.
pub fn build_flow_network(
    inst: &OffloadInstance,
    alloc: &[f64],
    offload_requires_rho: bool,
) -> Result<FlowNetwork> {
    if alloc.len() != inst.num_edges() {
        return Err(GdsgError::Shape(format!(
            "allocation has {} entries for {} edges",
            alloc.len(),
            inst.num_edges()
        )));
    }
    if let Some(edge) = alloc.iter().position(|&a| a <= 0.0 || !a.is_finite()) {
        return Err(GdsgError::ZeroAllocation { edge });
    }
    let (m, k) = (inst.num_users, inst.num_servers);
    let mut net = FlowNetwork {
        num_nodes: m + k + 2,
        num_users: m,
        num_servers: k,
        arcs: Vec::with_capacity(2 * m + inst.num_edges() + k),
    };
    let sink = net.sink();
    for user in 0..m {
        net.arcs.push(Arc {
            from: 0,
            to: net.user_node(user),
            capacity: 1,
            cost: 0,
            kind: ArcKind::Source,
        });
    }
    let by_user = inst.edges_by_user();
    let mut in_degree = vec![0i64; k];
    for (user, edges) in by_user.iter().enumerate() {
        let c_local = inst.edge_features[edges[0]].c_local;
        net.arcs.push(Arc {
            from: net.user_node(user),
            to: sink,
            capacity: 1,
            cost: scale_cost(c_local),
            kind: ArcKind::Local { user },
        });
        for &i in edges {
            let f = &inst.edge_features[i];
            if offload_requires_rho && f.rho <= 0.0 {
                continue;
            }
            let server = inst.edges[i].server;
            in_degree[server] += 1;
            net.arcs.push(Arc {
                from: net.user_node(user),
                to: net.server_node(server),
                capacity: 1,
                cost: scale_cost(f.c_trans + f.c_offload_full / alloc[i]),
                kind: ArcKind::Offload { edge: i },
            });
        }
    }
    for (server, &deg) in in_degree.iter().enumerate() {
        if deg > 0 {
            net.arcs.push(Arc {
                from: net.server_node(server),
                to: sink,
                capacity: deg,
                cost: 0,
                kind: ArcKind::Sink { server },
            });
        }
    }
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSolution {
    /// For each user, the offloaded edge index or `None` for local execution.
    pub routing: Vec<Option<usize>>,
    pub total_cost: i64,
    pub flow: usize,
}

impl FlowSolution {
    /// Converts the routing into a solution that keeps `alloc` on every edge.
    pub fn to_solution(&self, alloc: &[f64]) -> Solution {
        let mut decisions = vec![false; alloc.len()];
        for &edge in self.routing.iter().flatten() {
            decisions[edge] = true;
        }
        Solution {
            decisions,
            allocations: alloc.to_vec(),
        }
    }
}

struct Residual {
    to: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<i64>,
    adj: Vec<Vec<usize>>,
}

/// Successive shortest augmenting paths with a label-correcting (SPFA)
/// shortest-path search. Among equal-cost paths the one discovered through the
/// lowest arc index is kept.
pub fn mcmf_solve(net: &FlowNetwork) -> Result<FlowSolution> {
    let n = net.num_nodes;
    let mut res = Residual {
        to: Vec::with_capacity(2 * net.arcs.len()),
        cap: Vec::with_capacity(2 * net.arcs.len()),
        cost: Vec::with_capacity(2 * net.arcs.len()),
        adj: vec![Vec::new(); n],
    };
    for a in &net.arcs {
        res.adj[a.from].push(res.to.len());
        res.to.push(a.to);
        res.cap.push(a.capacity);
        res.cost.push(a.cost);
        res.adj[a.to].push(res.to.len());
        res.to.push(a.from);
        res.cap.push(0);
        res.cost.push(-a.cost);
    }
    let (source, sink) = (net.source(), net.sink());
    let required = net.num_users;
    let mut flow = 0usize;
    let mut total_cost = 0i64;
    let mut dist = vec![i64::MAX; n];
    let mut pred = vec![usize::MAX; n];
    let mut in_queue = vec![false; n];
    while flow < required {
        dist.fill(i64::MAX);
        pred.fill(usize::MAX);
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        in_queue[source] = true;
        while let Some(u) = queue.pop_front() {
            in_queue[u] = false;
            for &e in &res.adj[u] {
                if res.cap[e] <= 0 {
                    continue;
                }
                let v = res.to[e];
                let nd = dist[u] + res.cost[e];
                if nd < dist[v] {
                    dist[v] = nd;
                    pred[v] = e;
                    if !in_queue[v] {
                        in_queue[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        if dist[sink] == i64::MAX {
            break;
        }
        // bottleneck along the path
        let mut push = i64::MAX;
        let mut v = sink;
        while v != source {
            let e = pred[v];
            push = push.min(res.cap[e]);
            v = res.to[e ^ 1];
        }
        let push = push.min((required - flow) as i64);
        let mut v = sink;
        while v != source {
            let e = pred[v];
            res.cap[e] -= push;
            res.cap[e ^ 1] += push;
            v = res.to[e ^ 1];
        }
        flow += push as usize;
        total_cost += push * dist[sink];
    }
    if flow < required {
        return Err(GdsgError::InfeasibleNetwork {
            required,
            routed: flow,
        });
    }
    let mut routing = vec![None; net.num_users];
    for (idx, a) in net.arcs.iter().enumerate() {
        if let ArcKind::Offload { edge } = a.kind {
            // a saturated forward arc carries the user's unit of flow
            if res.cap[2 * idx] == 0 {
                routing[a.from - 1] = Some(edge);
            }
        }
    }
    Ok(FlowSolution {
        routing,
        total_cost,
        flow,
    })
}
