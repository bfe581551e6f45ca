//! Topology-derived queueing networks and the iterative network solver.
//!
//! A [`QueueGraph`] holds servers (one per serving router), priority-ranked
//! queues, and one class per (flow, hop). In-network (through) classes
//! outrank injection classes at every server. The same graph drives both
//! the analytic solver and the cycle-accurate simulator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analytic::{BreakdownDiagnostics, ClassNode, StationSystem};
use crate::error::{ModelError, Result};
use crate::traffic::{departure_scv, GGeoProcess, MomentPair};

pub const THROUGH_RANK: u32 = 0;
pub const INJECT_RANK: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Topology {
    Ring { size: usize },
    Mesh { width: usize, height: usize },
}

impl Topology {
    pub fn node_count(&self) -> usize {
        match *self {
            Topology::Ring { size } => size,
            Topology::Mesh { width, height } => width * height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Topology::Ring { size } if size < 2 => {
                Err(ModelError::Domain("ring needs at least 2 nodes".into()))
            }
            Topology::Mesh { width, height } if width < 2 || height < 2 => {
                Err(ModelError::Domain("mesh needs width and height >= 2".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowSpec {
    pub source: usize,
    pub destination: usize,
    pub arrival: GGeoProcess,
}

/// Deterministic route between two nodes as the ordered list of routers
/// visited. Mesh uses Y-X routing (full column leg, then row); rings take
/// the shorter arc with clockwise tie-break.
pub fn route(topology: &Topology, source: usize, destination: usize) -> Vec<usize> {
    assert_ne!(source, destination, "route needs distinct endpoints");
    let mut path = vec![source];
    match *topology {
        Topology::Ring { size } => {
            let cw = (destination + size - source) % size;
            let ccw = (source + size - destination) % size;
            let step_cw = cw <= ccw;
            let mut node = source;
            while node != destination {
                node = if step_cw { (node + 1) % size } else { (node + size - 1) % size };
                path.push(node);
            }
        }
        Topology::Mesh { width, .. } => {
            let (mut row, col) = (source / width, source % width);
            let (dst_row, dst_col) = (destination / width, destination % width);
            while row != dst_row {
                row = if dst_row > row { row + 1 } else { row - 1 };
                path.push(row * width + col);
            }
            let mut col = col;
            while col != dst_col {
                col = if dst_col > col { col + 1 } else { col - 1 };
                path.push(row * width + col);
            }
        }
    }
    path
}

#[derive(Debug, Clone, Serialize)]
pub struct ServerInfo {
    pub label: String,
    pub service_time: f64,
    pub service_scv: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueueInfo {
    pub label: String,
    pub rank: u32,
}

/// One serving hop of a flow: the queue it waits in and the server that
/// forwards it.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HopRef {
    pub queue: usize,
    pub server: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureKind {
    Basic,
    ContentionLow,
    ContentionHigh,
}

/// A classified queue-pair interaction at one server.
#[derive(Debug, Clone, Serialize)]
pub struct StructureInstance {
    pub kind: StructureKind,
    pub server: usize,
    pub high_queue: usize,
    pub low_queue: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueueGraph {
    pub servers: Vec<ServerInfo>,
    pub queues: Vec<QueueInfo>,
    pub flows: Vec<FlowSpec>,
    /// Serving hops per flow, in path order.
    pub paths: Vec<Vec<HopRef>>,
    pub link_latency: f64,
}

impl QueueGraph {
    /// Flat list of (flow, hop) classes, in flow-major order.
    pub fn classes(&self) -> Vec<(usize, usize)> {
        self.paths
            .iter()
            .enumerate()
            .flat_map(|(f, hops)| (0..hops.len()).map(move |h| (f, h)))
            .collect()
    }

    /// Offered load of each server from the raw flow rates.
    pub fn server_loads(&self) -> Vec<f64> {
        let mut load = vec![0.0; self.servers.len()];
        for (f, hops) in self.paths.iter().enumerate() {
            for hop in hops {
                load[hop.server] += self.flows[f].arrival.rate * self.servers[hop.server].service_time;
            }
        }
        load
    }

    pub fn check_stability(&self) -> Result<()> {
        for (s, load) in self.server_loads().iter().enumerate() {
            if *load >= 1.0 {
                let queue = self
                    .paths
                    .iter()
                    .flatten()
                    .find(|h| h.server == s)
                    .map(|h| self.queues[h.queue].label.clone())
                    .unwrap_or_default();
                return Err(ModelError::Instability(format!(
                    "queue {queue} (server {}) offered load {load:.4} >= 1",
                    self.servers[s].label
                )));
            }
        }
        Ok(())
    }

    /// Per-class arrival moments, propagated hop by hop. Routing is
    /// deterministic, so a flow's bursts travel together: each class keeps
    /// its own burst structure across a hop, smoothed by the upstream
    /// server's busy periods (the single-stream departure-SCV relation with
    /// that server's total utilization). Cyclic dependencies (rings) settle
    /// by fixed point.
    /// Returns the per-class moments and the number of sweeps it took
    /// the fixed point to settle.
    pub fn propagate_moments(&self) -> Result<(Vec<Vec<MomentPair>>, usize)> {
        self.check_stability()?;
        let mut moments: Vec<Vec<MomentPair>> = self
            .paths
            .iter()
            .enumerate()
            .map(|(f, hops)| vec![self.flows[f].arrival.moments(); hops.len()])
            .collect();

        let loads = self.server_loads();
        for sweep in 1..=500 {
            let mut delta = 0.0f64;
            for (f, hops) in self.paths.iter().enumerate() {
                for h in 1..hops.len() {
                    let upstream = hops[h - 1].server;
                    let prev = moments[f][h - 1];
                    let smoothed = departure_scv(
                        loads[upstream],
                        prev.scv,
                        self.servers[upstream].service_scv,
                    )?;
                    let scv = 0.5 * (prev.scv + smoothed);
                    delta = delta.max((scv - moments[f][h].scv).abs());
                    moments[f][h] = MomentPair { rate: prev.rate, scv };
                }
            }
            if delta < 1e-9 {
                return Ok((moments, sweep));
            }
        }
        Err(ModelError::NonConvergence { iterations: 500, residual: f64::NAN })
    }

    /// Labels every cross-queue interaction at each server as basic,
    /// contention-at-low-priority, or contention-at-high-priority.
    pub fn classify_structures(&self) -> Result<Vec<StructureInstance>> {
        // Queue -> set of servers its classes use; queue -> whether its
        // classes are substreams split off a shared upstream queue.
        let n_queues = self.queues.len();
        let mut servers_of_queue: Vec<Vec<usize>> = vec![Vec::new(); n_queues];
        let mut split_upstream = vec![false; n_queues];
        let mut upstream_fanout: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
        for hops in &self.paths {
            for (h, hop) in hops.iter().enumerate() {
                if !servers_of_queue[hop.queue].contains(&hop.server) {
                    servers_of_queue[hop.queue].push(hop.server);
                }
                if h + 1 < hops.len() {
                    upstream_fanout
                        .entry(hop.queue)
                        .or_default()
                        .entry(hops[h + 1].queue)
                        .or_default()
                        .push(hop.server);
                }
            }
        }
        for (&up, nexts) in &upstream_fanout {
            // A queue whose traffic fans out (or partially terminates)
            // feeds split substreams downstream.
            let total_through: usize = nexts.values().map(|v| v.len()).sum();
            let carried: usize = self
                .paths
                .iter()
                .flat_map(|hops| hops.iter())
                .filter(|h| h.queue == up)
                .count();
            if nexts.len() > 1 || total_through < carried {
                for &down in nexts.keys() {
                    split_upstream[down] = true;
                }
            }
        }

        let mut queues_at_server: Vec<Vec<usize>> = vec![Vec::new(); self.servers.len()];
        for hops in &self.paths {
            for hop in hops {
                if !queues_at_server[hop.server].contains(&hop.queue) {
                    queues_at_server[hop.server].push(hop.queue);
                }
            }
        }

        let mut out = Vec::new();
        for (s, queues) in queues_at_server.iter().enumerate() {
            for i in 0..queues.len() {
                for j in (i + 1)..queues.len() {
                    let (a, b) = (queues[i], queues[j]);
                    let (high, low) = if self.queues[a].rank <= self.queues[b].rank {
                        (a, b)
                    } else {
                        (b, a)
                    };
                    let kind = if servers_of_queue[low].len() > 1 || servers_of_queue[high].len() > 1
                    {
                        StructureKind::ContentionLow
                    } else if split_upstream[high] {
                        StructureKind::ContentionHigh
                    } else {
                        StructureKind::Basic
                    };
                    out.push(StructureInstance { kind, server: s, high_queue: high, low_queue: low });
                }
            }
        }
        Ok(out)
    }
}

/// Builds the queue graph for a ring or mesh under deterministic routing.
/// Every router has one server; each router hosts an injection queue and
/// one through queue per upstream neighbor, with through classes outranking
/// injections.
pub fn build_queue_graph(
    topology: &Topology,
    flows: &[FlowSpec],
    service_time: f64,
    service_scv: f64,
    link_latency: f64,
) -> Result<QueueGraph> {
    topology.validate()?;
    let nodes = topology.node_count();
    for f in flows {
        if f.source == f.destination || f.source >= nodes || f.destination >= nodes {
            return Err(ModelError::Domain(format!(
                "invalid flow {} -> {}",
                f.source, f.destination
            )));
        }
    }

    let servers: Vec<ServerInfo> = (0..nodes)
        .map(|r| ServerInfo {
            label: format!("r{r}"),
            service_time,
            service_scv,
        })
        .collect();

    // Queue key: (router, upstream router) with usize::MAX for injection.
    let mut queue_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut queues: Vec<QueueInfo> = Vec::new();
    let mut queue_id = |key: (usize, usize), queues: &mut Vec<QueueInfo>| -> usize {
        *queue_ids.entry(key).or_insert_with(|| {
            let (router, from) = key;
            let (label, rank) = if from == usize::MAX {
                (format!("r{router}.inject"), INJECT_RANK)
            } else {
                (format!("r{router}.from_r{from}"), THROUGH_RANK)
            };
            queues.push(QueueInfo { label, rank });
            queues.len() - 1
        })
    };

    let mut paths = Vec::with_capacity(flows.len());
    for f in flows {
        let routers = route(topology, f.source, f.destination);
        // The flit is serviced at every router it is forwarded from; the
        // destination consumes it on arrival.
        let mut hops = Vec::with_capacity(routers.len() - 1);
        for i in 0..routers.len() - 1 {
            let key = if i == 0 { (routers[0], usize::MAX) } else { (routers[i], routers[i - 1]) };
            let q = queue_id(key, &mut queues);
            hops.push(HopRef { queue: q, server: routers[i] });
        }
        paths.push(hops);
    }

    Ok(QueueGraph {
        servers,
        queues,
        flows: flows.to_vec(),
        paths,
        link_latency,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassWait {
    pub flow: usize,
    pub hop: usize,
    pub queue: usize,
    pub rate: f64,
    pub arrival_scv: f64,
    pub waiting: f64,
    pub t_hat: f64,
    pub scv_hat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueueWait {
    pub queue: usize,
    pub label: String,
    pub rate: f64,
    pub waiting: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowLatency {
    pub source: usize,
    pub destination: usize,
    pub hops: usize,
    pub latency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NetworkSolution {
    pub class_waits: Vec<ClassWait>,
    pub queue_waits: Vec<QueueWait>,
    pub flow_latencies: Vec<FlowLatency>,
    /// Rate-weighted mean end-to-end latency over all flows.
    pub mean_latency: f64,
    pub iterations: usize,
    pub diagnostics: BreakdownDiagnostics,
}

/// Runs the iterative decomposition over the whole network: propagates
/// arrival moments, decomposes every server's contention, evaluates
/// per-queue waiting times, and composes per-flow end-to-end latencies.
pub fn solve_network(graph: &QueueGraph) -> Result<NetworkSolution> {
    let (moments, sweeps) = graph.propagate_moments()?;
    let class_list = graph.classes();

    let mut nodes = Vec::with_capacity(class_list.len());
    for (idx, &(f, h)) in class_list.iter().enumerate() {
        let hop = graph.paths[f][h];
        if moments[f][h].rate == 0.0 {
            continue;
        }
        nodes.push(ClassNode {
            class_id: idx,
            arrival: moments[f][h],
            service_time: graph.servers[hop.server].service_time,
            service_scv: graph.servers[hop.server].service_scv,
            queue: hop.queue,
            server: hop.server,
            rank: graph.queues[hop.queue].rank,
            // Only raw injections can put several flits into one cycle.
            batching: h == 0,
        });
    }
    let solution = StationSystem { classes: nodes }.solve()?;

    let mut wait_of = vec![0.0; class_list.len()];
    let mut t_hat_of = vec![0.0; class_list.len()];
    let mut scv_hat_of = vec![0.0; class_list.len()];
    for c in &solution.classes {
        wait_of[c.class_id] = c.waiting;
        t_hat_of[c.class_id] = c.modified.t_hat;
        scv_hat_of[c.class_id] = c.modified.scv_hat;
    }

    let class_waits: Vec<ClassWait> = class_list
        .iter()
        .enumerate()
        .map(|(idx, &(f, h))| ClassWait {
            flow: f,
            hop: h,
            queue: graph.paths[f][h].queue,
            rate: moments[f][h].rate,
            arrival_scv: moments[f][h].scv,
            waiting: wait_of[idx],
            t_hat: t_hat_of[idx],
            scv_hat: scv_hat_of[idx],
        })
        .collect();

    let mut queue_rate = vec![0.0; graph.queues.len()];
    let mut queue_wsum = vec![0.0; graph.queues.len()];
    for cw in &class_waits {
        queue_rate[cw.queue] += cw.rate;
        queue_wsum[cw.queue] += cw.rate * cw.waiting;
    }
    let queue_waits = graph
        .queues
        .iter()
        .enumerate()
        .map(|(q, info)| QueueWait {
            queue: q,
            label: info.label.clone(),
            rate: queue_rate[q],
            waiting: if queue_rate[q] > 0.0 { queue_wsum[q] / queue_rate[q] } else { 0.0 },
        })
        .collect();

    let mut wait_by_hop: Vec<Vec<f64>> =
        graph.paths.iter().map(|hops| vec![0.0; hops.len()]).collect();
    for cw in &class_waits {
        wait_by_hop[cw.flow][cw.hop] = cw.waiting;
    }

    let mut flow_latencies = Vec::with_capacity(graph.flows.len());
    let mut lat_sum = 0.0;
    let mut rate_sum = 0.0;
    for (f, hops) in graph.paths.iter().enumerate() {
        let mut latency = hops.len() as f64 * graph.link_latency;
        for (h, hop) in hops.iter().enumerate() {
            latency += wait_by_hop[f][h] + graph.servers[hop.server].service_time;
        }
        let rate = graph.flows[f].arrival.rate;
        lat_sum += rate * latency;
        rate_sum += rate;
        flow_latencies.push(FlowLatency {
            source: graph.flows[f].source,
            destination: graph.flows[f].destination,
            hops: hops.len(),
            latency,
        });
    }

    Ok(NetworkSolution {
        class_waits,
        queue_waits,
        flow_latencies,
        mean_latency: if rate_sum > 0.0 { lat_sum / rate_sum } else { 0.0 },
        iterations: sweeps.max(solution.iterations),
        diagnostics: solution.diagnostics,
    })
}

/// Identical to [`solve_network`] with every flow's burst probability
/// forced to zero: the no-burst comparison baseline.
pub fn no_burst_baseline(graph: &QueueGraph) -> Result<NetworkSolution> {
    let mut flat = graph.clone();
    for f in &mut flat.flows {
        f.arrival = GGeoProcess::new(f.arrival.rate, 0.0)?;
    }
    solve_network(&flat)
}

/// Uniform all-to-all traffic: every node sends to every other node with
/// equal per-flow rate summing to `rate_per_source`.
pub fn uniform_flows(
    topology: &Topology,
    rate_per_source: f64,
    burst_prob: f64,
) -> Result<Vec<FlowSpec>> {
    let n = topology.node_count();
    let per_flow = rate_per_source / (n - 1) as f64;
    let arrival = GGeoProcess::new(per_flow, burst_prob)?;
    let mut flows = Vec::with_capacity(n * (n - 1));
    for src in 0..n {
        for dst in 0..n {
            if src != dst {
                flows.push(FlowSpec { source: src, destination: dst, arrival });
            }
        }
    }
    Ok(flows)
}

/// Canonical two-class basic priority layout: two queues of distinct rank
/// share one server.
pub fn canonical_basic(
    high: GGeoProcess,
    low: GGeoProcess,
    service_time: f64,
    link_latency: f64,
) -> QueueGraph {
    QueueGraph {
        servers: vec![ServerInfo { label: "S".into(), service_time, service_scv: 0.0 }],
        queues: vec![
            QueueInfo { label: "q1".into(), rank: 0 },
            QueueInfo { label: "q2".into(), rank: 1 },
        ],
        flows: vec![
            FlowSpec { source: 0, destination: 100, arrival: high },
            FlowSpec { source: 1, destination: 100, arrival: low },
        ],
        paths: vec![
            vec![HopRef { queue: 0, server: 0 }],
            vec![HopRef { queue: 1, server: 0 }],
        ],
        link_latency,
    }
}

/// Canonical contention-at-low-priority layout: classes 2 and 3 share the
/// low queue; only class 2 contends with class 1 at the first server.
pub fn canonical_contention_low(
    class1: GGeoProcess,
    class2: GGeoProcess,
    class3: GGeoProcess,
    service_time: f64,
    link_latency: f64,
) -> QueueGraph {
    QueueGraph {
        servers: vec![
            ServerInfo { label: "SA".into(), service_time, service_scv: 0.0 },
            ServerInfo { label: "SB".into(), service_time, service_scv: 0.0 },
        ],
        queues: vec![
            QueueInfo { label: "q1".into(), rank: 0 },
            QueueInfo { label: "q2".into(), rank: 1 },
        ],
        flows: vec![
            FlowSpec { source: 0, destination: 100, arrival: class1 },
            FlowSpec { source: 1, destination: 100, arrival: class2 },
            FlowSpec { source: 2, destination: 101, arrival: class3 },
        ],
        paths: vec![
            vec![HopRef { queue: 0, server: 0 }],
            vec![HopRef { queue: 1, server: 0 }],
            vec![HopRef { queue: 1, server: 1 }],
        ],
        link_latency,
    }
}

/// Canonical contention-at-high-priority layout: classes 1 and 2 share an
/// upstream queue; downstream, only class 2 outranks class 3.
pub fn canonical_contention_high(
    class1: GGeoProcess,
    class2: GGeoProcess,
    class3: GGeoProcess,
    service_time: f64,
    link_latency: f64,
) -> QueueGraph {
    QueueGraph {
        servers: vec![
            ServerInfo { label: "SA".into(), service_time, service_scv: 0.0 },
            ServerInfo { label: "SB".into(), service_time, service_scv: 0.0 },
        ],
        queues: vec![
            QueueInfo { label: "q1".into(), rank: 0 },
            QueueInfo { label: "qv".into(), rank: 0 },
            QueueInfo { label: "q3".into(), rank: 1 },
        ],
        flows: vec![
            FlowSpec { source: 0, destination: 100, arrival: class1 },
            FlowSpec { source: 1, destination: 101, arrival: class2 },
            FlowSpec { source: 2, destination: 101, arrival: class3 },
        ],
        paths: vec![
            vec![HopRef { queue: 0, server: 0 }],
            vec![
                HopRef { queue: 0, server: 0 },
                HopRef { queue: 1, server: 1 },
            ],
            vec![HopRef { queue: 2, server: 1 }],
        ],
        link_latency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ggeo(rate: f64, pb: f64) -> GGeoProcess {
        GGeoProcess::new(rate, pb).unwrap()
    }

    #[test]
    fn mesh_routes_y_then_x() {
        let mesh = Topology::Mesh { width: 4, height: 4 };
        // Same row: pure X leg.
        assert_eq!(route(&mesh, 0, 3), vec![0, 1, 2, 3]);
        // (0,0) -> (2,3): down the column to row 2, then across.
        assert_eq!(route(&mesh, 0, 11), vec![0, 4, 8, 9, 10, 11]);
    }

    #[test]
    fn ring_takes_shorter_arc_clockwise_on_tie() {
        let ring = Topology::Ring { size: 6 };
        assert_eq!(route(&ring, 1, 4), vec![1, 2, 3, 4]);
        assert_eq!(route(&ring, 0, 5), vec![0, 5]);
        assert_eq!(route(&ring, 4, 2), vec![4, 3, 2]);
    }

    #[test]
    fn single_flow_builds_linear_chain() {
        let ring = Topology::Ring { size: 6 };
        let flows = vec![FlowSpec { source: 0, destination: 2, arrival: ggeo(0.2, 0.0) }];
        let g = build_queue_graph(&ring, &flows, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(g.paths[0].len(), 2);
        assert_eq!(g.queues[g.paths[0][0].queue].rank, INJECT_RANK);
        assert_eq!(g.queues[g.paths[0][1].queue].rank, THROUGH_RANK);
    }

    #[test]
    fn through_classes_outrank_injections_everywhere() {
        let mesh = Topology::Mesh { width: 4, height: 4 };
        let flows = uniform_flows(&mesh, 0.2, 0.2).unwrap();
        let g = build_queue_graph(&mesh, &flows, 1.0, 0.0, 1.0).unwrap();
        for hops in &g.paths {
            assert_eq!(g.queues[hops[0].queue].rank, INJECT_RANK);
            for hop in &hops[1..] {
                assert_eq!(g.queues[hop.queue].rank, THROUGH_RANK);
            }
        }
    }

    #[test]
    fn saturated_graph_is_rejected_with_queue_name() {
        let ring = Topology::Ring { size: 6 };
        let flows = uniform_flows(&ring, 0.9, 0.0).unwrap();
        let g = build_queue_graph(&ring, &flows, 1.0, 0.0, 1.0).unwrap();
        match g.check_stability() {
            Err(ModelError::Instability(msg)) => assert!(msg.contains("r")),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn zero_load_latency_equals_hop_floor() {
        let ring = Topology::Ring { size: 6 };
        let flows = uniform_flows(&ring, 6e-6, 0.0).unwrap();
        let g = build_queue_graph(&ring, &flows, 1.0, 0.0, 1.0).unwrap();
        let sol = solve_network(&g).unwrap();
        for fl in &sol.flow_latencies {
            assert_relative_eq!(fl.latency, fl.hops as f64 * 2.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn queue_wait_is_weighted_average_of_class_waits() {
        let ring = Topology::Ring { size: 6 };
        let flows = uniform_flows(&ring, 0.3, 0.4).unwrap();
        let g = build_queue_graph(&ring, &flows, 1.0, 0.0, 1.0).unwrap();
        let sol = solve_network(&g).unwrap();
        for qw in &sol.queue_waits {
            let (mut num, mut den) = (0.0, 0.0);
            for cw in sol.class_waits.iter().filter(|c| c.queue == qw.queue) {
                num += cw.rate * cw.waiting;
                den += cw.rate;
            }
            if den > 0.0 {
                assert_relative_eq!(qw.waiting, num / den, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn uniform_ring_stops_are_symmetric() {
        let ring = Topology::Ring { size: 6 };
        let flows = uniform_flows(&ring, 0.3, 0.4).unwrap();
        let g = build_queue_graph(&ring, &flows, 1.0, 0.0, 1.0).unwrap();
        let sol = solve_network(&g).unwrap();
        let inject_waits: Vec<f64> = sol
            .queue_waits
            .iter()
            .filter(|q| g.queues[q.queue].rank == INJECT_RANK)
            .map(|q| q.waiting)
            .collect();
        for w in &inject_waits[1..] {
            assert_relative_eq!(*w, inject_waits[0], epsilon = 1e-6);
        }
    }

    #[test]
    fn baseline_is_below_bursty_model() {
        let ring = Topology::Ring { size: 6 };
        let flows = uniform_flows(&ring, 0.4, 0.6).unwrap();
        let g = build_queue_graph(&ring, &flows, 1.0, 0.0, 1.0).unwrap();
        let bursty = solve_network(&g).unwrap();
        let flat = no_burst_baseline(&g).unwrap();
        assert!(flat.mean_latency < bursty.mean_latency);
    }

    #[test]
    fn baseline_equals_model_when_not_bursty() {
        let ring = Topology::Ring { size: 6 };
        let flows = uniform_flows(&ring, 0.3, 0.0).unwrap();
        let g = build_queue_graph(&ring, &flows, 1.0, 0.0, 1.0).unwrap();
        let a = solve_network(&g).unwrap();
        let b = no_burst_baseline(&g).unwrap();
        assert_relative_eq!(a.mean_latency, b.mean_latency, epsilon = 1e-12);
    }

    #[test]
    fn canonical_structures_classify_as_expected() {
        let p = ggeo(0.2, 0.2);
        let basic = canonical_basic(p, p, 1.0, 0.0).classify_structures().unwrap();
        assert!(basic.iter().all(|s| s.kind == StructureKind::Basic));

        let low = canonical_contention_low(p, p, p, 1.0, 0.0)
            .classify_structures()
            .unwrap();
        assert!(low.iter().any(|s| s.kind == StructureKind::ContentionLow));

        let high = canonical_contention_high(p, p, p, 1.0, 0.0)
            .classify_structures()
            .unwrap();
        assert!(high
            .iter()
            .any(|s| s.kind == StructureKind::ContentionHigh && s.server == 1));
    }

    #[test]
    fn mesh_through_interactions_are_contention_high() {
        let mesh = Topology::Mesh { width: 4, height: 4 };
        let flows = uniform_flows(&mesh, 0.2, 0.2).unwrap();
        let g = build_queue_graph(&mesh, &flows, 1.0, 0.0, 1.0).unwrap();
        let structures = g.classify_structures().unwrap();
        assert!(structures
            .iter()
            .any(|s| s.kind == StructureKind::ContentionHigh));
    }
}
