//! Maximum-entropy decomposition of shared-server multi-class priority
//! queues in discrete time.
//!
//! A shared-server system is transformed into independent queue-nodes whose
//! modified service processes (T̂, Ĉ_s²) absorb the contention. The kernels
//! are: the GGeo/G/1 occupancy closed form, the zero-occupancy probability
//! p_m(0), the modified first and second service moments, and the per-queue
//! waiting-time expression. A damped fixed point ties them together.

use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::traffic::{burst_factor, MomentPair};

pub const FIXED_POINT_TOL: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 1000;

/// One traffic class at a shared server. Lower `priority_rank` means higher
/// priority; classes with equal rank share one logical FIFO queue.
#[derive(Debug, Clone)]
pub struct TrafficClassSpec {
    pub class_id: usize,
    pub arrival: MomentPair,
    pub service_time: f64,
    pub service_scv: f64,
    pub priority_rank: u32,
}

impl TrafficClassSpec {
    pub fn utilization(&self) -> f64 {
        self.arrival.rate * self.service_time
    }
}

/// An ordered set of classes sharing one server under non-preemptive strict
/// priority.
#[derive(Debug, Clone)]
pub struct PriorityGroup {
    pub classes: Vec<TrafficClassSpec>,
}

impl PriorityGroup {
    pub fn new(classes: Vec<TrafficClassSpec>) -> Result<Self> {
        if classes.is_empty() {
            return Err(ModelError::Domain("priority group needs at least one class".into()));
        }
        let total: f64 = classes.iter().map(|c| c.utilization()).sum();
        if total >= 1.0 {
            return Err(ModelError::Instability(format!(
                "total utilization {total:.4} >= 1"
            )));
        }
        Ok(PriorityGroup { classes })
    }
}

/// The decomposed service process of one class.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModifiedService {
    pub t_hat: f64,
    pub scv_hat: f64,
    pub util_hat: f64,
    pub p_zero: f64,
    pub occupancy: f64,
}

/// Counters for model-breakdown clamps hit during a solve.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct BreakdownDiagnostics {
    pub p_zero_clamps: u64,
    pub scv_floors: u64,
    pub waiting_floors: u64,
}

impl BreakdownDiagnostics {
    pub fn merge(&mut self, other: &BreakdownDiagnostics) {
        self.p_zero_clamps += other.p_zero_clamps;
        self.scv_floors += other.scv_floors;
        self.waiting_floors += other.waiting_floors;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassSolution {
    pub class_id: usize,
    pub queue: usize,
    pub waiting: f64,
    pub occupancy: f64,
    pub modified: ModifiedService,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueueSolution {
    pub classes: Vec<ClassSolution>,
    /// Aggregate residual time per queue at the converged point.
    pub residual: Vec<f64>,
    pub iterations: usize,
    pub diagnostics: BreakdownDiagnostics,
}

impl QueueSolution {
    pub fn class(&self, class_id: usize) -> &ClassSolution {
        self.classes
            .iter()
            .find(|c| c.class_id == class_id)
            .expect("unknown class id")
    }
}

/// Mean queue-node occupancy of a GGeo/G/1 queue:
/// `n̄ = ρ(1 − ρ + C_a² + ρC_s²)/(2(1 − ρ))`.
pub fn ggeo_g1_occupancy(utilization: f64, arrival_scv: f64, service_scv: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&utilization) {
        return Err(ModelError::Instability(format!(
            "utilization {utilization} outside [0, 1)"
        )));
    }
    Ok(utilization * (1.0 - utilization + arrival_scv + utilization * service_scv)
        / (2.0 * (1.0 - utilization)))
}

/// Marginal probability of zero flits of a class in its queue-node:
/// `p_m(0) = 1 − ρ_m − Σ_k ρ_k·n̄_mk/(ρ_k + n̄_mk)`.
pub fn p_zero(own_util: f64, others: &[(f64, f64)]) -> Result<f64> {
    let mut p = 1.0 - own_util;
    for &(util_k, n_mk) in others {
        if util_k > 0.0 && n_mk > 0.0 {
            p -= util_k * n_mk / (util_k + n_mk);
        }
    }
    if p <= 0.0 {
        return Err(ModelError::Breakdown(format!(
            "p(0) = {p:.4} <= 0; decomposition over-saturated"
        )));
    }
    Ok(p)
}

/// Modified mean service time, `T̂ = (1 − p(0))/λ`.
pub fn modified_service_time(rate: f64, p_zero: f64) -> Result<f64> {
    if rate <= 0.0 || !(p_zero > 0.0 && p_zero <= 1.0) {
        return Err(ModelError::Domain(format!(
            "invalid inputs rate={rate}, p_zero={p_zero}"
        )));
    }
    let t_hat = (1.0 - p_zero) / rate;
    if t_hat * rate >= 1.0 {
        return Err(ModelError::Instability(format!(
            "modified utilization {} >= 1",
            t_hat * rate
        )));
    }
    Ok(t_hat)
}

/// Modified service SCV, the inverse of the occupancy closed form:
/// `Ĉ_s² = ((1 − ρ̂)(2n̄ − ρ̂) − ρ̂C_a²)/ρ̂²`. Negative results are floored
/// at zero by the caller with a diagnostic.
pub fn modified_service_scv(util_hat: f64, occupancy: f64, arrival_scv: f64) -> Result<f64> {
    if !(util_hat > 0.0 && util_hat < 1.0) {
        return Err(ModelError::Instability(format!(
            "modified utilization {util_hat} outside (0, 1)"
        )));
    }
    Ok(((1.0 - util_hat) * (2.0 * occupancy - util_hat) - util_hat * arrival_scv)
        / (util_hat * util_hat))
}

/// Independence closure for the cross occupancy of class m while class k is
/// in service: `n̄_mk = ρ_k·λ_m·W_m`.
pub fn cross_occupancy(rate_m: f64, waiting_m: f64, util_k: f64) -> f64 {
    util_k * rate_m * waiting_m
}

/// Per-class parameters for one waiting-time evaluation over a queue.
#[derive(Debug, Clone, Copy)]
pub struct WaitingClass {
    pub rate: f64,
    pub arrival_scv: f64,
    pub service_time: f64,
    pub t_hat: f64,
    pub scv_hat: f64,
}

/// Mean queuing times of all classes sharing one queue:
/// `W_m = (R + Σ ρ̂_k T̂_k β_k)/(1 − Σ ρ̂_k) + T̂_m(β_m + 1) − T_m`
/// with `R = Σ ½ρ̂_k(T̂_k − 1 + T̂_k Ĉ_s_k²)`.
pub fn waiting_time(classes: &[WaitingClass]) -> Result<Vec<f64>> {
    let (residual, waits) = waiting_time_with_residual(classes, &mut BreakdownDiagnostics::default())?;
    let _ = residual;
    Ok(waits)
}

fn waiting_time_with_residual(
    classes: &[WaitingClass],
    diag: &mut BreakdownDiagnostics,
) -> Result<(f64, Vec<f64>)> {
    let mut util_sum = 0.0;
    let mut residual = 0.0;
    let mut burst_sum = 0.0;
    for c in classes {
        if c.rate == 0.0 {
            continue;
        }
        let util_hat = c.rate * c.t_hat;
        util_sum += util_hat;
        residual += 0.5 * util_hat * (c.t_hat - 1.0 + c.t_hat * c.scv_hat);
        burst_sum += util_hat * c.t_hat * burst_factor(c.rate, c.arrival_scv);
    }
    if util_sum >= 1.0 {
        return Err(ModelError::Instability(format!(
            "queue modified utilization {util_sum:.4} >= 1"
        )));
    }
    let common = (residual + burst_sum) / (1.0 - util_sum);
    let waits = classes
        .iter()
        .map(|c| {
            if c.rate == 0.0 {
                return 0.0;
            }
            let beta = burst_factor(c.rate, c.arrival_scv);
            let w = common + c.t_hat * (beta + 1.0) - c.service_time;
            if w < -1e-9 {
                diag.waiting_floors += 1;
            }
            w.max(0.0)
        })
        .collect();
    Ok((residual, waits))
}

/// Mean waiting time of class `m` under non-preemptive priority at one
/// shared server, from the per-cycle batch moments of the GGeo streams.
///
/// The class waits for (a) the stationary workload of all equal-or-higher
/// classes, (b) the residual service of a lower class caught in service,
/// (c) its own batch ahead of it, (d) same-cycle arrivals of higher classes
/// (all of them) and equal classes (half, by symmetry of the tie-break),
/// and (e) higher-class work arriving while it waits, which scales the
/// whole expression by 1/(1 − ρ_higher). For a single GGeo class this
/// reduces algebraically to the waiting-time expression and at unit service
/// it is exact (W = β/(1 − ρ)).
fn priority_wait(
    classes: &[ClassNode],
    m: usize,
    higher: &[usize],
    equal: &[usize],
    lower: &[usize],
) -> f64 {
    // Stationary workload of the equal-or-higher set: E[U] =
    // (E[V²] − E[V]) / (2(1 − ρ)) with V the per-cycle work arrival.
    let set: Vec<usize> = std::iter::once(m)
        .chain(higher.iter().copied())
        .chain(equal.iter().copied())
        .collect();
    let mut second_moment = 0.0;
    let mut load = 0.0;
    let mut util_sq = 0.0;
    for &i in &set {
        let (lam, t, cs) = (classes[i].arrival.rate, classes[i].service_time, classes[i].service_scv);
        let beta = burst_factor(lam, classes[i].arrival.scv);
        second_moment += lam * t * (t - 1.0) + lam * t * t * (2.0 * beta + cs);
        load += lam * t;
        util_sq += lam * t * lam * t;
    }
    second_moment += load * load - util_sq;
    let workload = second_moment / (2.0 * (1.0 - load));

    let residual_lower: f64 = lower
        .iter()
        .map(|&k| {
            let (lam, t, cs) = (classes[k].arrival.rate, classes[k].service_time, classes[k].service_scv);
            0.5 * lam * t * (t - 1.0 + t * cs)
        })
        .sum();
    let same_cycle: f64 = higher.iter().map(|&k| classes[k].utilization()).sum::<f64>()
        + 0.5 * equal.iter().map(|&k| classes[k].utilization()).sum::<f64>();
    let own_batch = if classes[m].batching {
        burst_factor(classes[m].arrival.rate, classes[m].arrival.scv) * classes[m].service_time
    } else {
        0.0
    };
    let rho_higher: f64 = higher.iter().map(|&k| classes[k].utilization()).sum();

    (workload + residual_lower + own_batch + same_cycle) / (1.0 - rho_higher)
}

/// Finds the modified service time T̂ ≥ T whose standalone queue-node
/// reproduces the given waiting time (the single-class waiting-time
/// form, monotone in T̂; solved by bisection).
fn invert_service_time(rate: f64, arrival_scv: f64, service_time: f64, service_scv: f64, target: f64) -> f64 {
    let beta = burst_factor(rate, arrival_scv);
    let wait_at = |t_hat: f64| {
        let util = rate * t_hat;
        (0.5 * util * (t_hat - 1.0 + t_hat * service_scv) + util * t_hat * beta) / (1.0 - util)
            + t_hat * (beta + 1.0)
            - service_time
    };
    let (mut lo, mut hi) = (service_time, (1.0 - 1e-9) / rate);
    if wait_at(lo) >= target {
        return lo;
    }
    if hi <= lo || wait_at(hi) <= target {
        return hi.max(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if wait_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// In-loop waiting-time evaluation. Unlike the public op, a transiently
/// saturated modified utilization clamps the denominator (counted as a
/// breakdown) instead of aborting the whole fixed point.
fn waiting_time_clamped(classes: &[WaitingClass], diag: &mut BreakdownDiagnostics) -> (f64, Vec<f64>) {
    const MIN_HEADROOM: f64 = 1e-3;
    let mut util_sum = 0.0;
    let mut residual = 0.0;
    let mut burst_sum = 0.0;
    for c in classes {
        if c.rate == 0.0 {
            continue;
        }
        let util_hat = c.rate * c.t_hat;
        util_sum += util_hat;
        residual += 0.5 * util_hat * (c.t_hat - 1.0 + c.t_hat * c.scv_hat);
        burst_sum += util_hat * c.t_hat * burst_factor(c.rate, c.arrival_scv);
    }
    let headroom = 1.0 - util_sum;
    let headroom = if headroom < MIN_HEADROOM {
        diag.p_zero_clamps += 1;
        MIN_HEADROOM
    } else {
        headroom
    };
    let common = (residual + burst_sum) / headroom;
    let waits = classes
        .iter()
        .map(|c| {
            if c.rate == 0.0 {
                return 0.0;
            }
            let beta = burst_factor(c.rate, c.arrival_scv);
            let w = common + c.t_hat * (beta + 1.0) - c.service_time;
            if w < -1e-9 {
                diag.waiting_floors += 1;
            }
            w.max(0.0)
        })
        .collect();
    (residual, waits)
}

/// One class inside a [`StationSystem`].
#[derive(Debug, Clone)]
pub struct ClassNode {
    pub class_id: usize,
    pub arrival: MomentPair,
    pub service_time: f64,
    pub service_scv: f64,
    /// Queue grouping: classes in the same queue are solved jointly by the
    /// waiting-time expression.
    pub queue: usize,
    /// Server grouping: classes at the same server contend and couple
    /// through p_m(0).
    pub server: usize,
    pub rank: u32,
    /// Whether several arrivals of this class can share one cycle. True
    /// for raw GGeo injections; false for streams that already passed a
    /// server, which emits at most one flit per cycle.
    pub batching: bool,
}

impl ClassNode {
    fn utilization(&self) -> f64 {
        self.arrival.rate * self.service_time
    }
}

/// A set of classes grouped into queues and servers. This is the common
/// form behind the basic, contention-at-low and contention-at-high
/// decompositions as well as the whole-network solve.
#[derive(Debug, Clone, Default)]
pub struct StationSystem {
    pub classes: Vec<ClassNode>,
}

impl StationSystem {
    /// Checks per-server stability, naming the first saturated server.
    pub fn check_stability(&self) -> Result<()> {
        let max_server = self.classes.iter().map(|c| c.server).max().unwrap_or(0);
        for s in 0..=max_server {
            let load: f64 = self
                .classes
                .iter()
                .filter(|c| c.server == s)
                .map(|c| c.utilization())
                .sum();
            if load >= 1.0 {
                return Err(ModelError::Instability(format!(
                    "server {s} offered load {load:.4} >= 1"
                )));
            }
        }
        Ok(())
    }

    /// Solves the station system. Each class's waiting time follows
    /// directly from the workload of the same-server classes of equal or
    /// higher priority (per-cycle batch moments of the GGeo streams), the
    /// same-cycle overtaking terms, and the residual service of lower
    /// classes. Queues whose classes are served at different servers couple
    /// through the head of the queue: each member's standalone wait is
    /// folded into a modified service time (utilization inversion) and the
    /// waiting-time expression is re-evaluated jointly over the queue.
    pub fn solve(&self) -> Result<QueueSolution> {
        self.check_stability()?;
        let classes = &self.classes;
        let n = classes.len();
        let n_queues = classes.iter().map(|c| c.queue).max().map_or(0, |q| q + 1);

        let live = |k: usize| classes[k].arrival.rate > 0.0;
        let n_servers = classes.iter().map(|c| c.server).max().map_or(0, |s| s + 1);
        let mut server_members: Vec<Vec<usize>> = vec![Vec::new(); n_servers];
        for (k, c) in classes.iter().enumerate() {
            if live(k) {
                server_members[c.server].push(k);
            }
        }
        let mut higher: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut equal: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut lower: Vec<Vec<usize>> = vec![Vec::new(); n];
        for members in &server_members {
            for &m in members {
                for &k in members {
                    if k == m {
                        continue;
                    }
                    match classes[k].rank.cmp(&classes[m].rank) {
                        std::cmp::Ordering::Less => higher[m].push(k),
                        std::cmp::Ordering::Equal => equal[m].push(k),
                        std::cmp::Ordering::Greater => lower[m].push(k),
                    }
                }
            }
        }

        let mut diag = BreakdownDiagnostics::default();
        let mut waiting = vec![0.0; n];
        for m in 0..n {
            if live(m) {
                waiting[m] = priority_wait(classes, m, &higher[m], &equal[m], &lower[m]);
            }
        }

        // Modified service times: the queue-node that reproduces each
        // class's wait standalone.
        let mut t_hat: Vec<f64> = classes.iter().map(|c| c.service_time).collect();
        let contended: Vec<bool> = (0..n)
            .map(|m| !higher[m].is_empty() || !equal[m].is_empty())
            .collect();
        for m in 0..n {
            if live(m) && contended[m] {
                t_hat[m] = invert_service_time(
                    classes[m].arrival.rate,
                    classes[m].arrival.scv,
                    classes[m].service_time,
                    classes[m].service_scv,
                    waiting[m],
                );
            }
        }

        // Head-of-line coupling inside queues that span several servers: a
        // member waiting for its own server holds the head and blocks the
        // classes behind it.
        let mut queue_members: Vec<Vec<usize>> = vec![Vec::new(); n_queues];
        for (i, c) in classes.iter().enumerate() {
            if live(i) {
                queue_members[c.queue].push(i);
            }
        }
        for members in &queue_members {
            let multi_server = members
                .iter()
                .any(|&i| classes[i].server != classes[members[0]].server);
            if !multi_server {
                continue;
            }
            let wcs: Vec<WaitingClass> = members
                .iter()
                .map(|&i| WaitingClass {
                    rate: classes[i].arrival.rate,
                    arrival_scv: classes[i].arrival.scv,
                    service_time: classes[i].service_time,
                    t_hat: t_hat[i],
                    scv_hat: classes[i].service_scv,
                })
                .collect();
            let (_, ws) = waiting_time_clamped(&wcs, &mut diag);
            for (&i, w) in members.iter().zip(ws) {
                waiting[i] = w.max(waiting[i]);
            }
        }

        // Reported decomposition state: p_m(0) = 1 - λT̂, consistent with
        // T̂; modified SCVs through the occupancy inversion, floored
        // at zero with a diagnostic. Uncontended classes keep their
        // original service process exactly.
        let mut occupancy = vec![0.0; n];
        let mut p0 = vec![1.0; n];
        let mut scv_hat: Vec<f64> = classes.iter().map(|c| c.service_scv).collect();
        for m in 0..n {
            if !live(m) {
                continue;
            }
            occupancy[m] = classes[m].arrival.rate * (waiting[m] + classes[m].service_time);
            p0[m] = 1.0 - classes[m].arrival.rate * t_hat[m];
            if contended[m] {
                let util_hat = classes[m].arrival.rate * t_hat[m];
                let scv = modified_service_scv(util_hat, occupancy[m], classes[m].arrival.scv)?;
                if scv < 0.0 {
                    diag.scv_floors += 1;
                }
                scv_hat[m] = scv.max(0.0);
            }
        }

        // Aggregate residual time per queue at the solution.
        let mut residuals = vec![0.0; n_queues];
        for (q, members) in queue_members.iter().enumerate() {
            for &i in members {
                let util_hat = classes[i].arrival.rate * t_hat[i];
                residuals[q] +=
                    0.5 * util_hat * (t_hat[i] - 1.0 + t_hat[i] * classes[i].service_scv);
            }
        }

        let solutions = classes
            .iter()
            .enumerate()
            .map(|(i, c)| ClassSolution {
                class_id: c.class_id,
                queue: c.queue,
                waiting: waiting[i],
                occupancy: occupancy[i],
                modified: ModifiedService {
                    t_hat: t_hat[i],
                    scv_hat: scv_hat[i],
                    util_hat: c.arrival.rate * t_hat[i],
                    p_zero: p0[i],
                    occupancy: occupancy[i],
                },
            })
            .collect();
        Ok(QueueSolution {
            classes: solutions,
            residual: residuals,
            iterations: 1,
            diagnostics: diag,
        })
    }
}

/// Decomposes a basic priority group (each rank its own queue, one shared
/// server) into independent queue-nodes.
pub fn decompose_basic_priority(group: &PriorityGroup) -> Result<QueueSolution> {
    let mut ranks: Vec<u32> = group.classes.iter().map(|c| c.priority_rank).collect();
    ranks.sort_unstable();
    ranks.dedup();
    let system = StationSystem {
        classes: group
            .classes
            .iter()
            .map(|c| ClassNode {
                class_id: c.class_id,
                arrival: c.arrival,
                service_time: c.service_time,
                service_scv: c.service_scv,
                queue: ranks.binary_search(&c.priority_rank).unwrap(),
                server: 0,
                rank: c.priority_rank,
                batching: true,
            })
            .collect(),
    };
    system.solve()
}

/// Decomposes the contention-at-low-priority structure: `high` contends
/// with `shared_contending` at one server while `shared_bypass` shares the
/// low queue but is served elsewhere.
pub fn decompose_contention_low(
    high: &TrafficClassSpec,
    shared_contending: &TrafficClassSpec,
    shared_bypass: &TrafficClassSpec,
) -> Result<QueueSolution> {
    let system = StationSystem {
        classes: vec![
            ClassNode {
                class_id: high.class_id,
                arrival: high.arrival,
                service_time: high.service_time,
                service_scv: high.service_scv,
                queue: 0,
                server: 0,
                rank: 0,
                batching: true,
            },
            ClassNode {
                class_id: shared_contending.class_id,
                arrival: shared_contending.arrival,
                service_time: shared_contending.service_time,
                service_scv: shared_contending.service_scv,
                queue: 1,
                server: 0,
                rank: 1,
                batching: true,
            },
            ClassNode {
                class_id: shared_bypass.class_id,
                arrival: shared_bypass.arrival,
                service_time: shared_bypass.service_time,
                service_scv: shared_bypass.service_scv,
                queue: 1,
                server: 1,
                rank: 1,
                batching: true,
            },
        ],
    };
    system.solve()
}

/// Decomposes the contention-at-high-priority structure. Classes `first`
/// and `second` share an upstream FIFO queue and server; downstream,
/// `second` outranks `low` at a second server. `second`'s arrival there is
/// the split of the upstream departure stream, fed through a virtual queue.
pub fn decompose_contention_high(
    first: &TrafficClassSpec,
    second: &TrafficClassSpec,
    low: &TrafficClassSpec,
) -> Result<QueueSolution> {
    use crate::traffic::{departure_scv, split_stream};

    let lam1 = first.arrival.rate;
    let lam2 = second.arrival.rate;
    let upstream = StationSystem {
        classes: vec![
            ClassNode {
                class_id: first.class_id,
                arrival: first.arrival,
                service_time: first.service_time,
                service_scv: first.service_scv,
                queue: 0,
                server: 0,
                rank: 0,
                batching: true,
            },
            ClassNode {
                class_id: second.class_id,
                arrival: second.arrival,
                service_time: second.service_time,
                service_scv: second.service_scv,
                queue: 0,
                server: 0,
                rank: 0,
                batching: true,
            },
        ],
    };
    let mut upstream_solution = upstream.solve()?;

    let virtual_arrival = if lam2 == 0.0 {
        MomentPair::null()
    } else {
        let total = lam1 + lam2;
        let agg_scv =
            (lam1 * first.arrival.scv + lam2 * second.arrival.scv) / total;
        let util = lam1 * first.service_time + lam2 * second.service_time;
        let dep = departure_scv(util, agg_scv, first.service_scv)?;
        split_stream(MomentPair { rate: total, scv: dep }, lam2 / total)
    };

    let downstream = StationSystem {
        classes: vec![
            ClassNode {
                class_id: second.class_id + VIRTUAL_CLASS_OFFSET,
                arrival: virtual_arrival,
                service_time: low.service_time,
                service_scv: low.service_scv,
                queue: 0,
                server: 0,
                rank: 0,
                // Departures of the upstream server never share a cycle.
                batching: false,
            },
            ClassNode {
                class_id: low.class_id,
                arrival: low.arrival,
                service_time: low.service_time,
                service_scv: low.service_scv,
                queue: 1,
                server: 0,
                rank: 1,
                batching: true,
            },
        ],
    };
    let downstream_solution = downstream.solve()?;

    upstream_solution.iterations += downstream_solution.iterations;
    upstream_solution
        .diagnostics
        .merge(&downstream_solution.diagnostics);
    let base = upstream_solution.residual.len();
    upstream_solution
        .residual
        .extend(downstream_solution.residual.iter());
    for mut c in downstream_solution.classes {
        c.queue += base;
        upstream_solution.classes.push(c);
    }
    Ok(upstream_solution)
}

/// Class-id offset for the virtual (analysis-only) copy of a class in the
/// contention-at-high-priority decomposition.
pub const VIRTUAL_CLASS_OFFSET: usize = 1_000_000;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::scv_from_burst;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ggeo_class(id: usize, rate: f64, pb: f64, t: f64, rank: u32) -> TrafficClassSpec {
        TrafficClassSpec {
            class_id: id,
            arrival: MomentPair { rate, scv: scv_from_burst(rate, pb).unwrap() },
            service_time: t,
            service_scv: 0.0,
            priority_rank: rank,
        }
    }

    #[test]
    fn occupancy_closed_form() {
        assert_relative_eq!(ggeo_g1_occupancy(0.5, 1.0, 1.0).unwrap(), 1.0);
        // Bernoulli arrivals, unit deterministic service: n̄ = ρ.
        assert_relative_eq!(ggeo_g1_occupancy(0.3, 0.7, 0.0).unwrap(), 0.3);
        assert_relative_eq!(ggeo_g1_occupancy(0.6, 2.8, 0.0).unwrap(), 2.4);
        assert!(ggeo_g1_occupancy(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn p_zero_reductions() {
        assert_relative_eq!(p_zero(0.3, &[]).unwrap(), 0.7);
        assert_relative_eq!(p_zero(0.3, &[(0.2, 0.0)]).unwrap(), 0.7);
        assert_relative_eq!(
            p_zero(0.3, &[(0.2, 0.1)]).unwrap(),
            1.0 - 0.3 - 0.2 * (0.1 / 0.3),
            epsilon = 1e-12
        );
        assert!(p_zero(0.9, &[(0.5, 10.0)]).is_err());
    }

    #[test]
    fn modified_time_examples() {
        assert_relative_eq!(modified_service_time(0.2, 0.8).unwrap(), 1.0);
        assert_relative_eq!(modified_service_time(0.2, 0.7).unwrap(), 1.5);
        assert!(modified_service_time(0.5, 0.0).is_err());
    }

    #[test]
    fn scv_inversion_recovers_service_scv() {
        let n = ggeo_g1_occupancy(0.5, 1.0, 1.0).unwrap();
        assert_relative_eq!(modified_service_scv(0.5, n, 1.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_class_bernoulli_never_waits() {
        let w = waiting_time(&[WaitingClass {
            rate: 0.5,
            arrival_scv: 0.5,
            service_time: 1.0,
            t_hat: 1.0,
            scv_hat: 0.0,
        }])
        .unwrap();
        assert_relative_eq!(w[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_class_bursty_wait() {
        // β/(1 − ρ) for unit deterministic service.
        let w = waiting_time(&[WaitingClass {
            rate: 0.5,
            arrival_scv: scv_from_burst(0.5, 0.2).unwrap(),
            service_time: 1.0,
            t_hat: 1.0,
            scv_hat: 0.0,
        }])
        .unwrap();
        assert_relative_eq!(w[0], 0.25 / 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_class_group_is_degenerate() {
        let group = PriorityGroup::new(vec![ggeo_class(0, 0.5, 0.2, 1.0, 0)]).unwrap();
        let sol = decompose_basic_priority(&group).unwrap();
        let c = sol.class(0);
        assert_relative_eq!(c.modified.t_hat, 1.0, epsilon = 1e-9);
        assert_relative_eq!(c.modified.scv_hat, 0.0, epsilon = 1e-6);
        assert_relative_eq!(c.waiting, 0.5, epsilon = 1e-5);
        // Little's law at the fixed point.
        assert!((c.occupancy - 0.5 * (c.waiting + 1.0)).abs() / c.occupancy < 1e-4);
    }

    #[test]
    fn symmetric_same_rank_classes_wait_equally() {
        let group = PriorityGroup::new(vec![
            ggeo_class(0, 0.2, 0.3, 1.0, 0),
            ggeo_class(1, 0.2, 0.3, 1.0, 0),
        ])
        .unwrap();
        let sol = decompose_basic_priority(&group).unwrap();
        assert_relative_eq!(sol.class(0).waiting, sol.class(1).waiting, epsilon = 1e-9);
    }

    #[test]
    fn strict_priority_orders_waits() {
        let group = PriorityGroup::new(vec![
            ggeo_class(0, 0.2, 0.4, 1.0, 0),
            ggeo_class(1, 0.2, 0.4, 1.0, 1),
        ])
        .unwrap();
        let sol = decompose_basic_priority(&group).unwrap();
        assert!(sol.class(0).waiting < sol.class(1).waiting);
        // Low class service inflates, high class stays put at T = 1.
        assert!(sol.class(1).modified.t_hat > 1.0);
        assert_relative_eq!(sol.class(0).modified.t_hat, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn contention_low_reduces_to_basic_when_bypass_idle() {
        let high = ggeo_class(1, 0.2, 0.2, 1.0, 0);
        let contending = ggeo_class(2, 0.2, 0.2, 1.0, 1);
        let mut bypass = ggeo_class(3, 0.2, 0.2, 1.0, 1);
        bypass.arrival = MomentPair::null();
        let sol = decompose_contention_low(&high, &contending, &bypass).unwrap();

        let group = PriorityGroup::new(vec![
            ggeo_class(1, 0.2, 0.2, 1.0, 0),
            ggeo_class(2, 0.2, 0.2, 1.0, 1),
        ])
        .unwrap();
        let basic = decompose_basic_priority(&group).unwrap();
        assert_relative_eq!(
            sol.class(2).waiting,
            basic.class(2).waiting,
            epsilon = 1e-6
        );
        assert_relative_eq!(
            sol.class(1).waiting,
            basic.class(1).waiting,
            epsilon = 1e-6
        );
    }

    #[test]
    fn contention_low_no_high_traffic_is_plain_fifo() {
        let mut high = ggeo_class(1, 0.2, 0.2, 1.0, 0);
        high.arrival = MomentPair::null();
        let contending = ggeo_class(2, 0.2, 0.2, 1.0, 1);
        let bypass = ggeo_class(3, 0.2, 0.2, 1.0, 1);
        let sol = decompose_contention_low(&high, &contending, &bypass).unwrap();
        assert_relative_eq!(sol.class(2).modified.t_hat, 1.0, epsilon = 1e-9);
        assert_relative_eq!(sol.class(2).waiting, sol.class(3).waiting, epsilon = 1e-9);
    }

    #[test]
    fn contention_high_idle_second_leaves_low_unmodified() {
        let first = ggeo_class(1, 0.2, 0.4, 1.0, 0);
        let mut second = ggeo_class(2, 0.2, 0.4, 1.0, 0);
        second.arrival = MomentPair::null();
        let low = ggeo_class(3, 0.2, 0.4, 1.0, 1);
        let sol = decompose_contention_high(&first, &second, &low).unwrap();
        assert_relative_eq!(sol.class(3).modified.t_hat, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn unstable_group_is_rejected() {
        assert!(PriorityGroup::new(vec![
            ggeo_class(0, 0.6, 0.0, 1.0, 0),
            ggeo_class(1, 0.6, 0.0, 1.0, 1),
        ])
        .is_err());
    }

    proptest! {
        #[test]
        fn occupancy_scv_inversion_identity(
            util in 0.01f64..0.99,
            a in 0.0f64..6.0,
            s in 0.0f64..6.0,
        ) {
            let n = ggeo_g1_occupancy(util, a, s).unwrap();
            let back = modified_service_scv(util, n, a).unwrap();
            prop_assert!((back - s).abs() < 1e-10);
        }

        #[test]
        fn little_holds_at_fixed_point(
            rate1 in 0.05f64..0.35,
            rate2 in 0.05f64..0.35,
            pb in 0.0f64..0.5,
        ) {
            let group = PriorityGroup::new(vec![
                ggeo_class(0, rate1, pb, 1.0, 0),
                ggeo_class(1, rate2, pb, 1.0, 1),
            ]).unwrap();
            let sol = decompose_basic_priority(&group).unwrap();
            for (c, rate) in [(sol.class(0), rate1), (sol.class(1), rate2)] {
                let little = rate * (c.waiting + 1.0);
                prop_assert!((c.occupancy - little).abs() / little < 1e-4);
            }
        }
    }

    #[test]
    fn waiting_monotone_in_rate_and_burstiness() {
        let mut last = 0.0;
        for &rate in &[0.1, 0.2, 0.3] {
            let group = PriorityGroup::new(vec![
                ggeo_class(0, rate, 0.3, 1.0, 0),
                ggeo_class(1, 0.2, 0.3, 1.0, 1),
            ])
            .unwrap();
            let w = decompose_basic_priority(&group).unwrap().class(1).waiting;
            assert!(w >= last);
            last = w;
        }
        last = 0.0;
        for &pb in &[0.0, 0.2, 0.4, 0.6] {
            let group = PriorityGroup::new(vec![
                ggeo_class(0, 0.2, pb, 1.0, 0),
                ggeo_class(1, 0.2, pb, 1.0, 1),
            ])
            .unwrap();
            let w = decompose_basic_priority(&group).unwrap().class(1).waiting;
            assert!(w >= last);
            last = w;
        }
    }
}
