//! Experiment configuration: JSON schema, defaults, and graph building.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::network::{build_queue_graph, uniform_flows, FlowSpec, QueueGraph, Topology};
use crate::sim::SimParams;
use crate::traffic::GGeoProcess;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TopologySpec {
    Ring { size: usize },
    Mesh { width: usize, height: usize },
}

impl TopologySpec {
    pub fn to_topology(&self) -> Topology {
        match *self {
            TopologySpec::Ring { size } => Topology::Ring { size },
            TopologySpec::Mesh { width, height } => Topology::Mesh { width, height },
        }
    }

    pub fn label(&self) -> String {
        match *self {
            TopologySpec::Ring { size } => format!("ring-{size}"),
            TopologySpec::Mesh { width, height } => format!("mesh-{width}x{height}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrafficSpec {
    /// All-to-all: every node sends to every other node; `rate` is the
    /// total per-source injection rate, split evenly over destinations.
    Uniform { rate: f64, burst_prob: f64 },
    Explicit { flows: Vec<FlowConfig> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub source: usize,
    pub destination: usize,
    pub rate: f64,
    pub burst_prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_warmup")]
    pub warmup: u64,
    #[serde(default = "default_measure")]
    pub measure: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_warmup() -> u64 {
    200_000
}
fn default_measure() -> u64 {
    2_000_000
}
fn default_seed() -> u64 {
    1
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { warmup: default_warmup(), measure: default_measure(), seed: default_seed() }
    }
}

/// Sweep axes; empty lists mean "just the configured traffic point".
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub rates: Vec<f64>,
    #[serde(default)]
    pub burst_probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    #[serde(default = "default_routing")]
    pub routing: String,
    pub traffic: TrafficSpec,
    #[serde(default = "default_service_time")]
    pub service_time: f64,
    #[serde(default)]
    pub service_scv: f64,
    #[serde(default = "default_link_latency")]
    pub link_latency: f64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_routing() -> String {
    "deterministic".into()
}
fn default_service_time() -> f64 {
    1.0
}
fn default_link_latency() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ModelError::Domain(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| ModelError::Domain(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let topo = self.topology.to_topology();
        topo.validate()?;
        match self.routing.as_str() {
            // Routing is fixed per topology (shortest-arc on rings, Y-X on
            // meshes); the name is accepted for config clarity only.
            "deterministic" => {}
            "shortest" if matches!(topo, Topology::Ring { .. }) => {}
            "yx" if matches!(topo, Topology::Mesh { .. }) => {}
            other => {
                return Err(ModelError::Domain(format!(
                    "routing '{other}' not available on {}",
                    self.topology.label()
                )))
            }
        }
        if !(self.service_time > 0.0) {
            return Err(ModelError::Domain(format!(
                "service_time {} must be positive",
                self.service_time
            )));
        }
        if self.service_scv < 0.0 || self.link_latency < 0.0 {
            return Err(ModelError::Domain("service_scv and link_latency must be >= 0".into()));
        }
        if self.sim.measure == 0 {
            return Err(ModelError::Domain("sim.measure must be > 0".into()));
        }
        let n = topo.node_count();
        let check = |rate: f64, pb: f64| -> Result<()> {
            GGeoProcess::new(rate.max(f64::MIN_POSITIVE), pb).map(|_| ())
        };
        match &self.traffic {
            TrafficSpec::Uniform { rate, burst_prob } => check(*rate, *burst_prob)?,
            TrafficSpec::Explicit { flows } => {
                for (i, f) in flows.iter().enumerate() {
                    if f.source >= n || f.destination >= n || f.source == f.destination {
                        return Err(ModelError::Domain(format!(
                            "flow {i}: invalid endpoints {} -> {} on {}",
                            f.source,
                            f.destination,
                            self.topology.label()
                        )));
                    }
                    check(f.rate, f.burst_prob)?;
                }
            }
        }
        for &r in &self.sweep.rates {
            check(r, 0.0)?;
        }
        for &pb in &self.sweep.burst_probs {
            check(0.1, pb)?;
        }
        Ok(())
    }

    /// The configured traffic point, with sweep overrides applied: a
    /// rate override replaces the per-source rate (uniform) or every
    /// flow's rate (explicit); a burst override applies to all flows.
    pub fn build_graph(&self, rate: Option<f64>, burst_prob: Option<f64>) -> Result<QueueGraph> {
        let topo = self.topology.to_topology();
        let flows: Vec<FlowSpec> = match &self.traffic {
            TrafficSpec::Uniform { rate: r, burst_prob: pb } => {
                uniform_flows(&topo, rate.unwrap_or(*r), burst_prob.unwrap_or(*pb))?
            }
            TrafficSpec::Explicit { flows } => flows
                .iter()
                .map(|f| {
                    Ok(FlowSpec {
                        source: f.source,
                        destination: f.destination,
                        arrival: GGeoProcess::new(
                            rate.unwrap_or(f.rate),
                            burst_prob.unwrap_or(f.burst_prob),
                        )?,
                    })
                })
                .collect::<Result<_>>()?,
        };
        build_queue_graph(&topo, &flows, self.service_time, self.service_scv, self.link_latency)
    }

    pub fn sim_params(&self, seed_override: Option<u64>) -> SimParams {
        SimParams {
            warmup: self.sim.warmup,
            measure: self.sim.measure,
            seed: seed_override.unwrap_or(self.sim.seed),
            ..Default::default()
        }
    }

    /// Sweep grid as (rate, burst_prob) points; falls back to the base
    /// traffic point on empty axes.
    pub fn sweep_points(&self) -> Vec<(Option<f64>, Option<f64>)> {
        let rates: Vec<Option<f64>> = if self.sweep.rates.is_empty() {
            vec![None]
        } else {
            self.sweep.rates.iter().copied().map(Some).collect()
        };
        let burst_probs: Vec<Option<f64>> = if self.sweep.burst_probs.is_empty() {
            vec![None]
        } else {
            self.sweep.burst_probs.iter().copied().map(Some).collect()
        };
        let mut points = Vec::new();
        for &pb in &burst_probs {
            for &r in &rates {
                points.push((r, pb));
            }
        }
        points
    }

    /// The effective (rate, burst_prob) once overrides are applied, for
    /// report labeling. Explicit traffic reports rate-weighted means.
    pub fn effective_point(&self, rate: Option<f64>, burst_prob: Option<f64>) -> (f64, f64) {
        match &self.traffic {
            TrafficSpec::Uniform { rate: r, burst_prob: pb } => {
                (rate.unwrap_or(*r), burst_prob.unwrap_or(*pb))
            }
            TrafficSpec::Explicit { flows } => {
                let total: f64 = flows.iter().map(|f| f.rate).sum();
                let mean_pb = if total > 0.0 {
                    flows.iter().map(|f| f.rate * f.burst_prob).sum::<f64>() / total
                } else {
                    0.0
                };
                (rate.map(|r| r * flows.len() as f64).unwrap_or(total),
                 burst_prob.unwrap_or(mean_pb))
            }
        }
    }
}
