//! GGeo (generalized geometric) discrete-time arrival streams.
//!
//! A GGeo stream is parameterized by a rate `λ` (flits per cycle) and a burst
//! probability `p_b`. Each interarrival gap is zero with probability `p_b`
//! (an extra flit in the same slot) and otherwise geometrically distributed.
//! The first two moments of the gap determine the stream for all the
//! analytical models: mean `1/λ` and squared coefficient of variation
//! `C_a² = 2/(1 − p_b) − λ − 1`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// A (rate, interarrival-SCV) pair describing a traffic stream by its first
/// two moments. `rate == 0` marks a null stream whose SCV is meaningless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub rate: f64,
    pub scv: f64,
}

impl MomentPair {
    pub fn null() -> Self {
        MomentPair { rate: 0.0, scv: 0.0 }
    }

    pub fn is_null(&self) -> bool {
        self.rate == 0.0
    }
}

/// A GGeo arrival process. `scv` is derived from `(rate, burst_prob)` on
/// construction and kept consistent thereafter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GGeoProcess {
    pub rate: f64,
    pub burst_prob: f64,
    pub scv: f64,
}

impl GGeoProcess {
    pub fn new(rate: f64, burst_prob: f64) -> Result<Self> {
        let scv = scv_from_burst(rate, burst_prob)?;
        Ok(GGeoProcess { rate, burst_prob, scv })
    }

    pub fn moments(&self) -> MomentPair {
        MomentPair { rate: self.rate, scv: self.scv }
    }
}

/// Interarrival SCV of a GGeo stream: `2/(1 − p_b) − λ − 1`.
pub fn scv_from_burst(rate: f64, burst_prob: f64) -> Result<f64> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(ModelError::Domain(format!(
            "rate must be in (0, 1], got {rate}"
        )));
    }
    if !(0.0..1.0).contains(&burst_prob) {
        return Err(ModelError::Domain(format!(
            "burst_prob must be in [0, 1), got {burst_prob}"
        )));
    }
    Ok(2.0 / (1.0 - burst_prob) - rate - 1.0)
}

/// Inverse of [`scv_from_burst`]. Errors when the pair is not representable
/// as GGeo (`scv < 1 − rate`); no silent clamping.
pub fn burst_from_scv(rate: f64, scv: f64) -> Result<f64> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(ModelError::Domain(format!(
            "rate must be in (0, 1], got {rate}"
        )));
    }
    if scv < 1.0 - rate - 1e-12 {
        return Err(ModelError::Domain(format!(
            "scv {scv} below geometric floor {} for rate {rate}",
            1.0 - rate
        )));
    }
    Ok((1.0 - 2.0 / (scv + rate + 1.0)).max(0.0))
}

/// Mean number of extra same-slot arrivals, `β = (C_a² + λ − 1)/2`.
/// Equals `p_b/(1 − p_b)` for a GGeo stream.
pub fn burst_factor(rate: f64, scv: f64) -> f64 {
    (scv + rate - 1.0) / 2.0
}

/// Bernoulli-thinning moment rule for splitting a stream: keep each arrival
/// independently with probability `keep_prob`.
pub fn split_stream(input: MomentPair, keep_prob: f64) -> MomentPair {
    debug_assert!((0.0..=1.0).contains(&keep_prob));
    if keep_prob == 0.0 || input.is_null() {
        return MomentPair::null();
    }
    MomentPair {
        rate: keep_prob * input.rate,
        scv: keep_prob * input.scv + 1.0 - keep_prob,
    }
}

/// SCV of the interdeparture time of a queue with the given utilization:
/// `(1 − ρ²)·C_a² + ρ²·C_s²`. Exact in the ρ→0 and ρ→1 limits.
pub fn departure_scv(utilization: f64, arrival_scv: f64, service_scv: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&utilization) {
        return Err(ModelError::Instability(format!(
            "utilization must be in [0, 1), got {utilization}"
        )));
    }
    let r2 = utilization * utilization;
    Ok((1.0 - r2) * arrival_scv + r2 * service_scv)
}

/// Deterministic sampler of GGeo interarrival gaps.
///
/// Gap = 0 with probability `p_b`, else Geometric(σ) on {1, 2, ...} with
/// σ = λ(1 − p_b). This reproduces both stated moments exactly.
pub struct GGeoSampler {
    burst_prob: f64,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl GGeoSampler {
    pub fn new(process: &GGeoProcess, seed: u64) -> Self {
        GGeoSampler {
            burst_prob: process.burst_prob,
            sigma: process.rate * (1.0 - process.burst_prob),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Like `new` but with an independent stream index, so one master seed
    /// can drive many injectors.
    pub fn with_stream(process: &GGeoProcess, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        GGeoSampler {
            burst_prob: process.burst_prob,
            sigma: process.rate * (1.0 - process.burst_prob),
            rng,
        }
    }

    pub fn next_gap(&mut self) -> u64 {
        if self.burst_prob > 0.0 && self.rng.gen::<f64>() < self.burst_prob {
            return 0;
        }
        if self.sigma >= 1.0 {
            return 1;
        }
        // Inverse-CDF geometric on {1, 2, ...}.
        let u: f64 = self.rng.gen();
        let g = (u.ln() / (1.0 - self.sigma).ln()).floor() as u64 + 1;
        g
    }
}

/// Sample `count` interarrival gaps with a fresh seeded generator.
pub fn sample_interarrivals(process: &GGeoProcess, seed: u64, count: usize) -> Vec<u64> {
    let mut sampler = GGeoSampler::new(process, seed);
    (0..count).map(|_| sampler.next_gap()).collect()
}
