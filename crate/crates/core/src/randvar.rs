//! Parametric interarrival and service laws.
//!
//! The family is closed so that means and support bounds are exact; the
//! feasibility check [`condition6_holds`] reasons about supports and would be
//! impossible with opaque samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("rate must be finite and > 0, got {0}")]
    NonPositiveRate(f64),
    #[error("deterministic value must be finite and > 0, got {0}")]
    NonPositiveValue(f64),
    #[error("erlang shape must be >= 1")]
    ZeroShape,
    #[error("uniform bounds must satisfy 0 <= lo <= hi with hi > 0, got [{lo}, {hi}]")]
    BadUniform { lo: f64, hi: f64 },
    #[error("hyperexponential needs equal-length non-empty weights and rates")]
    HyperShape,
    #[error("hyperexponential weights must be >= 0 and sum to 1 (sum = {0})")]
    HyperWeights(f64),
}

/// Raw, unvalidated law as it appears in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Law {
    Exponential { rate: f64 },
    Deterministic { value: f64 },
    Erlang { shape: u32, rate: f64 },
    #[serde(rename = "hyperexp")]
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
}

/// An admissible law. Construction validates, so every value of this type
/// has a finite positive mean and can be sampled without error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Law", into = "Law")]
pub struct DistributionSpec(Law);

const WEIGHT_SUM_TOL: f64 = 1e-12;

fn check_rate(rate: f64) -> Result<(), DistributionError> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(DistributionError::NonPositiveRate(rate))
    }
}

impl TryFrom<Law> for DistributionSpec {
    type Error = DistributionError;

    fn try_from(law: Law) -> Result<Self, Self::Error> {
        match &law {
            Law::Exponential { rate } => check_rate(*rate)?,
            Law::Deterministic { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(DistributionError::NonPositiveValue(*value));
                }
            }
            Law::Erlang { shape, rate } => {
                if *shape == 0 {
                    return Err(DistributionError::ZeroShape);
                }
                check_rate(*rate)?;
            }
            Law::HyperExponential { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return Err(DistributionError::HyperShape);
                }
                for r in rates {
                    check_rate(*r)?;
                }
                let sum: f64 = weights.iter().sum();
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                    || (sum - 1.0).abs() > WEIGHT_SUM_TOL
                {
                    return Err(DistributionError::HyperWeights(sum));
                }
            }
            Law::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo <= hi && *hi > 0.0) {
                    return Err(DistributionError::BadUniform { lo: *lo, hi: *hi });
                }
            }
        }
        Ok(DistributionSpec(law))
    }
}

impl From<DistributionSpec> for Law {
    fn from(spec: DistributionSpec) -> Law {
        spec.0
    }
}

impl DistributionSpec {
    pub fn exponential(rate: f64) -> Result<Self, DistributionError> {
        Law::Exponential { rate }.try_into()
    }

    pub fn deterministic(value: f64) -> Result<Self, DistributionError> {
        Law::Deterministic { value }.try_into()
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self, DistributionError> {
        Law::Erlang { shape, rate }.try_into()
    }

    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self, DistributionError> {
        Law::HyperExponential { weights, rates }.try_into()
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, DistributionError> {
        Law::Uniform { lo, hi }.try_into()
    }

    pub fn law(&self) -> &Law {
        &self.0
    }

    /// Draws one duration. Deterministic laws consume no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.0 {
            Law::Exponential { rate } => exp_draw(rng, *rate),
            Law::Deterministic { value } => *value,
            Law::Erlang { shape, rate } => (0..*shape).map(|_| exp_draw(rng, *rate)).sum(),
            Law::HyperExponential { weights, rates } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut branch = rates.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        branch = i;
                        break;
                    }
                }
                exp_draw(rng, rates[branch])
            }
            Law::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    let u: f64 = rng.random();
                    (lo + (hi - lo) * u).min(*hi)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.0 {
            Law::Exponential { rate } => 1.0 / rate,
            Law::Deterministic { value } => *value,
            Law::Erlang { shape, rate } => *shape as f64 / rate,
            Law::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| w / r).sum()
            }
            Law::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn variance(&self) -> f64 {
        match &self.0 {
            Law::Exponential { rate } => 1.0 / (rate * rate),
            Law::Deterministic { .. } => 0.0,
            Law::Erlang { shape, rate } => *shape as f64 / (rate * rate),
            Law::HyperExponential { weights, rates } => {
                let second: f64 = weights.iter().zip(rates).map(|(w, r)| 2.0 * w / (r * r)).sum();
                let m = self.mean();
                second - m * m
            }
            Law::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
        }
    }

    /// Essential infimum and supremum; the supremum may be `f64::INFINITY`.
    pub fn support_bounds(&self) -> (f64, f64) {
        match &self.0 {
            Law::Exponential { .. } | Law::Erlang { .. } | Law::HyperExponential { .. } => {
                (0.0, f64::INFINITY)
            }
            Law::Deterministic { value } => (*value, *value),
            Law::Uniform { lo, hi } => (*lo, *hi),
        }
    }

    /// Exponential in law (including a one-phase Erlang).
    pub fn is_exponential(&self) -> bool {
        matches!(
            self.0,
            Law::Exponential { .. } | Law::Erlang { shape: 1, .. }
        )
    }

    /// The constant value if the law is degenerate.
    pub fn deterministic_value(&self) -> Option<f64> {
        match &self.0 {
            Law::Deterministic { value } => Some(*value),
            Law::Uniform { lo, hi } if lo == hi => Some(*lo),
            _ => None,
        }
    }

    /// Same family, every duration multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, DistributionError> {
        let law = match &self.0 {
            Law::Exponential { rate } => Law::Exponential { rate: rate / factor },
            Law::Deterministic { value } => Law::Deterministic { value: value * factor },
            Law::Erlang { shape, rate } => Law::Erlang { shape: *shape, rate: rate / factor },
            Law::HyperExponential { weights, rates } => Law::HyperExponential {
                weights: weights.clone(),
                rates: rates.iter().map(|r| r / factor).collect(),
            },
            Law::Uniform { lo, hi } => Law::Uniform { lo: lo * factor, hi: hi * factor },
        };
        law.try_into()
    }

    /// Same family rescaled to the given mean.
    pub fn with_mean(&self, mean: f64) -> Result<Self, DistributionError> {
        self.scaled(mean / self.mean())
    }
}

/// Inverse transform on `1 - U`, `U` uniform on `[0, 1)`.
fn exp_draw<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Exponential draw for callers holding a rate, e.g. the retrial clock.
pub fn sample_exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    exp_draw(rng, rate)
}

/// `P(interarrival > service) > 0` for independent variables, decided on
/// supports: true iff `sup(interarrival) > inf(service)`.
pub fn condition6_holds(interarrival: &DistributionSpec, service: &DistributionSpec) -> bool {
    let (_, tau_sup) = interarrival.support_bounds();
    let (service_inf, _) = service.support_bounds();
    tau_sup > service_inf
}

/// Stochastic sources of a replication. Each gets its own ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Arrivals = 1,
    PoissonInput = 2,
    Services = 3,
    RetrialClock = 4,
}

/// Independent per-source generators derived from one 64-bit seed.
///
/// Every stream is `ChaCha8Rng::seed_from_u64(seed)` with the ChaCha stream
/// id set to the source number. Variates use 53-bit uniforms from
/// `rand 0.9`, so outputs are bit-reproducible for a fixed seed.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub arrivals: ChaCha8Rng,
    pub poisson: ChaCha8Rng,
    pub services: ChaCha8Rng,
    pub retrials: ChaCha8Rng,
}

pub fn stream(seed: u64, source: Source) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(source as u64);
    rng
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            arrivals: stream(seed, Source::Arrivals),
            poisson: stream(seed, Source::PoissonInput),
            services: stream(seed, Source::Services),
            retrials: stream(seed, Source::RetrialClock),
        }
    }
}
