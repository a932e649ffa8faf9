//! Closed-form loss probabilities of the auxiliary loss queue, fed by the
//! total rate `lambda + mu0`.
//!
//! The Markovian formulas are generic over [`Scalar`] and use multiplicative
//! recurrences only, so they work for `c`, `K` in the hundreds and evaluate
//! exactly over rationals. The M/D/1/K formula is an alternating series and
//! is evaluated in double-double precision behind a cancellation guard.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{min_usize, DoubleDouble, Real, Scalar};
use crate::simcore::SystemConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("invalid dimensions: need 1 <= c <= K (c = {c}, K = {k})")]
    InvalidDimensions { c: usize, k: usize },
    #[error("rates and loads must be finite and > 0")]
    NonPositiveRate,
    #[error("offered load must be finite and > 0")]
    NonPositiveLoad,
    #[error("capacity K must be >= 1")]
    InvalidK,
    #[error("alternating series too ill-conditioned: relative error bound {bound:e} exceeds {limit:e}")]
    NumericalInstability { bound: f64, limit: f64 },
}

fn positive<T: Scalar>(x: &T) -> bool {
    *x > T::zero()
}

/// Loss probability of M/M/c/K with arrival rate `total_rate` and per-server
/// rate `mu`: `w_K / sum(w_n)` with `w_0 = 1`, `w_n = w_{n-1} a / min(n, c)`.
pub fn ploss_mmck<T: Scalar>(total_rate: T, mu: T, c: usize, k: usize) -> Result<T, AnalyticError> {
    if c < 1 || k < c {
        return Err(AnalyticError::InvalidDimensions { c, k });
    }
    if !positive(&total_rate) || !positive(&mu) {
        return Err(AnalyticError::NonPositiveRate);
    }
    let a = total_rate / mu;
    // Rescale whenever the running weight gets large so nothing overflows;
    // the ratio weight / sum is unchanged.
    let cap = T::from_u64(u64::MAX).unwrap_or_else(T::one);
    let mut weight = T::one();
    let mut sum = T::one();
    for n in 1..=k {
        weight = weight * a.clone() / min_usize::<T>(n, c);
        sum = sum + weight.clone();
        if weight > cap {
            sum = sum / weight.clone();
            weight = T::one();
        }
    }
    Ok(weight / sum)
}

/// M/M/1/K loss `r^K / sum_{n=0}^K r^n`, `r = total_rate / mu`.
/// Summed in powers of `1/r` when `r > 1` so large `K` cannot overflow.
pub fn ploss_mm1k<T: Scalar>(total_rate: T, mu: T, k: usize) -> Result<T, AnalyticError> {
    if k < 1 {
        return Err(AnalyticError::InvalidDimensions { c: 1, k });
    }
    if !positive(&total_rate) || !positive(&mu) {
        return Err(AnalyticError::NonPositiveRate);
    }
    let r = total_rate / mu;
    if r <= T::one() {
        let mut power = T::one();
        let mut sum = T::one();
        for _ in 0..k {
            power = power * r.clone();
            sum = sum + power.clone();
        }
        Ok(power / sum)
    } else {
        let inv = T::one() / r;
        let mut power = T::one();
        let mut sum = T::one();
        for _ in 0..k {
            power = power * inv.clone();
            sum = sum + power.clone();
        }
        Ok(T::one() / sum)
    }
}

/// Erlang-B blocking `B(a, c)` by `B_0 = 1`, `B_j = a B_{j-1} / (j + a B_{j-1})`.
pub fn erlang_b<T: Scalar>(offered_load: T, c: usize) -> Result<T, AnalyticError> {
    if !positive(&offered_load) {
        return Err(AnalyticError::NonPositiveLoad);
    }
    if c < 1 {
        return Err(AnalyticError::InvalidDimensions { c, k: c });
    }
    let mut b = T::one();
    for j in 1..=c {
        let ab = offered_load.clone() * b;
        b = ab.clone() / (T::from_usize_exact(j) + ab);
    }
    Ok(b)
}

/// Largest relative error bound the M/D/1/K evaluation will return.
pub const MD1K_ERROR_LIMIT: f64 = 1e-8;

/// `b_{K-1} e^{-(K-1) rho}` of the M/D/1/K loss formula with its condition
/// number `sum |t_n| / |sum t_n|`.
///
/// Terms are `(-1)^n / n! ((K-1-n) rho)^n e^{-n rho}` with `0^0 = 1`; the
/// common factor `e^{(K-1) rho}` is divided out so large loads cannot
/// overflow. They are summed largest magnitude first with Neumaier
/// compensation.
pub fn md1k_b_scaled<T: Real>(rho: T, k: usize) -> (T, f64) {
    let km1 = k - 1;
    let decay = T::exp_series(-rho);
    let mut terms: Vec<T> = Vec::with_capacity(k);
    // n! accumulated alongside to avoid a separate factorial table.
    let mut factorial = T::one();
    for n in 0..=km1 {
        if n > 0 {
            factorial = factorial * T::from_usize_exact(n);
        }
        let base = T::from_usize_exact(km1 - n) * rho * decay;
        // 0^0 = 1; 0^n = 0 for n >= 1
        let term = base.pow_n(n as u32) / factorial;
        terms.push(if n % 2 == 0 { term } else { -term });
    }
    terms.sort_by(|a, b| b.magnitude().partial_cmp(&a.magnitude()).unwrap_or(std::cmp::Ordering::Equal));
    let abs_sum = terms.iter().fold(T::zero(), |acc, t| acc + t.magnitude());
    let sum = neumaier_sum(&terms);
    let cond = if sum == T::zero() {
        f64::INFINITY
    } else {
        (abs_sum / sum.magnitude()).lower()
    };
    (sum, cond)
}

fn neumaier_sum<T: Real>(values: &[T]) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for &v in values {
        let t = sum + v;
        if sum.magnitude() >= v.magnitude() {
            comp = comp + ((sum - t) + v);
        } else {
            comp = comp + ((v - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

/// M/D/1/K loss `1 - b/(1 + rho b)` evaluated in type `T`, with
/// `rho = total_rate * service_time`.
///
/// With `s = e^{-(K-1) rho}` and `b' = s b` this is
/// `(s + rho b' - b') / (s + rho b')`. The relative error bound combines
/// the conditioning of `b'` (each term carries about `2K + 8` roundings)
/// with the cancellation in the numerator. Results whose bound exceeds
/// [`MD1K_ERROR_LIMIT`] are refused.
pub fn ploss_md1k_in<T: Real>(total_rate: T, service_time: T, k: usize) -> Result<T, AnalyticError> {
    if k < 1 {
        return Err(AnalyticError::InvalidK);
    }
    if !(total_rate > T::zero() && service_time > T::zero()) || !(total_rate * service_time).is_finite_value() {
        return Err(AnalyticError::NonPositiveRate);
    }
    let rho = total_rate * service_time;
    let (b, cond_b) = md1k_b_scaled(rho, k);
    let u = T::unit_roundoff();
    let ops = 2.0 * k as f64 + 8.0;
    let s = T::exp_series(-(T::from_usize_exact(k - 1) * rho));
    let denom = s + rho * b;
    let numer = denom - b;
    let scale = (s + rho * b.magnitude() + b.magnitude()) / numer.magnitude();
    // d(numer)/numer from a relative perturbation of b: |b (rho - 1)| / |numer|
    let b_gain = ((b * (rho - T::one())).magnitude() / numer.magnitude()).lower();
    let bound = cond_b * ops * u * (b_gain + 1.0) + scale.lower() * ops * u;
    if !bound.is_finite() || bound > MD1K_ERROR_LIMIT {
        return Err(AnalyticError::NumericalInstability { bound, limit: MD1K_ERROR_LIMIT });
    }
    Ok(numer / denom)
}

/// M/D/1/K loss in `f64`, computed internally in double-double precision.
///
/// When the alternating form is refused at `rho < 1` (tiny loss
/// probabilities, where it cancels to below double-double resolution) the
/// value is obtained from the embedded departure chain instead, which only
/// adds positive terms.
///
/// Note the load convention: `total_rate` is the full rate into the
/// auxiliary queue (`lambda + mu0` when used for a stability check). Pass
/// `lambda` alone to evaluate the formula with `rho = lambda * D` literally.
pub fn ploss_md1k(total_rate: f64, service_time: f64, k: usize) -> Result<f64, AnalyticError> {
    if !(total_rate.is_finite() && service_time.is_finite()) {
        return Err(AnalyticError::NonPositiveRate);
    }
    match ploss_md1k_in(DoubleDouble::new(total_rate), DoubleDouble::new(service_time), k) {
        Ok(p) => Ok(p.lower()),
        Err(AnalyticError::NumericalInstability { bound, limit }) => {
            let rho = total_rate * service_time;
            if rho < 1.0 {
                md1k_departure_chain(rho, k).ok_or(AnalyticError::NumericalInstability { bound, limit })
            } else {
                Err(AnalyticError::NumericalInstability { bound, limit })
            }
        }
        Err(e) => Err(e),
    }
}

/// M/D/1/K loss for `rho < 1` from the infinite M/D/1 departure chain.
///
/// Level crossing gives `q_{j+1} a_0 = q_0 A_{j+1} + sum_{i=1..j} q_i
/// A_{j+2-i}` with `A_m = P(at least m Poisson arrivals in D)`, all terms
/// positive. With `S = sum_{j<K} q_j` and tail `T = sum_{j>=K} q_j`
/// the loss is `(1 - rho) T / (1 + rho S)`.
fn md1k_departure_chain(rho: f64, k: usize) -> Option<f64> {
    const MAX_LEVELS: usize = 100_000;
    let mut a = vec![(-rho).exp()];
    while let Some(&last) = a.last() {
        let next = last * rho / a.len() as f64;
        if next == 0.0 || a.len() > 2000 {
            break;
        }
        a.push(next);
    }
    // at_least[m] = sum_{i >= m} a_i, accumulated from the small end
    let mut at_least = vec![0.0; a.len() + 1];
    for m in (0..a.len()).rev() {
        at_least[m] = at_least[m + 1] + a[m];
    }
    let tail_at = |m: usize| at_least.get(m).copied().unwrap_or(0.0);
    let mut q = vec![1.0f64];
    let mut head = 1.0;
    let mut tail = 0.0;
    for j in 0..MAX_LEVELS {
        let first = (j + 2).saturating_sub(at_least.len()).max(1);
        let mut up = q[0] * tail_at(j + 1);
        for (i, qi) in q.iter().enumerate().take(j + 1).skip(first) {
            up += qi * tail_at(j + 2 - i);
        }
        let next = up / a[0];
        q.push(next);
        if j + 1 < k {
            head += next;
        } else {
            tail += next;
            if next <= 1e-20 * tail || next == 0.0 {
                let p = (1.0 - rho) * tail / (1.0 + rho * head);
                return p.is_finite().then_some(p);
            }
        }
    }
    None
}

/// Which closed form produced a loss probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    /// M/M/c/K birth-death recurrence.
    Mmck,
    /// M/G/c/c Erlang-B, insensitive to the service law beyond its mean.
    ErlangB,
    /// M/D/1/K alternating series.
    Md1k,
}

impl Formula {
    pub fn name(self) -> &'static str {
        match self {
            Formula::Mmck => "mmck",
            Formula::ErlangB => "erlang_b",
            Formula::Md1k => "md1k",
        }
    }
}

/// Closed-form loss model of the primary queue, parameterized by everything
/// except the input rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossFamily {
    Mmck { mu: f64, c: usize, k: usize },
    ErlangB { mean_service: f64, c: usize },
    Md1k { service_time: f64, k: usize },
}

impl LossFamily {
    pub fn formula(&self) -> Formula {
        match self {
            LossFamily::Mmck { .. } => Formula::Mmck,
            LossFamily::ErlangB { .. } => Formula::ErlangB,
            LossFamily::Md1k { .. } => Formula::Md1k,
        }
    }

    /// Loss probability when the queue is offered `total_rate`.
    pub fn ploss(&self, total_rate: f64) -> Result<f64, AnalyticError> {
        match *self {
            LossFamily::Mmck { mu, c, k } => ploss_mmck(total_rate, mu, c, k),
            LossFamily::ErlangB { mean_service, c } => {
                if !(mean_service > 0.0) {
                    return Err(AnalyticError::NonPositiveRate);
                }
                erlang_b(total_rate * mean_service, c)
            }
            LossFamily::Md1k { service_time, k } => ploss_md1k(total_rate, service_time, k),
        }
    }

    /// The closed form matching a system, if the primary queue has one.
    ///
    /// Requires Poisson `lambda` arrivals. Then: exponential service gives
    /// M/M/c/K; `K = c` gives Erlang-B for any service law; `c = 1` with
    /// deterministic service gives M/D/1/K.
    pub fn for_config(config: &SystemConfig) -> Option<LossFamily> {
        if !config.interarrival.is_exponential() {
            return None;
        }
        let (c, k) = (config.servers, config.capacity);
        if config.service.is_exponential() {
            Some(LossFamily::Mmck { mu: 1.0 / config.service.mean(), c, k })
        } else if k == c {
            Some(LossFamily::ErlangB { mean_service: config.service.mean(), c })
        } else if c == 1 {
            config
                .service
                .deterministic_value()
                .map(|service_time| LossFamily::Md1k { service_time, k })
        } else {
            None
        }
    }
}

/// Result of [`ploss_dispatch`].
#[derive(Debug, Clone, PartialEq)]
pub enum Dispatch {
    Closed { probability: f64, formula: Formula },
    Unsupported,
}

/// Loss probability of the auxiliary system of `config` (input rate
/// `1/E tau + mu0`) from the matching closed form.
pub fn ploss_dispatch(config: &SystemConfig) -> Result<Dispatch, AnalyticError> {
    match LossFamily::for_config(config) {
        None => Ok(Dispatch::Unsupported),
        Some(family) => {
            let total = config.arrival_rate() + config.retrial_rate;
            Ok(Dispatch::Closed { probability: family.ploss(total)?, formula: family.formula() })
        }
    }
}
