//! Numerical oracles for Markovian instances.
//!
//! * [`bd_loss_solve`]: stationary blocking probability of the M/M/c/K loss
//!   queue from the balance equations, summed top-down in extended precision.
//!   It shares no code with [`crate::analytic`].
//! * [`build_retrial_ctmc`] / [`stationary`]: the retrial system as a
//!   level (orbit) by phase (primary occupancy) chain truncated at `Nmax`,
//!   solved by Gauss-Seidel sweeps.

use serde::Serialize;
use thiserror::Error;
use crate::scalar::{DoubleDouble, Real, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid dimensions: need 1 <= c <= K (c = {c}, K = {k})")]
    InvalidDimensions { c: usize, k: usize },
    #[error("rates must be finite and > 0")]
    NonPositiveRate,
    #[error("stationary solve did not reach tolerance: residual {residual:e} after {iterations} sweeps")]
    NotConverged { residual: f64, iterations: usize, best: Box<StationaryResult> },
}

/// Blocking probability `pi_K` of the birth-death chain with birth rate `a`
/// and death rate `min(n, c)`, in scalar type `T`.
///
/// Balance `pi_{n-1} a = pi_n min(n, c)` is solved from the top: with
/// `pi_K = 1`, `pi_{n-1} = pi_n min(n, c) / a`, so the result is
/// `1 / sum pi_n`.
pub fn bd_loss_solve_in<T: Scalar>(a: T, c: usize, k: usize) -> Result<T, OracleError> {
    if c < 1 || k < c {
        return Err(OracleError::InvalidDimensions { c, k });
    }
    if !(a > T::zero()) {
        return Err(OracleError::NonPositiveRate);
    }
    let mut weight = T::one();
    let mut total = T::one();
    for n in (1..=k).rev() {
        weight = weight * T::from_usize_exact(n.min(c)) / a.clone();
        total = total + weight.clone();
    }
    Ok(T::one() / total)
}

/// [`bd_loss_solve_in`] carried out in double-double arithmetic.
pub fn bd_loss_solve(a: f64, c: usize, k: usize) -> Result<f64, OracleError> {
    if !a.is_finite() {
        return Err(OracleError::NonPositiveRate);
    }
    bd_loss_solve_in(DoubleDouble::new(a), c, k).map(Real::lower)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetrialParams {
    pub lambda: f64,
    pub mu: f64,
    pub mu0: f64,
    pub c: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// Truncated generator over states `(n, m)`, `n` in `0..=nmax` orbit size,
/// `m` in `0..=K` primary occupancy; index `n (K + 1) + m`.
#[derive(Debug, Clone)]
pub struct CtmcModel {
    pub nmax: usize,
    pub phases: usize,
    pub transitions: Vec<Transition>,
    outflow: Vec<f64>,
    /// Transitions grouped by target: `incoming[starts[j]..starts[j + 1]]`.
    incoming: Vec<(usize, f64)>,
    starts: Vec<usize>,
}

impl CtmcModel {
    pub fn from_transitions(nmax: usize, phases: usize, transitions: Vec<Transition>) -> Self {
        let states = (nmax + 1) * phases;
        let mut outflow = vec![0.0; states];
        let mut counts = vec![0usize; states + 1];
        for t in &transitions {
            outflow[t.from] += t.rate;
            counts[t.to + 1] += 1;
        }
        for j in 0..states {
            counts[j + 1] += counts[j];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut incoming = vec![(0usize, 0.0); transitions.len()];
        for t in &transitions {
            incoming[fill[t.to]] = (t.from, t.rate);
            fill[t.to] += 1;
        }
        CtmcModel { nmax, phases, transitions, outflow, incoming, starts }
    }

    pub fn states(&self) -> usize {
        (self.nmax + 1) * self.phases
    }

    pub fn index(&self, orbit: usize, occupancy: usize) -> usize {
        orbit * self.phases + occupancy
    }

    /// `(orbit, occupancy)` of a state index.
    pub fn decode(&self, i: usize) -> (usize, usize) {
        (i / self.phases, i % self.phases)
    }

    /// Total rate out of state `i`; the generator diagonal is its negative.
    pub fn outflow(&self, i: usize) -> f64 {
        self.outflow[i]
    }

    /// Row sums of the generator with its diagonal added.
    pub fn generator_row_sums(&self) -> Vec<f64> {
        let mut sums: Vec<f64> = self.outflow.iter().map(|q| -q).collect();
        for t in &self.transitions {
            sums[t.from] += t.rate;
        }
        sums
    }

    fn incoming(&self, j: usize) -> &[(usize, f64)] {
        &self.incoming[self.starts[j]..self.starts[j + 1]]
    }

    /// `max_j |(pi Q)_j|`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        (0..self.states())
            .map(|j| {
                let inflow: f64 = self.incoming(j).iter().map(|&(i, r)| pi[i] * r).sum();
                (inflow - pi[j] * self.outflow[j]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Retrial system as a CTMC truncated at `nmax` orbit customers.
///
/// `(n,m) -> (n,m+1)` at `lambda` if `m < K`; `(n,m) -> (n+1,m)` at `lambda`
/// if `m = K`, `n < nmax`; `(n,m) -> (n,m-1)` at `mu min(m,c)`;
/// `(n,m) -> (n-1,m+1)` at `mu0` if `n > 0`, `m < K`. Failed retrials are
/// self-loops and do not appear; arrivals blocked at `n = nmax` are dropped.
pub fn build_retrial_ctmc(params: RetrialParams, nmax: usize) -> Result<CtmcModel, OracleError> {
    let RetrialParams { lambda, mu, mu0, c, k } = params;
    if c < 1 || k < c {
        return Err(OracleError::InvalidDimensions { c, k });
    }
    if ![lambda, mu, mu0].iter().all(|r| r.is_finite() && *r > 0.0) || nmax < 1 {
        return Err(OracleError::NonPositiveRate);
    }
    let phases = k + 1;
    let idx = |n: usize, m: usize| n * phases + m;
    let mut transitions = Vec::with_capacity((nmax + 1) * phases * 3);
    for n in 0..=nmax {
        for m in 0..=k {
            let from = idx(n, m);
            if m < k {
                transitions.push(Transition { from, to: idx(n, m + 1), rate: lambda });
            } else if n < nmax {
                transitions.push(Transition { from, to: idx(n + 1, m), rate: lambda });
            }
            if m > 0 {
                transitions.push(Transition { from, to: idx(n, m - 1), rate: mu * m.min(c) as f64 });
            }
            if n > 0 && m < k {
                transitions.push(Transition { from, to: idx(n - 1, m + 1), rate: mu0 });
            }
        }
    }
    Ok(CtmcModel::from_transitions(nmax, phases, transitions))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryResult {
    pub pi: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub truncation_mass: f64,
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200_000;

/// Solves `pi Q = 0`, `sum pi = 1` by Gauss-Seidel sweeps
/// `pi_j <- sum_i pi_i q_ij / q_j`, renormalizing after every sweep, until
/// `||pi Q||_inf <= tol`. Sweeps alternate direction through the levels.
pub fn stationary(model: &CtmcModel, tol: f64, max_iter: usize) -> Result<StationaryResult, OracleError> {
    let n = model.states();
    let mut pi = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let forward = iterations % 2 == 1;
        for step in 0..n {
            let j = if forward { step } else { n - 1 - step };
            let q = model.outflow(j);
            if q > 0.0 {
                let inflow: f64 = model.incoming(j).iter().map(|&(i, r)| pi[i] * r).sum();
                pi[j] = inflow / q;
            }
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        // The residual costs as much as a sweep; check every few sweeps.
        if iterations % 4 == 0 || iterations == max_iter {
            residual = model.residual(&pi);
            if residual <= tol {
                break;
            }
        }
    }
    let truncation_mass = level_mass(model, &pi, model.nmax);
    let result = StationaryResult { pi, residual, iterations, truncation_mass };
    if residual <= tol {
        Ok(result)
    } else {
        Err(OracleError::NotConverged { residual, iterations, best: Box::new(result) })
    }
}

fn level_mass(model: &CtmcModel, pi: &[f64], level: usize) -> f64 {
    let start = model.index(level, 0);
    pi[start..start + model.phases].iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitDiagnostics {
    pub mean_orbit: f64,
    pub mean_primary: f64,
    /// `P(N = 0, M = 0)`.
    pub p_empty_system: f64,
    /// `P(N = 0)`, the stationary counterpart of the orbit-empty time fraction.
    pub p_orbit_empty: f64,
    /// `P(N = Nmax)`.
    pub truncation_mass: f64,
}

pub fn orbit_diagnostics(result: &StationaryResult, model: &CtmcModel) -> OrbitDiagnostics {
    let mut mean_orbit = 0.0;
    let mut mean_primary = 0.0;
    for (i, p) in result.pi.iter().enumerate() {
        let (n, m) = model.decode(i);
        mean_orbit += n as f64 * p;
        mean_primary += m as f64 * p;
    }
    OrbitDiagnostics {
        mean_orbit,
        mean_primary,
        p_empty_system: result.pi[model.index(0, 0)],
        p_orbit_empty: level_mass(model, &result.pi, 0),
        truncation_mass: level_mass(model, &result.pi, model.nmax),
    }
}

pub const AUTO_TRUNCATION_TARGET: f64 = 1e-8;
pub const MAX_LEVELS: usize = 1 << 14;

#[derive(Debug, Clone)]
pub struct AutoSolve {
    pub model: CtmcModel,
    pub result: StationaryResult,
    pub diagnostics: OrbitDiagnostics,
    /// False when the level cap was hit with truncation mass still above
    /// target, or the last solve did not converge.
    pub resolved: bool,
}

/// Doubles `Nmax` from `start_nmax` until the truncation mass drops below
/// [`AUTO_TRUNCATION_TARGET`] or [`MAX_LEVELS`] is reached.
pub fn solve_auto_truncated(
    params: RetrialParams,
    start_nmax: usize,
    tol: f64,
    max_iter: usize,
) -> Result<AutoSolve, OracleError> {
    let mut nmax = start_nmax.clamp(1, MAX_LEVELS);
    loop {
        let model = build_retrial_ctmc(params, nmax)?;
        let (result, converged) = match stationary(&model, tol, max_iter) {
            Ok(r) => (r, true),
            Err(OracleError::NotConverged { best, .. }) => (*best, false),
            Err(e) => return Err(e),
        };
        let diagnostics = orbit_diagnostics(&result, &model);
        let small = diagnostics.truncation_mass < AUTO_TRUNCATION_TARGET;
        if (small && converged) || nmax >= MAX_LEVELS {
            return Ok(AutoSolve { model, result, diagnostics, resolved: small && converged });
        }
        nmax = (nmax * 2).min(MAX_LEVELS);
    }
}
