//! Event-driven simulation of the retrial system and of its auxiliary loss
//! system.
//!
//! Original mode: customers blocked by the primary queue join an orbit that
//! behaves as a single exponential server of rate `mu0` while non-empty;
//! every attempt it makes is an arrival to the primary queue, and failed
//! attempts count as rejections.
//!
//! Auxiliary mode: the orbit is replaced by an independent Poisson input of
//! rate `mu0`; blocked customers leave for good and the orbit is only a
//! counter of rejections.
//!
//! Simultaneous events are ordered service completion, retrial, `lambda`
//! arrival, `mu0` arrival. The buffer is FCFS; orbit customers carry no
//! identity.
//!
//! Lattice interarrival laws (e.g. deterministic) only admit discrete-time
//! stationary limits; the simulator runs them regardless.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::randvar::{sample_exponential, DistributionSpec, RngStreams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("need K >= c >= 1 (c = {c}, K = {k})")]
    Dimensions { c: usize, k: usize },
    #[error("retrial rate must be finite and > 0, got {0}")]
    RetrialRate(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("horizon must be finite and > 0, got {0}")]
    NonPositiveHorizon(f64),
    #[error("stop rule needs a positive cycle count or a horizon")]
    EmptyStopRule,
    #[error("requested {requested} cycles but only {completed} completed before the run was capped")]
    UnreachedCycleCount { requested: u64, completed: u64 },
    #[error("state invariant violated at t = {clock}: {what}")]
    InvariantViolation { clock: f64, what: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Original,
    Auxiliary,
}

/// Non-empty starting state: `initial_orbit` customers in orbit and,
/// optionally, every server busy with a fresh service draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    #[serde(default)]
    pub initial_orbit: u64,
    #[serde(default)]
    pub initial_busy: bool,
}

impl InitialState {
    pub fn is_empty(&self) -> bool {
        self.initial_orbit == 0 && !self.initial_busy
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystemConfig {
    interarrival: DistributionSpec,
    service: DistributionSpec,
    #[serde(alias = "c")]
    servers: usize,
    #[serde(alias = "K")]
    capacity: usize,
    #[serde(alias = "mu0")]
    retrial_rate: f64,
    #[serde(default)]
    mode: Mode,
    #[serde(default)]
    initial: Option<InitialState>,
}

/// Full parameterization of the retrial system: `lambda = 1/E tau`,
/// `mu = 1/E S`, `c` servers, `K` places in the primary queue (so `K - c`
/// buffer slots) and constant retrial rate `mu0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystemConfig")]
pub struct SystemConfig {
    pub interarrival: DistributionSpec,
    pub service: DistributionSpec,
    pub servers: usize,
    pub capacity: usize,
    pub retrial_rate: f64,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialState>,
}

impl TryFrom<RawSystemConfig> for SystemConfig {
    type Error = ConfigError;

    fn try_from(raw: RawSystemConfig) -> Result<Self, ConfigError> {
        let mut config = SystemConfig::new(
            raw.interarrival,
            raw.service,
            raw.servers,
            raw.capacity,
            raw.retrial_rate,
            raw.mode,
        )?;
        config.initial = raw.initial;
        Ok(config)
    }
}

impl SystemConfig {
    pub fn new(
        interarrival: DistributionSpec,
        service: DistributionSpec,
        servers: usize,
        capacity: usize,
        retrial_rate: f64,
        mode: Mode,
    ) -> Result<Self, ConfigError> {
        if servers < 1 || capacity < servers {
            return Err(ConfigError::Dimensions { c: servers, k: capacity });
        }
        if !(retrial_rate.is_finite() && retrial_rate > 0.0) {
            return Err(ConfigError::RetrialRate(retrial_rate));
        }
        Ok(SystemConfig { interarrival, service, servers, capacity, retrial_rate, mode, initial: None })
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = Some(initial);
        self
    }

    pub fn arrival_rate(&self) -> f64 {
        1.0 / self.interarrival.mean()
    }

    pub fn service_rate(&self) -> f64 {
        1.0 / self.service.mean()
    }

    pub fn buffer_size(&self) -> usize {
        self.capacity - self.servers
    }

    /// Poisson input with exponential service.
    pub fn is_markovian(&self) -> bool {
        self.interarrival.is_exponential() && self.service.is_exponential()
    }
}

/// When to stop. With both fields set the run ends at whichever comes first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

impl StopRule {
    pub fn cycles(n: u64) -> Self {
        StopRule { cycles: Some(n), horizon: None }
    }

    pub fn horizon(t: f64) -> Self {
        StopRule { cycles: None, horizon: Some(t) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Validate state invariants after every event.
    pub audit: bool,
    /// Hard cap on processed events; guards cycle-count runs of unstable
    /// systems that never regenerate.
    pub max_events: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { audit: false, max_events: 2_000_000_000 }
    }
}

/// Tallies of one regeneration cycle (or of the unfinished tail).
///
/// `arrivals` counts every attempt to enter the primary queue: `lambda`
/// arrivals plus retrial attempts (Original) or `mu0` arrivals (Auxiliary).
/// `rejections` counts every blocked attempt, repeated orbit failures
/// included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CycleRecord {
    pub duration: f64,
    pub interarrivals: u64,
    pub arrivals: u64,
    pub rejections: u64,
    pub orbit_empty_time: f64,
    pub max_orbit: u64,
    /// Starts at time 0 from a non-empty initial state rather than at a
    /// regeneration; excluded from stationary estimators.
    #[serde(skip)]
    pub delayed: bool,
    #[serde(skip)]
    pub admitted: u64,
    #[serde(skip)]
    pub orbit_joins: u64,
    #[serde(skip)]
    pub retrial_successes: u64,
    #[serde(skip)]
    pub orbit_start: u64,
    #[serde(skip)]
    pub orbit_end: u64,
}

impl CycleRecord {
    /// Integer bookkeeping identities that hold for every cycle of either mode.
    pub fn balances(&self) -> bool {
        self.arrivals == self.admitted + self.rejections
            && self.orbit_end + self.retrial_successes == self.orbit_start + self.orbit_joins
    }
}

/// Time-average statistics over the whole run, unfinished cycle included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PathStats {
    pub elapsed: f64,
    pub orbit_area: f64,
    pub orbit_empty_time: f64,
    pub arrivals: u64,
    pub rejections: u64,
}

impl PathStats {
    /// Accounts for `dt` time units spent with `orbit` customers in orbit.
    pub fn advance(&mut self, dt: f64, orbit: u64) {
        self.elapsed += dt;
        self.orbit_area += dt * orbit as f64;
        if orbit == 0 {
            self.orbit_empty_time += dt;
        }
    }

    pub fn time_avg_orbit(&self) -> f64 {
        if self.elapsed > 0.0 { self.orbit_area / self.elapsed } else { 0.0 }
    }

    pub fn orbit_empty_fraction(&self) -> f64 {
        if self.elapsed > 0.0 { self.orbit_empty_time / self.elapsed } else { 1.0 }
    }

    pub fn loss_ratio(&self) -> f64 {
        if self.arrivals > 0 { self.rejections as f64 / self.arrivals as f64 } else { 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    CyclesReached,
    HorizonReached,
    EventCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub completed_cycles: Vec<CycleRecord>,
    pub truncated_tail: CycleRecord,
    pub path_stats: PathStats,
    pub seed: u64,
    pub event_count: u64,
    pub regenerations: u64,
    pub stop_reason: StopReason,
    pub wall_time_secs: f64,
}

impl SimOutput {
    /// Completed cycles that start at a regeneration.
    pub fn stationary_cycles(&self) -> impl Iterator<Item = &CycleRecord> {
        self.completed_cycles.iter().filter(|c| !c.delayed)
    }
}

/// `mu_o(t) / t` over the full run.
pub fn orbit_empty_fraction(output: &SimOutput) -> f64 {
    output.path_stats.orbit_empty_fraction()
}

/// Total-order wrapper so event times can live in a heap.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Instantaneous system state.
#[derive(Debug, Clone)]
pub struct SimState {
    pub clock: f64,
    busy: BinaryHeap<Reverse<Time>>,
    /// Service times of waiting customers are drawn at service start, so the
    /// FCFS buffer only needs a length.
    pub buffer: usize,
    pub orbit: u64,
    pub next_arrival: f64,
    pub next_poisson: Option<f64>,
    pub retrial_deadline: Option<f64>,
}

impl SimState {
    pub fn busy_servers(&self) -> usize {
        self.busy.len()
    }

    /// Completion instants of the customers in service, ascending.
    pub fn completion_times(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.busy.iter().map(|r| r.0 .0).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// `W(t)`: total remaining work at the servers.
    pub fn residual_work(&self) -> f64 {
        self.busy.iter().map(|r| (r.0 .0 - self.clock).max(0.0)).sum()
    }

    /// `M(t) = N(t) + nu(t)`.
    pub fn orbit_plus_buffer(&self) -> u64 {
        self.orbit + self.buffer as u64
    }

    fn primary_empty(&self) -> bool {
        self.busy.is_empty() && self.buffer == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Completion,
    Retrial,
    Arrival,
    Poisson,
}

enum Admission {
    Served,
    Queued,
    Blocked,
}

/// One replication. Single-threaded; owns its random streams.
pub struct Simulator {
    config: SystemConfig,
    opts: SimOptions,
    streams: RngStreams,
    state: SimState,
    seed: u64,
    cycles: Vec<CycleRecord>,
    /// Completed cycles that are not flagged delayed.
    stationary: u64,
    current: Option<(f64, CycleRecord)>,
    path: PathStats,
    events: u64,
    regenerations: u64,
    /// Orbit has no feedback in auxiliary mode: it only counts rejections.
    orbit_feedback: bool,
}

impl Simulator {
    pub fn new(config: &SystemConfig, seed: u64, opts: SimOptions) -> Self {
        let mut streams = RngStreams::new(seed);
        let initial = config.initial.unwrap_or_default();
        let orbit_feedback = config.mode == Mode::Original;
        let mut busy = BinaryHeap::with_capacity(config.servers);
        if initial.initial_busy {
            for _ in 0..config.servers {
                busy.push(Reverse(Time(config.service.sample(&mut streams.services))));
            }
        }
        let next_poisson = if orbit_feedback {
            None
        } else {
            Some(sample_exponential(&mut streams.poisson, config.retrial_rate))
        };
        let retrial_deadline = if orbit_feedback && initial.initial_orbit > 0 {
            Some(sample_exponential(&mut streams.retrials, config.retrial_rate))
        } else {
            None
        };
        let state = SimState {
            clock: 0.0,
            busy,
            buffer: 0,
            orbit: initial.initial_orbit,
            // first lambda arrival at t = 0
            next_arrival: 0.0,
            next_poisson,
            retrial_deadline,
        };
        let current = if initial.is_empty() {
            None
        } else {
            let rec = CycleRecord {
                delayed: true,
                orbit_start: state.orbit,
                max_orbit: state.orbit,
                ..Default::default()
            };
            Some((0.0, rec))
        };
        Simulator {
            config: config.clone(),
            opts,
            streams,
            state,
            seed,
            cycles: Vec::new(),
            stationary: 0,
            current,
            path: PathStats::default(),
            events: 0,
            regenerations: 0,
            orbit_feedback,
        }
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn path_stats(&self) -> &PathStats {
        &self.path
    }

    pub fn completed_cycles(&self) -> &[CycleRecord] {
        &self.cycles
    }

    fn next_event(&self) -> (f64, Event) {
        let mut best = (self.state.next_arrival, Event::Arrival);
        // Candidates in priority order; strict `<` keeps the earlier one on ties.
        let mut consider = |t: Option<f64>, e: Event| {
            if let Some(t) = t {
                let wins = t < best.0 || (t == best.0 && priority(e) < priority(best.1));
                if wins {
                    best = (t, e);
                }
            }
        };
        consider(self.state.busy.peek().map(|r| r.0 .0), Event::Completion);
        consider(self.state.retrial_deadline, Event::Retrial);
        consider(self.state.next_poisson, Event::Poisson);
        best
    }

    /// Time of the next event without processing it.
    pub fn peek_time(&self) -> f64 {
        self.next_event().0
    }

    fn advance_to(&mut self, t: f64) {
        let dt = t - self.state.clock;
        if dt > 0.0 {
            let orbit = self.state.orbit;
            self.path.advance(dt, orbit);
            if let Some((_, rec)) = self.current.as_mut() {
                rec.duration += dt;
                if orbit == 0 {
                    rec.orbit_empty_time += dt;
                }
            }
        }
        self.state.clock = t;
    }

    fn tally<F: FnOnce(&mut CycleRecord)>(&mut self, f: F) {
        if let Some((_, rec)) = self.current.as_mut() {
            f(rec);
        }
    }

    fn try_admit(&mut self) -> Admission {
        if self.state.busy.len() < self.config.servers {
            let s = self.config.service.sample(&mut self.streams.services);
            self.state.busy.push(Reverse(Time(self.state.clock + s)));
            Admission::Served
        } else if self.state.buffer < self.config.buffer_size() {
            self.state.buffer += 1;
            Admission::Queued
        } else {
            Admission::Blocked
        }
    }

    fn attempt(&mut self) -> bool {
        let admitted = !matches!(self.try_admit(), Admission::Blocked);
        self.path.arrivals += 1;
        if !admitted {
            self.path.rejections += 1;
        }
        self.tally(|r| {
            r.arrivals += 1;
            if admitted {
                r.admitted += 1;
            } else {
                r.rejections += 1;
            }
        });
        admitted
    }

    fn join_orbit(&mut self) {
        self.state.orbit += 1;
        let orbit = self.state.orbit;
        self.tally(|r| {
            r.orbit_joins += 1;
            r.max_orbit = r.max_orbit.max(orbit);
        });
        if self.orbit_feedback && orbit == 1 {
            let d = sample_exponential(&mut self.streams.retrials, self.config.retrial_rate);
            self.state.retrial_deadline = Some(self.state.clock + d);
        }
    }

    fn regenerate(&mut self) {
        let now = self.state.clock;
        if let Some((_, mut rec)) = self.current.take() {
            rec.orbit_end = self.state.orbit;
            if !rec.delayed {
                self.stationary += 1;
            }
            self.cycles.push(rec);
        }
        self.regenerations += 1;
        let rec = CycleRecord { orbit_start: self.state.orbit, max_orbit: self.state.orbit, ..Default::default() };
        self.current = Some((now, rec));
    }

    fn regeneration_point(&self) -> bool {
        if self.orbit_feedback {
            self.state.primary_empty() && self.state.orbit == 0
        } else {
            self.state.primary_empty()
        }
    }

    /// Processes one event.
    pub fn step(&mut self) -> Result<(), SimError> {
        let (t, event) = self.next_event();
        self.advance_to(t);
        self.events += 1;
        match event {
            Event::Completion => {
                self.state.busy.pop();
                if self.state.buffer > 0 {
                    self.state.buffer -= 1;
                    let s = self.config.service.sample(&mut self.streams.services);
                    self.state.busy.push(Reverse(Time(t + s)));
                }
            }
            Event::Arrival => {
                if self.regeneration_point() {
                    self.regenerate();
                }
                self.tally(|r| r.interarrivals += 1);
                if !self.attempt() {
                    self.join_orbit();
                }
                let gap = self.config.interarrival.sample(&mut self.streams.arrivals);
                self.state.next_arrival = t + gap;
            }
            Event::Poisson => {
                if !self.attempt() {
                    self.join_orbit();
                }
                let gap = sample_exponential(&mut self.streams.poisson, self.config.retrial_rate);
                self.state.next_poisson = Some(t + gap);
            }
            Event::Retrial => {
                if self.attempt() {
                    self.state.orbit -= 1;
                    self.tally(|r| r.retrial_successes += 1);
                    self.state.retrial_deadline = if self.state.orbit > 0 {
                        let d = sample_exponential(&mut self.streams.retrials, self.config.retrial_rate);
                        Some(t + d)
                    } else {
                        None
                    };
                } else {
                    let d = sample_exponential(&mut self.streams.retrials, self.config.retrial_rate);
                    self.state.retrial_deadline = Some(t + d);
                }
            }
        }
        if self.opts.audit {
            self.check_invariants()?;
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<(), SimError> {
        let s = &self.state;
        let fail = |what: &str| Err(SimError::InvariantViolation { clock: s.clock, what: what.to_string() });
        if s.busy.len() > self.config.servers {
            return fail("more busy servers than c");
        }
        if s.buffer > self.config.buffer_size() {
            return fail("buffer exceeds K - c");
        }
        if s.buffer > 0 && s.busy.len() < self.config.servers {
            return fail("customer waiting while a server is idle");
        }
        if self.orbit_feedback {
            if s.retrial_deadline.is_some() != (s.orbit > 0) {
                return fail("retrial clock present iff orbit non-empty");
            }
        } else if s.retrial_deadline.is_some() {
            return fail("auxiliary mode has no retrial clock");
        }
        if s.busy.iter().any(|r| r.0 .0 < s.clock) {
            return fail("completion scheduled in the past");
        }
        if let Some((_, rec)) = &self.current {
            if rec.rejections > rec.arrivals || rec.orbit_empty_time > rec.duration + 1e-9 {
                return fail("cycle tallies inconsistent");
            }
        }
        Ok(())
    }

    /// Runs until the stop rule fires and returns the collected output.
    pub fn run(mut self, stop: StopRule) -> Result<SimOutput, SimError> {
        if let Some(h) = stop.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(SimError::NonPositiveHorizon(h));
            }
        }
        let wanted = stop.cycles.filter(|&n| n > 0);
        if wanted.is_none() && stop.horizon.is_none() {
            return Err(SimError::EmptyStopRule);
        }
        let started = Instant::now();
        let reason = loop {
            if let Some(n) = wanted {
                if self.stationary_count() >= n {
                    break StopReason::CyclesReached;
                }
            }
            if let Some(h) = stop.horizon {
                if self.peek_time() >= h {
                    self.advance_to(h);
                    break StopReason::HorizonReached;
                }
            }
            if self.events >= self.opts.max_events {
                break StopReason::EventCap;
            }
            self.step()?;
        };
        let mut tail = self.current.take().map(|(_, r)| r).unwrap_or_default();
        tail.orbit_end = self.state.orbit;
        Ok(SimOutput {
            completed_cycles: self.cycles,
            truncated_tail: tail,
            path_stats: self.path,
            seed: self.seed,
            event_count: self.events,
            regenerations: self.regenerations,
            stop_reason: reason,
            wall_time_secs: started.elapsed().as_secs_f64(),
        })
    }

    fn stationary_count(&self) -> u64 {
        self.stationary
    }
}

fn priority(e: Event) -> u8 {
    match e {
        Event::Completion => 0,
        Event::Retrial => 1,
        Event::Arrival => 2,
        Event::Poisson => 3,
    }
}

/// Runs one replication.
pub fn simulate(config: &SystemConfig, stop: StopRule, seed: u64) -> Result<SimOutput, SimError> {
    Simulator::new(config, seed, SimOptions::default()).run(stop)
}

pub fn simulate_with(
    config: &SystemConfig,
    stop: StopRule,
    seed: u64,
    opts: SimOptions,
) -> Result<SimOutput, SimError> {
    Simulator::new(config, seed, opts).run(stop)
}

/// Fails with `UnreachedCycleCount` when a cycle target was set and not met.
pub fn require_cycles(output: &SimOutput, stop: StopRule) -> Result<(), SimError> {
    if let Some(requested) = stop.cycles {
        let completed = output.stationary_cycles().count() as u64;
        if completed < requested {
            return Err(SimError::UnreachedCycleCount { requested, completed });
        }
    }
    Ok(())
}

/// Independent replications with seeds `seeds`, run on the rayon pool.
/// Results come back in seed order.
pub fn replicate(
    config: &SystemConfig,
    stop: StopRule,
    seeds: &[u64],
) -> Result<Vec<SimOutput>, SimError> {
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| simulate(config, stop, s)).collect()
}
