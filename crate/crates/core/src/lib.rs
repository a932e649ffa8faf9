//! Stability analysis of GI/G/c/K retrial queues with a constant retrial rate.
//!
//! A primary queue with `c` servers and `K` places; blocked customers join an
//! orbit that retries at rate `mu0` whenever it is non-empty. The system is
//! positive recurrent when `P(tau > S) > 0` and
//! `(lambda + mu0) P_loss < mu0`, where `P_loss` is the loss probability of
//! the primary queue fed by the `lambda` stream plus an independent Poisson
//! stream of rate `mu0`.
//!
//! * [`randvar`]: interarrival and service laws.
//! * [`simcore`]: discrete-event simulation of the retrial system and of the
//!   auxiliary loss system.
//! * [`regen`]: regenerative ratio estimators.
//! * [`analytic`]: closed-form loss probabilities.
//! * [`oracle`]: birth-death and truncated-CTMC solvers for Markovian cases.
//! * [`stability`]: verdicts and stability regions in `mu0`.
//!
//! Closed forms and the birth-death oracle are generic over the scalar
//! type; the aliases below name the instantiations used in practice.

pub mod analytic;
pub mod oracle;
pub mod randvar;
pub mod regen;
pub mod scalar;
pub mod simcore;
pub mod stability;

pub use analytic::{erlang_b, ploss_dispatch, ploss_md1k, ploss_mm1k, ploss_mmck, Dispatch, Formula, LossFamily};
pub use randvar::{condition6_holds, DistributionSpec};
pub use regen::{ratio_estimate, RatioEstimate};
pub use scalar::{DoubleDouble, Real, Scalar};
pub use simcore::{simulate, Mode, SimOutput, StopRule, SystemConfig};
pub use stability::{evaluate, stability_intervals_mu0, Ploss, StabilityReport, Verdict};

/// Working precision of simulation and reporting.
pub type Prob = f64;
/// Double-double scalar used where a series cancels heavily.
pub type Extended = scalar::DoubleDouble;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
