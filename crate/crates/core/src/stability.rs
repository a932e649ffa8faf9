//! Stability verdicts and stability regions in the retrial rate.
//!
//! The system is positive recurrent when `P(tau > S) > 0` and
//! `(lambda + mu0) P_loss < mu0`, with `P_loss` the loss probability of the
//! auxiliary queue fed at rate `lambda + mu0`. The condition is sufficient in
//! general and also necessary for Markovian systems, so verdicts for
//! non-Markovian inputs never claim instability.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{AnalyticError, Formula, LossFamily};
use crate::randvar::condition6_holds;
use crate::simcore::SystemConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("no closed-form loss model for this system")]
    UnsupportedFamily,
    #[error("mu0 range must satisfy 0 < lo < hi, got [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error("grid needs at least 16 points, got {0}")]
    GridTooSmall(usize),
    #[error("tolerance must be > 0, got {0}")]
    BadTolerance(f64),
    #[error("sign change between mu0 = {lo} and {hi} could not be refined to |g| <= tol")]
    NoBracketRefinement { lo: f64, hi: f64 },
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Both conditions hold: positive recurrent.
    StableSufficient,
    /// The load condition fails. For Markovian systems this means unstable.
    NotGuaranteed,
    /// `P(tau > S) = 0`.
    Infeasible6,
    /// Simulation-sourced loss whose interval straddles the boundary.
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlossSource {
    Formula { formula: Formula },
    Simulation { ci_lo: f64, ci_hi: f64 },
    Given,
}

/// Loss probability with its origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ploss {
    pub value: f64,
    pub source: PlossSource,
}

impl Ploss {
    pub fn formula(value: f64, formula: Formula) -> Self {
        Ploss { value, source: PlossSource::Formula { formula } }
    }

    pub fn simulated(value: f64, ci_lo: f64, ci_hi: f64) -> Self {
        Ploss { value, source: PlossSource::Simulation { ci_lo, ci_hi } }
    }

    pub fn given(value: f64) -> Self {
        Ploss { value, source: PlossSource::Given }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub condition6: bool,
    /// `(lambda + mu0) P_loss`.
    pub lhs: f64,
    /// `mu0`.
    pub rhs: f64,
    /// `1 - lhs / rhs`, the guaranteed long-run orbit-empty fraction when positive.
    pub delta0: f64,
    pub verdict: Verdict,
    pub ploss: Ploss,
    /// `lhs` evaluated at the ends of a simulated loss interval.
    pub lhs_ci: Option<(f64, f64)>,
    /// Poisson input and exponential service: the load condition is then
    /// the exact stability boundary.
    pub exact_boundary: bool,
}

impl StabilityReport {
    /// For Markovian systems the verdict decides stability both ways.
    pub fn markovian_stable(&self) -> Option<bool> {
        match (self.exact_boundary, self.verdict) {
            (true, Verdict::StableSufficient) => Some(true),
            (true, Verdict::NotGuaranteed) => Some(false),
            _ => None,
        }
    }
}

pub fn evaluate(config: &SystemConfig, ploss: Ploss) -> StabilityReport {
    let lambda = config.arrival_rate();
    let mu0 = config.retrial_rate;
    let total = lambda + mu0;
    let condition6 = condition6_holds(&config.interarrival, &config.service);
    let lhs = total * ploss.value;
    let rhs = mu0;
    let delta0 = 1.0 - lhs / rhs;
    let lhs_ci = match ploss.source {
        PlossSource::Simulation { ci_lo, ci_hi } => Some((total * ci_lo, total * ci_hi)),
        _ => None,
    };
    let verdict = if !condition6 {
        Verdict::Infeasible6
    } else if let Some((lo, hi)) = lhs_ci {
        if hi < rhs {
            Verdict::StableSufficient
        } else if lo > rhs {
            Verdict::NotGuaranteed
        } else {
            Verdict::Undecided
        }
    } else if lhs < rhs {
        Verdict::StableSufficient
    } else {
        Verdict::NotGuaranteed
    };
    StabilityReport {
        condition6,
        lhs,
        rhs,
        delta0,
        verdict,
        ploss,
        lhs_ci,
        exact_boundary: config.is_markovian(),
    }
}

/// `g(mu0) = (lambda + mu0) P_loss(lambda + mu0) - mu0`; negative exactly
/// where the load condition holds.
pub fn load_margin(lambda: f64, mu0: f64, family: &LossFamily) -> Result<f64, AnalyticError> {
    let total = lambda + mu0;
    Ok(total * family.ploss(total)? - mu0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    /// Refined sign change of `g`.
    Root,
    /// The interval runs into the end of the searched range.
    RangeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub mu0: f64,
    pub g: f64,
    pub kind: EndpointKind,
}

/// A maximal sub-interval of the scanned range on which `g < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityInterval {
    pub lo: Endpoint,
    pub hi: Endpoint,
}

impl StabilityInterval {
    pub fn contains(&self, mu0: f64) -> bool {
        self.lo.mu0 < mu0 && mu0 < self.hi.mu0
    }
}

pub const DEFAULT_GRID_POINTS: usize = 256;
pub const DEFAULT_TOL: f64 = 1e-8;

/// `grid_points` log-spaced subintervals of `[lo, hi]` (so `grid_points + 1`
/// abscissae). Doubling `grid_points` refines the previous grid.
pub fn log_grid(lo: f64, hi: f64, grid_points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..=grid_points)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == grid_points {
                hi
            } else {
                (a + (b - a) * i as f64 / grid_points as f64).exp()
            }
        })
        .collect()
}

/// Samples of `g` on the log grid, for plotting.
pub fn margin_curve(
    lambda: f64,
    family: &LossFamily,
    range: (f64, f64),
    grid_points: usize,
) -> Result<Vec<(f64, f64)>, StabilityError> {
    check_range(range)?;
    log_grid(range.0, range.1, grid_points)
        .into_iter()
        .map(|m| Ok((m, load_margin(lambda, m, family)?)))
        .collect()
}

fn check_range((lo, hi): (f64, f64)) -> Result<(), StabilityError> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(StabilityError::BadRange { lo, hi });
    }
    Ok(())
}

/// Subsets of `range` where `g(mu0) < 0`: scan the log grid, bracket each
/// sign change, bisect each bracket until `|g| <= tol`.
///
/// No shape of `g` is assumed, so several disjoint intervals may come back.
/// As `mu0 -> 0` `g` tends to `lambda P_loss(lambda) > 0`; as `mu0 -> inf`
/// it tends to `lambda - c mu` for the Markovian and Erlang families, so a
/// region can extend to the top of any finite range.
pub fn stability_intervals_mu0(
    lambda: f64,
    family: &LossFamily,
    range: (f64, f64),
    grid_points: usize,
    tol: f64,
) -> Result<Vec<StabilityInterval>, StabilityError> {
    check_range(range)?;
    if grid_points < 16 {
        return Err(StabilityError::GridTooSmall(grid_points));
    }
    if !(tol > 0.0) {
        return Err(StabilityError::BadTolerance(tol));
    }
    let g = |m: f64| load_margin(lambda, m, family);
    let xs = log_grid(range.0, range.1, grid_points);
    let gs: Vec<f64> = xs.iter().map(|&x| g(x)).collect::<Result<_, _>>()?;

    let mut intervals = Vec::new();
    let mut open: Option<Endpoint> = if gs[0] < 0.0 {
        Some(Endpoint { mu0: xs[0], g: gs[0], kind: EndpointKind::RangeLimit })
    } else {
        None
    };
    for i in 1..xs.len() {
        let (was, now) = (gs[i - 1] < 0.0, gs[i] < 0.0);
        if was == now {
            continue;
        }
        let root = refine(&g, (xs[i - 1], gs[i - 1]), (xs[i], gs[i]), tol)?;
        if now {
            open = Some(root);
        } else if let Some(lo) = open.take() {
            intervals.push(StabilityInterval { lo, hi: root });
        }
    }
    if let Some(lo) = open {
        let last = xs.len() - 1;
        intervals.push(StabilityInterval {
            lo,
            hi: Endpoint { mu0: xs[last], g: gs[last], kind: EndpointKind::RangeLimit },
        });
    }
    Ok(intervals)
}

fn refine<G>(g: &G, mut a: (f64, f64), mut b: (f64, f64), tol: f64) -> Result<Endpoint, StabilityError>
where
    G: Fn(f64) -> Result<f64, AnalyticError>,
{
    for end in [a, b] {
        if end.1.abs() <= tol {
            return Ok(Endpoint { mu0: end.0, g: end.1, kind: EndpointKind::Root });
        }
    }
    let (lo0, hi0) = (a.0, b.0);
    loop {
        let mid = 0.5 * (a.0 + b.0);
        if !(mid > a.0 && mid < b.0) {
            return Err(StabilityError::NoBracketRefinement { lo: lo0, hi: hi0 });
        }
        let gm = g(mid)?;
        if gm.abs() <= tol {
            return Ok(Endpoint { mu0: mid, g: gm, kind: EndpointKind::Root });
        }
        if (gm < 0.0) == (a.1 < 0.0) {
            a = (mid, gm);
        } else {
            b = (mid, gm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::ploss_mm1k;
    use crate::randvar::DistributionSpec;
    use crate::simcore::Mode;

    fn mm(lambda: f64, mu: f64, mu0: f64, c: usize, k: usize) -> SystemConfig {
        SystemConfig::new(
            DistributionSpec::exponential(lambda).unwrap(),
            DistributionSpec::exponential(mu).unwrap(),
            c,
            k,
            mu0,
            Mode::Original,
        )
        .unwrap()
    }

    #[test]
    fn stable_markovian_example() {
        let p = ploss_mm1k::<f64>(1.2, 2.0, 1).unwrap();
        assert!((p - 0.375).abs() < 1e-15);
        let r = evaluate(&mm(0.2, 2.0, 1.0, 1, 1), Ploss::formula(p, Formula::Mmck));
        assert_eq!(r.verdict, Verdict::StableSufficient);
        assert!((r.lhs - 0.45).abs() < 1e-15);
        assert!((r.delta0 - 0.55).abs() < 1e-15);
        assert!(r.exact_boundary);
        assert_eq!(r.markovian_stable(), Some(true));
    }

    #[test]
    fn unstable_markovian_example() {
        let p = ploss_mm1k::<f64>(2.0, 1.0, 1).unwrap();
        let r = evaluate(&mm(1.0, 1.0, 1.0, 1, 1), Ploss::formula(p, Formula::Mmck));
        assert_eq!(r.verdict, Verdict::NotGuaranteed);
        assert!((r.lhs - 4.0 / 3.0).abs() < 1e-15);
        assert!(r.delta0 < 0.0);
        assert_eq!(r.markovian_stable(), Some(false));
    }

    #[test]
    fn infeasible_when_tau_never_exceeds_service() {
        let cfg = SystemConfig::new(
            DistributionSpec::deterministic(1.0).unwrap(),
            DistributionSpec::deterministic(2.0).unwrap(),
            1,
            1,
            50.0,
            Mode::Original,
        )
        .unwrap();
        let r = evaluate(&cfg, Ploss::given(0.01));
        assert_eq!(r.verdict, Verdict::Infeasible6);
        assert!(!r.exact_boundary);
        assert_eq!(r.markovian_stable(), None);
    }

    #[test]
    fn simulated_loss_three_way() {
        let cfg = SystemConfig::new(
            DistributionSpec::erlang(2, 0.4).unwrap(),
            DistributionSpec::exponential(2.0).unwrap(),
            1,
            1,
            1.0,
            Mode::Original,
        )
        .unwrap();
        // lambda = 0.2, total 1.2, boundary at P_loss = 1/1.2
        let stable = evaluate(&cfg, Ploss::simulated(0.3, 0.28, 0.32));
        assert_eq!(stable.verdict, Verdict::StableSufficient);
        let undecided = evaluate(&cfg, Ploss::simulated(0.83, 0.80, 0.86));
        assert_eq!(undecided.verdict, Verdict::Undecided);
        let not = evaluate(&cfg, Ploss::simulated(0.9, 0.88, 0.92));
        assert_eq!(not.verdict, Verdict::NotGuaranteed);
        assert_eq!(not.markovian_stable(), None);
        let (lo, hi) = stable.lhs_ci.unwrap();
        assert!(lo <= stable.lhs && stable.lhs <= hi);
    }

    #[test]
    fn verdict_agrees_with_delta0_sign() {
        for i in 1..60 {
            let lambda = 0.05 * i as f64;
            let cfg = mm(lambda, 1.0, 0.7, 1, 2);
            let p = ploss_mm1k::<f64>(lambda + 0.7, 1.0, 2).unwrap();
            let r = evaluate(&cfg, Ploss::formula(p, Formula::Mmck));
            assert_eq!(r.verdict == Verdict::StableSufficient, r.delta0 > 0.0);
        }
    }

    #[test]
    fn mm11_equal_rates_never_stabilizes() {
        let family = LossFamily::Mmck { mu: 1.0, c: 1, k: 1 };
        for &m in &[1e-3, 0.5, 1.0, 10.0, 1e4] {
            let g = load_margin(1.0, m, &family).unwrap();
            assert!((g - 1.0 / (2.0 + m)).abs() < 1e-12);
        }
        let iv = stability_intervals_mu0(1.0, &family, (1e-3, 1e3), 256, 1e-8).unwrap();
        assert!(iv.is_empty());
    }

    #[test]
    fn mm11_region_has_closed_form_root() {
        // g(mu0) = (0.04 - 1.8 mu0) / (2.2 + mu0): stable for mu0 > 1/45
        let family = LossFamily::Mmck { mu: 2.0, c: 1, k: 1 };
        let iv = stability_intervals_mu0(0.2, &family, (1e-4, 1e2), 256, 1e-8).unwrap();
        assert_eq!(iv.len(), 1);
        let lo = iv[0].lo;
        assert_eq!(lo.kind, EndpointKind::Root);
        assert!(lo.g.abs() <= 1e-8);
        assert!((lo.mu0 - 1.0 / 45.0).abs() < 1e-7);
        assert_eq!(iv[0].hi.kind, EndpointKind::RangeLimit);
        assert!(iv[0].contains(1.0));
    }

    #[test]
    fn bounded_region_when_servers_too_slow() {
        // lambda > c mu: g -> lambda - c mu > 0 for large mu0; stable only in a window.
        let family = LossFamily::Mmck { mu: 1.0, c: 2, k: 6 };
        let lambda = 2.05;
        let iv = stability_intervals_mu0(lambda, &family, (1e-4, 1e4), 256, 1e-8).unwrap();
        for i in &iv {
            assert_eq!(i.lo.kind, EndpointKind::Root);
            assert_eq!(i.hi.kind, EndpointKind::Root);
            assert!(i.lo.g.abs() <= 1e-8 && i.hi.g.abs() <= 1e-8);
            let mid = (i.lo.mu0 * i.hi.mu0).sqrt();
            assert!(load_margin(lambda, mid, &family).unwrap() < 0.0);
        }
    }

    #[test]
    fn grid_doubling_keeps_intervals() {
        let families = [
            (0.2, LossFamily::Mmck { mu: 2.0, c: 1, k: 1 }),
            (1.5, LossFamily::Mmck { mu: 1.0, c: 2, k: 4 }),
            (0.6, LossFamily::ErlangB { mean_service: 1.0, c: 3 }),
            (0.5, LossFamily::Md1k { service_time: 1.0, k: 3 }),
        ];
        for (lambda, fam) in families {
            let coarse = stability_intervals_mu0(lambda, &fam, (1e-3, 1e3), 32, 1e-8).unwrap();
            let fine = stability_intervals_mu0(lambda, &fam, (1e-3, 1e3), 64, 1e-8).unwrap();
            for c in &coarse {
                let covered = fine.iter().any(|f| f.lo.mu0 <= c.lo.mu0 + 1e-6 && c.hi.mu0 <= f.hi.mu0 + 1e-6);
                assert!(covered, "{fam:?}: {c:?} lost in {fine:?}");
            }
        }
    }

    #[test]
    fn interior_points_are_stable() {
        let lambda = 0.9;
        let fam = LossFamily::Mmck { mu: 1.0, c: 1, k: 3 };
        let iv = stability_intervals_mu0(lambda, &fam, (1e-3, 1e3), 128, 1e-8).unwrap();
        assert!(!iv.is_empty());
        for i in &iv {
            for t in 1..20 {
                let m = i.lo.mu0 * (i.hi.mu0 / i.lo.mu0).powf(t as f64 / 20.0);
                let cfg = mm(lambda, 1.0, m, 1, 3);
                let p = fam.ploss(lambda + m).unwrap();
                assert_eq!(evaluate(&cfg, Ploss::formula(p, Formula::Mmck)).verdict, Verdict::StableSufficient);
            }
        }
    }

    #[test]
    fn argument_errors() {
        let fam = LossFamily::Mmck { mu: 1.0, c: 1, k: 1 };
        assert!(matches!(stability_intervals_mu0(1.0, &fam, (0.0, 1.0), 64, 1e-8), Err(StabilityError::BadRange { .. })));
        assert!(matches!(stability_intervals_mu0(1.0, &fam, (1.0, 0.5), 64, 1e-8), Err(StabilityError::BadRange { .. })));
        assert_eq!(stability_intervals_mu0(1.0, &fam, (0.1, 1.0), 8, 1e-8), Err(StabilityError::GridTooSmall(8)));
        assert_eq!(stability_intervals_mu0(1.0, &fam, (0.1, 1.0), 64, 0.0), Err(StabilityError::BadTolerance(0.0)));
    }

    #[test]
    fn grid_is_nested_under_doubling() {
        let a = log_grid(0.01, 100.0, 16);
        let b = log_grid(0.01, 100.0, 32);
        for (i, x) in a.iter().enumerate() {
            assert!((b[2 * i] - x).abs() <= 1e-12 * x);
        }
    }
}
