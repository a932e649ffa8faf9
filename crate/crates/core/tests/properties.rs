use num_bigint::BigInt;
use num_rational::BigRational;
use rayon::prelude::*;
use retrialq::oracle::{self, RetrialParams};
use retrialq::randvar::DistributionSpec;
use retrialq::regen::{loss_estimate, mean_cycle, orbit_empty_estimate, CycleField};
use retrialq::simcore::{simulate_with, InitialState, SimOptions};
use retrialq::stability::{stability_intervals_mu0, Verdict};
use retrialq::{evaluate, ploss_md1k, ploss_mmck, simulate, LossFamily, Mode, Ploss, StopRule, SystemConfig};

fn exp(rate: f64) -> DistributionSpec {
    DistributionSpec::exponential(rate).unwrap()
}

fn markovian(lambda: f64, mu: f64, c: usize, k: usize, mu0: f64, mode: Mode) -> SystemConfig {
    SystemConfig::new(exp(lambda), exp(mu), c, k, mu0, mode).unwrap()
}

#[test]
fn birth_death_pin_is_exact() {
    let a = BigRational::from_integer(BigInt::from(2));
    let p = oracle::bd_loss_solve_in(a, 2, 4).unwrap();
    assert_eq!(p, BigRational::new(BigInt::from(2), BigInt::from(9)));
    assert!((oracle::bd_loss_solve(2.0, 2, 4).unwrap() - 2.0 / 9.0).abs() < 1e-16);
}

#[test]
fn auxiliary_loss_interval_covers_two_thirds() {
    // M/M/1/1, lambda = mu0 = mu = 1: total load 2, P_loss = 2/3
    let cfg = markovian(1.0, 1.0, 1, 1, 1.0, Mode::Auxiliary);
    let out = simulate(&cfg, StopRule::cycles(50_000), 17).unwrap();
    let est = loss_estimate(&out.completed_cycles, 0.95).unwrap();
    assert!(est.covers(2.0 / 3.0), "{est:?}");
}

#[test]
fn auxiliary_loss_dominates_original_in_distribution() {
    let (aux, orig) = (
        markovian(0.5, 1.0, 1, 2, 1.0, Mode::Auxiliary),
        markovian(0.5, 1.0, 1, 2, 1.0, Mode::Original),
    );
    let ratios = |cfg: &SystemConfig| -> Vec<f64> {
        (0..200u64)
            .into_par_iter()
            .map(|s| simulate(cfg, StopRule::horizon(2_000.0), 300 + s).unwrap().path_stats.loss_ratio())
            .collect()
    };
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var / n)
    };
    let (ma, va) = stats(&ratios(&aux));
    let (mo, vo) = stats(&ratios(&orig));
    let pooled = (va + vo).sqrt();
    assert!(ma >= mo - 3.0 * pooled, "aux {ma} vs original {mo} (se {pooled})");
}

#[test]
fn long_run_and_restarts_agree_on_cycle_length() {
    let cfg = markovian(0.4, 1.0, 1, 2, 1.5, Mode::Original);
    let long = simulate(&cfg, StopRule::cycles(20_000), 5).unwrap();
    let a: Vec<f64> = long.completed_cycles.iter().map(|c| c.duration).collect();
    let b: Vec<f64> = (0..4_000u64)
        .into_par_iter()
        .map(|s| simulate(&cfg, StopRule::cycles(1), 10_000 + s).unwrap().completed_cycles[0].duration)
        .collect();
    let moments = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n)
    };
    let ((ma, va), (mb, vb)) = (moments(&a), moments(&b));
    let z = (ma - mb) / (va + vb).sqrt();
    // two-sided test at the 1% level
    assert!(z.abs() < 2.576, "long {ma} vs restarted {mb}, z = {z}");
}

#[test]
fn interval_width_shrinks_like_inverse_root_n() {
    let cfg = markovian(0.5, 1.0, 1, 1, 0.5, Mode::Auxiliary);
    let sizes = [100u64, 1_000, 10_000, 100_000];
    let points: Vec<(f64, f64)> = sizes
        .iter()
        .map(|&n| {
            let mean_log_width = (0..8u64)
                .map(|s| {
                    let out = simulate(&cfg, StopRule::cycles(n), 900 + s).unwrap();
                    loss_estimate(&out.completed_cycles, 0.95).unwrap().half_width().ln()
                })
                .sum::<f64>()
                / 8.0;
            ((n as f64).ln(), mean_log_width)
        })
        .collect();
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.1, "slope {slope}");
}

#[test]
fn ctmc_orbit_empty_probability_matches_simulation() {
    let configs = [(0.2, 2.0, 1.0, 1, 1), (0.5, 1.0, 2.0, 1, 2), (1.0, 1.0, 3.0, 2, 3)];
    for (i, &(lambda, mu, mu0, c, k)) in configs.iter().enumerate() {
        let solved = oracle::solve_auto_truncated(RetrialParams { lambda, mu, mu0, c, k }, 64, 1e-12, oracle::DEFAULT_MAX_ITER)
            .unwrap();
        assert!(solved.resolved);
        let exact = solved.diagnostics.p_orbit_empty;
        let cfg = markovian(lambda, mu, c, k, mu0, Mode::Original);
        let out = simulate(&cfg, StopRule::cycles(200_000), 40 + i as u64).unwrap();
        let est = orbit_empty_estimate(&out.completed_cycles, 0.95).unwrap();
        assert!(est.covers(exact), "config {i}: CTMC {exact} vs {est:?}");
    }
}

/// M/G/1/K loss from the embedded departure chain, solved as a dense
/// linear system: from state `i` the next departure leaves
/// `min(max(i, 1) - 1 + A, K - 1)` customers, `A ~ Poisson(rho)`.
fn md1k_embedded_chain(rho: f64, k: usize) -> f64 {
    let a: Vec<f64> = (0..k + 1)
        .scan((-rho).exp(), |p, j| {
            let cur = *p;
            *p *= rho / (j + 1) as f64;
            Some(cur)
        })
        .collect();
    let n = k;
    // rows: (P^T - I) pi = 0 with the last row replaced by sum pi = 1
    let mut m = vec![vec![0.0; n + 1]; n];
    for from in 0..n {
        let base = from.max(1) - 1;
        let mut rest = 1.0;
        for (arrivals, &pa) in a.iter().enumerate() {
            let to = base + arrivals;
            if to >= n - 1 {
                break;
            }
            m[to][from] += pa;
            rest -= pa;
        }
        m[n - 1][from] += rest;
    }
    for (i, row) in m.iter_mut().enumerate() {
        row[i] -= 1.0;
    }
    for j in 0..n {
        m[n - 1][j] = 1.0;
    }
    m[n - 1][n] = 1.0;
    // Gaussian elimination with partial pivoting
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap()).unwrap();
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    for cc in col..=n {
                        m[r][cc] -= f * m[col][cc];
                    }
                }
            }
        }
    }
    let pi0 = m[0][n] / m[0][0];
    1.0 - 1.0 / (pi0 + rho)
}

#[test]
fn md1k_matches_embedded_chain() {
    for k in 1..=8 {
        for &rho in &[0.3, 0.5, 0.9, 1.0, 1.7, 3.0] {
            let formula = ploss_md1k(rho, 1.0, k).unwrap();
            let chain = md1k_embedded_chain(rho, k);
            assert!(((formula - chain) / formula).abs() < 1e-8, "K={k} rho={rho}: {formula} vs {chain}");
        }
    }
}

#[test]
fn md13_matches_simulation() {
    let exact = ploss_md1k(0.5, 1.0, 3).unwrap();
    let d = DistributionSpec::deterministic(2.0).unwrap();
    // lambda + mu0 = 0.25, D = 2: same load 0.5 on a different time scale
    let cfg = SystemConfig::new(exp(0.1), d, 1, 3, 0.15, Mode::Auxiliary).unwrap();
    let out = simulate(&cfg, StopRule::horizon(2.0e6), 8).unwrap();
    let est = loss_estimate(&out.completed_cycles, 0.95).unwrap();
    assert!((est.point - exact).abs() <= 3.0 * est.std_error(), "{exact} vs {est:?}");
}

#[test]
fn stable_interior_points_evaluate_stable() {
    let (lambda, mu, c, k) = (0.6, 1.0, 1, 2);
    let family = LossFamily::Mmck { mu, c, k };
    let intervals = stability_intervals_mu0(lambda, &family, (1e-3, 1e3), 128, 1e-10).unwrap();
    assert!(!intervals.is_empty());
    for i in &intervals {
        for t in 1..10 {
            let mu0 = i.lo.mu0 * (i.hi.mu0 / i.lo.mu0).powf(t as f64 / 10.0);
            let cfg = markovian(lambda, mu, c, k, mu0, Mode::Original);
            let p = ploss_mmck::<f64>(lambda + mu0, mu, c, k).unwrap();
            assert_eq!(evaluate(&cfg, Ploss::given(p)).verdict, Verdict::StableSufficient, "mu0 = {mu0}");
        }
    }
}

#[test]
fn audit_mode_holds_invariants_under_ties() {
    // deterministic laws create simultaneous events
    let cfg = SystemConfig::new(
        DistributionSpec::deterministic(1.0).unwrap(),
        DistributionSpec::deterministic(2.0).unwrap(),
        2,
        3,
        0.8,
        Mode::Original,
    )
    .unwrap();
    let opts = SimOptions { audit: true, ..SimOptions::default() };
    let out = simulate_with(&cfg, StopRule::horizon(5_000.0), 3, opts).unwrap();
    assert!(out.completed_cycles.iter().all(|c| c.balances()));
}

#[test]
fn delayed_first_cycle_is_excluded() {
    let cfg = markovian(0.3, 1.0, 1, 2, 1.0, Mode::Original)
        .with_initial(InitialState { initial_orbit: 25, initial_busy: true });
    let out = simulate(&cfg, StopRule::cycles(2_000), 4).unwrap();
    assert!(out.completed_cycles[0].delayed);
    assert_eq!(out.stationary_cycles().count(), 2_000);
    let m = mean_cycle(&out.completed_cycles, CycleField::Duration, 0.95).unwrap();
    assert_eq!(m.n_cycles, 2_000);
}
