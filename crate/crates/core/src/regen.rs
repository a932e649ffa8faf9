//! Regenerative output analysis.
//!
//! For i.i.d. cycles with per-cycle pairs `(Y_i, Z_i)` the long-run ratio
//! `E Y / E Z` is estimated by `sum Y / sum Z`; the CLT interval uses the
//! residuals `Y_i - p Z_i`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::CycleRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegenError {
    #[error("need at least 2 cycles, got {0}")]
    TooFewCycles(usize),
    #[error("denominator sums to zero")]
    ZeroDenominator,
    #[error("confidence level must lie in (0, 1), got {0}")]
    BadLevel(f64),
}

/// Per-cycle quantity usable as numerator or denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleField {
    Duration,
    Interarrivals,
    Arrivals,
    Rejections,
    OrbitEmptyTime,
    MaxOrbit,
    /// Constant 1, for plain means.
    Unit,
}

impl CycleField {
    pub fn value(self, c: &CycleRecord) -> f64 {
        match self {
            CycleField::Duration => c.duration,
            CycleField::Interarrivals => c.interarrivals as f64,
            CycleField::Arrivals => c.arrivals as f64,
            CycleField::Rejections => c.rejections as f64,
            CycleField::OrbitEmptyTime => c.orbit_empty_time,
            CycleField::MaxOrbit => c.max_orbit as f64,
            CycleField::Unit => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub point: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub n_cycles: usize,
    pub numerator_mean: f64,
    pub denominator_mean: f64,
}

impl RatioEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }

    /// Standard error implied by the interval.
    pub fn std_error(&self) -> f64 {
        self.half_width() / normal_quantile(0.5 + 0.5 * self.level)
    }

    pub fn covers(&self, x: f64) -> bool {
        self.ci_lo <= x && x <= self.ci_hi
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "point": self.point,
            "ci": [self.ci_lo, self.ci_hi],
            "level": self.level,
            "n": self.n_cycles,
        })
    }
}

/// Ratio estimator over explicit `(numerator, denominator)` pairs.
pub fn ratio_from_pairs(pairs: &[(f64, f64)], level: f64) -> Result<RatioEstimate, RegenError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(RegenError::BadLevel(level));
    }
    let n = pairs.len();
    if n < 2 {
        return Err(RegenError::TooFewCycles(n));
    }
    let num_sum: f64 = pairs.iter().map(|p| p.0).sum();
    let den_sum: f64 = pairs.iter().map(|p| p.1).sum();
    if den_sum <= 0.0 {
        return Err(RegenError::ZeroDenominator);
    }
    let point = num_sum / den_sum;
    let nf = n as f64;
    let den_mean = den_sum / nf;
    let ss: f64 = pairs.iter().map(|&(y, z)| (y - point * z).powi(2)).sum();
    let s = (ss / (nf - 1.0)).sqrt();
    let half = normal_quantile(0.5 + 0.5 * level) * s / (den_mean * nf.sqrt());
    Ok(RatioEstimate {
        point,
        ci_lo: point - half,
        ci_hi: point + half,
        level,
        n_cycles: n,
        numerator_mean: num_sum / nf,
        denominator_mean: den_mean,
    })
}

/// `sum num_i / sum den_i` over the stationary cycles; cycles flagged as
/// delayed (non-empty start) are skipped.
pub fn ratio_estimate(
    cycles: &[CycleRecord],
    numerator: CycleField,
    denominator: CycleField,
    level: f64,
) -> Result<RatioEstimate, RegenError> {
    let pairs: Vec<(f64, f64)> = cycles
        .iter()
        .filter(|c| !c.delayed)
        .map(|c| (numerator.value(c), denominator.value(c)))
        .collect();
    ratio_from_pairs(&pairs, level)
}

/// Mean of one cycle field (`E T`, `E beta`, ...).
pub fn mean_cycle(cycles: &[CycleRecord], field: CycleField, level: f64) -> Result<RatioEstimate, RegenError> {
    ratio_estimate(cycles, field, CycleField::Unit, level)
}

/// Long-run fraction of arrivals rejected.
pub fn loss_estimate(cycles: &[CycleRecord], level: f64) -> Result<RatioEstimate, RegenError> {
    ratio_estimate(cycles, CycleField::Rejections, CycleField::Arrivals, level)
}

/// Long-run fraction of time the orbit is empty.
pub fn orbit_empty_estimate(cycles: &[CycleRecord], level: f64) -> Result<RatioEstimate, RegenError> {
    ratio_estimate(cycles, CycleField::OrbitEmptyTime, CycleField::Duration, level)
}

/// Standard normal quantile, Acklam's rational approximation
/// (relative error below 1.15e-9 on (0, 1)).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

pub const CSV_COLUMNS: [&str; 7] = [
    "cycle_index",
    "duration",
    "interarrivals",
    "arrivals",
    "rejections",
    "orbit_empty_time",
    "max_orbit",
];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    cycle_index: u64,
    duration: f64,
    interarrivals: u64,
    arrivals: u64,
    rejections: u64,
    orbit_empty_time: f64,
    max_orbit: u64,
}

/// Writes one row per cycle after a `#` comment line carrying `comment`.
pub fn write_cycles_csv<W: std::io::Write>(
    mut out: W,
    cycles: &[CycleRecord],
    comment: &str,
) -> Result<(), csv::Error> {
    writeln!(out, "# {comment}")?;
    let mut w = csv::Writer::from_writer(out);
    for (i, c) in cycles.iter().enumerate() {
        w.serialize(CsvRow {
            cycle_index: i as u64,
            duration: c.duration,
            interarrivals: c.interarrivals,
            arrivals: c.arrivals,
            rejections: c.rejections,
            orbit_empty_time: c.orbit_empty_time,
            max_orbit: c.max_orbit,
        })?;
    }
    if cycles.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cycle CSV; `#` lines are comments.
pub fn read_cycles_csv<R: std::io::Read>(input: R) -> Result<Vec<CycleRecord>, csv::Error> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    r.deserialize::<CsvRow>()
        .map(|row| {
            row.map(|row| CycleRecord {
                duration: row.duration,
                interarrivals: row.interarrivals,
                arrivals: row.arrivals,
                rejections: row.rejections,
                orbit_empty_time: row.orbit_empty_time,
                max_orbit: row.max_orbit,
                ..Default::default()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn rec(rejections: u64, arrivals: u64) -> CycleRecord {
        CycleRecord { rejections, arrivals, duration: 1.0, ..Default::default() }
    }

    #[test]
    fn identical_cycles_have_zero_width() {
        let cycles = vec![rec(1, 4); 100];
        let e = loss_estimate(&cycles, 0.95).unwrap();
        assert_eq!(e.point, 0.25);
        assert_eq!(e.ci_lo, e.ci_hi);
        assert_eq!(e.n_cycles, 100);
    }

    #[test]
    fn two_cycle_hand_example() {
        let cycles = [rec(0, 2), rec(2, 2)];
        let e = loss_estimate(&cycles, 0.95).unwrap();
        assert_eq!(e.point, 0.5);
        // residuals -1, +1 -> s^2 = 2, half = z sqrt(2) / (2 sqrt(2)) = z / 2
        let z = normal_quantile(0.975);
        assert!((e.half_width() - z / 2.0).abs() < 1e-15);
        assert_eq!(e.denominator_mean, 2.0);
        assert_eq!(e.numerator_mean, 1.0);
    }

    #[test]
    fn mean_cycle_examples() {
        let mk = |d: f64| CycleRecord { duration: d, ..Default::default() };
        let e = mean_cycle(&[mk(3.0), mk(3.0), mk(3.0)], CycleField::Duration, 0.95).unwrap();
        assert_eq!((e.point, e.half_width()), (3.0, 0.0));
        let e = mean_cycle(&[mk(1.0), mk(3.0)], CycleField::Duration, 0.95).unwrap();
        assert_eq!(e.point, 2.0);
    }

    #[test]
    fn errors() {
        assert_eq!(loss_estimate(&[rec(0, 1)], 0.95), Err(RegenError::TooFewCycles(1)));
        assert_eq!(loss_estimate(&[rec(0, 0), rec(0, 0)], 0.95), Err(RegenError::ZeroDenominator));
        assert_eq!(loss_estimate(&[rec(0, 1), rec(0, 1)], 1.0), Err(RegenError::BadLevel(1.0)));
    }

    #[test]
    fn delayed_cycle_skipped() {
        let mut first = rec(100, 100);
        first.delayed = true;
        let e = loss_estimate(&[first, rec(1, 2), rec(1, 2)], 0.95).unwrap();
        assert_eq!(e.point, 0.5);
        assert_eq!(e.n_cycles, 2);
    }

    #[test]
    fn quantile_matches_reference_cdf() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let z = normal_quantile(p);
            let reference = n.inverse_cdf(p);
            assert!((z - reference).abs() <= 1e-8 * reference.abs().max(1.0), "p={p}");
        }
        for &p in &[1e-10, 1e-6, 0.001, 0.999, 1.0 - 1e-6] {
            let z = normal_quantile(p);
            assert!((n.cdf(z) - p).abs() / p.min(1.0 - p) < 1e-7, "p={p}");
        }
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-8);
    }

    #[test]
    fn csv_round_trip() {
        let cycles = vec![
            CycleRecord { duration: 1.25, interarrivals: 2, arrivals: 3, rejections: 1, orbit_empty_time: 0.5, max_orbit: 1, ..Default::default() },
            CycleRecord { duration: 0.1, interarrivals: 1, arrivals: 1, rejections: 0, orbit_empty_time: 0.1, max_orbit: 0, ..Default::default() },
        ];
        let mut buf = Vec::new();
        write_cycles_csv(&mut buf, &cycles, "seed=1").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=1\ncycle_index,duration,interarrivals,arrivals,rejections,orbit_empty_time,max_orbit\n"));
        assert_eq!(read_cycles_csv(buf.as_slice()).unwrap(), cycles);
    }

    proptest! {
        #[test]
        fn scale_invariant_point(
            pairs in prop::collection::vec((0u32..50, 1u32..50), 2..60),
            k in 1u32..1000,
        ) {
            let base: Vec<(f64, f64)> = pairs.iter().map(|&(y, z)| (y as f64, z as f64)).collect();
            let scaled: Vec<(f64, f64)> = base.iter().map(|&(y, z)| (y * k as f64, z * k as f64)).collect();
            let a = ratio_from_pairs(&base, 0.95).unwrap();
            let b = ratio_from_pairs(&scaled, 0.95).unwrap();
            prop_assert!((a.point - b.point).abs() <= 1e-12 * a.point.abs().max(1.0));
            prop_assert!(a.ci_lo <= a.point && a.point <= a.ci_hi);
        }
    }
}
