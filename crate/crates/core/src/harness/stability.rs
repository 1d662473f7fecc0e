//! Stability classification of a finished run.
//!
//! The classifier looks only at the end-of-slot total backlog series after
//! warm-up. A run is *stable* when the least-squares backlog drift is under
//! `0.01` packets per slot and the final backlog stays below ten times the
//! early-window mean plus a small absolute floor (the floor keeps an
//! all-zero series from failing its own bound). It is *unstable* when the
//! drift exceeds `0.035` packets per slot — comfortably above the sampling
//! noise of the drift estimate at the horizons used here, and comfortably
//! below the smallest structural deficit the experiments probe. Everything
//! in between is reported as inconclusive rather than guessed.

use std::fmt;

/// Pinned classifier constants.
pub const STABLE_DRIFT: f64 = 0.01;
pub const UNSTABLE_DRIFT: f64 = 0.035;
pub const FINAL_OVER_EARLY: f64 = 10.0;
pub const FINAL_FLOOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityVerdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl fmt::Display for StabilityVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityVerdict::Stable => "stable",
            StabilityVerdict::Unstable => "unstable",
            StabilityVerdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub verdict: StabilityVerdict,
    /// Least-squares slope of the post-warm-up backlog, packets per slot.
    pub drift: f64,
    /// Mean backlog over the first quarter of the post-warm-up window.
    pub early_mean: f64,
    pub final_backlog: u64,
}

/// Least-squares slope of `y` against slot index.
fn slope(y: &[u64]) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    let y_mean = y.iter().map(|&v| v as f64).sum::<f64>() / nf;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (v as f64 - y_mean);
        den += dx * dx;
    }
    num / den
}

/// Classifies the backlog series of a run whose first `warmup` slots are
/// transient.
pub fn assess(series: &[u64], warmup: usize) -> StabilityReport {
    let tail = &series[warmup.min(series.len())..];
    if tail.is_empty() {
        return StabilityReport {
            verdict: StabilityVerdict::Inconclusive,
            drift: 0.0,
            early_mean: 0.0,
            final_backlog: series.last().copied().unwrap_or(0),
        };
    }
    let drift = slope(tail);
    let quarter = &tail[..tail.len().div_ceil(4)];
    let early_mean = quarter.iter().map(|&v| v as f64).sum::<f64>() / quarter.len() as f64;
    let final_backlog = *tail.last().unwrap();
    let verdict = if drift < STABLE_DRIFT
        && (final_backlog as f64) < FINAL_OVER_EARLY * early_mean + FINAL_FLOOR
    {
        StabilityVerdict::Stable
    } else if drift > UNSTABLE_DRIFT {
        StabilityVerdict::Unstable
    } else {
        StabilityVerdict::Inconclusive
    };
    StabilityReport { verdict, drift, early_mean, final_backlog }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_system_is_stable() {
        let report = assess(&vec![0; 1000], 100);
        assert_eq!(report.verdict, StabilityVerdict::Stable);
        assert_eq!(report.drift, 0.0);
    }

    #[test]
    fn linear_growth_is_unstable_with_exact_slope() {
        let series: Vec<u64> = (0..10_000).map(|i| i / 10).collect();
        let report = assess(&series, 0);
        assert_eq!(report.verdict, StabilityVerdict::Unstable);
        assert!((report.drift - 0.1).abs() < 1e-3, "drift {}", report.drift);
    }

    #[test]
    fn slow_creep_is_inconclusive() {
        // Drift of 0.02 per slot: too fast to call stable, too slow to call
        // unstable.
        let series: Vec<u64> = (0..10_000).map(|i| i / 50).collect();
        let report = assess(&series, 0);
        assert_eq!(report.verdict, StabilityVerdict::Inconclusive);
    }

    #[test]
    fn bounded_noise_is_stable() {
        // A noisy but flat series around 40 packets.
        let series: Vec<u64> = (0..10_000).map(|i| 40 + (i * 7919) % 11).collect();
        let report = assess(&series, 1000);
        assert_eq!(report.verdict, StabilityVerdict::Stable);
        assert!(report.drift.abs() < 1e-3);
    }

    #[test]
    fn warmup_transient_is_ignored() {
        // Big ramp during warm-up, flat afterwards.
        let mut series: Vec<u64> = (0..1000).map(|i| i).collect();
        series.extend(std::iter::repeat(1000).take(9000));
        let report = assess(&series, 1000);
        assert_eq!(report.verdict, StabilityVerdict::Stable);
    }
}
