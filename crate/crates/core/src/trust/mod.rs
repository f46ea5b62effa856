//! Reliability tracking, freshness decay, schema-drift detection and the
//! periodic verification loop.

mod drift;
mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;

pub use drift::{detect_drift, DriftReport, TypeChange};
pub use verify::{
    build_probe_request, probe_endpoint, spawn_verifier, verification_pass, ProbeOutcome, ProbeResult,
    VerificationConfig, VerificationOutcome, VerificationScheduler,
};

#[derive(Debug, Error, PartialEq)]
pub enum TrustError {
    #[error("age must be non-negative, got {0} days")]
    NegativeAge(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReliabilityStats {
    pub successes: u64,
    pub failures: u64,
    pub timeouts: u64,
    pub consecutive_failures: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_outcome_at: Option<Timestamp>,
}

impl ReliabilityStats {
    pub fn attempts(&self) -> u64 {
        self.successes + self.failures + self.timeouts
    }

    /// Laplace-smoothed success rate; 0.5 with no observations.
    pub fn reliability(&self) -> f64 {
        (self.successes as f64 + 1.0) / (self.attempts() as f64 + 2.0)
    }

    pub fn record(&mut self, outcome: Outcome, at: Timestamp) {
        match outcome {
            Outcome::Success => {
                self.successes += 1;
                self.consecutive_failures = 0;
            }
            Outcome::Failure => {
                self.failures += 1;
                self.consecutive_failures += 1;
            }
            Outcome::Timeout => {
                self.timeouts += 1;
                self.consecutive_failures += 1;
            }
        }
        self.last_outcome_at = Some(at);
    }
}

pub fn record_outcome(stats: &ReliabilityStats, outcome: Outcome, at: Timestamp) -> (ReliabilityStats, f64) {
    let mut s = *stats;
    s.record(outcome, at);
    (s, s.reliability())
}

/// `1 / (1 + d/30)` for `d` days since the last update.
pub fn freshness(days: f64) -> Result<f64, TrustError> {
    if days.is_nan() || days < 0.0 {
        return Err(TrustError::NegativeAge(days));
    }
    Ok(1.0 / (1.0 + days / 30.0))
}

/// Freshness between two instants, clamping clock skew to zero age.
pub fn freshness_between(then: Timestamp, now: Timestamp) -> f64 {
    let days = (now - then).max(0) as f64 / crate::clock::MS_PER_DAY as f64;
    freshness(days).unwrap_or(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn outcome_examples() {
        let s = ReliabilityStats::default();
        assert_eq!(s.reliability(), 0.5);
        let (s1, r) = record_outcome(&s, Outcome::Success, 1);
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s1.last_outcome_at, Some(1));
        let (s2, _) = record_outcome(&s, Outcome::Failure, 1);
        let (s3, _) = record_outcome(&s2, Outcome::Timeout, 2);
        assert_eq!(s3.consecutive_failures, 2);
        let (s4, _) = record_outcome(&s3, Outcome::Success, 3);
        assert_eq!(s4.consecutive_failures, 0);
    }

    #[test]
    fn freshness_examples() {
        assert_eq!(freshness(0.0), Ok(1.0));
        assert_eq!(freshness(30.0), Ok(0.5));
        assert_eq!(freshness(90.0), Ok(0.25));
        assert_eq!(freshness(-1.0), Err(TrustError::NegativeAge(-1.0)));
    }

    proptest! {
        #[test]
        fn freshness_strictly_decreasing(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            prop_assume!(a < b);
            let (fa, fb) = (freshness(a).unwrap(), freshness(b).unwrap());
            prop_assert!(fa > fb);
            prop_assert!(fb > 0.0 && fa <= 1.0);
        }

        #[test]
        fn reliability_stays_open_interval(history in prop::collection::vec(0u8..3, 0..500)) {
            let mut s = ReliabilityStats::default();
            for (i, h) in history.iter().enumerate() {
                let o = [Outcome::Success, Outcome::Failure, Outcome::Timeout][*h as usize];
                s.record(o, i as i64);
                prop_assert!(s.consecutive_failures <= s.failures + s.timeouts);
            }
            let r = s.reliability();
            prop_assert!(r > 0.0 && r < 1.0);
        }
    }
}
