use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::{Timestamp, MS_PER_DAY};
use crate::distill::{EndpointKey, EndpointTemplate, SkillPackage};
use crate::econ::{DeltaCommit, Micros, RouteSnapshot};
use crate::sha256_hex;
use crate::trust::{freshness_between, ReliabilityStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerificationStatus {
    Unverified,
    Verified,
    DriftFlagged,
}

impl VerificationStatus {
    /// Scoring component.
    pub fn score(self) -> f64 {
        match self {
            VerificationStatus::Verified => 1.0,
            VerificationStatus::DriftFlagged => 0.5,
            VerificationStatus::Unverified => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VerificationStatus::Unverified => "unverified",
            VerificationStatus::Verified => "verified",
            VerificationStatus::DriftFlagged => "drift-flagged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lifecycle {
    Active,
    Deprecated,
    Disabled,
}

impl Lifecycle {
    pub fn as_str(self) -> &'static str {
        match self {
            Lifecycle::Active => "active",
            Lifecycle::Deprecated => "deprecated",
            Lifecycle::Disabled => "disabled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LifecycleEvent {
    LowReliabilityWarning,
    ConfirmedFailure,
    ReverifiedOk,
}

/// active -> deprecated on a warning, anything -> disabled on a confirmed
/// failure, deprecated/disabled -> active on re-verification. Everything else
/// is a no-op.
pub fn lifecycle_transition(state: Lifecycle, event: LifecycleEvent) -> Lifecycle {
    use Lifecycle::*;
    use LifecycleEvent::*;
    match (state, event) {
        (Active, LowReliabilityWarning) => Deprecated,
        (_, ConfirmedFailure) => Disabled,
        (Deprecated | Disabled, ReverifiedOk) => Active,
        (s, _) => s,
    }
}

/// Per-endpoint health inside a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointHealth {
    pub stats: ReliabilityStats,
    pub drift_flagged: bool,
    pub last_verified_at: Timestamp,
}

impl EndpointHealth {
    pub fn new(at: Timestamp) -> Self {
        EndpointHealth { stats: ReliabilityStats::default(), drift_flagged: false, last_verified_at: at }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub id: String,
    pub domain: String,
    pub endpoints: Vec<EndpointTemplate>,
    pub manifest_text: String,
    pub embedding: Vec<f32>,
    pub reliability: f64,
    pub stats: ReliabilityStats,
    pub endpoint_health: BTreeMap<String, EndpointHealth>,
    pub last_verified_at: Timestamp,
    pub verification_status: VerificationStatus,
    pub lifecycle: Lifecycle,
    pub attributions: BTreeMap<String, f64>,
    #[serde(default)]
    pub commits: Vec<DeltaCommit>,
    pub tier2_opt_in: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier2_fee: Option<Micros>,
    #[serde(default)]
    pub installs: Vec<Timestamp>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub caveats: Vec<String>,
}

pub fn record_id(domain: &str) -> String {
    format!("sk_{}", &sha256_hex(domain.to_ascii_lowercase().as_bytes())[..16])
}

impl SkillRecord {
    pub fn endpoint(&self, key: &str) -> Option<&EndpointTemplate> {
        self.endpoints.iter().find(|e| e.key().0 == key)
    }

    pub fn freshness(&self, now: Timestamp) -> f64 {
        freshness_between(self.last_verified_at, now)
    }

    /// Installs in the trailing 30 days.
    pub fn demand(&self, now: Timestamp) -> u64 {
        self.installs.iter().filter(|t| now - **t <= 30 * MS_PER_DAY && **t <= now).count() as u64
    }

    pub fn snapshot(&self) -> RouteSnapshot {
        RouteSnapshot { lines: self.package().schema_lines(), embedding: self.embedding.clone() }
    }

    /// Publishable package view of the record.
    pub fn package(&self) -> SkillPackage {
        SkillPackage {
            domain: self.domain.clone(),
            endpoints: self.endpoints.clone(),
            manifest_text: self.manifest_text.clone(),
            auth_local: BTreeMap::<EndpointKey, _>::new(),
            contributor: self.commits.first().map(|c| c.contributor.clone()).unwrap_or_default(),
            created_at: self.created_at,
        }
    }

    pub(crate) fn refresh_reliability(&mut self) {
        self.reliability = self.stats.reliability();
    }

    /// Contributors with a scored commit in the trailing window, weighted by
    /// their delta in that window.
    pub fn recent_contributors(&self, now: Timestamp, window_ms: i64) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for c in self.commits.iter().filter(|c| c.score > 0.0 && now - c.at <= window_ms) {
            *out.entry(c.contributor.clone()).or_default() += c.score;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Lifecycle::*;
    use LifecycleEvent::*;

    #[test]
    fn transitions() {
        assert_eq!(lifecycle_transition(Active, LowReliabilityWarning), Deprecated);
        assert_eq!(lifecycle_transition(Disabled, ReverifiedOk), Active);
        assert_eq!(lifecycle_transition(Deprecated, LowReliabilityWarning), Deprecated);
        assert_eq!(lifecycle_transition(Deprecated, ReverifiedOk), Active);
        assert_eq!(lifecycle_transition(Active, ConfirmedFailure), Disabled);
        assert_eq!(lifecycle_transition(Deprecated, ConfirmedFailure), Disabled);
        assert_eq!(lifecycle_transition(Active, ReverifiedOk), Active);
        assert_eq!(lifecycle_transition(Disabled, LowReliabilityWarning), Disabled);
    }

    #[test]
    fn ids_are_stable() {
        assert_eq!(record_id("Shop.Example.com"), record_id("shop.example.com"));
        assert!(record_id("a").starts_with("sk_"));
        assert_eq!(record_id("a").len(), 19);
    }
}
