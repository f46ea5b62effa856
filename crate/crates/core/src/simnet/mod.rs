//! Deterministic simulated web and agent-fleet harness.

mod fleet;
mod site;
mod web;

pub use fleet::{
    default_sites, latency_bench, run_fleet, FleetConfig, FleetError, FleetMetrics, FleetReport, LatencyProfile,
    ScheduledDrift, SimWorld, SiteLatency, StepRecord,
};
pub use site::{load_sites, DriftKind, SimEndpoint, SimPage, SimSite, SiteAuth, SiteFlags, SiteIntent, BROWSER_MARKER};
pub use web::{BrowserProfile, SimError, SimWeb};
