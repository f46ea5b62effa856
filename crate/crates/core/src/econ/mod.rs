//! Economics: rediscovery cost, the adoption condition, tiered fees, exact
//! fee splitting, delta-based attribution, install pricing and amortisation.

mod attribution;
mod ledger;
mod split;

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attribution::{changed_lines, cosine, delta_score, DeltaCommit, DeltaParams, RouteSnapshot};
pub use ledger::{EntryKind, Ledger, LedgerEntry, LedgerError, NewEntry};
pub use split::{distribute_contributor_share, split_fee, FeeSplit, SplitAmounts};

#[derive(Debug, Error, PartialEq)]
pub enum EconError {
    #[error("cached cost {cached} is not below the baseline {baseline}; never amortizes")]
    Unamortizable { cached: f64, baseline: f64 },
    #[error("no contributor has a positive delta score")]
    NoAttributions,
    #[error("fee split ratios must be non-negative and sum to 1 (got {0})")]
    InvalidSplit(f64),
}

/// Money in integer micro-dollars.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Micros(pub u64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    /// Rounds to the nearest micro-dollar.
    pub fn from_dollars(d: f64) -> Self {
        Micros((d * 1e6).round().max(0.0) as u64)
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl Sum for Micros {
    fn sum<I: Iterator<Item = Micros>>(iter: I) -> Micros {
        Micros(iter.map(|m| m.0).sum())
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Expected cost of rediscovering a route with a browser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_latency: Micros,
    pub c_compute: Micros,
    pub c_tokens: Micros,
    pub c_retry: Micros,
    pub p_fail: f64,
}

impl CostModel {
    pub const ZERO: CostModel = CostModel {
        c_latency: Micros(0),
        c_compute: Micros(0),
        c_tokens: Micros(0),
        c_retry: Micros(0),
        p_fail: 0.0,
    };

    /// Low end of the browser-rediscovery cost table: runtime $0.02, tokens
    /// $0.04, expected retries $0.04. Totals $0.10.
    pub fn browser_low() -> Self {
        CostModel {
            c_latency: Micros::ZERO,
            c_compute: Micros(20_000),
            c_tokens: Micros(40_000),
            c_retry: Micros(80_000),
            p_fail: 0.5,
        }
    }

    /// High end: runtime $0.05, tokens $0.35, expected retries $0.13. Totals
    /// $0.53.
    pub fn browser_high() -> Self {
        CostModel {
            c_latency: Micros::ZERO,
            c_compute: Micros(50_000),
            c_tokens: Micros(350_000),
            c_retry: Micros(260_000),
            p_fail: 0.5,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.p_fail)
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::browser_low()
    }
}

/// `c_latency + c_compute + c_tokens + p_fail * c_retry`, the last term
/// rounded to the nearest micro-dollar.
pub fn rediscovery_cost(m: &CostModel) -> Micros {
    let retry = (m.p_fail.clamp(0.0, 1.0) * m.c_retry.0 as f64).round() as u64;
    m.c_latency + m.c_compute + m.c_tokens + Micros(retry)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeeSchedule {
    /// Tier 3, per query.
    pub f_search: Micros,
    /// Tier 1, once per install.
    pub f_install: Micros,
    /// Tier 2, per execution on opt-in routes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_exec: Option<Micros>,
}

impl FeeSchedule {
    /// Upper ends of the published fee ranges (search $0.005, install $0.02,
    /// per-execution $0.01).
    pub fn table_high() -> Self {
        FeeSchedule { f_search: Micros(5_000), f_install: Micros(20_000), f_exec: Some(Micros(10_000)) }
    }

    pub fn total(&self, n_exec: u64) -> u128 {
        self.f_search.0 as u128
            + self.f_install.0 as u128
            + n_exec as u128 * self.f_exec.unwrap_or_default().0 as u128
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adoption {
    UseGraph,
    DefectToBrowser,
}

/// Use the graph only when `f_search + f_install + n * f_exec` is strictly
/// below the rediscovery cost. Equality defects.
pub fn adoption_decision(fees: &FeeSchedule, n_exec: u64, m: &CostModel) -> Adoption {
    if fees.total(n_exec) < rediscovery_cost(m).0 as u128 {
        Adoption::UseGraph
    } else {
        Adoption::DefectToBrowser
    }
}

/// Multipliers: reliability and freshness each scale into [0.5, 1], demand
/// (recent installs) into [1, 2]. The result is clamped to 90% of the
/// rediscovery cost, so it is always strictly below it when that cost is
/// positive.
pub fn price_install(
    reliability: f64,
    freshness: f64,
    demand: u64,
    m: &CostModel,
    base: Micros,
) -> Micros {
    let r = reliability.clamp(0.0, 1.0);
    let f = freshness.clamp(0.0, 1.0);
    let d = (demand as f64 / 100.0).min(1.0);
    let fee = base.0 as f64 * (0.5 + 0.5 * r) * (0.5 + 0.5 * f) * (1.0 + d);
    let ceiling = (0.9 * rediscovery_cost(m).0 as f64).floor();
    Micros(fee.min(ceiling).floor().max(0.0) as u64)
}

/// Uses needed before discovery-then-cache beats always browsing.
///
/// Returns the smallest `n` with `cold + n * cached <= (n + 1) * baseline`,
/// i.e. `ceil((cold - baseline) / (baseline - cached))`, and 0 when the cold
/// run is already no slower than the baseline.
pub fn breakeven(cold_ms: f64, cached_ms: f64, baseline_ms: f64) -> Result<u64, EconError> {
    if cached_ms >= baseline_ms {
        return Err(EconError::Unamortizable { cached: cached_ms, baseline: baseline_ms });
    }
    if cold_ms <= baseline_ms {
        return Ok(0);
    }
    Ok(((cold_ms - baseline_ms) / (baseline_ms - cached_ms)).ceil() as u64)
}
