//! Shared route graph.
//!
//! Captured browser traffic is filtered and distilled into callable endpoint
//! templates, packaged as skills, and published to a registry that ranks them
//! by a composite of semantic similarity, reliability, freshness and
//! verification status. Agents resolve intents through a three-path chain:
//! local route cache, paid graph lookup (HTTP 402 micropayments), and
//! discovery fallback with publish-back.
//!
//! Everything runs against an injected clock, which lets [`simnet`] replay the
//! whole system deterministically on virtual time.

pub mod capture;
pub mod clock;
pub mod distill;
pub mod econ;
pub mod http;
pub mod index;
pub mod orchestrator;
pub mod par;
pub mod pay402;
pub mod simnet;
pub mod trust;

mod canonical;

pub use canonical::{canonical_json, sha256_hex};
pub(crate) use canonical::write_atomic;
pub use clock::{Clock, SimClock, SystemClock, Timestamp, MS_PER_DAY, MS_PER_HOUR};
pub use econ::Micros;
