use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::IndexError;
use crate::capture::is_method_token;
use crate::distill::{EndpointTemplate, ResponseShape, SkillPackage};
use crate::http::Transport;
use crate::trust::{probe_endpoint, ProbeOutcome};

const MAX_SCHEMA_DEPTH: usize = 32;
pub const MIN_LIVE_SUCCESS_RATE: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LiveCheck {
    pub probed: usize,
    pub succeeded: usize,
    /// Endpoint keys that answered and matched their schema.
    pub verified: Vec<String>,
}

impl LiveCheck {
    pub fn success_rate(&self) -> f64 {
        if self.probed == 0 {
            0.0
        } else {
            self.succeeded as f64 / self.probed as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub caveats: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub live: Option<LiveCheck>,
}

fn valid_host(h: &str) -> bool {
    !h.is_empty()
        && h.len() <= 253
        && h.split('.').all(|l| {
            !l.is_empty()
                && l.len() <= 63
                && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
                && !l.starts_with('-')
                && !l.ends_with('-')
        })
}

fn endpoint_failures(e: &EndpointTemplate, out: &mut Vec<String>) {
    let key = e.key();
    if !is_method_token(&e.method) {
        out.push(format!("{key}: invalid method"));
    }
    if !e.path_template.starts_with('/') {
        out.push(format!("{key}: path template must start with '/'"));
    }
    let mut names = BTreeSet::new();
    for seg in e.path_template.split('/') {
        if let Some(inner) = seg.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
            if !names.insert(inner) {
                out.push(format!("{key}: duplicate path parameter {inner}"));
            }
        } else if seg.contains('{') || seg.contains('}') {
            out.push(format!("{key}: malformed path segment {seg}"));
        }
    }
    let declared: BTreeSet<&str> = e.path_params.iter().map(|p| p.name.as_str()).collect();
    if declared != names {
        out.push(format!("{key}: path parameters do not match the template"));
    }
    if e.safe != (e.method == "GET") {
        out.push(format!("{key}: safe flag must be set exactly for GET"));
    }
    if e.description.trim().is_empty() {
        out.push(format!("{key}: empty description"));
    }
    let deep = |s: &ResponseShape| s.depth() > MAX_SCHEMA_DEPTH;
    if deep(&e.response_schema) || e.body_schema.as_ref().is_some_and(deep) {
        out.push(format!("{key}: schema nests deeper than {MAX_SCHEMA_DEPTH}"));
    }
}

/// Structural checks only.
pub fn validate_for_publish(pkg: &SkillPackage) -> Result<ValidationReport, IndexError> {
    let mut fails = Vec::new();
    if !valid_host(&pkg.domain) {
        fails.push(format!("invalid domain {:?}", pkg.domain));
    }
    if pkg.contributor.trim().is_empty() {
        fails.push("missing contributor".into());
    }
    if pkg.endpoints.is_empty() {
        fails.push("package has no endpoints".into());
    }
    let mut keys = BTreeSet::new();
    for e in &pkg.endpoints {
        if !keys.insert(e.key()) {
            fails.push(format!("{}: duplicate endpoint", e.key()));
        }
        endpoint_failures(e, &mut fails);
    }
    if !fails.is_empty() {
        return Err(IndexError::ValidationFailed(fails));
    }
    let caveats = pkg
        .endpoints
        .iter()
        .filter(|e| e.response_example.is_none() && e.response_schema != ResponseShape::Null)
        .map(|e| format!("{}: no response example", e.key()))
        .collect();
    Ok(ValidationReport { passed: true, caveats, live: None })
}

/// Structural checks, then probes every safe endpoint. Rejects when fewer
/// than half of the probes succeed or none verifies.
pub fn validate_live(pkg: &SkillPackage, transport: &dyn Transport) -> Result<ValidationReport, IndexError> {
    let mut report = validate_for_publish(pkg)?;
    let mut live = LiveCheck::default();
    for e in pkg.endpoints.iter().filter(|e| e.safe) {
        let r = probe_endpoint(transport, &pkg.domain, e);
        live.probed += 1;
        if r.outcome == ProbeOutcome::Ok {
            live.succeeded += 1;
            live.verified.push(e.key().0);
        } else {
            report.caveats.push(format!("{}: unverified ({})", e.key(), r.outcome.as_str()));
        }
    }
    if live.probed > 0 && (live.success_rate() < MIN_LIVE_SUCCESS_RATE || live.verified.is_empty()) {
        return Err(IndexError::ValidationFailed(vec![format!(
            "live check: {} of {} safe endpoints succeeded ({:.0}% < {:.0}%)",
            live.succeeded,
            live.probed,
            live.success_rate() * 100.0,
            MIN_LIVE_SUCCESS_RATE * 100.0
        )]));
    }
    for e in pkg.endpoints.iter().filter(|e| !e.safe) {
        report.caveats.push(format!("{}: unverified (not probed)", e.key()));
    }
    report.live = Some(live);
    Ok(report)
}
