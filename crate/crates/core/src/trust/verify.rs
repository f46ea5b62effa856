use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{detect_drift, DriftReport, Outcome};
use crate::clock::{Clock, Timestamp, MS_PER_HOUR};
use crate::distill::{infer_value, EndpointTemplate, ParamKind, ResponseShape, ScalarKind};
use crate::http::{Request, Transport, TransportError};
use crate::index::{EndpointHealth, LifecycleEvent, Registry, RegistryEvent, VerificationStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationConfig {
    pub cadence_ms: i64,
    pub stale_after_ms: i64,
    pub deprecate_after: u64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig { cadence_ms: 6 * MS_PER_HOUR, stale_after_ms: 24 * MS_PER_HOUR, deprecate_after: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeOutcome {
    /// 2xx and no critical drift.
    Ok,
    /// 2xx but the body no longer matches the documented schema.
    Drift,
    /// Any other status.
    HttpError,
    Timeout,
    Unreachable,
    /// 401/403: the probe carried no credentials. Not counted either way.
    AuthRequired,
}

impl ProbeOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeOutcome::Ok => "ok",
            ProbeOutcome::Drift => "drift",
            ProbeOutcome::HttpError => "http-error",
            ProbeOutcome::Timeout => "timeout",
            ProbeOutcome::Unreachable => "unreachable",
            ProbeOutcome::AuthRequired => "auth-required",
        }
    }

    /// Reliability outcome, if this probe counts.
    pub fn reliability(self) -> Option<Outcome> {
        match self {
            ProbeOutcome::Ok => Some(Outcome::Success),
            ProbeOutcome::Timeout => Some(Outcome::Timeout),
            ProbeOutcome::AuthRequired => None,
            _ => Some(Outcome::Failure),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub outcome: ProbeOutcome,
    pub status: Option<u16>,
    pub drift: Option<DriftReport>,
}

fn sample_value(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Integer => "1",
        ParamKind::Uuid => "00000000-0000-4000-8000-000000000000",
        ParamKind::Opaque => "sample1",
    }
}

/// GET request for a safe endpoint, from its recorded example when there is
/// one, otherwise with placeholder parameter values. `None` for unsafe
/// endpoints.
pub fn build_probe_request(domain: &str, ep: &EndpointTemplate) -> Option<Request> {
    if !ep.safe || ep.method != "GET" {
        return None;
    }
    let base = format!("https://{domain}");
    if let Some(ex) = &ep.example_request {
        if let Ok(url) = Url::parse(&format!("{base}{ex}")) {
            return Some(Request::get(url));
        }
    }
    let mut path = ep.path_template.clone();
    for p in &ep.path_params {
        path = path.replace(&format!("{{{}}}", p.name), sample_value(p.kind));
    }
    let mut url = Url::parse(&format!("{base}{path}")).ok()?;
    {
        let mut q = url.query_pairs_mut();
        for (name, qp) in ep.query_schema.iter().filter(|(_, q)| q.required) {
            let v = match qp.kind {
                ScalarKind::Number => "1",
                ScalarKind::Boolean => "true",
                _ => "x",
            };
            q.append_pair(name, v);
        }
    }
    if url.query() == Some("") {
        url.set_query(None);
    }
    Some(Request::get(url))
}

pub fn probe_endpoint(t: &dyn Transport, domain: &str, ep: &EndpointTemplate) -> ProbeResult {
    let Some(req) = build_probe_request(domain, ep) else {
        return ProbeResult { outcome: ProbeOutcome::HttpError, status: None, drift: None };
    };
    let resp = match t.send(&req) {
        Ok(r) => r,
        Err(TransportError::Timeout) => return ProbeResult { outcome: ProbeOutcome::Timeout, status: None, drift: None },
        Err(TransportError::Unreachable(_)) => {
            return ProbeResult { outcome: ProbeOutcome::Unreachable, status: None, drift: None }
        }
    };
    let status = Some(resp.status);
    if resp.status == 401 || resp.status == 403 {
        return ProbeResult { outcome: ProbeOutcome::AuthRequired, status, drift: None };
    }
    if !resp.is_success() {
        return ProbeResult { outcome: ProbeOutcome::HttpError, status, drift: None };
    }
    let live = match serde_json::from_slice(&resp.body) {
        Ok(v) => infer_value(&v),
        Err(_) if resp.body.is_empty() => ResponseShape::Null,
        Err(_) => ResponseShape::String,
    };
    let drift = detect_drift(&ep.response_schema, &live);
    let outcome = if drift.critical { ProbeOutcome::Drift } else { ProbeOutcome::Ok };
    ProbeResult { outcome, status, drift: Some(drift) }
}

/// One probe and what it caused.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationOutcome {
    pub record_id: String,
    pub endpoint: String,
    pub probe: ProbeResult,
    pub staleness_ms: i64,
    pub transitions: Vec<LifecycleEvent>,
}

/// Probes every safe endpoint in the registry, stalest first, and folds the
/// results into reliability, verification status and lifecycle.
pub fn verification_pass(
    registry: &Registry,
    prober: &dyn Transport,
    cfg: &VerificationConfig,
    now: Timestamp,
) -> Vec<VerificationOutcome> {
    let snap = registry.snapshot();
    let mut queue: Vec<(i64, String, EndpointTemplate, String)> = Vec::new();
    for rec in snap.values() {
        for ep in rec.endpoints.iter().filter(|e| e.safe) {
            let key = ep.key().0;
            let since = rec.endpoint_health.get(&key).map(|h| h.last_verified_at).unwrap_or(rec.last_verified_at);
            queue.push((now - since, rec.id.clone(), ep.clone(), rec.domain.clone()));
        }
    }
    // stale beyond the threshold first, then by staleness, then stable ids
    queue.sort_by(|a, b| {
        let sa = a.0 > cfg.stale_after_ms;
        let sb = b.0 > cfg.stale_after_ms;
        sb.cmp(&sa).then(b.0.cmp(&a.0)).then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.key().cmp(&b.2.key()))
    });

    let mut out = Vec::new();
    let mut touched: BTreeMap<String, (usize, usize)> = BTreeMap::new(); // ok, failed
    for (staleness, id, ep, domain) in queue {
        let probe = probe_endpoint(prober, &domain, &ep);
        let key = ep.key().0;
        let mut transitions = Vec::new();
        let counted = probe.outcome.reliability();
        let update = registry.update(&id, |rec| {
            let h = rec.endpoint_health.entry(key.clone()).or_insert_with(|| EndpointHealth::new(now));
            let was_flagged = h.drift_flagged;
            if let Some(o) = counted {
                h.stats.record(o, now);
                rec.stats.record(o, now);
            }
            let mut events = Vec::new();
            match probe.outcome {
                ProbeOutcome::Ok => {
                    h.drift_flagged = false;
                    h.last_verified_at = now;
                }
                ProbeOutcome::AuthRequired => {}
                _ => {
                    if probe.outcome == ProbeOutcome::Drift {
                        h.drift_flagged = true;
                    }
                    if was_flagged {
                        events.push(LifecycleEvent::ConfirmedFailure);
                    }
                }
            }
            if h.stats.consecutive_failures >= cfg.deprecate_after {
                events.push(LifecycleEvent::LowReliabilityWarning);
            }
            if probe.outcome == ProbeOutcome::Drift {
                rec.verification_status = VerificationStatus::DriftFlagged;
            }
            rec.refresh_reliability();
            events
        });
        if let Ok(events) = update {
            for ev in events {
                let reason = format!("verification of {key}: {}", probe.outcome.as_str());
                if let Ok((from, to)) = registry.apply_lifecycle(&id, ev, now, &reason) {
                    if from != to {
                        transitions.push(ev);
                    }
                }
            }
        }
        let _ = registry.log_event(RegistryEvent::Verification {
            at: now,
            record_id: id.clone(),
            endpoint: key.clone(),
            outcome: probe.outcome.as_str().to_owned(),
            drift: probe.drift.as_ref().map(|d| d.summary()).unwrap_or_default(),
        });
        let slot = touched.entry(id.clone()).or_default();
        match probe.outcome {
            ProbeOutcome::Ok => slot.0 += 1,
            ProbeOutcome::AuthRequired => {}
            _ => slot.1 += 1,
        }
        out.push(VerificationOutcome { record_id: id, endpoint: key, probe, staleness_ms: staleness, transitions });
    }

    // a record whose probes all came back clean is verified again
    for (id, (ok, failed)) in touched {
        if ok == 0 || failed > 0 {
            continue;
        }
        let clean = registry.update(&id, |rec| {
            if rec.endpoint_health.values().any(|h| h.drift_flagged) {
                return false;
            }
            rec.verification_status = VerificationStatus::Verified;
            rec.last_verified_at = now;
            true
        });
        if clean.unwrap_or(false) {
            if let Ok((from, to)) = registry.apply_lifecycle(&id, LifecycleEvent::ReverifiedOk, now, "clean verification") {
                if from != to {
                    if let Some(o) = out.iter_mut().rev().find(|o| o.record_id == id) {
                        o.transitions.push(LifecycleEvent::ReverifiedOk);
                    }
                }
            }
        }
    }
    out
}

/// Runs a pass whenever the cadence has elapsed on the injected clock.
#[derive(Debug, Clone)]
pub struct VerificationScheduler {
    pub config: VerificationConfig,
    last_run: Option<Timestamp>,
}

impl VerificationScheduler {
    pub fn new(config: VerificationConfig) -> Self {
        VerificationScheduler { config, last_run: None }
    }

    pub fn last_run(&self) -> Option<Timestamp> {
        self.last_run
    }

    pub fn due(&self, now: Timestamp) -> bool {
        self.last_run.is_none_or(|t| now - t >= self.config.cadence_ms)
    }

    pub fn tick(
        &mut self,
        registry: &Registry,
        prober: &dyn Transport,
        now: Timestamp,
    ) -> Option<Vec<VerificationOutcome>> {
        if !self.due(now) {
            return None;
        }
        self.last_run = Some(now);
        Some(verification_pass(registry, prober, &self.config, now))
    }
}

/// Background verifier for long-running servers. Polls the clock every
/// `poll` and runs a pass when due; stops when `stop` is set.
pub fn spawn_verifier(
    registry: Arc<Registry>,
    prober: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    config: VerificationConfig,
    poll: Duration,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let mut sched = VerificationScheduler::new(config);
        while !stop.load(Ordering::Relaxed) {
            sched.tick(&registry, prober.as_ref(), clock.now());
            std::thread::sleep(poll);
        }
    })
}
