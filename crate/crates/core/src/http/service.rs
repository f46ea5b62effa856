use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::client::{InstallResponse, PublishResponse, SearchHit, SearchPage};
use super::{Request, Response, Transport, TransportError, PAYMENT_PROOF_HEADER};
use crate::clock::{Clock, Timestamp, MS_PER_DAY};
use crate::distill::SkillPackage;
use crate::econ::{
    distribute_contributor_share, price_install, split_fee, CostModel, EntryKind, FeeSchedule, FeeSplit, Ledger,
    LedgerEntry, Micros, NewEntry,
};
use crate::index::{validate_for_publish, IndexError, Lifecycle, Registry, ScoringWeights, SkillRecord};
use crate::orchestrator::{IntentQuery, Orchestrator, ResolveError};
use crate::pay402::{PayError, PaymentEnvelope, PaymentGate, PaymentTerms};
use crate::trust::Outcome;

pub const PLATFORM: &str = "platform";
pub const TREASURY: &str = "treasury";
pub const MARKETPLACE: &str = "marketplace";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    /// `f_search` is charged per query; `f_install` is the base install
    /// price fed into dynamic pricing.
    pub fees: FeeSchedule,
    pub cost_model: CostModel,
    pub split: FeeSplit,
    pub weights: ScoringWeights,
    pub default_k: usize,
    pub maintainer_window_ms: i64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            fees: FeeSchedule { f_search: Micros(1_000), f_install: Micros(10_000), f_exec: None },
            cost_model: CostModel::default(),
            split: FeeSplit::default(),
            weights: ScoringWeights::default(),
            default_k: 5,
            maintainer_window_ms: 90 * MS_PER_DAY,
        }
    }
}

/// The registry's HTTP surface.
pub struct RegistryService {
    pub registry: Arc<Registry>,
    pub ledger: Arc<Ledger>,
    pub gate: Arc<PaymentGate>,
    pub clock: Arc<dyn Clock>,
    pub config: ServiceConfig,
}

#[derive(Debug, Deserialize)]
struct Feedback {
    endpoint: String,
    outcome: Outcome,
}

fn pay_error(e: &PayError) -> Response {
    let code = match e {
        PayError::BadSignature => "bad_signature",
        PayError::Expired => "expired",
        PayError::Replay => "replay",
        PayError::AmountMismatch { .. } => "amount_mismatch",
        PayError::UnknownTerms | PayError::TermsMismatch => "unknown_terms",
        PayError::MalformedHeader(_) => "malformed_proof",
        _ => "payment_failed",
    };
    let status = if matches!(e, PayError::Ledger(_) | PayError::Io(_)) { 500 } else { 402 };
    Response::error(status, code, e.to_string())
}

fn resource_of(req: &Request) -> String {
    match req.url.query() {
        Some(q) => format!("{}?{q}", req.url.path()),
        None => req.url.path().to_owned(),
    }
}

impl RegistryService {
    pub fn new(
        registry: Arc<Registry>,
        ledger: Arc<Ledger>,
        gate: Arc<PaymentGate>,
        clock: Arc<dyn Clock>,
        config: ServiceConfig,
    ) -> Self {
        RegistryService { registry, ledger, gate, clock, config }
    }

    pub fn install_price(&self, rec: &SkillRecord, now: Timestamp) -> Micros {
        price_install(rec.reliability, rec.freshness(now), rec.demand(now), &self.config.cost_model, self.config.fees.f_install)
    }

    /// Runs the 402 exchange for `fee`. `Ok(None)` means the resource is free,
    /// `Ok(Some(entries))` that payment settled, `Err` the response to send.
    fn collect(
        &self,
        req: &Request,
        fee: Micros,
        now: Timestamp,
        entries: impl FnOnce(&str, &PaymentTerms) -> Vec<NewEntry>,
    ) -> Result<Option<Vec<LedgerEntry>>, Response> {
        if fee.is_zero() {
            return Ok(None);
        }
        let resource = resource_of(req);
        let Some(header) = req.header(PAYMENT_PROOF_HEADER) else {
            let terms = self.gate.challenge(&resource, fee, now).expect("non-zero fee is gated");
            return Err(Response::json(402, &terms));
        };
        let env = PaymentEnvelope::from_header(header).map_err(|e| pay_error(&e))?;
        if env.terms.resource != resource {
            return Err(Response::error(402, "wrong_resource", "terms were issued for another resource"));
        }
        // entries are priced from the issued terms, not a fresh quote
        let batch = entries(&env.proof.payer, &env.terms);
        self.gate
            .verify_and_settle(&env.proof, &env.terms, &self.ledger, batch, now)
            .map(Some)
            .map_err(|e| pay_error(&e))
    }

    fn search(&self, req: &Request, now: Timestamp) -> Response {
        let Some(q) = req.query("q").filter(|q| !q.trim().is_empty()) else {
            return Response::error(400, "bad_request", "missing q");
        };
        let k = match req.query("k").map(|k| k.parse::<usize>()) {
            None => self.config.default_k,
            Some(Ok(k)) if k >= 1 => k,
            _ => return Response::error(400, "bad_request", "k must be a positive integer"),
        };
        let domain = req.query("domain");
        let fee = self.config.fees.f_search;
        let receipt = match self.collect(req, fee, now, |payer, t| {
            vec![NewEntry::new(now, EntryKind::Tier3, payer, PLATFORM, t.amount, format!("search:{}", t.nonce))]
        }) {
            Ok(r) => r.unwrap_or_default(),
            Err(resp) => return resp,
        };
        let results = match self.registry.search_filtered(&q, k, &self.config.weights, now, domain.as_deref()) {
            Ok(r) => r,
            Err(IndexError::EmptyIndex) => Vec::new(),
            Err(e) => return Response::error(400, "bad_request", e.to_string()),
        };
        let hits = results
            .into_iter()
            .filter_map(|r| {
                let rec = self.registry.get(&r.id)?;
                Some(SearchHit {
                    install_price: self.install_price(&rec, now),
                    endpoints: rec.endpoints.iter().map(|e| e.key().0).collect(),
                    tier2_fee: rec.tier2_fee,
                    result: r,
                })
            })
            .collect();
        Response::json(200, &SearchPage { hits, receipt })
    }

    /// Tier1 charge plus its payouts, as one batch.
    fn install_entries(&self, rec: &SkillRecord, payer: &str, fee: Micros, now: Timestamp) -> Vec<NewEntry> {
        let reference = rec.id.clone();
        let mut out = vec![NewEntry::new(now, EntryKind::Tier1, payer, MARKETPLACE, fee, reference.clone())];
        let parts = split_fee(fee, &self.config.split).expect("service split is validated at startup");
        let mut payout = |payee: &str, amount: Micros, tag: &str| {
            if !amount.is_zero() {
                out.push(NewEntry::new(now, EntryKind::Payout, MARKETPLACE, payee, amount, format!("{reference}#{tag}")));
            }
        };
        match distribute_contributor_share(parts.contributors, &rec.attributions) {
            Ok(p) => p.iter().for_each(|(c, a)| payout(c, *a, "C")),
            Err(_) => payout(TREASURY, parts.contributors, "C"),
        }
        let recent = rec.recent_contributors(now, self.config.maintainer_window_ms);
        match distribute_contributor_share(parts.maintainers, &recent) {
            Ok(p) => p.iter().for_each(|(c, a)| payout(c, *a, "M")),
            Err(_) => payout(TREASURY, parts.maintainers, "M"),
        }
        payout(PLATFORM, parts.infrastructure, "I");
        payout(TREASURY, parts.treasury, "T");
        out
    }

    fn install(&self, req: &Request, id: &str, now: Timestamp) -> Response {
        let Some(rec) = self.registry.get(id) else {
            return Response::error(404, "not_found", format!("no skill {id}"));
        };
        if rec.lifecycle == Lifecycle::Disabled {
            return Response::error(410, "disabled", "skill is disabled pending re-verification");
        }
        let fee = self.install_price(&rec, now);
        let receipt = match self.collect(req, fee, now, |payer, t| self.install_entries(&rec, payer, t.amount, now)) {
            Ok(r) => r.unwrap_or_default(),
            Err(resp) => return resp,
        };
        let _ = self.registry.record_install(&rec.id, now);
        Response::json(
            200,
            &InstallResponse {
                record_id: rec.id.clone(),
                price: receipt.first().map(|e| e.amount).unwrap_or(fee),
                package: rec.package(),
                tier2_fee: rec.tier2_fee,
                receipt,
            },
        )
    }

    fn publish(&self, req: &Request, now: Timestamp) -> Response {
        let Some(pkg) = req.body.as_deref().and_then(|b| serde_json::from_slice::<SkillPackage>(b).ok()) else {
            return Response::error(400, "bad_request", "body must be a skill package");
        };
        let report = match validate_for_publish(&pkg) {
            Ok(r) => r,
            Err(IndexError::ValidationFailed(f)) => {
                return Response::json(422, &json!({"error": "validation_failed", "failures": f}))
            }
            Err(e) => return Response::error(400, "bad_request", e.to_string()),
        };
        match self.registry.publish(&pkg, &report, now) {
            Ok(o) => Response::json(
                if o.merged { 200 } else { 201 },
                &PublishResponse {
                    record_id: o.record.id.clone(),
                    merged: o.merged,
                    delta_score: o.delta_score,
                    changed_lines: o.delta.changed_lines(),
                    caveats: report.caveats,
                },
            ),
            Err(IndexError::ValidationFailed(f)) => Response::json(422, &json!({"error": "validation_failed", "failures": f})),
            Err(e) => Response::error(500, "publish_failed", e.to_string()),
        }
    }

    fn feedback(&self, req: &Request, id: &str, now: Timestamp) -> Response {
        let Some(fb) = req.body.as_deref().and_then(|b| serde_json::from_slice::<Feedback>(b).ok()) else {
            return Response::error(400, "bad_request", "body must be {endpoint, outcome}");
        };
        match self.registry.record_execution(id, &fb.endpoint, fb.outcome, now) {
            Ok(rel) => Response::json(200, &json!({"record_id": id, "reliability": rel})),
            Err(IndexError::NotFound(_)) => Response::error(404, "not_found", format!("no skill {id}")),
            Err(e) => Response::error(500, "feedback_failed", e.to_string()),
        }
    }

    pub fn handle(&self, req: &Request) -> Response {
        let now = self.clock.now();
        let segs: Vec<&str> = req.url.path().trim_matches('/').split('/').collect();
        match (req.method.as_str(), segs.as_slice()) {
            ("GET", ["v1", "skills", "search"]) => self.search(req, now),
            ("GET", ["v1", "skills", id, "install"]) => self.install(req, id, now),
            ("POST", ["v1", "skills", id, "feedback"]) => self.feedback(req, id, now),
            ("GET", ["v1", "skills", id]) => match self.registry.get(id) {
                Some(rec) => Response::json(200, &*rec),
                None => Response::error(404, "not_found", format!("no skill {id}")),
            },
            ("POST", ["v1", "skills"]) => self.publish(req, now),
            ("GET", ["v1", "health"]) => Response::json(200, &json!({"records": self.registry.len()})),
            (_, ["v1", "skills", ..]) => Response::error(405, "method_not_allowed", req.method.clone()),
            _ => Response::error(404, "not_found", req.url.path().to_owned()),
        }
    }

    pub fn balances(&self) -> BTreeMap<String, i128> {
        self.ledger.balances()
    }
}

impl Transport for RegistryService {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        Ok(self.handle(req))
    }
}

/// The agent-local API: `POST /v1/intent/resolve`.
pub struct AgentService {
    pub orchestrator: Arc<Orchestrator>,
}

impl AgentService {
    pub fn new(orchestrator: Arc<Orchestrator>) -> Self {
        AgentService { orchestrator }
    }

    pub fn handle(&self, req: &Request) -> Response {
        match (req.method.as_str(), req.url.path()) {
            ("POST", "/v1/intent/resolve") => {
                let Some(q) = req.body.as_deref().and_then(|b| serde_json::from_slice::<IntentQuery>(b).ok()) else {
                    return Response::error(400, "bad_request", "body must be an intent query");
                };
                match self.orchestrator.resolve_intent(&q) {
                    Ok(r) => Response::json(200, &r),
                    Err(e @ ResolveError::InvalidIntent(_)) => Response::error(400, "bad_request", e.to_string()),
                    Err(e @ ResolveError::PaymentRefused(_)) => Response::error(402, "payment_refused", e.to_string()),
                    Err(e) => Response::error(502, "unresolvable", e.to_string()),
                }
            }
            (_, "/v1/intent/resolve") => Response::error(405, "method_not_allowed", req.method.clone()),
            _ => Response::error(404, "not_found", req.url.path().to_owned()),
        }
    }
}

impl Transport for AgentService {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        Ok(self.handle(req))
    }
}
