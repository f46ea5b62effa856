use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use super::site::{apply_drift, DriftKind, Generator, SimSite, BROWSER_MARKER};
use crate::capture::{Body, CaptureArchive, CaptureEntry};
use crate::clock::{Clock, SimClock};
use crate::distill::AuthDescriptor;
use crate::econ::{EntryKind, Ledger, NewEntry};
use crate::http::{Request, Response, Transport, TransportError, PAYMENT_PROOF_HEADER, PAYMENT_RECEIPT_HEADER};
use crate::index::{cosine, embed_text};
use crate::orchestrator::{BrowserSession, Web, WebError};
use crate::pay402::{encode_receipt, PaymentEnvelope, PaymentGate, SettlementAdapter};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("no route for {0}")]
    NotFound(String),
    #[error("{0} blocks automated clients")]
    BotBlocked(String),
}

/// Fixed browser costs in milliseconds. Page render and endpoint latency
/// belong to each site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowserProfile {
    pub launch_ms: i64,
    /// Reading the rendered page to answer an intent.
    pub extraction_ms: i64,
    /// Reverse-engineering captured traffic into a skill.
    pub analysis_ms: i64,
}

impl Default for BrowserProfile {
    fn default() -> Self {
        BrowserProfile { launch_ms: 602, extraction_ms: 500, analysis_ms: 4_200 }
    }
}

#[derive(Debug, Default)]
struct SiteState {
    drift: BTreeMap<String, Vec<DriftKind>>,
    down: BTreeSet<String>,
    secret: Option<String>,
    rotations: u64,
}

struct Hosted {
    site: SimSite,
    state: Mutex<SiteState>,
    gate: Option<PaymentGate>,
}

/// Simulated web on a virtual clock. Requests advance the clock by the
/// latency of whatever they hit.
pub struct SimWeb {
    sites: BTreeMap<String, Hosted>,
    clock: SimClock,
    pub profile: BrowserProfile,
    ledger: Option<Arc<Ledger>>,
    log: Mutex<Vec<(String, String)>>,
}

impl std::fmt::Debug for SimWeb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimWeb").field("sites", &self.sites.keys().collect::<Vec<_>>()).finish()
    }
}

fn site_ledger_party(host: &str) -> String {
    format!("site:{host}")
}

impl SimWeb {
    pub fn new(sites: Vec<SimSite>, clock: SimClock) -> Self {
        let sites = sites
            .into_iter()
            .map(|s| {
                let state = SiteState { secret: s.auth.as_ref().map(|a| a.secret.clone()), ..Default::default() };
                (s.host.to_ascii_lowercase(), Hosted { site: s, state: Mutex::new(state), gate: None })
            })
            .collect();
        SimWeb { sites, clock, profile: BrowserProfile::default(), ledger: None, log: Mutex::default() }
    }

    pub fn with_profile(mut self, profile: BrowserProfile) -> Self {
        self.profile = profile;
        self
    }

    /// Enables per-call charging on tier2 opt-in sites, settled to `ledger`.
    pub fn with_settlement(mut self, adapter: Arc<dyn SettlementAdapter>, ledger: Arc<Ledger>) -> Self {
        for h in self.sites.values_mut() {
            if h.site.flags.tier2_opt_in && !h.site.flags.tier2_fee.is_zero() {
                h.gate = Some(PaymentGate::new(adapter.clone()));
            }
        }
        self.ledger = Some(ledger);
        self
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn site(&self, host: &str) -> Option<&SimSite> {
        self.sites.get(&host.to_ascii_lowercase()).map(|h| &h.site)
    }

    pub fn sites(&self) -> impl Iterator<Item = &SimSite> {
        self.sites.values().map(|h| &h.site)
    }

    fn hosted(&self, host: &str) -> Option<&Hosted> {
        self.sites.get(&host.to_ascii_lowercase())
    }

    /// Subsequent responses from `endpoint` (key `GET /path` or bare path)
    /// carry the mutation. Returns false if there is no such endpoint.
    pub fn inject_drift(&self, host: &str, endpoint: &str, kind: DriftKind) -> bool {
        let Some(h) = self.hosted(host) else { return false };
        let Some(ep) = h.site.endpoint(endpoint) else { return false };
        h.state.lock().unwrap_or_else(|e| e.into_inner()).drift.entry(ep.key()).or_default().push(kind);
        true
    }

    pub fn clear_drift(&self, host: &str) {
        if let Some(h) = self.hosted(host) {
            h.state.lock().unwrap_or_else(|e| e.into_inner()).drift.clear();
        }
    }

    /// Makes `endpoint` answer 503 until set back.
    pub fn set_down(&self, host: &str, endpoint: &str, down: bool) -> bool {
        let Some(h) = self.hosted(host) else { return false };
        let Some(ep) = h.site.endpoint(endpoint) else { return false };
        let mut st = h.state.lock().unwrap_or_else(|e| e.into_inner());
        if down {
            st.down.insert(ep.key());
        } else {
            st.down.remove(&ep.key());
        }
        true
    }

    /// Invalidates the current credential; the browser's next login gets
    /// the new one.
    pub fn rotate_credential(&self, host: &str) -> Option<String> {
        let h = self.hosted(host)?;
        let mut st = h.state.lock().unwrap_or_else(|e| e.into_inner());
        let base = h.site.auth.as_ref()?.secret.clone();
        st.rotations += 1;
        let fresh = format!("{base}-r{}", st.rotations);
        st.secret = Some(fresh.clone());
        Some(fresh)
    }

    /// (method, url) of every request served, in order.
    pub fn requests(&self) -> Vec<(String, String)> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// What answering an intent by browsing `host` costs: launch, render,
    /// read.
    pub fn browser_cost_ms(&self, host: &str) -> Option<i64> {
        let (_, page) = self.site(host)?.landing()?;
        Some(self.profile.launch_ms + page.latency_ms + self.profile.extraction_ms)
    }

    /// Answers an intent the way a browser-only agent would, advancing the
    /// clock. Returns the elapsed milliseconds.
    pub fn browser_visit(&self, host: &str) -> Result<i64, SimError> {
        let cost = self.browser_cost_ms(host).ok_or_else(|| SimError::NotFound(host.to_owned()))?;
        self.clock.advance(cost);
        Ok(cost)
    }

    fn pick_site(&self, hint: Option<&str>, intent: &str) -> Option<&Hosted> {
        if let Some(h) = hint {
            return self.hosted(h);
        }
        let q = embed_text(intent);
        self.sites
            .values()
            .map(|h| (h, cosine(&q, &embed_text(&format!("{} {}", h.site.host, h.site.description)))))
            .filter(|(_, s)| *s > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.site.host.cmp(&a.0.site.host)))
            .map(|(h, _)| h)
    }

    /// Serves one request. The clock advances by the latency of the page or
    /// endpoint hit, or by the site's fastest endpoint for a rejection.
    pub fn serve(&self, req: &Request) -> Result<Response, SimError> {
        let host = req.url.host_str().unwrap_or_default().to_ascii_lowercase();
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push((req.method.clone(), req.url.to_string()));
        let h = self.hosted(&host).ok_or_else(|| SimError::NotFound(req.url.to_string()))?;
        let site = &h.site;
        let from_browser = req.header(BROWSER_MARKER).is_some();
        let reject_ms = site.endpoints.iter().map(|e| e.latency_ms).min().unwrap_or(0);
        if site.flags.bot_protected && !from_browser {
            self.clock.advance(reject_ms);
            return Err(SimError::BotBlocked(host));
        }
        let path = req.url.path();
        if req.method == "GET" {
            if let Some(page) = site.pages.get(path) {
                self.clock.advance(page.latency_ms);
                let mut r = Response::new(200).with_header("content-type", "text/html; charset=utf-8");
                r.body = page.html.clone().into_bytes();
                return Ok(r);
            }
        }
        let found = if site.flags.html_only {
            None
        } else {
            site.endpoints.iter().filter(|e| e.method == req.method).find_map(|e| e.match_path(path).map(|p| (e, p)))
        };
        let Some((ep, path_params)) = found else {
            self.clock.advance(reject_ms);
            return Err(SimError::NotFound(req.url.to_string()));
        };
        self.clock.advance(ep.latency_ms);
        let st = h.state.lock().unwrap_or_else(|e| e.into_inner());
        if st.down.contains(&ep.key()) {
            return Ok(Response::error(503, "unavailable", "endpoint is down"));
        }
        if ep.auth {
            if let (Some(auth), Some(secret)) = (&site.auth, &st.secret) {
                if !auth.accepts(&req.headers, secret) {
                    return Ok(Response::error(401, "unauthorized", "missing or stale credential"));
                }
            }
        }
        let drift = st.drift.get(&ep.key()).cloned().unwrap_or_default();
        drop(st);

        let mut receipt = None;
        if let (Some(gate), Some(ledger), false) = (&h.gate, &self.ledger, from_browser) {
            let resource = match req.url.query() {
                Some(q) => format!("{path}?{q}"),
                None => path.to_owned(),
            };
            let now = self.clock.now();
            let Some(header) = req.header(PAYMENT_PROOF_HEADER) else {
                let terms = gate.challenge(&resource, site.flags.tier2_fee, now).expect("fee is non-zero");
                return Ok(Response::json(402, &terms));
            };
            let env = match PaymentEnvelope::from_header(header) {
                Ok(e) if e.terms.resource == resource => e,
                Ok(_) => return Ok(Response::error(402, "wrong_resource", "terms were issued for another resource")),
                Err(e) => return Ok(Response::error(402, "malformed_proof", e.to_string())),
            };
            let entry = NewEntry::new(
                now,
                EntryKind::Tier2,
                &env.proof.payer,
                site_ledger_party(&host),
                env.terms.amount,
                format!("exec:{host}:{}", env.terms.nonce),
            );
            match gate.verify_and_settle(&env.proof, &env.terms, ledger, vec![entry], now) {
                Ok(entries) => receipt = Some(encode_receipt(&entries)),
                Err(e) => return Ok(Response::error(402, "payment_failed", e.to_string())),
            }
        }

        let query: BTreeMap<String, String> = req.url.query_pairs().map(|(k, v)| (k.into_owned(), v.into_owned())).collect();
        let resource = req.url.path().to_owned() + req.url.query().map(|q| format!("?{q}")).as_deref().unwrap_or("");
        let gen = Generator { seed: site.seed, resource: &resource, path: &path_params, query: &query, array_len: ep.array_len };
        let mut body = gen.value(&ep.response, "$");
        for d in &drift {
            apply_drift(&mut body, d);
        }
        let mut resp = Response::json(200, &body);
        if let Some(r) = receipt {
            resp = resp.with_header(PAYMENT_RECEIPT_HEADER, r);
        }
        Ok(resp)
    }

    /// A browser session on one site: the landing page, its assets, the
    /// JSON calls the page makes and third-party noise. Does not touch the
    /// clock.
    fn capture(&self, h: &Hosted, start: i64) -> (CaptureArchive, i64) {
        let site = &h.site;
        let landing = site.landing();
        let page_ms = landing.map(|(_, p)| p.latency_ms).unwrap_or(0);
        let t0 = start + self.profile.launch_ms;
        let base = format!("https://{}", site.host);
        let url = |s: &str| Url::parse(s).expect("simulated urls are valid");
        let mut browser_headers = BTreeMap::from([
            ("user-agent".to_owned(), "Mozilla/5.0 (simnet)".to_owned()),
            ("accept".to_owned(), "*/*".to_owned()),
        ]);
        let entry = |method: &str, u: Url, media: &str, body: Option<Vec<u8>>, at: i64, dur: i64, headers: &BTreeMap<String, String>| {
            CaptureEntry {
                method: method.into(),
                url: u,
                request_headers: headers.clone(),
                request_body: None,
                response_status: if body.is_some() { 200 } else { 204 },
                response_media_type: media.into(),
                response_body: body.map(|b| Body { media_type: media.into(), bytes: b }),
                response_truncated: false,
                started_at: at,
                duration_ms: dur as f64,
                label: None,
            }
        };
        let mut entries = Vec::new();
        if let Some((path, page)) = landing {
            entries.push(entry("GET", url(&format!("{base}{path}")), "text/html", Some(page.html.clone().into_bytes()), t0, page_ms, &browser_headers));
        }
        for (i, (asset, media)) in
            [("/static/app.js", "application/javascript"), ("/static/app.css", "text/css"), ("/static/logo.png", "image/png")]
                .into_iter()
                .enumerate()
        {
            entries.push(entry("GET", url(&format!("{base}{asset}")), media, Some(b"x".to_vec()), t0 + 20 + i as i64, 30, &browser_headers));
        }
        entries.push(entry("GET", url(&format!("https://stats.sim/beacon?site={}", site.host)), "application/json", Some(br#"{"ok":true}"#.to_vec()), t0 + 40, 20, &browser_headers));
        entries.push(entry("POST", url("https://www.google-analytics.com/g/collect?v=2"), "text/plain", None, t0 + 45, 15, &browser_headers));

        if !site.flags.html_only {
            let st = h.state.lock().unwrap_or_else(|e| e.into_inner());
            if let (Some(auth), Some(secret)) = (&site.auth, &st.secret) {
                if let Some((k, v)) = auth.header(secret) {
                    browser_headers.insert(k, v);
                }
            }
            let mut at = t0 + page_ms / 2;
            for ep in &site.endpoints {
                for sample in &ep.samples {
                    let target = url(&format!("{base}{}", ep.render(sample)));
                    let path_params = ep.match_path(target.path()).unwrap_or_default();
                    let query: BTreeMap<String, String> = target.query_pairs().map(|(k, v)| (k.into_owned(), v.into_owned())).collect();
                    let resource = target.path().to_owned() + target.query().map(|q| format!("?{q}")).as_deref().unwrap_or("");
                    let gen = Generator { seed: site.seed, resource: &resource, path: &path_params, query: &query, array_len: ep.array_len };
                    let mut body = gen.value(&ep.response, "$");
                    for d in st.drift.get(&ep.key()).into_iter().flatten() {
                        apply_drift(&mut body, d);
                    }
                    let bytes = serde_json::to_vec(&body).expect("json serializes");
                    let hdrs = if ep.auth { browser_headers.clone() } else { BTreeMap::from_iter(browser_headers.iter().filter(|(k, _)| *k == "user-agent" || *k == "accept").map(|(k, v)| (k.clone(), v.clone()))) };
                    entries.push(entry(&ep.method, target, "application/json", Some(bytes), at, ep.latency_ms, &hdrs));
                    at += 5;
                }
            }
        }
        let elapsed = self.profile.launch_ms + page_ms;
        (CaptureArchive::new(format!("simnet:{}", site.host), entries), elapsed)
    }

    /// Browser session on `host` without advancing the clock.
    pub fn capture_site(&self, host: &str) -> Option<CaptureArchive> {
        let h = self.hosted(host)?;
        Some(self.capture(h, self.clock.now()).0)
    }
}

impl Transport for SimWeb {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        match self.serve(req) {
            Ok(r) => Ok(r),
            Err(SimError::NotFound(what)) => Ok(Response::error(404, "not_found", what)),
            Err(SimError::BotBlocked(host)) => Ok(Response::error(403, "bot_blocked", format!("{host} blocks automated clients"))),
        }
    }
}

impl Web for SimWeb {
    /// Advances the clock by browser launch, page render and analysis.
    fn browse(&self, domain_hint: Option<&str>, intent: &str) -> Result<BrowserSession, WebError> {
        let h = self
            .pick_site(domain_hint, intent)
            .ok_or_else(|| WebError::NoSite(domain_hint.unwrap_or(intent).to_owned()))?;
        let (archive, elapsed) = self.capture(h, self.clock.now());
        let total = elapsed + self.profile.analysis_ms;
        self.clock.advance(total);
        Ok(BrowserSession { domain: h.site.host.clone(), archive, elapsed_ms: total })
    }

    fn refresh_credential(&self, domain: &str, _auth: &AuthDescriptor) -> Option<String> {
        self.hosted(domain)?.state.lock().unwrap_or_else(|e| e.into_inner()).secret.clone()
    }
}

