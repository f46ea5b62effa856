use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use url::Url;

use super::site::{DriftKind, SimEndpoint, SimPage, SimSite, SiteAuth, SiteIntent};
use super::web::{BrowserProfile, SimWeb};
use crate::clock::{Clock, SimClock, Timestamp};
use crate::distill::{AuthKind, Vault};
use crate::econ::{breakeven, CostModel, EntryKind, FeeSchedule, Ledger};
use crate::http::{HttpRegistryClient, LatencyTransport, RegistryService, ServiceConfig};
use crate::index::Registry;
use crate::orchestrator::{InstalledSkills, IntentQuery, Orchestrator, OrchestratorConfig, RouteCache, Source};
use crate::par::{self, Execution};
use crate::pay402::{MockAdapter, PaymentGate, SettlementAdapter, Wallet};
use crate::Micros;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FleetError {
    #[error("invalid fleet config: {0}")]
    InvalidConfig(String),
}

/// Medians that generated sites are sampled around.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub page_ms: i64,
    pub endpoint_ms: i64,
    /// Log-normal sigma; 0 pins every site to the medians.
    pub spread: f64,
    pub registry_rtt_ms: i64,
    pub browser: BrowserProfile,
}

impl Default for LatencyProfile {
    fn default() -> Self {
        LatencyProfile { page_ms: 2_300, endpoint_ms: 630, spread: 0.0, registry_rtt_ms: 150, browser: BrowserProfile::default() }
    }
}

impl LatencyProfile {
    fn sample(&self, median: i64, rng: &mut ChaCha8Rng) -> i64 {
        if self.spread <= 0.0 {
            return median;
        }
        let d = LogNormal::new((median as f64).ln(), self.spread).expect("sigma is positive");
        (d.sample(rng).round() as i64).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledDrift {
    pub step: usize,
    pub host: String,
    pub endpoint: String,
    #[serde(flatten)]
    pub kind: DriftKind,
}

fn default_fees() -> FeeSchedule {
    FeeSchedule { f_search: Micros(1_000), f_install: Micros(10_000), f_exec: None }
}

fn two() -> usize {
    2
}

fn minute() -> i64 {
    60_000
}

fn epoch() -> Timestamp {
    // 2026-01-01T00:00:00Z
    1_767_225_600_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub n_agents: usize,
    /// Ignored when `sites` is given.
    pub n_sites: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_fees")]
    pub fees: FeeSchedule,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default)]
    pub latency: LatencyProfile,
    /// Distinct intents an agent may draw per site.
    #[serde(default = "two")]
    pub intents_per_site: usize,
    /// Virtual time between consecutive resolves.
    #[serde(default = "minute")]
    pub think_ms: i64,
    #[serde(default = "epoch")]
    pub start_ms: Timestamp,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sites: Vec<SimSite>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drift: Vec<ScheduledDrift>,
}

impl FleetConfig {
    pub fn new(n_agents: usize, n_sites: usize, steps: usize, seed: u64) -> Self {
        FleetConfig {
            n_agents,
            n_sites,
            steps,
            seed,
            fees: default_fees(),
            cost_model: CostModel::default(),
            latency: LatencyProfile::default(),
            intents_per_site: 2,
            think_ms: minute(),
            start_ms: epoch(),
            sites: Vec::new(),
            drift: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        let bad = |m: &str| Err(FleetError::InvalidConfig(m.into()));
        if self.n_agents == 0 || self.steps == 0 || self.intents_per_site == 0 {
            return bad("n_agents, steps and intents_per_site must be at least 1");
        }
        if self.sites.is_empty() && self.n_sites == 0 {
            return bad("n_sites must be at least 1");
        }
        if !self.cost_model.is_valid() {
            return bad("cost model has a negative component or p_fail outside [0, 1)");
        }
        if self.think_ms < 0 || self.latency.registry_rtt_ms < 0 {
            return bad("durations must be non-negative");
        }
        Ok(())
    }

    /// Configured sites, or generated ones.
    pub fn resolved_sites(&self) -> Vec<SimSite> {
        if self.sites.is_empty() {
            default_sites(self.n_sites, self.seed, &self.latency)
        } else {
            self.sites.clone()
        }
    }
}

struct Topic {
    noun: &'static str,
    fields: &'static [(&'static str, &'static str)],
}

const TOPICS: &[Topic] = &[
    Topic { noun: "product", fields: &[("name", "$word"), ("price", "$float"), ("stock", "$int")] },
    Topic { noun: "story", fields: &[("title", "$text"), ("points", "$int"), ("author", "$word")] },
    Topic { noun: "forecast", fields: &[("city", "$word"), ("temp_c", "$float"), ("humidity", "$int:0:100")] },
    Topic { noun: "repo", fields: &[("name", "$word"), ("stars", "$int:0:90000"), ("language", "$word")] },
    Topic { noun: "flight", fields: &[("carrier", "$word"), ("fare", "$float"), ("seats", "$int:0:300")] },
    Topic { noun: "recipe", fields: &[("title", "$text"), ("minutes", "$int:5:240"), ("rating", "$float")] },
    Topic { noun: "quote", fields: &[("symbol", "$word"), ("last", "$float"), ("volume", "$int")] },
    Topic { noun: "listing", fields: &[("address", "$text"), ("rent", "$float"), ("bedrooms", "$int:0:6")] },
];

/// `n` sites cycling through a fixed set of topics. Every third site
/// requires a bearer token on its detail route.
pub fn default_sites(n: usize, seed: u64, latency: &LatencyProfile) -> Vec<SimSite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5173);
    (0..n)
        .map(|i| {
            let topic = &TOPICS[i % TOPICS.len()];
            let noun = topic.noun;
            let host = format!("{noun}s{i}.sim");
            let page_ms = latency.sample(latency.page_ms, &mut rng);
            // endpoints stay faster than the page that calls them
            let ep_ms = latency.sample(latency.endpoint_ms, &mut rng).min(page_ms - 1).max(1);
            let mut item: serde_json::Map<String, serde_json::Value> =
                topic.fields.iter().map(|(k, v)| ((*k).to_owned(), json!(v))).collect();
            let mut detail = item.clone();
            detail.insert("id".into(), json!("$path.id"));
            item.insert("id".into(), json!("$int:100:9999"));
            let ids: Vec<String> = (0..2).map(|_| rng.gen_range(100..10_000).to_string()).collect();
            let words: Vec<String> = (0..2).map(|_| format!("{noun}{}", rng.gen_range(0..100))).collect();
            let authed = i % 3 == 2;
            let sample = |k: &str, v: &String| BTreeMap::from([(k.to_owned(), v.clone())]);
            SimSite {
                host: host.clone(),
                description: format!("{noun} {noun}s search details"),
                pages: BTreeMap::from([(
                    "/".to_owned(),
                    SimPage { html: format!("<html><body><h1>{noun}s</h1><div id=app></div></body></html>"), latency_ms: page_ms },
                )]),
                endpoints: vec![
                    SimEndpoint {
                        method: "GET".into(),
                        path: format!("/api/{noun}s/{{id}}"),
                        latency_ms: ep_ms,
                        response: serde_json::Value::Object(detail),
                        array_len: 3,
                        description: format!("{noun} details by id"),
                        samples: ids.iter().map(|v| sample("id", v)).collect(),
                        auth: authed,
                    },
                    SimEndpoint {
                        method: "GET".into(),
                        path: format!("/api/{noun}s"),
                        latency_ms: ep_ms,
                        response: json!({"query": "$query.q", "results": [serde_json::Value::Object(item)]}),
                        array_len: 3,
                        description: format!("search {noun}s"),
                        samples: words.iter().map(|v| sample("q", v)).collect(),
                        auth: false,
                    },
                ],
                flags: Default::default(),
                auth: authed.then(|| SiteAuth { kind: AuthKind::Bearer, name: None, secret: format!("tok-{seed}-{i}") }),
                intents: vec![
                    SiteIntent { text: format!("get {noun} {} details", ids[0]), params: sample("id", &ids[0]) },
                    SiteIntent { text: format!("search {noun}s for {}", words[0]), params: sample("q", &words[0]) },
                    SiteIntent { text: format!("get {noun} {} details", ids[1]), params: sample("id", &ids[1]) },
                ],
                seed: seed.wrapping_add(i as u64),
            }
        })
        .collect()
}

fn site_intents(site: &SimSite, limit: usize) -> Vec<SiteIntent> {
    let mut out = site.intents.clone();
    if out.is_empty() {
        for ep in &site.endpoints {
            let text = if ep.description.is_empty() { format!("call {}", ep.key()) } else { ep.description.clone() };
            out.extend(ep.samples.iter().map(|p| SiteIntent { text: text.clone(), params: p.clone() }));
        }
    }
    out.truncate(limit);
    out
}

/// Shared registry, ledger and web for one simulation. Agents reach the
/// registry through a fixed round-trip time on the same clock.
pub struct SimWorld {
    pub clock: SimClock,
    pub web: Arc<SimWeb>,
    pub ledger: Arc<Ledger>,
    pub registry: Arc<Registry>,
    pub service: Arc<RegistryService>,
    pub adapter: Arc<MockAdapter>,
}

impl SimWorld {
    pub fn new(sites: Vec<SimSite>, cfg: &FleetConfig) -> Self {
        let clock = SimClock::new(cfg.start_ms);
        let ledger = Arc::new(Ledger::in_memory());
        let adapter = Arc::new(MockAdapter::default());
        let settle: Arc<dyn SettlementAdapter> = adapter.clone();
        let web = Arc::new(
            SimWeb::new(sites, clock.clone()).with_profile(cfg.latency.browser).with_settlement(settle.clone(), ledger.clone()),
        );
        let registry = Arc::new(Registry::in_memory());
        let config = ServiceConfig { fees: cfg.fees, cost_model: cfg.cost_model, ..ServiceConfig::default() };
        let service = Arc::new(RegistryService::new(
            registry.clone(),
            ledger.clone(),
            Arc::new(PaymentGate::new(settle)),
            Arc::new(clock.clone()),
            config,
        ));
        SimWorld { clock, web, ledger, registry, service, adapter }
    }

    /// Orchestrator for `agent-{i}` with a registered wallet and empty local
    /// state.
    pub fn agent(&self, i: usize, cfg: &FleetConfig) -> Orchestrator {
        let id = format!("agent-{i}");
        let wallet = Wallet::new(id.clone(), format!("wallet-{}-{i}", cfg.seed).into_bytes());
        self.adapter.register(&wallet);
        let transport = LatencyTransport::new(self.service.clone(), self.clock.clone(), cfg.latency.registry_rtt_ms);
        let base = Url::parse("https://registry.sim/").expect("static url");
        let client = HttpRegistryClient::new(Arc::new(transport), base, wallet.clone());
        let mut oc = OrchestratorConfig::new(id);
        oc.cost_model = cfg.cost_model;
        oc.fee_estimate = cfg.fees;
        Orchestrator::new(
            oc,
            Arc::new(self.clock.clone()),
            Arc::new(client),
            self.web.clone(),
            RouteCache::in_memory(),
            InstalledSkills::in_memory(),
            Vault::in_memory(),
            wallet,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub agent: usize,
    pub site: String,
    pub intent: String,
    pub source: Option<Source>,
    pub total_ms: i64,
    pub fees: Micros,
    pub sunk_fees: Micros,
    /// What a browser-only agent would have spent on the same intent.
    pub browser_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetMetrics {
    pub resolves: usize,
    pub failures: usize,
    pub by_source: BTreeMap<String, usize>,
    /// Cache hits over successful resolves.
    pub cache_hit_rate: f64,
    pub mean_cached_ms: Option<f64>,
    pub mean_graph_ms: Option<f64>,
    pub mean_discovery_ms: Option<f64>,
    pub mean_browser_ms: Option<f64>,
    /// Mean browser time over mean cached time.
    pub speedup: Option<f64>,
    pub total_fees_by_tier: BTreeMap<String, Micros>,
    pub payouts_by_contributor: BTreeMap<String, Micros>,
    pub records_created: usize,
    pub discoveries_by_site: BTreeMap<String, usize>,
    /// Executions after which discovery plus cached calls beat browsing,
    /// from the observed means.
    pub observed_breakeven: Option<u64>,
    pub ledger_conserved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetReport {
    pub metrics: FleetMetrics,
    pub steps: Vec<StepRecord>,
}

impl FleetReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,agent,site,source,total_ms,fees_micros,sunk_micros,browser_ms,error\n");
        for s in &self.steps {
            let source = s.source.map(Source::as_str).unwrap_or("");
            let err = s.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},\"{}\"",
                s.step, s.agent, s.site, source, s.total_ms, s.fees.0, s.sunk_fees.0, s.browser_ms, err
            );
        }
        out
    }
}

fn mean(xs: &[i64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<i64>() as f64 / xs.len() as f64)
}

/// Runs the stepped simulation: every step, each agent in turn draws a site
/// and an intent and resolves it against the shared registry.
pub fn run_fleet(cfg: &FleetConfig) -> Result<FleetReport, FleetError> {
    cfg.validate()?;
    let sites = cfg.resolved_sites();
    let intents: Vec<Vec<SiteIntent>> = sites.iter().map(|s| site_intents(s, cfg.intents_per_site)).collect();
    if intents.iter().any(Vec::is_empty) {
        return Err(FleetError::InvalidConfig("every site needs at least one intent or endpoint sample".into()));
    }
    let world = SimWorld::new(sites.clone(), cfg);
    let agents: Vec<Orchestrator> = (0..cfg.n_agents).map(|i| world.agent(i, cfg)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut steps = Vec::with_capacity(cfg.steps * cfg.n_agents);

    for step in 0..cfg.steps {
        for d in cfg.drift.iter().filter(|d| d.step == step) {
            world.web.inject_drift(&d.host, &d.endpoint, d.kind.clone());
        }
        for (a, orch) in agents.iter().enumerate() {
            let s = rng.gen_range(0..sites.len());
            let intent = &intents[s][rng.gen_range(0..intents[s].len())];
            let host = &sites[s].host;
            let q = IntentQuery { text: intent.text.clone(), domain_hint: Some(host.clone()), params: intent.params.clone() };
            let browser_ms = world.web.browser_cost_ms(host).unwrap_or(0);
            let start = world.clock.now();
            let rec = match orch.resolve_intent(&q) {
                Ok(r) => StepRecord {
                    step,
                    agent: a,
                    site: host.clone(),
                    intent: intent.text.clone(),
                    source: Some(r.timing.source),
                    total_ms: r.timing.total_ms,
                    fees: r.fees_paid.iter().map(|f| f.amount).sum(),
                    sunk_fees: r.sunk_fees.iter().map(|f| f.amount).sum(),
                    browser_ms,
                    error: None,
                },
                Err(e) => StepRecord {
                    step,
                    agent: a,
                    site: host.clone(),
                    intent: intent.text.clone(),
                    source: None,
                    total_ms: world.clock.now() - start,
                    fees: Micros::ZERO,
                    sunk_fees: Micros::ZERO,
                    browser_ms,
                    error: Some(e.to_string()),
                },
            };
            steps.push(rec);
            world.clock.advance(cfg.think_ms);
        }
    }
    Ok(FleetReport { metrics: metrics(&world, &steps), steps })
}

fn metrics(world: &SimWorld, steps: &[StepRecord]) -> FleetMetrics {
    let of = |src: Source| steps.iter().filter(|s| s.source == Some(src)).map(|s| s.total_ms).collect::<Vec<_>>();
    let (cached, graph, discovery) = (of(Source::Cache), of(Source::Graph), of(Source::Discovery));
    let ok = steps.iter().filter(|s| s.source.is_some()).count();
    let mut by_source = BTreeMap::new();
    for s in steps {
        *by_source.entry(s.source.map(Source::as_str).unwrap_or("failed").to_owned()).or_insert(0) += 1;
    }
    let mut discoveries_by_site = BTreeMap::new();
    for s in steps.iter().filter(|s| s.source == Some(Source::Discovery)) {
        *discoveries_by_site.entry(s.site.clone()).or_insert(0) += 1;
    }
    let mut total_fees_by_tier: BTreeMap<String, Micros> =
        ["tier1", "tier2", "tier3"].iter().map(|t| ((*t).to_owned(), Micros::ZERO)).collect();
    let mut payouts_by_contributor = BTreeMap::new();
    for e in world.ledger.entries() {
        match e.kind {
            EntryKind::Tier1 => *total_fees_by_tier.get_mut("tier1").expect("seeded") += e.amount,
            EntryKind::Tier2 => *total_fees_by_tier.get_mut("tier2").expect("seeded") += e.amount,
            EntryKind::Tier3 => *total_fees_by_tier.get_mut("tier3").expect("seeded") += e.amount,
            EntryKind::Payout => *payouts_by_contributor.entry(e.payee.clone()).or_insert(Micros::ZERO) += e.amount,
        }
    }
    let browser: Vec<i64> = steps.iter().map(|s| s.browser_ms).collect();
    let (mc, md, mb) = (mean(&cached), mean(&discovery), mean(&browser));
    FleetMetrics {
        resolves: steps.len(),
        failures: steps.len() - ok,
        by_source,
        cache_hit_rate: if ok == 0 { 0.0 } else { cached.len() as f64 / ok as f64 },
        mean_cached_ms: mc,
        mean_graph_ms: mean(&graph),
        mean_discovery_ms: md,
        mean_browser_ms: mb,
        speedup: mc.zip(mb).filter(|(c, _)| *c > 0.0).map(|(c, b)| b / c),
        total_fees_by_tier,
        payouts_by_contributor,
        records_created: world.registry.records().len(),
        discoveries_by_site,
        observed_breakeven: match (md, mc, mb) {
            (Some(d), Some(c), Some(b)) => breakeven(d, c, b).ok(),
            _ => None,
        },
        ledger_conserved: world.ledger.check_conservation().is_ok(),
    }
}

/// Per-site path latencies measured in an isolated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteLatency {
    pub host: String,
    pub browser_ms: i64,
    pub cold_ms: Option<i64>,
    pub cached_ms: Option<i64>,
    pub graph_ms: Option<i64>,
    /// `browser_ms / cached_ms`.
    pub speedup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn measure_site(site: &SimSite, cfg: &FleetConfig) -> SiteLatency {
    let world = SimWorld::new(vec![site.clone()], cfg);
    let browser_ms = world.web.browser_cost_ms(&site.host).unwrap_or(0);
    let mut out = SiteLatency { host: site.host.clone(), browser_ms, cold_ms: None, cached_ms: None, graph_ms: None, speedup: None, error: None };
    let Some(intent) = site_intents(site, 1).pop() else {
        out.error = Some("site has no intents".into());
        return out;
    };
    let q = IntentQuery { text: intent.text, domain_hint: Some(site.host.clone()), params: intent.params };
    let (a, b) = (world.agent(0, cfg), world.agent(1, cfg));
    let run = |o: &Orchestrator, want: Source| match o.resolve_intent(&q) {
        Ok(r) if r.timing.source == want => Ok(r.timing.total_ms),
        Ok(r) => Err(format!("expected {} got {}", want.as_str(), r.timing.source.as_str())),
        Err(e) => Err(e.to_string()),
    };
    let steps = [(&a, Source::Discovery), (&a, Source::Cache), (&b, Source::Graph)];
    let mut got = Vec::new();
    for (o, want) in steps {
        match run(o, want) {
            Ok(ms) => got.push(ms),
            Err(e) => {
                out.error = Some(e);
                break;
            }
        }
    }
    let mut it = got.into_iter();
    out.cold_ms = it.next();
    out.cached_ms = it.next();
    out.graph_ms = it.next();
    out.speedup = out.cached_ms.filter(|c| *c > 0).map(|c| browser_ms as f64 / c as f64);
    out
}

/// Cold, cached and graph latency for each site. Sites run in independent
/// worlds, so the result is the same under either execution mode.
pub fn latency_bench(cfg: &FleetConfig, exec: Execution) -> Result<Vec<SiteLatency>, FleetError> {
    cfg.validate()?;
    let sites = cfg.resolved_sites();
    Ok(par::map(exec, &sites, |s| measure_site(s, cfg)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_fleet_hits_cache_on_repeat() {
        let mut cfg = FleetConfig::new(1, 1, 2, 7);
        cfg.intents_per_site = 1;
        let r = run_fleet(&cfg).unwrap();
        let src: Vec<_> = r.steps.iter().map(|s| s.source).collect();
        assert_eq!(src, vec![Some(Source::Discovery), Some(Source::Cache)]);
        assert_eq!(r.steps[1].fees, Micros::ZERO);
        assert_eq!(r.metrics.records_created, 1);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let mut cfg = FleetConfig::new(3, 4, 6, 11);
        cfg.latency.spread = 0.2;
        let a = run_fleet(&cfg).unwrap();
        let b = run_fleet(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.metrics.ledger_conserved);
    }

    #[test]
    fn zero_counts_are_rejected() {
        assert!(run_fleet(&FleetConfig::new(0, 1, 1, 1)).is_err());
        assert!(run_fleet(&FleetConfig::new(1, 0, 1, 1)).is_err());
        assert!(run_fleet(&FleetConfig::new(1, 1, 0, 1)).is_err());
    }

    #[test]
    fn bench_modes_agree() {
        let cfg = FleetConfig::new(1, 5, 1, 3);
        let seq = latency_bench(&cfg, Execution::Sequential).unwrap();
        let parl = latency_bench(&cfg, Execution::Parallel).unwrap();
        assert_eq!(seq, parl);
        assert!(seq.iter().all(|s| s.error.is_none()), "{seq:?}");
    }

    #[test]
    fn generated_endpoints_are_faster_than_pages() {
        let p = LatencyProfile { spread: 0.5, ..Default::default() };
        for s in default_sites(20, 9, &p) {
            let page = s.landing().unwrap().1.latency_ms;
            assert!(s.endpoints.iter().all(|e| e.latency_ms < page));
        }
    }
}
