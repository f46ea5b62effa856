//! Intent resolution: local route cache, then a paid graph lookup, then
//! browser discovery with publish-back.

mod cache;
mod execute;
mod web;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::capture::{filter_archive, FilterPolicy};
use crate::clock::{Clock, Timestamp};
use crate::distill::{distill, EndpointTemplate, SkillPackage, Vault};
use crate::econ::{adoption_decision, rediscovery_cost, Adoption, CostModel, EntryKind, FeeSchedule, LedgerEntry, Micros};
use crate::http::{ClientError, RegistryApi, SearchHit};
use crate::index::{cosine, embed_text, record_id};
use crate::pay402::Wallet;
use crate::trust::{DriftReport, Outcome};
use crate::{canonical_json, sha256_hex};

pub use cache::{InstalledSkill, InstalledSkills, RouteCache, RouteCacheEntry, DEFAULT_TTL_MS};
pub use execute::{build_request, execute_skill, ExecContext, ExecError, Executed};
pub use web::{BrowserSession, HttpOnlyWeb, Web, WebError};

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("invalid intent: {0}")]
    InvalidIntent(String),
    #[error("payment refused: {0}")]
    PaymentRefused(String),
    #[error("discovery found no API endpoints on {0}")]
    DiscoveryEmpty(String),
    #[error("unresolvable: {}", .0.join("; "))]
    Unresolvable(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntentQuery {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_hint: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl IntentQuery {
    pub fn new(text: impl Into<String>) -> Self {
        IntentQuery { text: text.into(), ..Default::default() }
    }

    pub fn domain(mut self, d: impl Into<String>) -> Self {
        self.domain_hint = Some(d.into());
        self
    }

    pub fn param(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.params.insert(k.into(), v.into());
        self
    }
}

/// Digest of the lower-cased text, sorted params and domain hint.
pub fn intent_key(q: &IntentQuery) -> String {
    let canon = serde_json::json!({
        "text": q.text.trim().to_lowercase(),
        "params": q.params,
        "domain": q.domain_hint.as_deref().map(str::to_ascii_lowercase),
    });
    sha256_hex(canonical_json(&canon).as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Cache,
    Graph,
    Discovery,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Cache => "cache",
            Source::Graph => "graph",
            Source::Discovery => "discovery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: i64,
    pub source: Source,
}

/// Reference to a ledger charge paid by this agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeeRef {
    pub ledger_id: u64,
    pub kind: EntryKind,
    pub amount: Micros,
}

impl From<&LedgerEntry> for FeeRef {
    fn from(e: &LedgerEntry) -> Self {
        FeeRef { ledger_id: e.id, kind: e.kind, amount: e.amount }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub data: Value,
    pub timing: Timing,
    /// Charges on the path that produced `data`.
    pub fees_paid: Vec<FeeRef>,
    /// Charges on earlier paths that did not produce a result.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sunk_fees: Vec<FeeRef>,
    pub record_id: String,
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub agent_id: String,
    /// Minimum ranked composite before paying to install.
    pub acceptance_threshold: f64,
    pub cost_model: CostModel,
    /// Expected registry fees, used for the adoption check before searching.
    pub fee_estimate: FeeSchedule,
    /// Executions an install is expected to serve.
    pub expected_executions: u64,
    pub max_tier2: Micros,
    pub search_k: usize,
    pub cache_ttl_ms: i64,
}

impl OrchestratorConfig {
    pub fn new(agent_id: impl Into<String>) -> Self {
        OrchestratorConfig {
            agent_id: agent_id.into(),
            acceptance_threshold: 0.35,
            cost_model: CostModel::default(),
            fee_estimate: FeeSchedule { f_search: Micros(1_000), f_install: Micros(10_000), f_exec: None },
            expected_executions: 1,
            max_tier2: Micros(10_000),
            search_k: 5,
            cache_ttl_ms: DEFAULT_TTL_MS,
        }
    }
}

/// Cumulative spend by tier, for operators watching the adoption margin.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spend {
    pub tier1: Micros,
    pub tier2: Micros,
    pub tier3: Micros,
}

pub struct Orchestrator {
    pub config: OrchestratorConfig,
    clock: Arc<dyn Clock>,
    registry: Arc<dyn RegistryApi>,
    web: Arc<dyn Web>,
    pub cache: RouteCache,
    pub installed: InstalledSkills,
    vault: Mutex<Vault>,
    wallet: Wallet,
    filter: FilterPolicy,
    spend: Mutex<Spend>,
    discovery_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator").field("agent", &self.config.agent_id).finish()
    }
}

/// Best endpoint of `pkg` for the intent: its required parameters must all
/// be supplied, then highest similarity between intent text and endpoint
/// documentation wins.
pub fn match_endpoint<'a>(pkg: &'a SkillPackage, q: &IntentQuery) -> Option<(&'a EndpointTemplate, f64)> {
    let qe = embed_text(&q.text);
    pkg.endpoints
        .iter()
        .filter(|e| e.required_params().iter().all(|p| q.params.contains_key(p)))
        .map(|e| (e, cosine(&qe, &embed_text(&e.documentation()))))
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.key().cmp(&a.0.key())))
}

fn own_charges(entries: &[LedgerEntry], payer: &str) -> Vec<FeeRef> {
    entries.iter().filter(|e| e.payer == payer && e.kind != EntryKind::Payout).map(FeeRef::from).collect()
}

impl Orchestrator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: OrchestratorConfig,
        clock: Arc<dyn Clock>,
        registry: Arc<dyn RegistryApi>,
        web: Arc<dyn Web>,
        cache: RouteCache,
        installed: InstalledSkills,
        vault: Vault,
        wallet: Wallet,
    ) -> Self {
        Orchestrator {
            config,
            clock,
            registry,
            web,
            cache,
            installed,
            vault: Mutex::new(vault),
            wallet,
            filter: FilterPolicy::default(),
            spend: Mutex::default(),
            discovery_locks: Mutex::default(),
        }
    }

    pub fn with_filter(mut self, filter: FilterPolicy) -> Self {
        self.filter = filter;
        self
    }

    pub fn spend(&self) -> Spend {
        self.spend.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn note_spend(&self, fees: &[FeeRef]) {
        let mut s = self.spend.lock().unwrap_or_else(|e| e.into_inner());
        for f in fees {
            match f.kind {
                EntryKind::Tier1 => s.tier1 += f.amount,
                EntryKind::Tier2 => s.tier2 += f.amount,
                EntryKind::Tier3 => s.tier3 += f.amount,
                EntryKind::Payout => {}
            }
        }
    }

    fn ctx(&self) -> ExecContext<'_> {
        ExecContext { web: self.web.as_ref(), vault: &self.vault, wallet: &self.wallet, max_tier2: self.config.max_tier2 }
    }

    fn feedback(&self, record: &str, endpoint: &str, outcome: Outcome) {
        // reporting is best effort; a registry outage must not fail the intent
        let _ = self.registry.feedback(record, endpoint, outcome);
    }

    /// Runs the three-path chain. `total_ms` covers everything up to the
    /// data being available; outcome feedback to the registry is not timed.
    pub fn resolve_intent(&self, q: &IntentQuery) -> Result<ExecutionResult, ResolveError> {
        if q.text.trim().is_empty() {
            return Err(ResolveError::InvalidIntent("empty text".into()));
        }
        let start = self.clock.now();
        let key = intent_key(q);
        let mut failures = Vec::new();

        if let Some(r) = self.try_cache(q, &key, start, &mut failures) {
            return Ok(r);
        }
        let mut sunk = Vec::new();
        let c = rediscovery_cost(&self.config.cost_model);
        match adoption_decision(&self.config.fee_estimate, self.config.expected_executions, &self.config.cost_model) {
            Adoption::UseGraph => match self.try_graph(q, &key, start, c, &mut sunk) {
                Ok(Some(r)) => return Ok(r),
                Ok(None) => failures.push("graph: no acceptable result".to_owned()),
                Err(e) => failures.push(format!("graph: {e}")),
            },
            Adoption::DefectToBrowser => failures.push("graph: fees not below rediscovery cost".into()),
        }
        match self.try_discovery(q, &key, start, sunk) {
            Ok(r) => Ok(r),
            Err(e) => {
                failures.push(format!("discovery: {e}"));
                Err(ResolveError::Unresolvable(failures))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        start: Timestamp,
        source: Source,
        ex: (Value, Option<DriftReport>),
        fees: Vec<FeeRef>,
        sunk: Vec<FeeRef>,
        record: &str,
        endpoint: &str,
    ) -> ExecutionResult {
        ExecutionResult {
            data: ex.0,
            timing: Timing { total_ms: self.clock.now() - start, source },
            fees_paid: fees,
            sunk_fees: sunk,
            record_id: record.to_owned(),
            endpoint: endpoint.to_owned(),
            drift: ex.1,
        }
    }

    fn try_cache(&self, q: &IntentQuery, key: &str, start: Timestamp, failures: &mut Vec<String>) -> Option<ExecutionResult> {
        let entry = self.cache.get(key, start)?;
        let Some(skill) = self.installed.get(&entry.skill_id) else {
            let _ = self.cache.remove(key);
            return None;
        };
        match execute_skill(&self.ctx(), &skill.package, &entry.endpoint, &q.params) {
            Ok(ex) => {
                let fees = own_charges(&ex.fees, &self.wallet.payer);
                self.note_spend(&fees);
                let r = self.finish(start, Source::Cache, (ex.data, None), fees, Vec::new(), &entry.skill_id, &entry.endpoint);
                self.feedback(&entry.skill_id, &entry.endpoint, Outcome::Success);
                Some(r)
            }
            Err(e) => {
                failures.push(format!("cache: {e}"));
                self.feedback(&entry.skill_id, &entry.endpoint, Outcome::Failure);
                let _ = self.cache.remove(key);
                None
            }
        }
    }

    fn pick<'a>(&self, q: &IntentQuery, hits: &'a [SearchHit]) -> Option<&'a SearchHit> {
        hits.iter().find(|h| h.result.rank_score >= self.config.acceptance_threshold)
            .filter(|h| q.domain_hint.as_deref().is_none_or(|d| h.result.domain.eq_ignore_ascii_case(d)))
    }

    fn try_graph(
        &self,
        q: &IntentQuery,
        key: &str,
        start: Timestamp,
        c: Micros,
        sunk: &mut Vec<FeeRef>,
    ) -> Result<Option<ExecutionResult>, ResolveError> {
        let payer = self.wallet.payer.clone();
        // every charge must keep the running total strictly below c
        let budget = |spent: u64| Micros(c.0.saturating_sub(spent).saturating_sub(1));
        let page = self
            .registry
            .search(&q.text, self.config.search_k, q.domain_hint.as_deref(), budget(0))
            .map_err(client_err)?;
        let mut fees = own_charges(&page.receipt, &payer);
        self.note_spend(&fees);
        let spent = |f: &[FeeRef]| f.iter().map(|x| x.amount.0).sum::<u64>();

        let Some(hit) = self.pick(q, &page.hits) else {
            sunk.append(&mut fees);
            return Ok(None);
        };
        let id = hit.result.id.clone();
        let skill = match self.installed.get(&id) {
            Some(s) => s,
            None => {
                let n_exec = self.config.expected_executions;
                let exec_fees = hit.tier2_fee.map(|f| f.0 * n_exec).unwrap_or(0);
                let total = spent(&fees) as u128 + hit.install_price.0 as u128 + exec_fees as u128;
                if total >= c.0 as u128 {
                    sunk.append(&mut fees);
                    return Ok(None);
                }
                let inst = match self.registry.install(&id, budget(spent(&fees) + exec_fees)) {
                    Ok(i) => i,
                    Err(e) => {
                        sunk.append(&mut fees);
                        return Err(client_err(e));
                    }
                };
                let charged = own_charges(&inst.receipt, &payer);
                self.note_spend(&charged);
                fees.extend(charged);
                let skill = InstalledSkill {
                    record_id: id.clone(),
                    package: inst.package,
                    tier2_fee: inst.tier2_fee,
                    installed_at: self.clock.now(),
                };
                let _ = self.installed.put(skill.clone());
                skill
            }
        };
        let Some((ep, _)) = match_endpoint(&skill.package, q) else {
            sunk.append(&mut fees);
            return Ok(None);
        };
        let ep_key = ep.key().0;
        match execute_skill(&self.ctx(), &skill.package, &ep_key, &q.params) {
            Ok(ex) => {
                let t2 = own_charges(&ex.fees, &payer);
                self.note_spend(&t2);
                fees.extend(t2);
                let r = self.finish(start, Source::Graph, (ex.data, None), fees, std::mem::take(sunk), &id, &ep_key);
                self.bind(key, &id, &ep_key, start);
                self.feedback(&id, &ep_key, Outcome::Success);
                Ok(Some(r))
            }
            Err(e) => {
                self.feedback(&id, &ep_key, Outcome::Failure);
                sunk.append(&mut fees);
                Err(ResolveError::Unresolvable(vec![e.to_string()]))
            }
        }
    }

    fn bind(&self, key: &str, record: &str, endpoint: &str, at: Timestamp) {
        let _ = self.cache.put(RouteCacheEntry {
            intent_key: key.to_owned(),
            skill_id: record.to_owned(),
            endpoint: endpoint.to_owned(),
            resolved_at: at,
            ttl_ms: self.config.cache_ttl_ms,
        });
    }

    /// Browses the site, distills what the browser saw and publishes it.
    /// Returns the package with local auth references intact.
    pub fn fallback_discover(&self, q: &IntentQuery) -> Result<(SkillPackage, Option<String>), ResolveError> {
        let hint = q.domain_hint.clone().unwrap_or_default();
        let lock = {
            let mut locks = self.discovery_locks.lock().unwrap_or_else(|e| e.into_inner());
            locks.entry(hint.clone()).or_default().clone()
        };
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let session = self
            .web
            .browse(q.domain_hint.as_deref(), &q.text)
            .map_err(|e| ResolveError::Unresolvable(vec![e.to_string()]))?;
        let kept = filter_archive(&session.archive, &self.filter);
        let now = self.clock.now();
        let pkgs = {
            let mut vault = self.vault.lock().unwrap_or_else(|e| e.into_inner());
            distill(&kept, &mut vault, &self.config.agent_id, now)
        }
        .map_err(|_| ResolveError::DiscoveryEmpty(session.domain.clone()))?;
        let pkg = pkgs
            .iter()
            .find(|p| p.domain.eq_ignore_ascii_case(&session.domain))
            .or(pkgs.first())
            .cloned()
            .ok_or_else(|| ResolveError::DiscoveryEmpty(session.domain.clone()))?;
        let published = self.registry.publish(&pkg).ok().map(|r| r.record_id);
        Ok((pkg, published))
    }

    fn try_discovery(
        &self,
        q: &IntentQuery,
        key: &str,
        start: Timestamp,
        sunk: Vec<FeeRef>,
    ) -> Result<ExecutionResult, ResolveError> {
        let (pkg, published) = self.fallback_discover(q)?;
        let id = published.unwrap_or_else(|| record_id(&pkg.domain));
        // a local copy merged with what was installed before keeps both
        // endpoint sets and this agent's auth references
        let local = match self.installed.get(&id) {
            Some(prev) => crate::distill::merge_skills(&prev.package, &pkg).map(|m| {
                let mut p = m.package;
                p.auth_local.extend(pkg.auth_local.clone());
                p
            }).unwrap_or(pkg),
            None => pkg,
        };
        let _ = self.installed.put(InstalledSkill {
            record_id: id.clone(),
            package: local.clone(),
            tier2_fee: None,
            installed_at: self.clock.now(),
        });
        let (ep, _) = match_endpoint(&local, q)
            .ok_or_else(|| ResolveError::Unresolvable(vec!["no discovered endpoint accepts the intent parameters".into()]))?;
        let ep_key = ep.key().0;
        let payer = self.wallet.payer.clone();
        let (data, drift, fees) = match execute_skill(&self.ctx(), &local, &ep_key, &q.params) {
            Ok(ex) => (ex.data, None, ex.fees),
            Err(ExecError::SchemaMismatch { data, drift, fees }) => (data, Some(*drift), fees),
            Err(e) => {
                self.feedback(&id, &ep_key, Outcome::Failure);
                return Err(ResolveError::Unresolvable(vec![e.to_string()]));
            }
        };
        let fees = own_charges(&fees, &payer);
        self.note_spend(&fees);
        let clean = drift.is_none();
        let r = self.finish(start, Source::Discovery, (data, drift), fees, sunk, &id, &ep_key);
        if clean {
            self.bind(key, &id, &ep_key, start);
        }
        self.feedback(&id, &ep_key, if clean { Outcome::Success } else { Outcome::Failure });
        Ok(r)
    }
}

fn client_err(e: ClientError) -> ResolveError {
    match e {
        ClientError::PaymentRefused { .. } => ResolveError::PaymentRefused(e.to_string()),
        other => ResolveError::Unresolvable(vec![other.to_string()]),
    }
}
