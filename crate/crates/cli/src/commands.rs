use std::collections::BTreeMap;
use std::path::Path;

use routegraph::capture::{classify_entry, parse_archive, FilterPolicy, ParsedArchive};
use routegraph::distill::{distill, read_skill_dir, write_skill_dir, Vault};
use routegraph::econ::{Ledger, LedgerEntry};
use routegraph::http::RegistryApi;
use routegraph::orchestrator::IntentQuery;
use routegraph::par::Execution;
use routegraph::simnet::{latency_bench, run_fleet, FleetConfig, SiteLatency};
use routegraph::trust::{verification_pass, VerificationConfig, VerificationOutcome};
use routegraph::{Clock, Micros};
use serde_json::{json, Value};

use crate::app::{ledger_path, App};
use crate::error::CliError;
use crate::net::UreqTransport;

fn read_archive(har: &Path) -> Result<ParsedArchive, CliError> {
    let raw = std::fs::read(har).map_err(|e| CliError::Input(format!("{}: {e}", har.display())))?;
    Ok(parse_archive(&raw)?)
}

pub fn ingest(har: &Path) -> Result<Value, CliError> {
    let parsed = read_archive(har)?;
    let policy = FilterPolicy::default();
    let mut kept = Vec::new();
    let mut dropped: BTreeMap<String, usize> = BTreeMap::new();
    for e in &parsed.archive.entries {
        let v = classify_entry(e, &policy);
        if v.keep {
            kept.push(json!({
                "method": e.method,
                "url": e.url.as_str(),
                "status": e.response_status,
                "media_type": e.response_media_type,
                "reasons": v.reasons,
            }));
        } else {
            let reason = v.reasons.first().map(|r| serde_json::to_value(r).unwrap_or_default());
            let key = reason.and_then(|r| r.as_str().map(str::to_owned)).unwrap_or_else(|| "unknown".into());
            *dropped.entry(key).or_default() += 1;
        }
    }
    Ok(json!({
        "source": parsed.archive.source_label,
        "entries": parsed.archive.len(),
        "kept": kept,
        "dropped": dropped,
        "diagnostics": parsed.diagnostics,
    }))
}

/// One package writes straight into `out`; several go to `out/<domain>/`.
pub fn distill_cmd(app: &App, har: &Path, out: &Path) -> Result<Value, CliError> {
    let parsed = read_archive(har)?;
    let kept = routegraph::capture::filter_archive(&parsed.archive, &FilterPolicy::default());
    let mut vault = Vault::open(&app.cfg.vault)?;
    let now = app.clock().now();
    let pkgs = distill(&kept, &mut vault, &app.cfg.agent_id, now)?;
    let single = pkgs.len() == 1;
    let mut written = Vec::new();
    for pkg in &pkgs {
        let dir = if single { out.to_path_buf() } else { out.join(&pkg.domain) };
        write_skill_dir(pkg, &dir)?;
        written.push(json!({
            "domain": pkg.domain,
            "dir": dir.display().to_string(),
            "endpoints": pkg.endpoints.iter().map(|e| e.key().0).collect::<Vec<_>>(),
        }));
    }
    Ok(json!({"skills": written}))
}

pub fn publish(app: &App, dir: &Path) -> Result<Value, CliError> {
    let pkg = read_skill_dir(dir)?;
    let (client, _local) = app.client(app.clock())?;
    Ok(serde_json::to_value(client.publish(&pkg)?).expect("response serializes"))
}

pub fn search(app: &App, query: &str, k: usize, domain: Option<&str>, budget: Option<Micros>) -> Result<Value, CliError> {
    if k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let (client, _local) = app.client(app.clock())?;
    let page = client.search(query, k, domain, budget.unwrap_or_else(|| app.default_budget()))?;
    Ok(serde_json::to_value(page).expect("page serializes"))
}

pub fn install(app: &App, id: &str, out: Option<&Path>, budget: Option<Micros>) -> Result<Value, CliError> {
    let (client, _local) = app.client(app.clock())?;
    let resp = client.install(id, budget.unwrap_or_else(|| app.default_budget()))?;
    if let Some(dir) = out {
        write_skill_dir(&resp.package, dir)?;
    }
    Ok(serde_json::to_value(resp).expect("install serializes"))
}

pub fn resolve(
    app: &App,
    intent: &str,
    domain: Option<&str>,
    params: &[(String, String)],
    sites: Option<&Path>,
) -> Result<Value, CliError> {
    let mut q = IntentQuery::new(intent);
    if let Some(d) = domain {
        q = q.domain(d);
    }
    for (k, v) in params {
        q = q.param(k, v);
    }
    let (orch, _local) = app.orchestrator(sites)?;
    let result = orch.resolve_intent(&q)?;
    Ok(serde_json::to_value(result).expect("result serializes"))
}

fn outcome_json(o: &VerificationOutcome) -> Value {
    json!({
        "record_id": o.record_id,
        "endpoint": o.endpoint,
        "outcome": o.probe.outcome.as_str(),
        "status": o.probe.status,
        "drift": o.probe.drift.as_ref().filter(|d| !d.is_empty()).map(|d| d.summary()),
        "staleness_ms": o.staleness_ms,
        "transitions": o.transitions,
    })
}

pub fn verify(app: &App, sites: Option<&Path>) -> Result<Value, CliError> {
    let (outcomes, lifecycle) = match sites {
        Some(p) => {
            let web = app.sim_web(p)?;
            let clock = std::sync::Arc::new(web.clock().clone());
            let local = app.open_local(clock)?;
            let now = web.clock().now();
            (verification_pass(local.registry(), &web, &VerificationConfig::default(), now), lifecycles(&local))
        }
        None => {
            let clock = app.clock();
            let now = clock.now();
            let local = app.open_local(clock)?;
            let prober = UreqTransport::default();
            (verification_pass(local.registry(), &prober, &VerificationConfig::default(), now), lifecycles(&local))
        }
    };
    Ok(json!({"probes": outcomes.iter().map(outcome_json).collect::<Vec<_>>(), "records": lifecycle}))
}

fn lifecycles(local: &crate::app::LocalRegistry) -> Value {
    let mut out = BTreeMap::new();
    for rec in local.registry().records() {
        out.insert(
            rec.id.clone(),
            json!({"domain": rec.domain, "lifecycle": rec.lifecycle, "verification": rec.verification_status}),
        );
    }
    json!(out)
}

pub fn ledger(app: &App, party: Option<&str>) -> Result<Value, CliError> {
    let dir = app.local_dir()?;
    let path = ledger_path(dir);
    let ledger = if path.exists() { Ledger::open(&path)? } else { Ledger::in_memory() };
    let balances = ledger.balances();
    let conserved = ledger.check_conservation().is_ok();
    match party {
        None => Ok(json!({
            "entries": ledger.len(),
            "balances": balances.iter().map(|(k, v)| (k.clone(), json!(v))).collect::<BTreeMap<_, _>>(),
            "conserved": conserved,
        })),
        Some(p) => {
            let entries: Vec<LedgerEntry> =
                ledger.entries().into_iter().filter(|e| e.payer == p || e.payee == p).collect();
            Ok(json!({
                "party": p,
                "balance": balances.get(p).copied().unwrap_or(0),
                "entries": entries,
            }))
        }
    }
}

fn read_fleet(path: &Path) -> Result<FleetConfig, CliError> {
    let raw = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&raw).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn simulate(config: &Path, csv: Option<&Path>) -> Result<Value, CliError> {
    let cfg = read_fleet(config)?;
    let report = run_fleet(&cfg)?;
    if let Some(p) = csv {
        std::fs::write(p, report.to_csv())?;
    }
    Ok(serde_json::to_value(&report.metrics).expect("metrics serialize"))
}

pub fn bench(config: &Path, sequential: bool) -> Result<Value, CliError> {
    let cfg = read_fleet(config)?;
    let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
    let sites = latency_bench(&cfg, exec)?;
    let ok: Vec<_> = sites.iter().filter(|s| s.error.is_none()).collect();
    let mean = |f: fn(&SiteLatency) -> Option<i64>| -> Option<f64> {
        let xs: Vec<f64> = ok.iter().filter_map(|s| f(s)).map(|x| x as f64).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    let browser = mean(|s| Some(s.browser_ms));
    let cached = mean(|s| s.cached_ms);
    Ok(json!({
        "sites": sites,
        "summary": {
            "measured": ok.len(),
            "mean_browser_ms": browser,
            "mean_cold_ms": mean(|s| s.cold_ms),
            "mean_cached_ms": cached,
            "mean_graph_ms": mean(|s| s.graph_ms),
            "speedup": browser.zip(cached).filter(|(_, c)| *c > 0.0).map(|(b, c)| b / c),
        },
    }))
}
