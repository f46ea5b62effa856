//! Acceptance criteria, one line each. Runs without the libtest harness so
//! every criterion reports even when an earlier one fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use url::Url;

use routegraph::capture::{filter_archive, parse_archive, FilterPolicy};
use routegraph::distill::{distill, AuthDescriptor, AuthKind, QueryParam, ScalarKind, SkillPackage, Vault};
use routegraph::econ::{
    adoption_decision, breakeven, delta_score, distribute_contributor_share, split_fee, Adoption, CostModel, DeltaParams,
    EntryKind, FeeSchedule, FeeSplit, Ledger, RouteSnapshot,
};
use routegraph::http::{
    HttpRegistryClient, RegistryApi, RegistryService, Request, ServiceConfig, Transport, TracingTransport,
    PAYMENT_PROOF_HEADER,
};
use routegraph::index::{
    embed_text, validate_for_publish, Lifecycle, Registry, ScoringWeights, VerificationStatus,
};
use routegraph::orchestrator::{IntentQuery, RouteCache, RouteCacheEntry, Source};
use routegraph::par::Execution;
use routegraph::pay402::{sign_with_wallet, MockAdapter, PaymentEnvelope, PaymentGate, PaymentTerms, Wallet};
use routegraph::simnet::{latency_bench, load_sites, DriftKind, FleetConfig, LatencyProfile, SimWeb, SimWorld};
use routegraph::trust::{freshness, probe_endpoint, verification_pass, VerificationConfig};
use routegraph::{Clock, Micros, SimClock, MS_PER_DAY, MS_PER_HOUR};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

const NOW: i64 = 1_767_225_600_000;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn shop_package(contributor: &str) -> SkillPackage {
    let raw = std::fs::read(fixture("shop.har")).expect("fixture present");
    let parsed = parse_archive(&raw).expect("fixture parses");
    let kept = filter_archive(&parsed.archive, &FilterPolicy::default());
    let mut vault = Vault::in_memory();
    distill(&kept, &mut vault, contributor, NOW).expect("fixture distills").remove(0).publishable()
}

fn publish(reg: &Registry, pkg: &SkillPackage, now: i64) -> String {
    let report = validate_for_publish(pkg).expect("package validates");
    reg.publish(pkg, &report, now).expect("publish succeeds").record.id.clone()
}

fn cos64(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn c1_composite() -> Check {
    let t = Instant::now();
    let reg = Registry::in_memory();
    let base = shop_package("seed");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut expected = BTreeMap::new();
    let query = "product price lookup";
    let q = embed_text(query);
    for i in 0..100 {
        let pkg = SkillPackage { domain: format!("shop{i}.example.com"), ..base.clone() };
        let id = publish(&reg, &pkg, NOW);
        let emb: Vec<f32> = (0..q.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let rel: f64 = rng.gen_range(0.0..=1.0);
        let age_ms: i64 = rng.gen_range(0..200 * MS_PER_DAY);
        let status = [VerificationStatus::Unverified, VerificationStatus::Verified, VerificationStatus::DriftFlagged]
            [rng.gen_range(0..3)];
        let ver = match status {
            VerificationStatus::Verified => 1.0,
            VerificationStatus::DriftFlagged => 0.5,
            VerificationStatus::Unverified => 0.0,
        };
        let sim = cos64(&q, &emb).max(0.0);
        let fresh = 1.0 / (1.0 + (age_ms as f64 / MS_PER_DAY as f64) / 30.0);
        expected.insert(id.clone(), 0.4 * sim + 0.3 * rel + 0.15 * fresh + 0.15 * ver);
        reg.update(&id, |r| {
            r.embedding = emb;
            r.reliability = rel;
            r.last_verified_at = NOW + 200 * MS_PER_DAY - age_ms;
            r.verification_status = status;
        })
        .unwrap();
    }
    let got = reg.search(query, 100, &ScoringWeights::default(), NOW + 200 * MS_PER_DAY).map_err(|e| e.to_string())?;
    ensure!(got.len() == 100, "expected 100 results, got {}", got.len());
    let mut worst = 0.0f64;
    for r in &got {
        worst = worst.max((r.composite - expected[&r.id]).abs());
    }
    ensure!(worst <= 1e-12, "max composite error {worst:e}");
    ensure!(got.windows(2).all(|w| w[0].rank_score >= w[1].rank_score), "results not sorted");
    let ms = t.elapsed().as_millis();
    ensure!(ms < 1_000, "took {ms} ms");
    Ok(format!("100 records, max error {worst:.1e}, {ms} ms"))
}

fn c2_freshness() -> Check {
    let got = [freshness(0.0), freshness(30.0), freshness(90.0)];
    ensure!(got == [Ok(1.0), Ok(0.5), Ok(0.25)], "{got:?}");
    Ok("1.0 / 0.5 / 0.25 exact".into())
}

fn c3_fee_conservation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let fee = Micros(rng.gen_range(0..=10_000_000_000u64));
        let w: [f64; 4] = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
        let t: f64 = w.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        let split = FeeSplit { contributors: w[0] / t, maintainers: w[1] / t, infrastructure: w[2] / t, treasury: w[3] / t };
        let parts = split_fee(fee, &split).map_err(|e| format!("{split:?}: {e}"))?;
        ensure!(parts.total() == fee, "{fee:?} split into {parts:?}");
    }
    for f in [1u64, 7, 99, 1_000, 12_345, 20_000, 999_999_999] {
        let p = split_fee(Micros(f), &FeeSplit::default()).unwrap();
        let c = p.contributors.0 as f64 - 0.7 * f as f64;
        let i = p.infrastructure.0 as f64 - 0.1 * f as f64;
        ensure!(c.abs() <= 1.0 && i.abs() <= 1.0, "fee {f}: {p:?}");
    }
    Ok("10000 random pairs sum exactly; default C=70% I=10% within 1 µ".into())
}

fn c4_adoption() -> Check {
    let mut n = 0;
    for s in [1_000, 5_000] {
        for i in [5_000, 20_000] {
            for x in [1_000, 10_000] {
                for m in [CostModel::browser_low(), CostModel::browser_high()] {
                    let fees = FeeSchedule { f_search: Micros(s), f_install: Micros(i), f_exec: Some(Micros(x)) };
                    ensure!(adoption_decision(&fees, 1, &m) == Adoption::UseGraph, "{fees:?} vs {m:?}");
                    n += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let fees = FeeSchedule {
            f_search: Micros(rng.gen_range(0..200_000)),
            f_install: Micros(rng.gen_range(0..200_000)),
            f_exec: Some(Micros(rng.gen_range(0..20_000))),
        };
        let k = rng.gen_range(0..50);
        let m = CostModel { c_tokens: Micros(rng.gen_range(0..600_000)), ..CostModel::ZERO };
        let bump = rng.gen_range(1..100_000);
        let before = adoption_decision(&fees, k, &m);
        let mut dearer = fees;
        match rng.gen_range(0..3) {
            0 => dearer.f_search.0 += bump,
            1 => dearer.f_install.0 += bump,
            _ => dearer.f_exec = Some(Micros(fees.f_exec.unwrap().0 + bump)),
        }
        let costlier = CostModel { c_tokens: Micros(m.c_tokens.0 + bump), ..m };
        if before == Adoption::DefectToBrowser {
            ensure!(adoption_decision(&dearer, k, &m) == Adoption::DefectToBrowser, "raising a fee flipped to use_graph");
        } else {
            ensure!(adoption_decision(&fees, k, &costlier) == Adoption::UseGraph, "raising c flipped to defect");
        }
    }
    Ok(format!("{n} range endpoints use_graph; 10000 perturbations monotone"))
}

fn c5_breakeven() -> Check {
    let n = breakeven(12_400.0, 640.0, 3_404.0).map_err(|e| e.to_string())?;
    ensure!(n == 4 && (3..=5).contains(&n), "got {n}");
    Ok(format!("breakeven = {n}"))
}

fn c6_three_paths() -> Check {
    let t = Instant::now();
    let cfg = FleetConfig::new(2, 1, 1, 6);
    let world = SimWorld::new(cfg.resolved_sites(), &cfg);
    let site = cfg.resolved_sites().remove(0);
    let intent = &site.intents[0];
    let q = IntentQuery { text: intent.text.clone(), domain_hint: Some(site.host.clone()), params: intent.params.clone() };
    let (a, b) = (world.agent(0, &cfg), world.agent(1, &cfg));

    let first = a.resolve_intent(&q).map_err(|e| e.to_string())?;
    ensure!(first.timing.source == Source::Discovery, "cold resolve came from {:?}", first.timing.source);
    ensure!(world.registry.get(&first.record_id).is_some(), "no published record");

    let before = world.ledger.len();
    let again = a.resolve_intent(&q).map_err(|e| e.to_string())?;
    ensure!(again.timing.source == Source::Cache, "re-resolve came from {:?}", again.timing.source);
    ensure!(again.fees_paid.is_empty() && world.ledger.len() == before, "cache path paid fees");

    let other = b.resolve_intent(&q).map_err(|e| e.to_string())?;
    ensure!(other.timing.source == Source::Graph, "second agent came from {:?}", other.timing.source);
    let charges: Vec<EntryKind> =
        world.ledger.entries().iter().filter(|e| e.payer == "agent-1").map(|e| e.kind).collect();
    ensure!(charges == vec![EntryKind::Tier3, EntryKind::Tier1], "agent-1 charges {charges:?}");
    let fee_kinds: Vec<EntryKind> = other.fees_paid.iter().map(|f| f.kind).collect();
    ensure!(fee_kinds == charges, "fees_paid {fee_kinds:?}");
    let ms = t.elapsed().as_millis();
    ensure!(ms < 5_000, "took {ms} ms");
    Ok(format!(
        "discovery {} ms, cache {} ms, graph {} ms (virtual); {ms} ms wall",
        first.timing.total_ms, again.timing.total_ms, other.timing.total_ms
    ))
}

fn c7_latency() -> Check {
    let mut cfg = FleetConfig::new(1, 16, 1, 7);
    cfg.latency = LatencyProfile { spread: 0.2, ..LatencyProfile::default() };
    let rows = latency_bench(&cfg, Execution::default()).map_err(|e| e.to_string())?;
    let ok: Vec<_> = rows.iter().filter(|r| r.error.is_none()).collect();
    ensure!(ok.len() == rows.len(), "sites failed: {:?}", rows.iter().filter_map(|r| r.error.as_ref()).collect::<Vec<_>>());
    let mean = |f: &dyn Fn(&&routegraph::simnet::SiteLatency) -> i64| ok.iter().map(f).sum::<i64>() as f64 / ok.len() as f64;
    let cached = mean(&|r| r.cached_ms.unwrap_or_default());
    let browser = mean(&|r| r.browser_ms);
    let cold = mean(&|r| r.cold_ms.unwrap_or_default());
    let speedup = browser / cached;
    ensure!(speedup >= 3.0, "browser/cached = {speedup:.2}");

    let sites = load_sites(
        &json!([{
            "host": "fast.sim",
            "pages": {"/": {"html": "<html></html>", "latency_ms": 2300}},
            "endpoints": [{"path": "/api/v/{id}", "latency_ms": 80, "response": {"v": "$int"}}]
        }])
        .to_string(),
    )
    .map_err(|e| e.to_string())?;
    let clock = SimClock::new(NOW);
    let web = SimWeb::new(sites, clock.clone());
    let timed = |url: &str| -> Result<i64, String> {
        let t0 = clock.now();
        let r = web.send(&Request::get(Url::parse(url).unwrap())).map_err(|e| e.to_string())?;
        ensure!(r.status == 200, "{url} -> {}", r.status);
        Ok(clock.now() - t0)
    };
    let ratio = timed("https://fast.sim/")? as f64 / timed("https://fast.sim/api/v/1")? as f64;
    ensure!((ratio - 29.0).abs() <= 1.0, "fast fixture ratio {ratio:.2}");
    Ok(format!(
        "mean browser {browser:.0} ms / cached {cached:.0} ms = {speedup:.2}x (cold {cold:.0} ms); fast fixture {ratio:.2}x"
    ))
}

fn c8_drift_lifecycle() -> Check {
    let sites = load_sites(
        &json!([{
            "host": "drift.sim",
            "pages": {"/": {"latency_ms": 2000}},
            "endpoints": [{"path": "/api/items/{id}", "latency_ms": 100,
                           "response": {"id": "$path.id", "price": "$float", "name": "$word"},
                           "samples": [{"id": "1001"}, {"id": "1002"}]}]
        }])
        .to_string(),
    )
    .map_err(|e| e.to_string())?;
    let clock = SimClock::new(NOW);
    let web = SimWeb::new(sites, clock.clone());
    let reg = Registry::in_memory();
    let archive = web.capture_site("drift.sim").unwrap();
    let kept = filter_archive(&archive, &FilterPolicy::default());
    let pkg = distill(&kept, &mut Vault::in_memory(), "agent-a", NOW).map_err(|e| e.to_string())?.remove(0);
    let id = publish(&reg, &pkg.publishable(), NOW);
    let ep = "GET /api/items/{id}";
    let cfg = VerificationConfig::default();
    let pass = |reg: &Registry| {
        clock.advance(cfg.cadence_ms);
        verification_pass(reg, &web, &cfg, clock.now())
    };
    let state = |reg: &Registry| {
        let r = reg.get(&id).unwrap();
        (r.lifecycle, r.verification_status)
    };
    let listed = |reg: &Registry| {
        reg.search("items price", 10, &ScoringWeights::default(), clock.now()).map(|v| v.iter().any(|r| r.id == id)).unwrap_or(false)
    };

    web.inject_drift("drift.sim", ep, DriftKind::RemoveField { field: "price".into() });
    let report = probe_endpoint(&web, "drift.sim", &pkg.endpoints[0]).drift.ok_or("probe returned no drift report")?;
    ensure!(report.critical, "remove-field drift not critical: {}", report.summary());
    pass(&reg);
    ensure!(state(&reg).1 == VerificationStatus::DriftFlagged, "status {:?}", state(&reg).1);

    // a flagged endpoint comes back clean before the outage run
    web.clear_drift("drift.sim");
    pass(&reg);
    ensure!(state(&reg) == (Lifecycle::Active, VerificationStatus::Verified), "after clean pass {:?}", state(&reg));

    web.set_down("drift.sim", ep, true);
    pass(&reg);
    pass(&reg);
    ensure!(state(&reg).0 == Lifecycle::Active, "deprecated before the third failure");
    pass(&reg);
    ensure!(state(&reg).0 == Lifecycle::Deprecated, "after 3 failures {:?}", state(&reg).0);

    web.set_down("drift.sim", ep, false);
    web.inject_drift("drift.sim", ep, DriftKind::ChangeType { field: "price".into() });
    pass(&reg);
    pass(&reg);
    ensure!(state(&reg).0 == Lifecycle::Disabled, "after confirmed failure {:?}", state(&reg).0);
    ensure!(!listed(&reg), "disabled record still searchable");

    web.clear_drift("drift.sim");
    pass(&reg);
    ensure!(state(&reg) == (Lifecycle::Active, VerificationStatus::Verified), "after reverify {:?}", state(&reg));
    ensure!(listed(&reg), "restored record not searchable");
    Ok("drift-flagged, deprecated after 3 failures, disabled and unlisted, reverified active".into())
}

fn gated_service(fee: Micros, wallet: &Wallet) -> (Arc<RegistryService>, Arc<Ledger>) {
    let adapter = Arc::new(MockAdapter::default());
    adapter.register(wallet);
    let reg = Arc::new(Registry::in_memory());
    publish(&reg, &shop_package("agent-a"), NOW);
    let ledger = Arc::new(Ledger::in_memory());
    let mut config = ServiceConfig::default();
    config.fees.f_search = fee;
    let svc = RegistryService::new(reg, ledger.clone(), Arc::new(PaymentGate::new(adapter)), Arc::new(SimClock::new(NOW)), config);
    (Arc::new(svc), ledger)
}

fn c9_handshake() -> Check {
    let wallet = Wallet::new("agent-b", b"b-secret".to_vec());
    let (svc, ledger) = gated_service(Micros(1_000), &wallet);
    let url = Url::parse("https://registry.sim/v1/skills/search?q=product&k=3").unwrap();
    let bare = svc.send(&Request::get(url.clone())).unwrap();
    ensure!(bare.status == 402, "ungated request got {}", bare.status);
    let terms: PaymentTerms = serde_json::from_slice(&bare.body).map_err(|e| format!("402 body: {e}"))?;
    ensure!(terms.amount == Micros(1_000), "terms amount {:?}", terms.amount);

    let env = PaymentEnvelope { proof: sign_with_wallet(&terms, &wallet), terms: terms.clone() };
    let paid = Request::get(url.clone()).with_header(PAYMENT_PROOF_HEADER, env.to_header());
    let ok = svc.send(&paid).unwrap();
    ensure!(ok.status == 200, "valid proof got {}", ok.status);
    let code = |r: &routegraph::http::Response| r.json_body().and_then(|v| v["error"].as_str().map(str::to_owned)).unwrap_or_default();
    let replay = svc.send(&paid).unwrap();
    ensure!(replay.status == 402 && code(&replay) == "replay", "replay got {} {}", replay.status, code(&replay));

    let fresh: PaymentTerms = serde_json::from_slice(&svc.send(&Request::get(url.clone())).unwrap().body).unwrap();
    let mut forged = PaymentEnvelope { proof: sign_with_wallet(&fresh, &wallet), terms: fresh };
    forged.terms.amount = Micros(1);
    let tampered = svc.send(&Request::get(url).with_header(PAYMENT_PROOF_HEADER, forged.to_header())).unwrap();
    ensure!(code(&tampered) == "bad_signature", "tampered amount got {}", code(&tampered));
    ensure!(ledger.len() == 1, "ledger has {} entries", ledger.len());

    let count = |fee: Micros| -> Result<usize, String> {
        let (svc, _) = gated_service(fee, &wallet);
        let trace = Arc::new(TracingTransport::new(svc));
        let client = HttpRegistryClient::new(trace.clone(), Url::parse("https://registry.sim/").unwrap(), wallet.clone());
        client.search("product", 3, None, Micros(100_000)).map_err(|e| e.to_string())?;
        Ok(trace.count())
    };
    let (gated, free) = (count(Micros(1_000))?, count(Micros::ZERO)?);
    ensure!(gated == free + 1, "gated {gated} vs ungated {free} round trips");
    Ok(format!("402 -> 200; replay and tamper rejected; {gated} vs {free} round trips"))
}

fn c10_attribution() -> Check {
    let reg = Arc::new(Registry::in_memory());
    let base = shop_package("discoverer");
    let id = publish(&reg, &base, NOW);

    let mut params = base.clone();
    params.contributor = "param-mapper".into();
    params.endpoints[0].query_schema.insert("currency".into(), QueryParam { kind: ScalarKind::String, required: false });
    params.endpoints[0].query_schema.insert("locale".into(), QueryParam { kind: ScalarKind::String, required: false });
    publish(&reg, &params, NOW + 1);

    let mut auth = base.clone();
    auth.contributor = "auth-documenter".into();
    auth.endpoints[0].auth = AuthDescriptor { kind: AuthKind::Bearer, location: Some("Authorization".into()), value_ref: None };
    publish(&reg, &auth, NOW + 2);

    let rec = reg.get(&id).unwrap();
    let scores = rec.attributions.clone();
    ensure!(scores.len() == 3 && scores.values().all(|s| *s > 0.0), "attributions {scores:?}");

    let wallet = Wallet::new("installer", b"i".to_vec());
    let adapter = Arc::new(MockAdapter::default());
    adapter.register(&wallet);
    let ledger = Arc::new(Ledger::in_memory());
    let clock = SimClock::new(NOW + 3);
    let svc = Arc::new(RegistryService::new(
        reg.clone(),
        ledger.clone(),
        Arc::new(PaymentGate::new(adapter)),
        Arc::new(clock),
        ServiceConfig::default(),
    ));
    let client = HttpRegistryClient::new(svc, Url::parse("https://registry.sim/").unwrap(), wallet);
    let inst = client.install(&id, Micros(100_000)).map_err(|e| e.to_string())?;
    let contributor_pay: BTreeMap<String, u64> = inst
        .receipt
        .iter()
        .filter(|e| e.kind == EntryKind::Payout && e.reference.ends_with("#C"))
        .map(|e| (e.payee.clone(), e.amount.0))
        .collect();
    let pool: u64 = contributor_pay.values().sum();
    let expected_pool = split_fee(inst.price, &FeeSplit::default()).unwrap().contributors.0;
    ensure!(pool == expected_pool, "contributor pool {pool} != {expected_pool}");
    let total: f64 = scores.values().sum();
    for (who, s) in &scores {
        let want = pool as f64 * s / total;
        let got = *contributor_pay.get(who).unwrap_or(&0) as f64;
        ensure!((got - want).abs() <= 1.0 + 1e-9, "{who}: paid {got}, proportional share {want:.3}");
    }
    ensure!(ledger.check_conservation().is_ok(), "ledger not conserved");

    // dust: one line out of a large schema with an unchanged embedding
    let p = DeltaParams::default();
    let lines: Vec<String> = (0..400).map(|i| format!("response.f{i}: number")).collect();
    let before = RouteSnapshot { lines: lines.clone(), embedding: vec![1.0, 0.0] };
    let mut dust_scores = scores.clone();
    for k in 0..5 {
        let mut after = before.clone();
        after.lines[k] = format!("response.f{k}: string");
        let s = delta_score(&before, &after, &p);
        ensure!(s == 0.0, "dust commit {k} scored {s}");
        dust_scores.insert(format!("dust-{k}"), s);
    }
    let with_dust = distribute_contributor_share(Micros(pool), &dust_scores).map_err(|e| e.to_string())?;
    ensure!(with_dust.iter().all(|(k, v)| !k.starts_with("dust-") || v.0 == 0), "dust accrued {with_dust:?}");
    ensure!(with_dust.values().map(|m| m.0).sum::<u64>() == pool, "redistribution not exact");
    Ok(format!("price {} -> contributor pool {pool} µ split {contributor_pay:?}; 5 dust commits accrue 0", inst.price.0))
}

fn c11_filter() -> Check {
    let mut summary = Vec::new();
    for name in ["shop.har", "news.har", "weather.har"] {
        let raw = std::fs::read(fixture(name)).map_err(|e| e.to_string())?;
        let parsed = parse_archive(&raw).map_err(|e| e.to_string())?;
        let labelled: BTreeSet<(String, String)> = parsed
            .archive
            .entries
            .iter()
            .filter(|e| e.label == Some(true))
            .map(|e| (e.method.clone(), e.url.to_string()))
            .collect();
        ensure!(parsed.archive.entries.iter().all(|e| e.label.is_some()), "{name} has unlabelled entries");
        let kept: BTreeSet<(String, String)> = filter_archive(&parsed.archive, &FilterPolicy::default())
            .iter()
            .map(|e| (e.method.clone(), e.url.to_string()))
            .collect();
        let fp = kept.difference(&labelled).count();
        let fneg = labelled.difference(&kept).count();
        ensure!(fp == 0 && fneg == 0, "{name}: {fp} false positives, {fneg} false negatives");
        summary.push(format!("{name} {}/{}", kept.len(), parsed.archive.entries.len()));
    }
    Ok(summary.join(", "))
}

fn c12_cache_ttl() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("routes.json");
    {
        let cache = RouteCache::open(&path).map_err(|e| e.to_string())?;
        cache
            .put(RouteCacheEntry {
                intent_key: "k".into(),
                skill_id: "sk_1".into(),
                endpoint: "GET /x".into(),
                resolved_at: NOW,
                ttl_ms: 24 * MS_PER_HOUR,
            })
            .map_err(|e| e.to_string())?;
    }
    let reopened = RouteCache::open(&path).map_err(|e| e.to_string())?;
    ensure!(reopened.get("k", NOW + 24 * MS_PER_HOUR - 1).is_some(), "missing just before 24 h after restart");
    ensure!(reopened.get("k", NOW + 24 * MS_PER_HOUR).is_none(), "still live at exactly 24 h");
    Ok("live at 24h-1ms, expired at 24h, survives reopen".into())
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("composite scoring", c1_composite),
        ("freshness decay", c2_freshness),
        ("fee conservation", c3_fee_conservation),
        ("adoption condition", c4_adoption),
        ("breakeven", c5_breakeven),
        ("three-path end-to-end", c6_three_paths),
        ("latency regime", c7_latency),
        ("drift and lifecycle", c8_drift_lifecycle),
        ("402 handshake", c9_handshake),
        ("attribution", c10_attribution),
        ("filter precision", c11_filter),
        ("cache ttl", c12_cache_ttl),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
