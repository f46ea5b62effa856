use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use routegraph::capture::{filter_archive, parse_archive, FilterPolicy};
use routegraph::distill::{distill, SkillPackage, Vault};
use routegraph::index::{validate_for_publish, Registry, ScoringWeights};
use routegraph::par::Execution;
use routegraph::simnet::{latency_bench, FleetConfig};

const NOW: i64 = 1_767_225_600_000;

fn registry(n: usize, exec: Execution) -> Registry {
    let raw = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/shop.har")).unwrap();
    let parsed = parse_archive(&raw).unwrap();
    let kept = filter_archive(&parsed.archive, &FilterPolicy::default());
    let base: SkillPackage = distill(&kept, &mut Vault::in_memory(), "bench", NOW).unwrap().remove(0).publishable();
    let reg = Registry::in_memory().with_execution(exec);
    for i in 0..n {
        let mut pkg = SkillPackage { domain: format!("shop{i}.example.com"), ..base.clone() };
        pkg.manifest_text = format!("{} catalogue {i} item{}", pkg.manifest_text, i % 97);
        let report = validate_for_publish(&pkg).unwrap();
        reg.publish(&pkg, &report, NOW).unwrap();
    }
    reg
}

fn search(c: &mut Criterion) {
    let mut g = c.benchmark_group("search");
    let w = ScoringWeights::default();
    for n in [1_000usize, 10_000] {
        for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let reg = registry(n, exec);
            g.bench_with_input(BenchmarkId::new(label, n), &n, |b, _| {
                b.iter(|| reg.search("product price catalogue", 10, &w, NOW).unwrap())
            });
        }
    }
    g.finish();
}

fn site_sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("latency_bench");
    g.sample_size(10);
    let cfg = FleetConfig::new(1, 64, 1, 1);
    for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_function(label, |b| b.iter(|| latency_bench(&cfg, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, search, site_sweep);
criterion_main!(benches);
