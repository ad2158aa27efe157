use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use speclimit_bench::{families, CAPACITIES};
use speclimit_core::brw_tree::TokenTree;
use speclimit_core::drafting::draft_optimal;
use speclimit_core::verify_sim::{run_iterations, DraftMode, RunConfig};

fn bench_draft(c: &mut Criterion) {
    let mut group = c.benchmark_group("draft_optimal");
    for (id, family) in families() {
        for p in CAPACITIES {
            group.throughput(Throughput::Elements(p));
            group.bench_with_input(BenchmarkId::new(id, p), &p, |b, &p| {
                b.iter(|| draft_optimal(&family, p).unwrap().expected_accepted())
            });
        }
    }
    group.finish();
}

fn bench_count(c: &mut Criterion) {
    let mut group = c.benchmark_group("count_below");
    for (id, family) in families() {
        let tree = TokenTree::new(&family);
        for t in [2.0, 4.0, 6.0] {
            group.bench_with_input(BenchmarkId::new(id, t), &t, |b, &t| {
                b.iter(|| tree.count_below(t, 1 << 22))
            });
        }
    }
    group.finish();
}

fn bench_simulate(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_1k_iterations");
    group.sample_size(10);
    for (id, family) in families() {
        let cfg = RunConfig::new(64, DraftMode::Full, 1);
        group.bench_function(id, |b| b.iter(|| run_iterations(&family, &cfg, 1000).unwrap().mean_x));
    }
    group.finish();
}

criterion_group!(benches, bench_draft, bench_count, bench_simulate);
criterion_main!(benches);
