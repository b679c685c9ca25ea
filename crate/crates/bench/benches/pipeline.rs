use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use methodforge::gateway::Embedder;
use methodforge::persistence;
use methodforge::tree::{PlacementAdvice, TreeParams};
use methodforge::{Config, Orchestrator};
use methodforge_bench::{method, problem_text, repository};

const CS2: &str = "For this kind of question, you should first check whether the SuHongKey software exists or not.";
const CS3: &str = "When we create a project, then we try to create another project. Please tell how to re-create a project in HongHanKey software.";

fn embedding(c: &mut Criterion) {
    let embedder = Embedder::default();
    let text = problem_text(17);
    c.bench_function("embed_problem", |b| b.iter(|| embedder.features(std::hint::black_box(&text))));
}

fn tree(c: &mut Criterion) {
    let embedder = Embedder::default();
    let mut group = c.benchmark_group("repository");
    for n in [100, 1000] {
        let repo = repository(n);
        let probe = embedder.features(&problem_text(n / 2));
        let config = Config::default();
        let params = TreeParams::default();
        group.bench_with_input(BenchmarkId::new("find_candidates", n), &n, |b, _| {
            b.iter(|| repo.find_candidates(&probe, config.k, config.theta, None).unwrap())
        });
        let extra = method(&embedder, n + 1);
        group.bench_with_input(BenchmarkId::new("insert", n), &n, |b, _| {
            b.iter_batched(
                || repo.clone(),
                |mut r| r.insert(extra.clone(), &PlacementAdvice::Automatic).unwrap(),
                BatchSize::LargeInput,
            )
        });
        group.bench_with_input(BenchmarkId::new("snapshot_round_trip", n), &n, |b, _| {
            b.iter(|| persistence::from_bytes(&persistence::to_bytes(&repo), params).unwrap())
        });
    }
    group.finish();
}

fn query(c: &mut Criterion) {
    let mut o = Orchestrator::from_config(Config::default()).unwrap();
    let s = o.create_session(None);
    o.handle_query(&s, CS2).unwrap();
    c.bench_function("handle_query_mock", |b| {
        b.iter(|| {
            let s = o.create_session(None);
            o.handle_query(&s, CS3).unwrap()
        })
    });
}

criterion_group!(benches, embedding, tree, query);
criterion_main!(benches);
