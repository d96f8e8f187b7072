use std::hint::black_box;

use criterion::{criterion_group, BenchmarkId, Criterion, Throughput};
use fscgrad::actor::{critic_features, estimate, EstimatorConfig, EstimatorKind};
use fscgrad::critic::{lspe_batch, Criterion as Fit};
use fscgrad::stats::centered_costs;
use fscgrad::toy::{toy2, toy2_controller};
use fscgrad::{simulate, InitialState};

const LEN: usize = 20_000;

fn simulation(c: &mut Criterion) {
    let (m, p) = (toy2(), toy2_controller());
    let mut g = c.benchmark_group("simulate");
    g.throughput(Throughput::Elements(LEN as u64));
    g.bench_function("toy2", |b| {
        b.iter(|| simulate(&m, &p, LEN, black_box(1), &InitialState::Model).unwrap())
    });
    g.finish();
}

fn critic(c: &mut Criterion) {
    let (m, p) = (toy2(), toy2_controller());
    let view = simulate(&m, &p, LEN, 1, &InitialState::Model).unwrap().hidden_view();
    let (f, _) = critic_features(&p).unwrap();
    let costs = centered_costs(view.steps().iter().map(|s| s.g));
    let mut g = c.benchmark_group("lspe");
    g.throughput(Throughput::Elements(LEN as u64));
    for snapshots in [false, true] {
        g.bench_with_input(BenchmarkId::new("toy2", snapshots), &snapshots, |b, &s| {
            b.iter(|| lspe_batch(&view, &f, Fit::Discounted(0.9), 0.9, &costs, s).unwrap())
        });
    }
    g.finish();
}

fn estimators(c: &mut Criterion) {
    let (m, p) = (toy2(), toy2_controller());
    let view = simulate(&m, &p, LEN, 1, &InitialState::Model).unwrap().hidden_view();
    let mut g = c.benchmark_group("estimate");
    g.throughput(Throughput::Elements(LEN as u64));
    for kind in EstimatorKind::ALL {
        let cfg = EstimatorConfig {
            kind,
            ..Default::default()
        };
        g.bench_function(kind.tag(), |b| b.iter(|| estimate(black_box(&view), &p, &cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, simulation, critic, estimators);
criterion::criterion_main!(benches);
