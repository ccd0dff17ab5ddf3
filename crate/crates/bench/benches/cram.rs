use std::hint::black_box;

use cramkit::{
    cram_run, partition_batches, sample_split_run, stable_wrap, variance_hat, CramOptions, Learner,
    Policy, PolicySequence, RidgeLearner, StabilityParams,
};
use cramkit_bench::linear_trial;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn bench_cram_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("cram_run");
    group.sample_size(20);
    for &n in &[500usize, 5_000, 50_000] {
        let data = linear_trial(n, 5, 1);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("slearner_t20", n), &data, |b, data| {
            b.iter(|| {
                let mut learner = RidgeLearner::s_learner(5, 0.1).unwrap();
                cram_run(
                    data,
                    &mut learner,
                    &Policy::treat_none(),
                    &CramOptions::default(),
                )
                .unwrap()
                .delta_hat
            })
        });
    }
    let data = linear_trial(5_000, 5, 2);
    for &t in &[5usize, 20, 80] {
        let options = CramOptions {
            num_batches: t,
            ..CramOptions::default()
        };
        group.bench_with_input(
            BenchmarkId::new("batches_n5000", t),
            &options,
            |b, options| {
                b.iter(|| {
                    let mut learner = RidgeLearner::s_learner(5, 0.1).unwrap();
                    cram_run(&data, &mut learner, &Policy::treat_none(), options)
                        .unwrap()
                        .delta_hat
                })
            },
        );
    }
    group.bench_function("stable_slearner_n5000", |b| {
        let params = StabilityParams::for_batches(20);
        b.iter(|| {
            let inner = RidgeLearner::s_learner(5, 0.1).unwrap();
            let mut learner = stable_wrap(inner, params, Policy::treat_none());
            cram_run(
                &data,
                &mut learner,
                &Policy::treat_none(),
                &CramOptions::default(),
            )
            .unwrap()
            .delta_hat
        })
    });
    group.finish();
}

fn bench_split(c: &mut Criterion) {
    let data = linear_trial(5_000, 5, 3);
    c.bench_function("sample_split_n5000", |b| {
        b.iter(|| {
            let mut learner = RidgeLearner::s_learner(5, 0.1).unwrap();
            sample_split_run(&data, &mut learner, &Policy::treat_none(), 0.8, 0, 0.05)
                .unwrap()
                .delta_hat
        })
    });
}

fn bench_ridge(c: &mut Criterion) {
    let mut group = c.benchmark_group("ridge");
    for &p in &[5usize, 20, 50] {
        let data = linear_trial(1_000, p, 4);
        group.throughput(Throughput::Elements(1_000));
        group.bench_with_input(BenchmarkId::new("update_1000_rows", p), &data, |b, data| {
            b.iter(|| {
                let mut learner = RidgeLearner::s_learner(p, 0.1).unwrap();
                learner.update(black_box(data.observations())).unwrap();
                learner
            })
        });
        let mut fitted = RidgeLearner::s_learner(p, 0.1).unwrap();
        fitted.update(data.observations()).unwrap();
        group.bench_with_input(BenchmarkId::new("emit_policy", p), &fitted, |b, fitted| {
            b.iter(|| fitted.emit_policy().unwrap())
        });
    }
    group.finish();
}

fn bench_variance(c: &mut Criterion) {
    let data = linear_trial(5_000, 5, 5);
    let plan = partition_batches(&data, 20, 0, 0, 0).unwrap();
    let batches = plan.materialize(&data);
    let mut learner = RidgeLearner::s_learner(5, 0.1).unwrap();
    let mut seq = PolicySequence::new(Policy::treat_none());
    for batch in &batches {
        learner.update(batch).unwrap();
        seq.push(learner.emit_policy().unwrap());
    }
    c.bench_function("variance_hat_n5000_t20", |b| {
        b.iter(|| variance_hat(black_box(&seq), black_box(&batches)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_cram_run,
    bench_split,
    bench_ridge,
    bench_variance
);
criterion_main!(benches);
