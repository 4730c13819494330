//! One worker against the full pool on the CV-heavy paths.
//!
//! `cargo bench -p completeness-core` compares pool sizes;
//! `cargo bench -p completeness-core --no-default-features` times the
//! sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use completeness_core::eval::{cross_validate, make_folds, Estimator};
use completeness_core::risk::cpt_model;
use completeness_core::seq::{urn_model, SeqOutput, UrnOptions};
use completeness_core::synth::{gen_risk, gen_sequences, RiskGenSpec, SeqGenSpec};
use completeness_core::trees::TreeConfig;
use completeness_core::{Dataset, FitConfig, LossFunction};

fn pools() -> Vec<usize> {
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    if n > 1 {
        vec![1, n]
    } else {
        vec![1]
    }
}

fn bench_cv(c: &mut Criterion, name: &str, est: &Estimator, data: &Dataset) {
    let mse = LossFunction::squared_error();
    let plan = make_folds(data.len(), 10, 0).unwrap();
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    for threads in pools() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| black_box(cross_validate(est, data, &mse, &plan).unwrap())))
        });
    }
    group.finish();
}

fn benches(c: &mut Criterion) {
    let (risk, _) = gen_risk(&RiskGenSpec::default()).unwrap();
    let cpt = Estimator::model(cpt_model(), FitConfig::default());
    bench_cv(c, "cv_cpt_risk", &cpt, &risk);

    let seq = gen_sequences(&SeqGenSpec::default()).unwrap().0;
    let urn = Estimator::model(urn_model(SeqOutput::Probability, UrnOptions::default()), FitConfig::default());
    bench_cv(c, "cv_urn_sequences", &urn, &seq);

    let trees = Estimator::trees(
        "trees",
        TreeConfig {
            n_trees: 20,
            ..TreeConfig::default()
        },
    );
    bench_cv(c, "cv_trees_risk", &trees, &risk);
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
