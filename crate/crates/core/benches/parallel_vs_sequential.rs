//! Sequential vs parallel execution of the two hot loops: proxy scoring over
//! a search space and bench-style training of several architectures.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use atlas_core::data::{make_synthetic, split, SplitSpec, SyntheticSpec};
use atlas_core::nn::{train_epochs, Init, MlpModel, TrainConfig};
use atlas_core::par::{self, default_workers, Execution};
use atlas_core::proxies::{ProxyEvaluator, ProxyKind, ScoreConfig};
use atlas_core::space::SearchSpaceSpec;

fn modes() -> Vec<(&'static str, Execution)> {
    let w = default_workers().max(2);
    vec![("sequential", Execution::Sequential), ("parallel", Execution::Parallel(w))]
}

fn proxy_scoring(c: &mut Criterion) {
    let space = SearchSpaceSpec::new(3, vec![8, 16, 32, 64, 128]).unwrap();
    let archs = space.enumerate().unwrap();
    let eval = ProxyEvaluator::new(ProxyKind::ExpressFlow, ScoreConfig::default(), 16, None).unwrap();
    let mut g = c.benchmark_group("expressflow_125_archs");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| par::map(&archs, exec, |a| eval.score(a).unwrap().value))
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let ds = make_synthetic(SyntheticSpec { n: 1000, d: 8, noise: 0.1, seed: 7 }).unwrap();
    let (train, val) = split(&ds, SplitSpec::default()).unwrap();
    let space = SearchSpaceSpec::new(2, vec![8, 16, 32]).unwrap();
    let archs = space.enumerate().unwrap();
    let mut g = c.benchmark_group("train_9_archs_2_epochs");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                par::map(&archs, exec, |a| {
                    let mut m = MlpModel::build(a.sizes(), 8, Init::he(0)).unwrap();
                    train_epochs(&mut m, &train, &val, 2, TrainConfig::default()).unwrap()[1].val_auc
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, proxy_scoring, training);
criterion_main!(benches);
