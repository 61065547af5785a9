//! Sequential against rayon-parallel execution of the hot paths.

use std::hint::black_box;

use cardiaq::phantom::{phantom_suite, PhantomCase, PhantomSpec};
use cardiaq::roi::{crop_pairs, locate_heuristic};
use cardiaq::segnet::{segment_study, train, Architecture, NetworkParams, TrainConfig};
use cardiaq::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const STRATEGIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn case(frames: usize) -> PhantomCase {
    let c = phantom_suite(1, 7).unwrap().remove(0);
    PhantomCase { spec: PhantomSpec { frames, ..c.spec }, ..c }
}

fn bench_segmentation(c: &mut Criterion) {
    let phantom = case(25).generate().unwrap();
    let roi = locate_heuristic(&phantom.study).unwrap().roi;
    let params = NetworkParams::init(Architecture::default(), &TrainConfig::default()).unwrap();
    let mut group = c.benchmark_group("segment_study_25x10");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| segment_study(&params, black_box(&phantom.study), &roi, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_phantom(c: &mut Criterion) {
    let case = case(20);
    let mut group = c.benchmark_group("phantom_20x10");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| case.generate_with(exec).unwrap())
        });
    }
    group.finish();
}

fn bench_training_epoch(c: &mut Criterion) {
    let phantom = case(2).generate().unwrap();
    let roi = locate_heuristic(&phantom.study).unwrap().roi;
    let picks: Vec<(usize, usize)> = (0..8).map(|s| (0, s)).collect();
    let data = crop_pairs(&phantom.study, &phantom.labels, &roi, &picks).unwrap();
    let config = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() };
    let mut group = c.benchmark_group("train_epoch_batch8");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| train(black_box(&data), Architecture::default(), &config, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_segmentation, bench_phantom, bench_training_epoch);
criterion_main!(benches);
