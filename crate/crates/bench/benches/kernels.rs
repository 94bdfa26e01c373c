use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crowdlab_bench::{crowd, random_nonnegative, random_potentials, random_weights};
use crowdlab_core::aggregator::{init_state, run_chain, sample_cluster, sample_truth, Hyperparams, Schedule};
use crowdlab_core::ambiguity::rank1_factorize;
use crowdlab_core::labeler::{cost_weighted, cost_weighted_naive, forward_backward, viterbi};

fn gibbs(c: &mut Criterion) {
    let ann = crowd(100, 1);
    let hyper = Hyperparams::new(3, ann.n_labels());
    let mut group = c.benchmark_group("gibbs");
    group.sample_size(20);
    group.bench_function("truth_and_cluster_sweep", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = init_state(&ann, &hyper, &mut rng).unwrap();
        b.iter(|| {
            for i in 0..ann.n_tokens() {
                sample_truth(i, &ann, &mut state, &hyper, &mut rng).unwrap();
            }
            for l in 0..ann.n_annotators() {
                sample_cluster(l, &mut state, &hyper, &mut rng).unwrap();
            }
        })
    });
    let schedule = Schedule { burn_in: 5, n_samples: 5, thin: 1, ..Default::default() };
    group.bench_function("run_chain_10_sweeps", |b| b.iter(|| run_chain(black_box(&ann), &hyper, &schedule, 3).unwrap()));
    group.finish();
}

fn chain(c: &mut Criterion) {
    let mut group = c.benchmark_group("cost_weighted");
    for len in [10, 40] {
        let p = random_potentials(len, 12, 5);
        let w = random_weights(len, 12, 6);
        group.bench_with_input(BenchmarkId::new("moment_pass", len), &len, |b, _| {
            b.iter(|| cost_weighted(black_box(&p), black_box(&w)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("naive_per_position", len), &len, |b, _| {
            b.iter(|| cost_weighted_naive(black_box(&p), black_box(&w)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", len), &len, |b, _| {
            b.iter(|| forward_backward(black_box(&p)))
        });
        group.bench_with_input(BenchmarkId::new("viterbi", len), &len, |b, _| b.iter(|| viterbi(black_box(&p))));
    }
    group.finish();
}

fn rank1(c: &mut Criterion) {
    let mut group = c.benchmark_group("rank1_factorize");
    for (rows, cols) in [(8, 20), (15, 40)] {
        let m = random_nonnegative(rows, cols, 9);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{rows}x{cols}")), &m, |b, m| {
            b.iter(|| rank1_factorize(black_box(m)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gibbs, chain, rank1);
criterion_main!(benches);
