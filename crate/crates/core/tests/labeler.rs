use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdlab_core::ambiguity::LabelConfusion;
use crowdlab_core::labeler::{
    cost, cost_weighted, cost_weighted_naive, forward_backward, minimize, objective_and_gradient, potentials,
    train, CostTable, Instance, LbfgsConfig, Potentials, TrainConfig, TrainMode,
};
use crowdlab_core::synthetic::{synthetic_pos_corpus, SyntheticConfig};
use crowdlab_core::Corpus;

fn paths(len: usize, tn: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out.into_iter().flat_map(|p| (0..tn).map(move |y| [p.clone(), vec![y]].concat())).collect();
    }
    out
}

fn random_potentials(rng: &mut ChaCha8Rng, len: usize, tn: usize) -> Potentials {
    Potentials {
        len,
        n_labels: tn,
        unary: (0..len * tn).map(|_| rng.random_range(-2.0..2.0)).collect(),
        trans: (0..tn * tn).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

#[test]
fn zero_confusion_normalizer_is_hamming_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..30 {
        let (len, tn) = (rng.random_range(1..=5), rng.random_range(2..=4));
        let p = random_potentials(&mut rng, len, tn);
        let gold: Vec<usize> = (0..len).map(|_| rng.random_range(0..tn)).collect();
        let table = CostTable::hamming(tn);
        let table = &table;
        let w: Vec<f64> = gold.iter().flat_map(|&t| (0..tn).map(move |y| table.weight(t, y))).collect();
        let want: f64 = paths(len, tn)
            .iter()
            .map(|z| cost(z, &gold, table).unwrap() * p.score(z).exp())
            .sum::<f64>()
            .ln();
        let fast = cost_weighted(&p, &w).unwrap();
        let naive = cost_weighted_naive(&p, &w).unwrap();
        if want.is_finite() {
            assert!((fast.log_norm - want).abs() < 1e-10 * want.abs().max(1.0));
        } else {
            assert_eq!(fast.log_norm, f64::NEG_INFINITY);
        }
        for (a, b) in fast.unary.iter().zip(&naive.unary) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn losses_are_shift_invariant_per_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let (len, tn) = (rng.random_range(1..=6), rng.random_range(2..=5));
        let p = random_potentials(&mut rng, len, tn);
        let gold: Vec<usize> = (0..len).map(|_| rng.random_range(0..tn)).collect();
        let w: Vec<f64> = gold.iter().flat_map(|&t| (0..tn).map(move |y| if y == t { 0.0 } else { 0.6 })).collect();
        let mut q = p.clone();
        let k = rng.random_range(0..len);
        let shift = rng.random_range(-5.0..5.0);
        for y in 0..tn {
            q.unary[k * tn + y] += shift;
        }
        let cll = |p: &Potentials| p.score(&gold) - forward_backward(p).log_norm;
        let cs = |p: &Potentials| p.score(&gold) - cost_weighted(p, &w).unwrap().log_norm;
        assert!((cll(&p) - cll(&q)).abs() < 1e-10);
        assert!((cs(&p) - cs(&q)).abs() < 1e-10);
    }
}

/// Loss of one sequence at `w = theta[0] e_a + theta[1] e_b` by enumeration.
fn grid_loss(theta: [f64; 2], inst: &Instance, table: &CostTable, l2: f64, dim: usize, axes: (usize, usize)) -> f64 {
    let mut w = vec![0.0; dim];
    w[axes.0] = theta[0];
    w[axes.1] = theta[1];
    let p = potentials(&w, 2, &inst.feats);
    let z: f64 = paths(inst.gold.len(), 2)
        .iter()
        .map(|y| cost(y, &inst.gold, table).unwrap() * p.score(y).exp())
        .sum();
    0.5 * l2 * (theta[0] * theta[0] + theta[1] * theta[1]) - (p.score(&inst.gold) - z.ln())
}

#[test]
fn optimizer_reaches_grid_optimum() {
    // One feature per token, two labels: weights are [f0 x 2 labels | 2 x 2 transitions].
    let inst = Instance { feats: vec![vec![0], vec![0]], gold: vec![0, 1] };
    let table = CostTable::from_cf(&LabelConfusion::from_values(2, vec![0.0, 0.3, 0.3, 0.0]).unwrap());
    let (dim, axes, l2) = (6, (0, 3), 1.0);
    let restrict = |x: &[f64]| {
        let mut w = vec![0.0; dim];
        w[axes.0] = x[0];
        w[axes.1] = x[1];
        w
    };
    let min = minimize(
        |x| {
            let (loss, g) = objective_and_gradient(&restrict(x), 2, std::slice::from_ref(&inst), TrainMode::Cost, Some(&table), l2)?;
            Ok((loss, vec![g[axes.0], g[axes.1]]))
        },
        vec![0.0, 0.0],
        &LbfgsConfig { grad_tol: 1e-8, ..Default::default() },
    )
    .unwrap();
    let mut best = f64::INFINITY;
    for a in 0..=800 {
        for b in 0..=800 {
            let theta = [-4.0 + a as f64 * 0.01, -4.0 + b as f64 * 0.01];
            best = best.min(grid_loss(theta, &inst, &table, l2, dim, axes));
        }
    }
    assert!(min.converged);
    assert!((min.value - best).abs() < 1e-3, "optimizer {} vs grid {best}", min.value);
    assert!(min.value <= best + 1e-9);
}

fn shuffled(corpus: &Corpus, labels: &crowdlab_core::LabelSet, seed: u64) -> Corpus {
    let mut seqs = corpus.sequences().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..seqs.len()).rev() {
        seqs.swap(i, rng.random_range(0..=i));
    }
    Corpus::new(seqs, labels).unwrap()
}

#[test]
fn predictions_do_not_depend_on_training_order() {
    let (corpus, labels) = synthetic_pos_corpus(&SyntheticConfig { n_sequences: 80, seed: 11, ..Default::default() }).unwrap();
    let (test, _) = synthetic_pos_corpus(&SyntheticConfig { n_sequences: 40, seed: 12, ..Default::default() }).unwrap();
    let other = shuffled(&corpus, &labels, 3);
    let mut cf = vec![0.0; 144];
    cf[5] = 0.4;
    cf[5 * 12] = 0.4;
    let cf = LabelConfusion::from_values(12, cf).unwrap();
    for mode in [TrainMode::Cll, TrainMode::Cost] {
        let config = TrainConfig { mode, max_epochs: 60, ..Default::default() };
        let (a, _) = train(&corpus, &corpus.gold_column(0).unwrap(), &labels, Some(&cf), &config).unwrap();
        let (b, _) = train(&other, &other.gold_column(0).unwrap(), &labels, Some(&cf), &config).unwrap();
        assert_eq!(a.predict(&test), b.predict(&test));
    }
}

/// Held-out errors on the (ADJ, NOUN) pair, and all held-out errors.
fn confusable_errors(pred: &[usize], gold: &[usize], adj: usize, noun: usize) -> (usize, usize) {
    let errors: Vec<(usize, usize)> = pred.iter().zip(gold).filter(|(p, g)| p != g).map(|(p, g)| (*p, *g)).collect();
    let on_pair = errors.iter().filter(|&&(p, g)| (p, g) == (adj, noun) || (p, g) == (noun, adj)).count();
    (on_pair, errors.len())
}

#[test]
fn cost_mode_shifts_errors_toward_confusable_pair() {
    let (corpus, labels) = synthetic_pos_corpus(&SyntheticConfig { n_sequences: 150, seed: 21, ..Default::default() }).unwrap();
    let (test, _) = synthetic_pos_corpus(&SyntheticConfig { n_sequences: 300, seed: 22, ..Default::default() }).unwrap();
    let (adj, noun) = (labels.index("ADJ").unwrap(), labels.index("NOUN").unwrap());
    let mut cf = vec![0.0; 144];
    cf[adj * 12 + noun] = 0.9;
    cf[noun * 12 + adj] = 0.9;
    let cf = LabelConfusion::from_values(12, cf).unwrap();
    // Training labels carry 10% uniform noise so errors are not confined to the pair.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noisy: Vec<usize> = corpus
        .gold_column(0)
        .unwrap()
        .into_iter()
        .map(|t| if rng.random_bool(0.1) { rng.random_range(0..12) } else { t })
        .collect();
    let test_gold = test.gold_column(0).unwrap();
    let mut counts = Vec::new();
    for mode in [TrainMode::Cll, TrainMode::Cost] {
        let config = TrainConfig { mode, ..Default::default() };
        let (model, _) = train(&corpus, &noisy, &labels, Some(&cf), &config).unwrap();
        counts.push(confusable_errors(&model.predict(&test), &test_gold, adj, noun));
    }
    let ((cll_pair, cll_all), (cost_pair, cost_all)) = (counts[0], counts[1]);
    assert!(
        cost_pair > cll_pair,
        "pair errors: cost {cost_pair}/{cost_all} vs cll {cll_pair}/{cll_all}"
    );
}

proptest! {
    #[test]
    fn cost_is_symmetric_for_symmetric_confusion(
        upper in proptest::collection::vec(0.0f64..1.0, 6),
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..12),
    ) {
        let mut v = vec![0.0; 16];
        let mut k = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                v[i * 4 + j] = upper[k];
                v[j * 4 + i] = upper[k];
                k += 1;
            }
        }
        let table = CostTable::from_cf(&LabelConfusion::from_values(4, v).unwrap());
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        prop_assert_eq!(cost(&a, &b, &table).unwrap(), cost(&b, &a, &table).unwrap());
        prop_assert_eq!(cost(&a, &a, &table).unwrap(), 0.0);
    }
}
