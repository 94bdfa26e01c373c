use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdlab_core::aggregator::{
    init_state, mh_beta, mh_eta, run_chain, Hyperparams, MhMode, SamplerState, Schedule,
};
use crowdlab_core::crowdsim::{simulate_labels, SimPlan};
use crowdlab_core::{Annotation, CrowdAnnotations};

fn random_crowd(rng: &mut ChaCha8Rng, n: usize, l_n: usize, tn: usize) -> CrowdAnnotations {
    let entries = (0..n)
        .flat_map(|i| (0..l_n).map(move |l| (i, l)))
        .map(|(i, l)| Annotation { token: i, annotator: l, label: rng.random_range(0..tn) })
        .collect();
    CrowdAnnotations::new(&[n], tn, l_n, entries).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn mh_refreshes_keep_rows_on_simplex(seed in 0u64..10_000, corrected in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tn = rng.random_range(2..=5);
        let ann = random_crowd(&mut rng, 12, 4, tn);
        let hyper = Hyperparams::new(2, tn);
        let mut st = init_state(&ann, &hyper, &mut rng).unwrap();
        let mode = if corrected { MhMode::Corrected } else { MhMode::Faithful };
        for _ in 0..5 {
            let members = st.members();
            for c in 0..2 {
                for t in 0..tn {
                    for j in (0..tn).filter(|&j| j != t) {
                        mh_beta(c, t, j, &mut st, &members[c], &hyper, 5, mode, &mut rng);
                        let sum: f64 = st.beta_row(c, t).iter().sum();
                        prop_assert!((sum - 1.0).abs() < 1e-12);
                        prop_assert!(st.beta_row(c, t).iter().all(|&b| b > 0.0));
                    }
                    mh_eta(c, t, &mut st, &members[c], &hyper, 5, mode, &mut rng);
                    prop_assert!(st.eta(c, t) > 0.0);
                }
            }
        }
    }
}

#[test]
fn faithful_eta_drifts_toward_zero_without_data() {
    // Without the Hastings factor the shrinking window biases every move
    // downward; the corrected chain keeps the Exponential(lambda) mean.
    let ann = CrowdAnnotations::new(&[1], 2, 1, vec![Annotation { token: 0, annotator: 0, label: 0 }]).unwrap();
    let hyper = Hyperparams::new(1, 2);
    let mut medians = Vec::new();
    for mode in [MhMode::Faithful, MhMode::Corrected] {
        let mut st = SamplerState::from_parts(&ann, 1, vec![0], vec![0], vec![0.5; 2], vec![0.5; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xs: Vec<f64> = (0..20_000)
            .map(|_| {
                mh_eta(0, 0, &mut st, &[], &hyper, 1, mode, &mut rng);
                st.eta(0, 0)
            })
            .collect();
        xs.sort_by(f64::total_cmp);
        medians.push(xs[xs.len() / 2]);
    }
    // Exponential(2) has median ln 2 / 2.
    assert!(medians[0] < 1e-6, "faithful median {}", medians[0]);
    assert!((medians[1] - std::f64::consts::LN_2 / 2.0).abs() < 0.1, "corrected median {}", medians[1]);
}

fn small_crowd(seed: u64) -> CrowdAnnotations {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gold: Vec<usize> = (0..240).map(|_| rng.random_range(0..4)).collect();
    let plan = SimPlan::new(vec![4, 3], vec![(0.85, 0.95), (0.2, 0.4)], seed).unwrap();
    simulate_labels(&gold, &[60, 60, 60, 60], 4, &plan).unwrap().annotations
}

#[test]
fn chains_are_reproducible_per_seed() {
    let ann = small_crowd(5);
    let hyper = Hyperparams::new(2, 4);
    let schedule = Schedule { burn_in: 20, n_samples: 20, thin: 1, mh_steps: 5, mh_mode: MhMode::Corrected };
    let a = run_chain(&ann, &hyper, &schedule, 9).unwrap();
    let b = run_chain(&ann, &hyper, &schedule, 9).unwrap();
    assert_eq!(a.z_hat, b.z_hat);
    assert_eq!(a.c_hat, b.c_hat);
    assert_eq!(a.diagnostics.log_likelihood, b.diagnostics.log_likelihood);
    let c = run_chain(&ann, &hyper, &schedule, 10).unwrap();
    assert_ne!(a.diagnostics.log_likelihood, c.diagnostics.log_likelihood);
}
