//! Transducer loss against exhaustive alignment enumeration.

mod common;

use rand::Rng;
use slu_core::rng::stream;
use slu_core::rnnt::{rnnt_loss, Lattice};

fn random_lattice(t_len: usize, u_len: usize, vocab: usize, seed: u64) -> Lattice {
    let mut rng = stream(seed, &[41]);
    let mut log_probs = Vec::with_capacity(t_len * u_len * vocab);
    for _ in 0..t_len * u_len {
        let logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(-2.5..2.5)).collect();
        let lse = slu_core::nn::log_sum_exp(&logits);
        log_probs.extend(logits.iter().map(|l| l - lse));
    }
    Lattice::new(t_len, u_len, vocab, log_probs).unwrap()
}

#[test]
fn loss_and_gradient_match_enumeration_over_all_small_shapes() {
    let vocab = 6;
    let mut cases = 0;
    for t_len in 1..=4 {
        for u in 0..=3 {
            for rep in 0..10 {
                let seed = (t_len * 100 + u * 10 + rep) as u64;
                let lat = random_lattice(t_len, u + 1, vocab, seed);
                let mut rng = stream(seed, &[42]);
                let targets: Vec<u32> =
                    (0..u).map(|_| rng.random_range(1..vocab as u32)).collect();
                let res = rnnt_loss(&lat, &targets, 0).unwrap();
                let (nll_ref, grad_ref) = common::enumerate_rnnt_loss(&lat, &targets, 0);
                assert!(
                    (res.nll - nll_ref).abs() < 1e-10,
                    "T={t_len} U={u} rep={rep}: fb {} vs enum {}",
                    res.nll,
                    nll_ref
                );
                for (i, (a, b)) in res.grad.iter().zip(grad_ref.iter()).enumerate() {
                    assert!(
                        (a - b).abs() < 1e-8,
                        "T={t_len} U={u} rep={rep} grad[{i}]: fb {a} vs enum {b}"
                    );
                }
                assert!((res.log_lik_alpha - res.log_lik_beta).abs() < 1e-6);
                cases += 1;
            }
        }
    }
    assert!(cases >= 100, "only {cases} oracle cases exercised");
}

#[test]
fn gradient_matches_finite_differences_through_the_lattice() {
    let lat = random_lattice(3, 3, 5, 77);
    let targets = vec![2u32, 4u32];
    let res = rnnt_loss(&lat, &targets, 0).unwrap();
    let eps = 1e-6;
    for idx in 0..lat.log_probs.len() {
        let mut up = lat.clone();
        up.log_probs[idx] += eps;
        let mut down = lat.clone();
        down.log_probs[idx] -= eps;
        let f_up = rnnt_loss(&up, &targets, 0).unwrap().nll;
        let f_down = rnnt_loss(&down, &targets, 0).unwrap().nll;
        let numeric = (f_up - f_down) / (2.0 * eps);
        assert!(
            (res.grad[idx] - numeric).abs() < 1e-6,
            "idx {idx}: analytic {} numeric {}",
            res.grad[idx],
            numeric
        );
    }
}
