use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selector_core::pit::{oracle_select, pit_loss};
use selector_core::signal::{log_mse_loss, si_sdr};

fn signals(k: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Every permutation of 0..k by recursive swapping.
fn all_perms(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, i: usize, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for j in i..cur.len() {
            cur.swap(i, j);
            rec(cur, i + 1, out);
            cur.swap(i, j);
        }
    }
    let mut out = Vec::new();
    rec(&mut (0..k).collect(), 0, &mut out);
    out
}

fn loss_under(refs: &[Vec<f64>], ests: &[Vec<f64>], perm: &[usize]) -> f64 {
    let total: f64 = perm.iter().enumerate().map(|(r, &e)| log_mse_loss(&refs[r], &ests[e]).unwrap()).sum();
    total / refs.len() as f64
}

#[test]
fn pit_matches_brute_force_for_k_2_to_4() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for k in 2..=4 {
        for _ in 0..100 {
            let refs = signals(k, 64, &mut rng);
            let ests = signals(k, 64, &mut rng);
            let oracle = all_perms(k)
                .iter()
                .map(|p| loss_under(&refs, &ests, p))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(pit_loss(&refs, &ests).unwrap(), oracle);
        }
    }
}

#[test]
fn oracle_select_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..100 {
        let outs = signals(4, 64, &mut rng);
        let reference = signals(1, 64, &mut rng).remove(0);
        let scores: Vec<f64> = outs.iter().map(|o| si_sdr(&reference, o).unwrap()).collect();
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        assert_eq!(oracle_select(&outs, &reference).unwrap(), best);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pit_is_a_lower_bound_and_permutation_symmetric(k in 2usize..=4, seed in 0u64..10_000, shift in 0usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let refs = signals(k, 32, &mut rng);
        let ests = signals(k, 32, &mut rng);
        let loss = pit_loss(&refs, &ests).unwrap();
        for p in all_perms(k) {
            prop_assert!(loss <= loss_under(&refs, &ests, &p));
        }
        let perms = all_perms(k);
        let p = &perms[shift % perms.len()];
        let shuffled: Vec<Vec<f64>> = p.iter().map(|&i| ests[i].clone()).collect();
        prop_assert!((pit_loss(&refs, &shuffled).unwrap() - loss).abs() <= 1e-12);
    }

    #[test]
    fn oracle_never_picks_a_worse_output(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outs = signals(5, 32, &mut rng);
        let reference = signals(1, 32, &mut rng).remove(0);
        let pick = oracle_select(&outs, &reference).unwrap();
        let chosen = si_sdr(&reference, &outs[pick]).unwrap();
        for o in &outs {
            prop_assert!(chosen >= si_sdr(&reference, o).unwrap());
        }
    }
}
