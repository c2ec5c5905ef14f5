//! Metric implementations checked against independent brute-force oracles.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ucd_core::metrics::{ks_two_sample, model_utility, rouge_l_recall};

/// O(nm) KS statistic: evaluate both empirical CDFs at every sample point
/// with a nested count, entirely independent of the implementation.
fn ks_brute_force(xs: &[f64], ys: &[f64]) -> f64 {
    let mut d: f64 = 0.0;
    for &t in xs.iter().chain(ys.iter()) {
        let fx = xs.iter().filter(|&&x| x <= t).count() as f64 / xs.len() as f64;
        let fy = ys.iter().filter(|&&y| y <= t).count() as f64 / ys.len() as f64;
        d = d.max((fx - fy).abs());
    }
    d
}

/// Maximum common-subsequence length by enumerating every subsequence of the
/// candidate. Exponential, fine for length <= 8.
fn lcs_by_enumeration(candidate: &[&str], reference: &[&str]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << candidate.len()) {
        let sub: Vec<&str> = candidate
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, w)| *w)
            .collect();
        if sub.len() <= best {
            continue;
        }
        // Subsequence-of-reference check by greedy scan.
        let mut it = reference.iter();
        if sub.iter().all(|w| it.any(|r| r == w)) {
            best = sub.len();
        }
    }
    best
}

#[test]
fn ks_statistic_matches_brute_force_on_500_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..500 {
        let n = rng.random_range(1..=50usize);
        let m = rng.random_range(1..=50usize);
        // Coarse grid values make ties common, stressing the tie handling.
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 4.0).collect();
        let ys: Vec<f64> = (0..m).map(|_| rng.random_range(0..20) as f64 / 4.0).collect();
        let (d, p) = ks_two_sample(&xs, &ys).unwrap();
        let expected = ks_brute_force(&xs, &ys);
        assert_eq!(d, expected, "xs={xs:?} ys={ys:?}");
        assert!(p > 0.0 && p <= 1.0);
    }
}

#[test]
fn rouge_matches_subsequence_enumeration_on_500_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let alphabet = ["a", "b", "c"];
    for _ in 0..500 {
        let clen = rng.random_range(0..=8usize);
        let rlen = rng.random_range(1..=8usize);
        let cand: Vec<&str> = (0..clen)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        let refr: Vec<&str> = (0..rlen)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        let got = rouge_l_recall(&cand.join(" "), &refr.join(" ")).unwrap();
        let expected = lcs_by_enumeration(&cand, &refr) as f64 / rlen as f64;
        assert_eq!(got, expected, "cand={cand:?} ref={refr:?}");
    }
}

proptest! {
    /// Harmonic mean is permutation invariant and never exceeds the
    /// arithmetic mean.
    #[test]
    fn utility_is_permutation_invariant_and_below_arithmetic_mean(
        mut components in prop::collection::vec(0.01..1.0f64, 1..6),
        swap in any::<(usize, usize)>(),
    ) {
        let utility = model_utility(&components).unwrap();
        let arithmetic = components.iter().sum::<f64>() / components.len() as f64;
        prop_assert!(utility <= arithmetic + 1e-12);
        let (i, j) = (swap.0 % components.len(), swap.1 % components.len());
        components.swap(i, j);
        let permuted = model_utility(&components).unwrap();
        prop_assert!((utility - permuted).abs() < 1e-12);
    }
}
