mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tradyn::stats::{percentile, wilcoxon_signed_rank};

#[test]
fn exact_p_matches_sign_enumeration_up_to_twelve() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in 5..=12 {
        for trial in 0..40 {
            // Half of the trials use coarse values to force ties and zeros.
            let coarse = trial % 2 == 0;
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = a
                .iter()
                .map(|x| {
                    if coarse {
                        x + (rng.random_range(-3i32..=3) as f64) * 0.5
                    } else {
                        x + rng.random_range(-1.0..1.3)
                    }
                })
                .collect();
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let got = wilcoxon_signed_rank(&a, &b).unwrap().p_value;
            let want = common::wilcoxon_enumeration(&d);
            assert!((got - want).abs() < 1e-12, "n={n} trial={trial}: {got} vs {want}");
        }
    }
}

#[test]
fn one_to_five_has_p_one_sixteenth() {
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
    assert_eq!((r.w_plus, r.w_minus), (15.0, 0.0));
    assert!((r.p_value - 0.0625).abs() < 1e-15);
}

#[test]
fn identical_samples_give_p_one() {
    let a = [0.3, 0.1, 0.4, 0.1, 0.5, 0.9];
    assert_eq!(wilcoxon_signed_rank(&a, &a).unwrap().p_value, 1.0);
}

#[test]
fn normal_approximation_matches_scipy_reference() {
    // scipy.stats.wilcoxon(d, method="approx", correction=False) → 0.11451030786011211
    let d: Vec<f64> = (0..40).map(|i| ((i * 37) % 23 - 11) as f64 * 0.5 + 1.0).collect();
    let r = wilcoxon_signed_rank(&d, &vec![0.0; 40]).unwrap();
    assert!(!r.exact);
    assert_eq!(r.n, 39);
    assert!((r.p_value - 0.114_510_307_860_112_11).abs() < 1e-12, "{}", r.p_value);
}

#[test]
fn short_or_mismatched_samples_are_rejected() {
    assert!(wilcoxon_signed_rank(&[1.0; 4], &[0.0; 4]).is_err());
    assert!(wilcoxon_signed_rank(&[1.0; 6], &[0.0; 5]).is_err());
}

#[test]
fn percentile_closed_forms() {
    let hundred: Vec<f64> = (0..100).map(f64::from).collect();
    assert!((percentile(&hundred, 0.2).unwrap() - 19.8).abs() < 1e-12);
    assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap(), 3.0);
    assert_eq!(percentile(&[7.5], 0.8).unwrap(), 7.5);
    assert!(percentile(&[], 0.5).is_err());
}

proptest! {
    #[test]
    fn percentile_interpolates_between_order_statistics(
        mut xs in prop::collection::vec(-1e3f64..1e3, 1..60),
        q in 0.0f64..=1.0,
    ) {
        let p = percentile(&xs, q).unwrap();
        xs.sort_by(f64::total_cmp);
        let pos = q * (xs.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        let want = xs[lo] * (1.0 - (pos - lo as f64)) + xs[hi] * (pos - lo as f64);
        prop_assert!((p - want).abs() <= 1e-9 * (1.0 + want.abs()));
        prop_assert!(p >= xs[0] && p <= xs[xs.len() - 1]);
    }

    #[test]
    fn swapping_samples_preserves_p(seed in any::<u64>(), n in 5usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.2)).collect();
        let ab = wilcoxon_signed_rank(&a, &b).unwrap();
        let ba = wilcoxon_signed_rank(&b, &a).unwrap();
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert_eq!(ab.w_plus, ba.w_minus);
        prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
    }
}
