//! Loss axioms, histogram oracles and the differentiable stand-ins.

use c2fdiff::data::synthetic_scene;
use c2fdiff::losses::{
    combined_loss, edge_loss, hist_loss, histogram, pixel_loss, soft_surrogates, CannyParams,
    LossWeights, DEFAULT_BINS,
};
use c2fdiff::{Shape, Tape64, Tensor64};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pair(seed: u64, n: usize, size: usize) -> (Tensor64, Tensor64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(n, 3, size, size);
    (
        Tensor64::rand_uniform(s, 0.0, 1.0, &mut r),
        Tensor64::rand_uniform(s, 0.0, 1.0, &mut r),
    )
}

/// Counts by interval membership: bin `k` is `[k/K, (k+1)/K)`, the last one closed.
fn histogram_oracle(values: &[f64], bins: usize) -> Vec<f64> {
    let k = bins as f64;
    (0..bins)
        .map(|b| {
            let (lo, hi) = (b as f64 / k, (b + 1) as f64 / k);
            let count = values
                .iter()
                .map(|v| v.clamp(0.0, 1.0))
                .filter(|&v| v >= lo && (v < hi || (b == bins - 1 && v <= 1.0)))
                .count();
            count as f64 / values.len() as f64
        })
        .collect()
}

fn channel(img: &Tensor64, n: usize, c: usize) -> Vec<f64> {
    let s = img.shape();
    let start = n * s.item() + c * s.plane();
    img.data()[start..start + s.plane()].to_vec()
}

#[test]
fn histogram_matches_interval_counts() {
    let (a, _) = pair(1, 2, 12);
    let edges = Tensor64::from_fn(Shape::new(1, 1, 2, 4), |_, _, y, x| {
        [0.0, 0.25, 0.5, 1.0, -0.2, 1.3, 0.999_999, 0.75][y * 4 + x]
    });
    for bins in [2, 4, 16, DEFAULT_BINS] {
        for n in 0..2 {
            for c in 0..3 {
                assert_eq!(
                    histogram(&a, n, c, bins).unwrap(),
                    histogram_oracle(&channel(&a, n, c), bins)
                );
            }
        }
        assert_eq!(
            histogram(&edges, 0, 0, bins).unwrap(),
            histogram_oracle(&channel(&edges, 0, 0), bins)
        );
    }
}

#[test]
fn hist_loss_of_disjoint_constants_is_two_per_channel() {
    let a = Tensor64::full(Shape::new(2, 3, 8, 8), 0.1);
    let b = Tensor64::full(Shape::new(2, 3, 8, 8), 0.9);
    assert_eq!(hist_loss(&a, &b, DEFAULT_BINS).unwrap(), 6.0);
}

#[test]
fn pixel_loss_is_mean_absolute_difference() {
    let (a, b) = pair(2, 2, 8);
    let want = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.numel() as f64;
    assert!((pixel_loss(&a, &b).unwrap() - want).abs() < 1e-15);
}

#[test]
fn combined_report_is_recomputed_exactly() {
    let a = synthetic_scene::<f64>(16, 16, 3);
    let b = synthetic_scene::<f64>(16, 16, 4);
    for w in [
        LossWeights::default(),
        LossWeights::fixed(0.3, 2.0, 0.0),
        LossWeights::fixed(0.0, 0.0, 1.0),
    ] {
        let r = combined_loss(&a, &b, &w, &CannyParams::default(), DEFAULT_BINS).unwrap();
        assert!(r.is_consistent());
        let again = w.lambda1 * r.pixel + w.lambda2 * r.edge + w.lambda3 * r.hist;
        assert_eq!(again.to_bits(), r.combined.to_bits());
        assert_eq!(r.pixel, pixel_loss(&a, &b).unwrap());
        assert_eq!(r.edge, edge_loss(&a, &b, &CannyParams::default()).unwrap());
        assert_eq!(r.hist, hist_loss(&a, &b, DEFAULT_BINS).unwrap());
    }
    assert!(combined_loss(
        &a,
        &b,
        &LossWeights::fixed(0.0, 0.0, 0.0),
        &CannyParams::default(),
        8
    )
    .is_err());
}

#[test]
fn shape_mismatch_is_rejected() {
    let a = Tensor64::zeros(Shape::new(1, 3, 16, 16));
    let b = Tensor64::zeros(Shape::new(1, 3, 16, 12));
    assert!(pixel_loss(&a, &b).is_err());
    assert!(hist_loss(&a, &b, 8).is_err());
    assert!(edge_loss(&a, &b, &CannyParams::default()).is_err());
    assert!(histogram(&a, 0, 0, 0).is_err());
}

fn soft_hist(x: &Tensor64, bins: usize) -> Tensor64 {
    let mut tape = Tape64::new();
    let v = tape.constant(x.clone());
    let h = tape.soft_histogram(v, bins).unwrap();
    tape.value(h).clone()
}

#[test]
fn soft_histogram_puts_bin_centres_in_their_bin() {
    for bins in [4, 16, DEFAULT_BINS] {
        for k in 0..bins {
            let centre = (k as f64 + 0.5) / bins as f64;
            let h = soft_hist(&Tensor64::full(Shape::new(1, 1, 3, 3), centre), bins);
            assert!(h.data()[k] >= 0.99, "bins {bins} k {k}: {}", h.data()[k]);
            assert!((h.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    // Midway between two centres the mass splits evenly.
    let h = soft_hist(&Tensor64::full(Shape::new(1, 1, 2, 2), 0.5), 4);
    assert_eq!(h.data(), &[0.0, 0.5, 0.5, 0.0]);
}

#[test]
fn soft_surrogates_vanish_only_on_identical_inputs() {
    let a = synthetic_scene::<f64>(16, 16, 5);
    let b = synthetic_scene::<f64>(16, 16, 6);
    let p = CannyParams::default();
    assert_eq!(
        soft_surrogates(&a, &a, &p, DEFAULT_BINS).unwrap(),
        (0.0, 0.0)
    );
    let (e, h) = soft_surrogates(&a, &b, &p, DEFAULT_BINS).unwrap();
    assert!(e > 0.0 && h > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_non_negative_and_zero_on_identity(seed in any::<u64>(), n in 1usize..=2) {
        let (a, b) = pair(seed, n, 16);
        let p = CannyParams::default();
        for v in [pixel_loss(&a, &b).unwrap(), edge_loss(&a, &b, &p).unwrap(), hist_loss(&a, &b, DEFAULT_BINS).unwrap()] {
            prop_assert!(v >= 0.0);
        }
        prop_assert_eq!(pixel_loss(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(edge_loss(&a, &a, &p).unwrap(), 0.0);
        prop_assert_eq!(hist_loss(&a, &a, DEFAULT_BINS).unwrap(), 0.0);
        let (e, h) = soft_surrogates(&a, &b, &p, DEFAULT_BINS).unwrap();
        prop_assert!(e >= 0.0 && h >= 0.0);
    }

    #[test]
    fn hist_loss_symmetric(seed in any::<u64>(), bins in 2usize..=128) {
        let (a, b) = pair(seed, 2, 8);
        prop_assert_eq!(hist_loss(&a, &b, bins).unwrap(), hist_loss(&b, &a, bins).unwrap());
    }

    /// Shuffling pixel positions (independently per channel) leaves every histogram unchanged.
    #[test]
    fn hist_loss_permutation_invariant(seed in any::<u64>()) {
        let (a, b) = pair(seed, 1, 8);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let plane = 64;
        let mut data = a.data().to_vec();
        for c in 0..3 {
            data[c * plane..(c + 1) * plane].shuffle(&mut r);
        }
        let shuffled = Tensor64::from_vec(a.shape(), data).unwrap();
        prop_assert_eq!(hist_loss(&shuffled, &a, DEFAULT_BINS).unwrap(), 0.0);
        prop_assert_eq!(hist_loss(&shuffled, &b, DEFAULT_BINS).unwrap(), hist_loss(&a, &b, DEFAULT_BINS).unwrap());
    }

    #[test]
    fn combine_is_monotone_in_each_term(
        l in (0.01f64..5.0, 0.01f64..5.0, 0.01f64..5.0),
        t in (0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0),
        bump in 0.001f64..1.0,
    ) {
        let w = LossWeights::fixed(l.0, l.1, l.2);
        let base = w.combine(t.0, t.1, t.2);
        prop_assert!(w.combine(t.0 + bump, t.1, t.2) > base);
        prop_assert!(w.combine(t.0, t.1 + bump, t.2) > base);
        prop_assert!(w.combine(t.0, t.1, t.2 + bump) > base);
    }

    #[test]
    fn soft_histogram_rows_are_distributions(seed in any::<u64>(), bins in 2usize..=64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor64::rand_uniform(Shape::new(2, 3, 5, 5), -0.2, 1.2, &mut r);
        let h = soft_hist(&x, bins);
        for row in h.data().chunks(bins) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
