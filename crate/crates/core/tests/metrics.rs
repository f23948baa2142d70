//! PSNR and SSIM against direct formulas.

use c2fdiff::data::synthetic_scene;
use c2fdiff::metrics::{mse, psnr, ssim, MetricReport, Psnr};
use c2fdiff::{Shape, Tensor64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod oracles;
use oracles::{luma, ssim_oracle};

fn rand_img(seed: u64, s: Shape, lo: f64, hi: f64) -> Tensor64 {
    Tensor64::rand_uniform(s, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn psnr_of_one_code_value_offset() {
    let s = Shape::new(2, 3, 16, 16);
    let a = rand_img(1, s, 0.0, 254.0 / 255.0);
    let b = a.map(|v| v + 1.0 / 255.0);
    let want = 20.0 * 255f64.log10();
    assert!((psnr(&a, &b, 1.0).unwrap() - want).abs() < 1e-9);
    // Same difference on the 8-bit scale.
    let a8 = a.map(|v| v * 255.0);
    let b8 = a8.map(|v| v + 1.0);
    assert!((psnr(&a8, &b8, 255.0).unwrap() - want).abs() < 1e-9);
}

#[test]
fn psnr_identical_is_infinite_and_serializes_as_text() {
    let a = synthetic_scene::<f64>(16, 16, 2);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    let r = MetricReport::compute(&a, &a, "ref", "cand").unwrap();
    assert!(r.psnr_db.is_infinite());
    assert_eq!(r.ssim, 1.0);
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["psnr_db"], "+inf");
    let back: MetricReport = serde_json::from_value(json).unwrap();
    assert_eq!(back, r);
    assert_eq!(serde_json::to_string(&Psnr(12.5)).unwrap(), "12.5");
}

#[test]
fn mse_and_argument_errors() {
    let a = Tensor64::full(Shape::new(1, 3, 4, 4), 0.25);
    let b = Tensor64::full(Shape::new(1, 3, 4, 4), 0.75);
    assert_eq!(mse(&a, &b).unwrap(), 0.25);
    assert!(psnr(&a, &b, 0.0).is_err());
    assert!(psnr(&a, &Tensor64::zeros(Shape::new(1, 3, 4, 5)), 1.0).is_err());
    // SSIM needs at least one full window.
    assert!(ssim(&a, &b, 1.0).is_err());
}

#[test]
fn ssim_matches_direct_window_formula() {
    for seed in 0..6u64 {
        let s = Shape::new(2, 3, 11 + seed as usize * 3, 14 + seed as usize);
        let a = rand_img(seed, s, 0.0, 1.0);
        let b = a
            .zip_map(&rand_img(seed + 100, s, -0.2, 0.2), |x, n| x + n)
            .unwrap();
        let got = ssim(&a, &b, 1.0).unwrap();
        let want = (0..2)
            .map(|n| ssim_oracle(&luma(&a, n), &luma(&b, n), s.h, s.w, 1.0))
            .sum::<f64>()
            / 2.0;
        assert!((got - want).abs() < 1e-10, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn ssim_degrades_with_noise() {
    let a = synthetic_scene::<f64>(32, 32, 7);
    let mut last = 1.0;
    for amp in [0.02, 0.05, 0.1, 0.3] {
        let noisy = a
            .zip_map(&rand_img(3, a.shape(), -amp, amp), |x, n| x + n)
            .unwrap();
        let v = ssim(&a, &noisy, 1.0).unwrap();
        assert!(v < last, "amplitude {amp}");
        last = v;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ssim_self_is_one_and_symmetric(seed in any::<u64>(), h in 11usize..=20, w in 11usize..=20) {
        let s = Shape::new(1, 3, h, w);
        let a = rand_img(seed, s, 0.0, 1.0);
        let b = rand_img(seed ^ 7, s, 0.0, 1.0);
        prop_assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b, 1.0).unwrap();
        prop_assert!((ab - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-15);
        prop_assert!(ab <= 1.0 + 1e-12);
        let want = ssim_oracle(&luma(&a, 0), &luma(&b, 0), h, w, 1.0);
        prop_assert!((ab - want).abs() < 1e-10);
    }

    #[test]
    fn psnr_falls_as_error_grows(seed in any::<u64>(), e in 0.001f64..0.2, k in 1.1f64..4.0) {
        let a = rand_img(seed, Shape::new(1, 3, 8, 8), 0.0, 1.0);
        let signs = rand_img(seed ^ 3, a.shape(), -1.0, 1.0).map(f64::signum);
        let small = a.zip_map(&signs, |x, s| x + e * s).unwrap();
        let large = a.zip_map(&signs, |x, s| x + k * e * s).unwrap();
        let (p1, p2) = (psnr(&a, &small, 1.0).unwrap(), psnr(&a, &large, 1.0).unwrap());
        prop_assert!(p2 < p1);
        // Scaling the error by k costs exactly 20·log10(k) dB.
        prop_assert!((p1 - p2 - 20.0 * k.log10()).abs() < 1e-9);
    }

    #[test]
    fn psnr_is_shift_invariant(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let a = rand_img(seed, Shape::new(1, 3, 8, 8), 0.0, 1.0);
        let b = rand_img(seed ^ 9, a.shape(), 0.0, 1.0);
        let p = psnr(&a, &b, 1.0).unwrap();
        let q = psnr(&a.map(|v| v + shift), &b.map(|v| v + shift), 1.0).unwrap();
        prop_assert!((p - q).abs() < 1e-9);
    }
}
