//! PPM files, synthetic scenes and the three degradations.

use c2fdiff::data::synth::rain_layer;
use c2fdiff::data::{
    decode_ppm, degrade_haze, degrade_lowlight, degrade_rain, encode_ppm, haze_model, load_image,
    load_ppm, save_image, save_ppm, synthetic_scene, Degradation, DegradationTag,
};
use c2fdiff::{Shape, Tensor64};
use proptest::prelude::*;

fn bytes_image(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> u8) -> Tensor64 {
    Tensor64::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        f(c, y, x) as f64 / 255.0
    })
}

#[test]
fn header_and_interleaving() {
    let img = bytes_image(2, 3, |c, y, x| (c * 100 + y * 10 + x) as u8);
    let bytes = encode_ppm(&img).unwrap();
    let header = b"P6\n3 2\n255\n";
    assert!(bytes.starts_with(header));
    let body = &bytes[header.len()..];
    assert_eq!(body.len(), 18);
    // RGB triples in row-major pixel order.
    assert_eq!(&body[..6], &[0, 100, 200, 1, 101, 201]);
    assert_eq!(&body[9..12], &[10, 110, 210]);
}

#[test]
fn eight_bit_values_roundtrip_bit_exactly() {
    let img = bytes_image(5, 7, |c, y, x| ((c * 71 + y * 29 + x * 13) % 256) as u8);
    let back: Tensor64 = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
    assert_eq!(back, img);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ppm");
    save_ppm(&path, &img).unwrap();
    assert_eq!(load_ppm::<f64>(&path).unwrap(), img);
    save_image(&path, &img).unwrap();
    assert_eq!(load_image::<f64>(&path).unwrap(), img);
}

#[test]
fn encoding_clamps_and_rounds() {
    let img = Tensor64::from_vec(
        Shape::new(1, 3, 1, 2),
        vec![-0.5, 1.7, 0.5, 0.2, 0.998, 1.0 / 510.0],
    )
    .unwrap();
    let bytes = encode_ppm(&img).unwrap();
    let body = &bytes[bytes.len() - 6..];
    // Planar input: pixel 0 is (−0.5, 0.5, 0.998), pixel 1 is (1.7, 0.2, 1/510).
    assert_eq!(body, &[0, 128, 254, 255, 51, 1]);
}

#[test]
fn grey_images_are_replicated() {
    let img = Tensor64::full(Shape::new(1, 1, 2, 2), 0.2);
    let back: Tensor64 = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
    assert_eq!(back.shape(), Shape::new(1, 3, 2, 2));
    assert!(back.data().iter().all(|&v| v == 51.0 / 255.0));
}

#[test]
fn comments_in_header_are_skipped() {
    let mut bytes = b"P6\n# made by hand\n2 1 # width height\n255\n".to_vec();
    bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
    let img: Tensor64 = decode_ppm(&bytes).unwrap();
    assert_eq!(img.at(0, 0, 0, 0), 1.0);
    assert_eq!(img.at(0, 2, 0, 1), 1.0);
}

#[test]
fn malformed_files_are_rejected() {
    for bad in [
        &b"P3\n1 1\n255\n000"[..],
        b"P6\n1 1\n65535\n\0\0\0\0\0\0",
        b"P6\n2 2\n255\n\0\0\0",
        b"P6\n0 1\n255\n",
        b"P6\nx 1\n255\n\0\0\0",
        b"",
    ] {
        assert!(
            decode_ppm::<f64>(bad).is_err(),
            "{:?}",
            String::from_utf8_lossy(bad)
        );
    }
    assert!(encode_ppm(&Tensor64::zeros(Shape::new(2, 3, 2, 2))).is_err());
    assert!(encode_ppm(&Tensor64::zeros(Shape::new(1, 2, 2, 2))).is_err());
    assert!(encode_ppm(&Tensor64::full(Shape::new(1, 3, 1, 1), f64::NAN)).is_err());
    let err = load_ppm::<f64>(std::path::Path::new("/nonexistent/x.ppm")).unwrap_err();
    assert!(err.is_io());
}

#[test]
fn scenes_are_seeded_and_bounded() {
    let a = synthetic_scene::<f64>(16, 20, 3);
    assert_eq!(a.shape(), Shape::new(1, 3, 16, 20));
    assert_eq!(a, synthetic_scene(16, 20, 3));
    assert_ne!(a, synthetic_scene(16, 20, 4));
    assert!(a.data().iter().all(|v| (0.05..=0.95).contains(v)));
}

#[test]
fn noise_free_lowlight_is_gain_then_gamma() {
    let img = synthetic_scene::<f64>(8, 8, 1);
    let pair = degrade_lowlight(&img, 0.5, 2.0, 0.0, 9).unwrap();
    for (d, r) in pair.degraded.data().iter().zip(img.data()) {
        assert!((d - (0.5 * r).powi(2)).abs() < 1e-15);
    }
    assert_eq!(pair.reference, img);
    assert_eq!(pair.tag, DegradationTag::Lowlight);
    assert!(degrade_lowlight(&img, 0.0, 1.0, 0.0, 0).is_err());
    assert!(degrade_lowlight(&img, 0.5, 0.5, 0.0, 0).is_err());
}

#[test]
fn lowlight_darkens_on_average() {
    let pair = Degradation::default().generate::<f64>(32, 5).unwrap();
    assert!(pair.degraded.mean() < 0.7 * pair.reference.mean());
    assert!(pair.degraded.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn haze_is_invertible() {
    let img = synthetic_scene::<f64>(12, 12, 2);
    for (t, a) in [(0.5, 0.9), (0.8, 0.7), (0.25, 1.0)] {
        let hazy = haze_model(&img, t, a);
        let back = hazy.map(|i| (i - a * (1.0 - t)) / t);
        assert!(back.max_abs_diff(&img).unwrap() < 1e-12);
        assert_eq!(degrade_haze(&img, t, a, 0).unwrap().degraded, hazy);
    }
    assert_eq!(haze_model(&img, 1.0, 0.3), img);
    assert!(haze_model(&img, 0.0, 0.3).data().iter().all(|&v| v == 0.3));
    assert!(degrade_haze(&img, 1.5, 0.5, 0).is_err());
}

#[test]
fn rain_only_brightens() {
    let img = synthetic_scene::<f64>(24, 24, 6);
    let pair = degrade_rain(&img, 12, 15.0, 0.5, 6).unwrap();
    for (d, r) in pair.degraded.data().iter().zip(pair.reference.data()) {
        assert!(d >= r);
    }
    assert!(pair.degraded.max_abs_diff(&pair.reference).unwrap() > 0.1);
    let layer = rain_layer::<f64>(img.shape(), 12, 15.0, 0.5, 6);
    assert_eq!(layer.shape(), Shape::new(1, 1, 24, 24));
    assert!(layer.data().iter().all(|&v| v >= 0.0));
    assert_eq!(degrade_rain(&img, 0, 15.0, 0.5, 6).unwrap().degraded, img);
    assert!(degrade_rain(&img, 3, 0.0, -1.0, 0).is_err());
}

#[test]
fn pairs_are_deterministic_and_named_by_tag_and_seed() {
    let kinds = [
        Degradation::default(),
        Degradation::Haze {
            transmission: 0.6,
            airlight: 0.8,
        },
        Degradation::Rain {
            streak_count: 8,
            angle_deg: 10.0,
            intensity: 0.4,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    for (k, name) in kinds.iter().zip(["lowlight", "haze", "rain"]) {
        let a = k.generate::<f64>(16, 42).unwrap();
        assert_eq!(a, k.generate(16, 42).unwrap());
        assert_eq!(a.tag.as_str(), name);
        let (d, r) = a.save(dir.path()).unwrap();
        assert_eq!(
            d.file_name().unwrap(),
            format!("{name}_42_deg.ppm").as_str()
        );
        assert_eq!(
            r.file_name().unwrap(),
            format!("{name}_42_ref.ppm").as_str()
        );
        assert_eq!((d.clone(), r.clone()), a.file_names(dir.path()));
        assert_eq!(std::fs::read(&d).unwrap(), encode_ppm(&a.degraded).unwrap());
        let loaded: Tensor64 = load_ppm(&r).unwrap();
        assert!(loaded.max_abs_diff(&a.reference).unwrap() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn degradation_config_roundtrips_through_json() {
    let d = Degradation::Rain {
        streak_count: 5,
        angle_deg: -20.0,
        intensity: 0.3,
    };
    let text = serde_json::to_string(&d).unwrap();
    assert!(text.contains("\"kind\":\"rain\""));
    assert_eq!(serde_json::from_str::<Degradation>(&text).unwrap(), d);
    assert!(serde_json::from_str::<Degradation>(r#"{"kind":"snow"}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_byte_image_roundtrips(h in 1usize..=9, w in 1usize..=9, seed in any::<u64>()) {
        let img = bytes_image(h, w, |c, y, x| {
            (seed.wrapping_mul(6364136223846793005).wrapping_add((c * 97 + y * 31 + x) as u64) >> 56) as u8
        });
        let back: Tensor64 = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn degraded_pairs_stay_in_unit_range(seed in any::<u64>(), gain in 0.1f64..1.0, gamma in 1.0f64..3.0, noise in 0.0f64..0.2) {
        let pair = degrade_lowlight(&synthetic_scene::<f64>(8, 8, seed), gain, gamma, noise, seed).unwrap();
        prop_assert!(pair.degraded.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(pair.degraded.shape(), pair.reference.shape());
    }
}
