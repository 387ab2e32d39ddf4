mod common;

use common::{brute_ms_ssim, hashed, map, mix, smooth};
use gmmc_core::metrics::ms_ssim;
use gmmc_core::transform::ImagePlane;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

// reference values from an independent TensorFlow evaluation (float32)
#[test]
fn matches_frozen_reference_values() {
    let x = hashed(7, 256, 256);
    let inv = map(&x, |v| 1.0 - v);
    assert!((ms_ssim(&x, &inv).unwrap() - 0.0).abs() < 1e-4);

    let s = smooth(256, 256);
    let q8 = map(&s, |v| (v * 8.0).floor() / 8.0);
    assert!((ms_ssim(&s, &q8).unwrap() - 0.927_118_539_810_180_7).abs() < 1e-4);

    let noisy = mix(&s, &hashed(3, 256, 256));
    assert!((ms_ssim(&s, &noisy).unwrap() - 0.973_403_453_826_904_3).abs() < 1e-4);

    let odd = smooth(200, 232);
    let odd_q = map(&odd, |v| (v * 8.0).floor() / 8.0);
    assert!((ms_ssim(&odd, &odd_q).unwrap() - 0.927_406_489_849_090_6).abs() < 1e-4);
}

#[test]
fn inverted_image_scores_below_half() {
    let x = hashed(11, 192, 192);
    assert!(ms_ssim(&x, &map(&x, |v| 1.0 - v)).unwrap() < 0.5);
}

#[test]
fn agrees_with_brute_force_on_desk_corpus() {
    let s = smooth(176, 184);
    let corpus = [
        (s.clone(), map(&s, |v| (v * 8.0).floor() / 8.0)),
        (s.clone(), mix(&s, &hashed(5, 176, 184))),
        (hashed(1, 176, 184), mix(&hashed(1, 176, 184), &s)),
    ];
    for (a, b) in &corpus {
        let fast = ms_ssim(a, b).unwrap();
        let slow = brute_ms_ssim(a, b);
        assert!((fast - slow).abs() < 1e-4, "{fast} vs {slow}");
    }
}

#[test]
fn noise_lowers_the_score_monotonically() {
    let s = smooth(192, 192);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let base: Vec<f64> = {
        let n = Normal::new(0.0, 1.0).unwrap();
        (0..s.pixels().len()).map(|_| n.sample(&mut rng)).collect()
    };
    let mut last = 1.0;
    for sigma in [0.01, 0.05, 0.1] {
        let px = s.pixels().iter().zip(&base).map(|(p, e)| p + sigma * e).collect();
        let noisy = ImagePlane::new(192, 192, px).unwrap();
        let score = ms_ssim(&s, &noisy).unwrap();
        assert!(score < last, "sigma {sigma}: {score} !< {last}");
        last = score;
    }
}

#[test]
fn symmetric_and_shift_stable() {
    let s = smooth(180, 200);
    let t = mix(&s, &hashed(9, 180, 200));
    let ab = ms_ssim(&s, &t).unwrap();
    let ba = ms_ssim(&t, &s).unwrap();
    assert!((ab - ba).abs() < 1e-12);
    let shifted = ms_ssim(&map(&s, |v| v + 0.001), &map(&t, |v| v + 0.001)).unwrap();
    assert!((shifted - ab).abs() < 1e-4);
}
