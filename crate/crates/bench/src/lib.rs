//! Fixtures shared by the benchmarks.

use gmmc_core::{GmmParams, ImagePlane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth colour field with a little seeded texture.
pub fn procedural_image(height: usize, width: usize, seed: u64) -> ImagePlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = ImagePlane::filled(height, width, 0.0);
    for c in 0..3 {
        let (fr, fc) = (rng.random_range(0.01..0.06), rng.random_range(0.01..0.06));
        for r in 0..height {
            for col in 0..width {
                let v = 0.5 + 0.3 * (r as f64 * fr + c as f64).sin() * (col as f64 * fc).cos()
                    + rng.random_range(-0.04..0.04);
                img.set(c, r, col, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

pub fn random_params(k: usize, seed: u64) -> GmmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let means = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
    let scales = (0..k).map(|_| rng.random_range(0.2..8.0)).collect();
    GmmParams::from_logits(&logits, means, scales).expect("valid mixture")
}
