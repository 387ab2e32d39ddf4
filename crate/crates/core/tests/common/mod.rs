//! Fixtures and oracles shared by the integration tests.
#![allow(dead_code)]

use gmmc_core::metrics::MS_SSIM_WEIGHTS;
use gmmc_core::transform::ImagePlane;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn hashed(seed: u32, h: usize, w: usize) -> ImagePlane {
    let px = (0..3 * h * w)
        .map(|i| {
            let v = (i as u32).wrapping_mul(2_654_435_761).wrapping_add(seed.wrapping_mul(40_503));
            (v >> 8) as f64 / (1u32 << 24) as f64
        })
        .collect();
    ImagePlane::new(h, w, px).unwrap()
}

pub fn smooth(h: usize, w: usize) -> ImagePlane {
    let mut img = ImagePlane::filled(h, w, 0.0);
    for k in 0..3 {
        for r in 0..h {
            for c in 0..w {
                let v = 0.5
                    + 0.4 * (r as f64 * (0.05 + 0.01 * k as f64)).sin() * (c as f64 * (0.07 - 0.01 * k as f64)).cos();
                img.set(k, r, c, v);
            }
        }
    }
    img
}

pub fn map(img: &ImagePlane, f: impl Fn(f64) -> f64) -> ImagePlane {
    ImagePlane::new(img.height(), img.width(), img.pixels().iter().map(|&v| f(v)).collect()).unwrap()
}

pub fn mix(a: &ImagePlane, b: &ImagePlane) -> ImagePlane {
    let px = a.pixels().iter().zip(b.pixels()).map(|(x, y)| 0.9 * x + 0.1 * y).collect();
    ImagePlane::new(a.height(), a.width(), px).unwrap()
}

/// Direct 121-tap evaluation with explicit pooling, written independently of
/// the separable implementation.
pub fn brute_ms_ssim(x: &ImagePlane, y: &ImagePlane) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum();
    let win: Vec<f64> = (0..121).map(|i| g[i / 11] * g[i % 11] / (gs * gs)).collect();
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for ch in 0..3 {
        let plane = x.height() * x.width();
        let mut a: Vec<Vec<f64>> = (0..x.height())
            .map(|r| x.pixels()[ch * plane + r * x.width()..ch * plane + (r + 1) * x.width()].to_vec())
            .collect();
        let mut b: Vec<Vec<f64>> = (0..y.height())
            .map(|r| y.pixels()[ch * plane + r * y.width()..ch * plane + (r + 1) * y.width()].to_vec())
            .collect();
        let mut score = 1.0;
        for (s, wt) in MS_SSIM_WEIGHTS.iter().enumerate() {
            let (h, w) = (a.len(), a[0].len());
            let (mut sum_ssim, mut sum_cs, mut count) = (0.0, 0.0, 0.0);
            for r in 0..=h - 11 {
                for c in 0..=w - 11 {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wv = win[i * 11 + j];
                            let (p, q) = (a[r + i][c + j], b[r + i][c + j]);
                            mx += wv * p;
                            my += wv * q;
                            sxx += wv * p * p;
                            syy += wv * q * q;
                            sxy += wv * p * q;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cov = sxy - mx * my;
                    let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                    let cs = (2.0 * cov + c2) / (vx + vy + c2);
                    sum_ssim += l * cs;
                    sum_cs += cs;
                    count += 1.0;
                }
            }
            let term = if s == 4 { sum_ssim / count } else { sum_cs / count };
            score *= f64::max(term, 0.0).powf(*wt);
            let pool = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                let (h, w) = (m.len(), m[0].len());
                let at = |r: usize, c: usize| m[r.min(h - 1)][c.min(w - 1)];
                (0..h.div_ceil(2))
                    .map(|r| {
                        (0..w.div_ceil(2))
                            .map(|c| {
                                0.25 * (at(2 * r, 2 * c) + at(2 * r + 1, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c + 1))
                            })
                            .collect()
                    })
                    .collect()
            };
            a = pool(&a);
            b = pool(&b);
        }
        total += score;
    }
    total / 3.0
}

/// Smooth field plus uniform noise, the kind of content the toy codec is
/// exercised with.
pub fn textured(seed: u64, h: usize, w: usize) -> ImagePlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..0.2)).collect();
    let amp = rng.random_range(0.0..0.45);
    let noise = rng.random_range(0.0..0.3);
    let mut img = ImagePlane::filled(h, w, 0.0);
    for c in 0..3 {
        for r in 0..h {
            for col in 0..w {
                let v = 0.5
                    + amp * (r as f64 * f[c]).sin() * (col as f64 * f[c + 3]).cos()
                    + noise * rng.random_range(-0.5..0.5);
                img.set(c, r, col, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

pub fn repo_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}
