//! MS-SSIM, the distortion derived from it, and the rate–distortion loss.

use crate::error::{Error, Result};
use crate::transform::{ImagePlane, COLORS};

/// Per-scale exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
/// Smallest side that survives four halvings with an 11-tap window left.
pub const MIN_SIDE: usize = WINDOW << 4;

#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimConfig {
    pub scale_weights: [f64; 5],
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub max_value: f64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        MsSsimConfig {
            scale_weights: MS_SSIM_WEIGHTS,
            window: WINDOW,
            sigma: WINDOW_SIGMA,
            k1: 0.01,
            k2: 0.03,
            max_value: 1.0,
        }
    }
}

impl MsSsimConfig {
    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    pub fn kernel_1d(&self) -> Vec<f64> {
        let half = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| {
                let x = i as f64 - half;
                (-x * x / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.max_value).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.max_value).powi(2)
    }
}

/// Single-channel plane used between scales.
#[derive(Debug, Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Valid-mode separable filtering.
    fn blur(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let ow = self.w + 1 - n;
        let oh = self.h + 1 - n;
        let mut tmp = vec![0.0; self.h * ow];
        for r in 0..self.h {
            let row = &self.v[r * self.w..(r + 1) * self.w];
            for c in 0..ow {
                tmp[r * ow + c] = k.iter().zip(&row[c..c + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut v = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    acc += kv * tmp[(r + i) * ow + c];
                }
                v[r * ow + c] = acc;
            }
        }
        Plane { h: oh, w: ow, v }
    }

    /// 2×2 mean pooling; an odd side first repeats its last row/column.
    fn downsample(&self) -> Plane {
        let h = self.h.div_ceil(2);
        let w = self.w.div_ceil(2);
        let at = |r: usize, c: usize| self.v[r.min(self.h - 1) * self.w + c.min(self.w - 1)];
        let mut v = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                v[r * w + c] = (at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1)) / 4.0;
            }
        }
        Plane { h, w, v }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean `l·cs` and mean `cs` of one channel at one scale.
fn ssim_terms(x: &Plane, y: &Plane, cfg: &MsSsimConfig, k: &[f64]) -> (f64, f64) {
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mx = x.blur(k);
    let my = y.blur(k);
    let sq = x.map2(y, |a, b| a * a + b * b).blur(k);
    let xy = x.map2(y, |a, b| a * b).blur(k);
    let n = mx.v.len();
    let mut ssim = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for i in 0..n {
        let num0 = 2.0 * mx.v[i] * my.v[i];
        let den0 = mx.v[i] * mx.v[i] + my.v[i] * my.v[i];
        let l = (num0 + c1) / (den0 + c1);
        let c = (2.0 * xy.v[i] - num0 + c2) / (sq.v[i] - den0 + c2);
        ssim.push(l * c);
        cs.push(c);
    }
    (mean(&ssim), mean(&cs))
}

fn check_pair(x: &ImagePlane, y: &ImagePlane, min_side: usize) -> Result<()> {
    if x.height() != y.height() || x.width() != y.width() {
        return Err(Error::shape(format!(
            "images differ in size: {}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    if x.height().min(x.width()) < min_side {
        return Err(Error::invalid(format!(
            "MS-SSIM needs both sides >= {min_side}, got {}x{}",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

pub fn ms_ssim_with(x: &ImagePlane, y: &ImagePlane, cfg: &MsSsimConfig) -> Result<f64> {
    let scales = cfg.scale_weights.len();
    check_pair(x, y, cfg.window << (scales - 1))?;
    let k = cfg.kernel_1d();
    let plane = x.height() * x.width();
    let mut total = 0.0;
    for c in 0..COLORS {
        let mut a = Plane {
            h: x.height(),
            w: x.width(),
            v: x.pixels()[c * plane..(c + 1) * plane].to_vec(),
        };
        let mut b = Plane {
            h: y.height(),
            w: y.width(),
            v: y.pixels()[c * plane..(c + 1) * plane].to_vec(),
        };
        let mut score = 1.0;
        for (s, &wt) in cfg.scale_weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&a, &b, cfg, &k);
            let term = if s + 1 == scales { ssim } else { cs };
            score *= term.max(0.0).powf(wt);
            if s + 1 < scales {
                a = a.downsample();
                b = b.downsample();
            }
        }
        total += score;
    }
    Ok(total / COLORS as f64)
}

/// Five-scale MS-SSIM averaged over the colour channels.
pub fn ms_ssim(x: &ImagePlane, y: &ImagePlane) -> Result<f64> {
    ms_ssim_with(x, y, &MsSsimConfig::default())
}

/// `1 − MS-SSIM`.
pub fn distortion(x: &ImagePlane, y: &ImagePlane) -> Result<f64> {
    Ok(1.0 - ms_ssim(x, y)?)
}

/// `R_y + R_z + λ·D` with rates in bits per pixel.
pub fn rd_loss(rate_y_bpp: f64, rate_z_bpp: f64, distortion: f64, lambda: f64) -> Result<f64> {
    if !(rate_y_bpp >= 0.0 && rate_z_bpp >= 0.0) {
        return Err(Error::invalid("rates must be non-negative"));
    }
    if lambda.is_nan() || lambda <= 0.0 || !distortion.is_finite() {
        return Err(Error::invalid("lambda must be positive and distortion finite"));
    }
    Ok(rate_y_bpp + rate_z_bpp + lambda * distortion)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdReport {
    pub rate_y_bits: f64,
    pub rate_z_bits: f64,
    pub bpp: f64,
    pub ms_ssim: f64,
    pub distortion: f64,
    pub lambda: f64,
    pub loss: f64,
}

impl RdReport {
    /// Builds the report for an image of `pixels` pixels; `bpp` is the
    /// container rate, the loss uses the two payload rates.
    pub fn new(rate_y_bits: f64, rate_z_bits: f64, bpp: f64, pixels: u64, ms_ssim: f64, lambda: f64) -> Result<Self> {
        if pixels == 0 {
            return Err(Error::invalid("zero pixels"));
        }
        let p = pixels as f64;
        let distortion = 1.0 - ms_ssim;
        let loss = rd_loss(rate_y_bits / p, rate_z_bits / p, distortion, lambda)?;
        Ok(RdReport {
            rate_y_bits,
            rate_z_bits,
            bpp,
            ms_ssim,
            distortion,
            lambda,
            loss,
        })
    }
}
