//! Fixed blockwise orthonormal transform standing in for the learned
//! analysis/synthesis networks.
//!
//! Each 16×16×3 pixel block is projected onto `N` orthonormal basis vectors,
//! giving one latent vector per block, i.e. a 16× reduction per spatial axis.

use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Shape, Tensor3};

/// Spatial downsampling factor between pixels and latents.
pub const BLOCK: usize = 16;
pub const COLORS: usize = 3;
/// Dimension of one flattened pixel block.
pub const BLOCK_DIM: usize = COLORS * BLOCK * BLOCK;

/// RGB image with values in `[0, 1]`, stored `[3][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != COLORS * height * width {
            return Err(Error::shape(format!(
                "{} values for a 3x{height}x{width} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite pixel value"));
        }
        Ok(ImagePlane {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ImagePlane {
            height,
            width,
            pixels: vec![value; COLORS * height * width],
        }
    }

    /// Interleaved 8-bit RGB to `[0, 1]` planes.
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != COLORS * height * width {
            return Err(Error::shape(format!(
                "{} bytes for a {height}x{width} RGB image",
                rgb.len()
            )));
        }
        let mut img = ImagePlane::filled(height, width, 0.0);
        for (i, px) in rgb.chunks_exact(COLORS).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                img.pixels[c * height * width + i] = v as f64 / 255.0;
            }
        }
        Ok(img)
    }

    /// `[0, 1]` planes to interleaved 8-bit RGB (rounded, clamped).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(COLORS * plane);
        for i in 0..plane {
            for c in 0..COLORS {
                let v = self.pixels[c * plane + i].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.pixels[(c * self.height + r) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        self.pixels[(c * self.height + r) * self.width + col] = v;
    }

    /// Replicates the last row/column until both dimensions are multiples of
    /// `multiple`.
    pub fn pad_replicate(&self, multiple: usize) -> ImagePlane {
        let ph = self.height.div_ceil(multiple) * multiple;
        let pw = self.width.div_ceil(multiple) * multiple;
        let mut out = ImagePlane::filled(ph, pw, 0.0);
        for c in 0..COLORS {
            for r in 0..ph {
                let sr = r.min(self.height - 1);
                for col in 0..pw {
                    out.set(c, r, col, self.get(c, sr, col.min(self.width - 1)));
                }
            }
        }
        out
    }

    /// Top-left `height × width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<ImagePlane> {
        if height > self.height || width > self.width {
            return Err(Error::shape(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        let mut out = ImagePlane::filled(height, width, 0.0);
        for c in 0..COLORS {
            for r in 0..height {
                for col in 0..width {
                    out.set(c, r, col, self.get(c, r, col));
                }
            }
        }
        Ok(out)
    }
}

/// Rows of an orthonormal basis over flattened blocks, plus the constant
/// subtracted from pixels before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTransform {
    n: usize,
    /// `[n][BLOCK_DIM]`, block index = `color * 256 + row * 16 + col`
    basis: Vec<f64>,
    offset: f64,
}

impl BlockTransform {
    /// Accepts `n ≤ 768` rows and re-orthonormalizes them (modified
    /// Gram–Schmidt in `f64`), which removes the rounding left by `f32`
    /// storage.
    pub fn new(n: usize, mut basis: Vec<f64>, offset: f64) -> Result<Self> {
        if n == 0 || n > BLOCK_DIM || basis.len() != n * BLOCK_DIM {
            return Err(Error::shape(format!(
                "basis must be n x {BLOCK_DIM} with 1 <= n <= {BLOCK_DIM}, got {} values for n = {n}",
                basis.len()
            )));
        }
        if !offset.is_finite() || basis.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite basis entry"));
        }
        for i in 0..n {
            let (done, rest) = basis.split_at_mut(i * BLOCK_DIM);
            let row = &mut rest[..BLOCK_DIM];
            for j in 0..i {
                let prev = &done[j * BLOCK_DIM..(j + 1) * BLOCK_DIM];
                let d: f64 = row.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (a, b) in row.iter_mut().zip(prev) {
                    *a -= d * b;
                }
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-6 {
                return Err(Error::invalid(format!("basis row {i} is linearly dependent")));
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        Ok(BlockTransform { n, basis, offset })
    }

    /// First `n` functions of a colour-decorrelated 16×16 DCT, ordered from low
    /// to high frequency with chroma ranked behind luma.
    pub fn dct(n: usize, offset: f64) -> Result<Self> {
        let s3 = 3f64.sqrt();
        let s2 = 2f64.sqrt();
        let s6 = 6f64.sqrt();
        let color = [
            [1.0 / s3, 1.0 / s3, 1.0 / s3],
            [1.0 / s2, 0.0, -1.0 / s2],
            [1.0 / s6, -2.0 / s6, 1.0 / s6],
        ];
        let dct = |u: usize, x: usize| {
            let a = if u == 0 {
                (1.0 / BLOCK as f64).sqrt()
            } else {
                (2.0 / BLOCK as f64).sqrt()
            };
            a * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * BLOCK) as f64).cos()
        };
        let mut order: Vec<(usize, usize, usize)> = (0..COLORS)
            .flat_map(|j| (0..BLOCK).flat_map(move |u| (0..BLOCK).map(move |v| (j, u, v))))
            .collect();
        order.sort_by_key(|&(j, u, v)| {
            let f = u + v;
            let rank = if j == 0 { 2 * f } else { 4 * f + 1 };
            (rank, j, u, v)
        });
        let mut basis = Vec::with_capacity(n * BLOCK_DIM);
        for &(j, u, v) in order.iter().take(n) {
            for &weight in &color[j] {
                for r in 0..BLOCK {
                    for col in 0..BLOCK {
                        basis.push(weight * dct(u, r) * dct(v, col));
                    }
                }
            }
        }
        BlockTransform::new(n, basis, offset)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.basis[i * BLOCK_DIM..(i + 1) * BLOCK_DIM]
    }

    /// Largest Euclidean row norm (1 up to rounding for an orthonormal basis).
    pub fn max_row_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Projects every 16×16 block onto the basis.
    pub fn analysis(&self, image: &ImagePlane) -> Result<Tensor3> {
        let (h, w) = (image.height(), image.width());
        if h % BLOCK != 0 || w % BLOCK != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "image {h}x{w} is not a non-empty multiple of {BLOCK}"
            )));
        }
        let shape = Shape::new(self.n, h / BLOCK, w / BLOCK);
        let mut y = Tensor3::zeros(shape);
        let mut block = vec![0.0; BLOCK_DIM];
        for br in 0..shape.height {
            for bc in 0..shape.width {
                for c in 0..COLORS {
                    for r in 0..BLOCK {
                        for col in 0..BLOCK {
                            block[(c * BLOCK + r) * BLOCK + col] =
                                image.get(c, br * BLOCK + r, bc * BLOCK + col) - self.offset;
                        }
                    }
                }
                for i in 0..self.n {
                    let v: f64 = self.row(i).iter().zip(&block).map(|(a, b)| a * b).sum();
                    y.set(i, br, bc, v);
                }
            }
        }
        Ok(y)
    }

    /// Inverse projection without clamping.
    pub fn synthesis_unclamped(&self, y: &Tensor3) -> Result<ImagePlane> {
        let s = y.shape();
        if s.channels != self.n {
            return Err(Error::shape(format!(
                "basis has {} rows, latents have {} channels",
                self.n, s.channels
            )));
        }
        let mut img = ImagePlane::filled(s.height * BLOCK, s.width * BLOCK, 0.0);
        let mut block = vec![0.0; BLOCK_DIM];
        for br in 0..s.height {
            for bc in 0..s.width {
                block.fill(self.offset);
                for i in 0..self.n {
                    let coef = y.get(i, br, bc);
                    if coef != 0.0 {
                        for (b, a) in block.iter_mut().zip(self.row(i)) {
                            *b += coef * a;
                        }
                    }
                }
                for c in 0..COLORS {
                    for r in 0..BLOCK {
                        for col in 0..BLOCK {
                            img.set(c, br * BLOCK + r, bc * BLOCK + col, block[(c * BLOCK + r) * BLOCK + col]);
                        }
                    }
                }
            }
        }
        Ok(img)
    }

    /// Inverse projection, clamped to `[0, 1]`.
    pub fn synthesis(&self, y: &Tensor3) -> Result<ImagePlane> {
        let mut img = self.synthesis_unclamped(y)?;
        for p in img.pixels_mut() {
            *p = p.clamp(0.0, 1.0);
        }
        Ok(img)
    }

    pub fn synthesis_latent(&self, y: &LatentTensor) -> Result<ImagePlane> {
        let real = Tensor3::from_vec(y.shape(), y.as_slice().iter().map(|&v| v as f64).collect())?;
        self.synthesis(&real)
    }
}

pub fn rms(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::new(h, w, (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let t = BlockTransform::dct(BLOCK_DIM, 0.0).unwrap();
        for i in (0..BLOCK_DIM).step_by(37) {
            for j in (0..BLOCK_DIM).step_by(41) {
                let d: f64 = t.row(i).iter().zip(t.row(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12, "{i},{j}: {d}");
            }
        }
        assert!((t.max_row_norm() - 1.0).abs() < 1e-12);
        // luma DC first
        assert!(t.row(0).iter().all(|&v| (v - t.row(0)[0]).abs() < 1e-15));
    }

    #[test]
    fn zero_image_gives_zero_latents() {
        let t = BlockTransform::dct(128, 0.0).unwrap();
        let y = t.analysis(&ImagePlane::filled(32, 48, 0.0)).unwrap();
        assert_eq!(y.shape(), Shape::new(128, 2, 3));
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parseval_holds() {
        let t = BlockTransform::dct(BLOCK_DIM, 0.25).unwrap();
        let img = random_image(5, 32, 32);
        let y = t.analysis(&img).unwrap();
        let energy_y: f64 = y.as_slice().iter().map(|v| v * v).sum();
        let energy_x: f64 = img.pixels().iter().map(|p| (p - 0.25) * (p - 0.25)).sum();
        assert!((energy_y - energy_x).abs() < 1e-6, "{energy_y} vs {energy_x}");
    }

    #[test]
    fn full_basis_roundtrip_is_lossless() {
        let t = BlockTransform::dct(BLOCK_DIM, 0.0).unwrap();
        let img = random_image(6, 32, 16);
        let back = t.synthesis(&t.analysis(&img).unwrap()).unwrap();
        assert!(rms(img.pixels(), back.pixels()) < 1e-12);
    }

    #[test]
    fn integer_latents_reconstruct_exactly() {
        let t = BlockTransform::dct(64, 0.0).unwrap();
        let shape = Shape::new(64, 2, 2);
        let y = LatentTensor::from_vec(shape, (0..shape.len() as i32).map(|i| (i % 5) - 2).collect())
            .unwrap();
        let img = t.synthesis_unclamped(&Tensor3::from_vec(shape, y.as_slice().iter().map(|&v| v as f64).collect()).unwrap())
            .unwrap();
        let back = t.analysis(&img).unwrap();
        for (a, &b) in back.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_latents_give_offset_image() {
        let t = BlockTransform::dct(16, 0.5).unwrap();
        let img = t.synthesis_latent(&LatentTensor::zeros(Shape::new(16, 1, 2))).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn padding_replicates_edges() {
        let img = random_image(7, 5, 3);
        let p = img.pad_replicate(4);
        assert_eq!((p.height(), p.width()), (8, 4));
        assert_eq!(p.get(1, 7, 3), img.get(1, 4, 2));
        assert_eq!(p.get(2, 0, 3), img.get(2, 0, 2));
        assert_eq!(p.crop(5, 3).unwrap(), img);
    }

    #[test]
    fn rgb8_roundtrip() {
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13) as u8).collect();
        let img = ImagePlane::from_rgb8(2, 3, &rgb).unwrap();
        assert_eq!(img.to_rgb8(), rgb);
    }

    #[test]
    fn bad_dimensions() {
        let t = BlockTransform::dct(8, 0.0).unwrap();
        assert!(t.analysis(&ImagePlane::filled(20, 16, 0.0)).is_err());
        assert!(t.synthesis(&Tensor3::zeros(Shape::new(9, 1, 1))).is_err());
        assert!(BlockTransform::new(2, vec![0.0; 2 * BLOCK_DIM], 0.0).is_err());
    }
}
