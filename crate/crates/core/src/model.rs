//! Complete parameter set for the codec and its mapping onto the GMMP file.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{Dense, EntropyParamWeights, HyperFeatureTensor, MaskedConvWeights, KERNEL};
use crate::error::{Error, Result};
use crate::gmm::{GmmParams, SIGMA_FLOOR};
use crate::model_file::{parse_tensors, read_tensors, write_tensors, NamedTensor};
use crate::tensor::{LatentTensor, Shape, Tensor3};
use crate::transform::{BlockTransform, BLOCK_DIM};

/// Spatial pooling between the latent grid and the hyper-latent grid.
pub const HYPER_POOL: usize = 4;

const T_BASIS: &str = "transform.basis";
const T_OFFSET: &str = "transform.offset";
const T_HYPER_ANALYSIS: &str = "hyper.analysis";
const T_HYPER_SYN_W: &str = "hyper.synthesis.weight";
const T_HYPER_SYN_B: &str = "hyper.synthesis.bias";
const T_PRIOR_MEAN: &str = "hyper.prior.mean";
const T_PRIOR_SCALE: &str = "hyper.prior.scale";
const T_CTX_W: &str = "context.weight";
const T_CTX_B: &str = "context.bias";
const T_EP_HID_W: &str = "entropy.hidden.weight";
const T_EP_HID_B: &str = "entropy.hidden.bias";
const T_EP_OUT_W: &str = "entropy.output.weight";
const T_EP_OUT_B: &str = "entropy.output.bias";

/// Factorized Gaussian prior over hyper-latent channels.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperModel {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl HyperModel {
    pub fn new(means: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        if means.len() != scales.len() || means.is_empty() {
            return Err(Error::shape("hyper prior means/scales disagree"));
        }
        let scales = scales.into_iter().map(|s| s.max(SIGMA_FLOOR)).collect();
        Ok(HyperModel { means, scales })
    }

    pub fn channels(&self) -> usize {
        self.means.len()
    }

    pub fn params(&self, channel: usize) -> Result<GmmParams> {
        GmmParams::gaussian(self.means[channel], self.scales[channel])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub transform: BlockTransform,
    /// `[nz][n]` map from pooled `|y|` to `z`.
    pub hyper_analysis: Vec<f64>,
    pub hyper_synthesis: Dense,
    pub hyper_prior: HyperModel,
    pub context: MaskedConvWeights,
    pub entropy: EntropyParamWeights,
}

impl CodecModel {
    pub fn new(
        transform: BlockTransform,
        hyper_analysis: Vec<f64>,
        hyper_synthesis: Dense,
        hyper_prior: HyperModel,
        context: MaskedConvWeights,
        entropy: EntropyParamWeights,
    ) -> Result<Self> {
        let n = transform.n();
        let nz = hyper_prior.channels();
        let mismatch = |what: &str| Err(Error::ModelFormat(format!("inconsistent model: {what}")));
        if hyper_analysis.len() != nz * n {
            return mismatch("hyper analysis is not nz x n");
        }
        if hyper_synthesis.inputs != nz {
            return mismatch("hyper synthesis input width differs from nz");
        }
        if context.in_channels() != n || entropy.n() != n {
            return mismatch("latent channel count differs between transform, context and entropy nets");
        }
        if entropy.input_width() != context.out_channels() + hyper_synthesis.outputs {
            return mismatch("entropy network input width != context + hyper features");
        }
        Ok(CodecModel {
            transform,
            hyper_analysis,
            hyper_synthesis,
            hyper_prior,
            context,
            entropy,
        })
    }

    pub fn k(&self) -> usize {
        self.entropy.k()
    }

    pub fn n(&self) -> usize {
        self.transform.n()
    }

    pub fn hyper_channels(&self) -> usize {
        self.hyper_prior.channels()
    }

    /// `z[j] = Σ_n A[j][n] · mean_{4×4}(|y[n]|)`.
    pub fn hyper_analysis(&self, y: &Tensor3) -> Result<Tensor3> {
        let s = y.shape();
        if s.channels != self.n() || !s.height.is_multiple_of(HYPER_POOL) || !s.width.is_multiple_of(HYPER_POOL) {
            return Err(Error::shape(format!(
                "latents {s:?} not poolable by {HYPER_POOL} with {} channels",
                self.n()
            )));
        }
        let (zh, zw) = (s.height / HYPER_POOL, s.width / HYPER_POOL);
        let mut pooled = vec![0.0; self.n()];
        let mut z = Tensor3::zeros(Shape::new(self.hyper_channels(), zh, zw));
        let area = (HYPER_POOL * HYPER_POOL) as f64;
        for r in 0..zh {
            for c in 0..zw {
                for (ch, slot) in pooled.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for dr in 0..HYPER_POOL {
                        for dc in 0..HYPER_POOL {
                            acc += y.get(ch, r * HYPER_POOL + dr, c * HYPER_POOL + dc).abs();
                        }
                    }
                    *slot = acc / area;
                }
                for j in 0..self.hyper_channels() {
                    let row = &self.hyper_analysis[j * self.n()..(j + 1) * self.n()];
                    z.set(j, r, c, row.iter().zip(&pooled).map(|(a, b)| a * b).sum());
                }
            }
        }
        Ok(z)
    }

    /// Hyper features on the latent grid: nearest-neighbour upsampling of `ẑ`
    /// followed by one 1×1 layer.
    pub fn hyper_features(&self, z_hat: &LatentTensor) -> Result<HyperFeatureTensor> {
        let s = z_hat.shape();
        if s.channels != self.hyper_channels() {
            return Err(Error::shape(format!(
                "hyper-latents have {} channels, model expects {}",
                s.channels,
                self.hyper_channels()
            )));
        }
        let syn = &self.hyper_synthesis;
        let out_shape = Shape::new(syn.outputs, s.height * HYPER_POOL, s.width * HYPER_POOL);
        let mut out = Tensor3::zeros(out_shape);
        let mut zin = vec![0.0; s.channels];
        for r in 0..s.height {
            for c in 0..s.width {
                for (j, v) in zin.iter_mut().enumerate() {
                    *v = z_hat.get(j, r, c) as f64;
                }
                for o in 0..syn.outputs {
                    let row = &syn.weight[o * syn.inputs..(o + 1) * syn.inputs];
                    let mut acc = 0.0;
                    for (w, x) in row.iter().zip(&zin) {
                        acc += w * x;
                    }
                    let v = acc + syn.bias[o];
                    for dr in 0..HYPER_POOL {
                        for dc in 0..HYPER_POOL {
                            out.set(o, r * HYPER_POOL + dr, c * HYPER_POOL + dc, v);
                        }
                    }
                }
            }
        }
        Ok(HyperFeatureTensor(out))
    }

    pub fn to_tensors(&self) -> Result<Vec<NamedTensor>> {
        let n = self.n() as u32;
        let nz = self.hyper_channels() as u32;
        let cctx = self.context.out_channels() as u32;
        let hid = self.entropy.hidden();
        let out = self.entropy.output();
        let syn = &self.hyper_synthesis;
        Ok(vec![
            NamedTensor::from_f64(T_BASIS, vec![n, BLOCK_DIM as u32], self.transform.basis())?,
            NamedTensor::from_f64(T_OFFSET, vec![1], &[self.transform.offset()])?,
            NamedTensor::from_f64(T_HYPER_ANALYSIS, vec![nz, n], &self.hyper_analysis)?,
            NamedTensor::from_f64(T_HYPER_SYN_W, vec![syn.outputs as u32, nz], &syn.weight)?,
            NamedTensor::from_f64(T_HYPER_SYN_B, vec![syn.outputs as u32], &syn.bias)?,
            NamedTensor::from_f64(T_PRIOR_MEAN, vec![nz], &self.hyper_prior.means)?,
            NamedTensor::from_f64(T_PRIOR_SCALE, vec![nz], &self.hyper_prior.scales)?,
            NamedTensor::from_f64(
                T_CTX_W,
                vec![cctx, n, KERNEL as u32, KERNEL as u32],
                self.context.kernel(),
            )?,
            NamedTensor::from_f64(T_CTX_B, vec![cctx], self.context.bias())?,
            NamedTensor::from_f64(T_EP_HID_W, vec![hid.outputs as u32, hid.inputs as u32], &hid.weight)?,
            NamedTensor::from_f64(T_EP_HID_B, vec![hid.outputs as u32], &hid.bias)?,
            NamedTensor::from_f64(T_EP_OUT_W, vec![out.outputs as u32, out.inputs as u32], &out.weight)?,
            NamedTensor::from_f64(T_EP_OUT_B, vec![out.outputs as u32], &out.bias)?,
        ])
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let get = |name: &str, rank: usize| -> Result<&NamedTensor> {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::ModelFormat(format!("missing tensor {name}")))?;
            if t.dims.len() != rank {
                return Err(Error::ModelFormat(format!(
                    "tensor {name} has rank {}, expected {rank}",
                    t.dims.len()
                )));
            }
            Ok(t)
        };
        let basis = get(T_BASIS, 2)?;
        let n = basis.dims[0] as usize;
        if basis.dims[1] as usize != BLOCK_DIM {
            return Err(Error::ModelFormat(format!("basis width must be {BLOCK_DIM}")));
        }
        let offset = get(T_OFFSET, 1)?.to_f64();
        let offset = *offset
            .first()
            .ok_or_else(|| Error::ModelFormat("empty transform offset".into()))?;
        let transform = BlockTransform::new(n, basis.to_f64(), offset)?;

        let ha = get(T_HYPER_ANALYSIS, 2)?;
        let nz = ha.dims[0] as usize;
        let sw = get(T_HYPER_SYN_W, 2)?;
        let hyper_synthesis = Dense::new(
            sw.dims[1] as usize,
            sw.dims[0] as usize,
            sw.to_f64(),
            get(T_HYPER_SYN_B, 1)?.to_f64(),
        )?;
        let hyper_prior = HyperModel::new(get(T_PRIOR_MEAN, 1)?.to_f64(), get(T_PRIOR_SCALE, 1)?.to_f64())?;
        if hyper_prior.channels() != nz || ha.dims[1] as usize != n {
            return Err(Error::ModelFormat("hyper tensors disagree on nz or n".into()));
        }

        let cw = get(T_CTX_W, 4)?;
        if cw.dims[2] as usize != KERNEL || cw.dims[3] as usize != KERNEL {
            return Err(Error::ModelFormat("context kernel must be 5x5".into()));
        }
        let context = MaskedConvWeights::new(
            cw.dims[0] as usize,
            cw.dims[1] as usize,
            cw.to_f64(),
            get(T_CTX_B, 1)?.to_f64(),
        )?;

        let hw = get(T_EP_HID_W, 2)?;
        let hidden = Dense::new(
            hw.dims[1] as usize,
            hw.dims[0] as usize,
            hw.to_f64(),
            get(T_EP_HID_B, 1)?.to_f64(),
        )?;
        let ow = get(T_EP_OUT_W, 2)?;
        let output = Dense::new(
            ow.dims[1] as usize,
            ow.dims[0] as usize,
            ow.to_f64(),
            get(T_EP_OUT_B, 1)?.to_f64(),
        )?;
        if n == 0 || output.outputs % (3 * n) != 0 {
            return Err(Error::ModelFormat(format!(
                "entropy output width {} is not a multiple of 3*N",
                output.outputs
            )));
        }
        let k = output.outputs / (3 * n);
        let entropy = EntropyParamWeights::new(k, n, hidden, output)?;
        CodecModel::new(transform, ha.to_f64(), hyper_synthesis, hyper_prior, context, entropy)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_tensors(&parse_tensors(bytes)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_tensors(&mut buf, &self.to_tensors()?)?;
        Ok(buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path)?;
        Self::from_tensors(&read_tensors(BufReader::new(f))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = File::create(path)?;
        write_tensors(BufWriter::new(f), &self.to_tensors()?)
    }

    /// Deterministic hand-structured weights for a desk-scale codec.
    ///
    /// Context features predict the lowest-frequency channels from their
    /// left/upper neighbours; hyper features scale the mixture widths per
    /// channel group. Every weight also carries a small seeded perturbation.
    pub fn toy(k: usize, n: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > u8::MAX as usize || n == 0 || n > BLOCK_DIM {
            return Err(Error::invalid(format!("toy model needs 1 <= K <= 255, 1 <= N <= {BLOCK_DIM}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |scale: f64| rng.random_range(-scale..scale);

        let transform = BlockTransform::dct(n, 0.0)?;

        let nz = n.min(16);
        let group = |ch: usize| ch * nz / n;
        let mut hyper_analysis = vec![0.0; nz * n];
        for ch in 0..n {
            let g = group(ch);
            let members = (0..n).filter(|&c| group(c) == g).count() as f64;
            hyper_analysis[g * n + ch] = 1.0 / members;
        }

        let mut syn_w = vec![0.0; nz * nz];
        for (i, w) in syn_w.iter_mut().enumerate() {
            *w = if i / nz == i % nz { 1.0 } else { 0.0 } + jitter(0.01);
        }
        let hyper_synthesis = Dense::new(nz, nz, syn_w, vec![0.0; nz])?;
        let prior_scales = (0..nz).map(|g| if g == 0 { 4.0 } else { 1.5 }).collect();
        let hyper_prior = HyperModel::new(vec![0.0; nz], prior_scales)?;

        // context feature j averages the left and upper neighbour of channel j
        let cctx = n.min(16);
        let mut kernel = vec![0.0; cctx * n * KERNEL * KERNEL];
        for (i, w) in kernel.iter_mut().enumerate() {
            *w = jitter(1e-3);
            let tap = i % (KERNEL * KERNEL);
            let ci = (i / (KERNEL * KERNEL)) % n;
            let co = i / (n * KERNEL * KERNEL);
            if ci == co && (tap == 2 * KERNEL + 1 || tap == KERNEL + 2) {
                *w += 0.5;
            }
        }
        let context = MaskedConvWeights::new(cctx, n, kernel, vec![0.0; cctx])?;

        // hidden = [ctx, -ctx, hyper] through a ReLU, so signed context survives
        let width = 2 * cctx + nz;
        let inputs = cctx + nz;
        let mut hid_w = vec![0.0; width * inputs];
        for j in 0..cctx {
            hid_w[j * inputs + j] = 1.0;
            hid_w[(cctx + j) * inputs + j] = -1.0;
        }
        for g in 0..nz {
            hid_w[(2 * cctx + g) * inputs + cctx + g] = 1.0;
        }
        for w in &mut hid_w {
            *w += jitter(1e-3);
        }
        let hidden = Dense::new(inputs, width, hid_w, vec![0.0; width])?;

        let outs = 3 * k * n;
        let mut out_w = vec![0.0; outs * width];
        let mut out_b = vec![0.0; outs];
        let inv_softplus = |s: f64| (s.exp() - 1.0).ln();
        for ch in 0..n {
            for c in 0..k {
                let idx = ch * k + c;
                let spread = c as f64 - (k as f64 - 1.0) / 2.0;
                out_b[idx] = -0.25 * spread.abs();
                let mean_row = k * n + idx;
                out_b[mean_row] = 0.6 * spread;
                if ch < cctx {
                    out_w[mean_row * width + ch] = 1.0;
                    out_w[mean_row * width + cctx + ch] = -1.0;
                }
                let scale_row = 2 * k * n + idx;
                let base = if ch < cctx { 1.0 } else { 0.35 };
                out_b[scale_row] = inv_softplus(base * (1.0 + 0.5 * spread.abs()));
                out_w[scale_row * width + 2 * cctx + group(ch)] = 0.4;
            }
        }
        for w in &mut out_w {
            *w += jitter(1e-3);
        }
        let output = Dense::new(width, outs, out_w, out_b)?;
        let entropy = EntropyParamWeights::new(k, n, hidden, output)?;
        CodecModel::new(transform, hyper_analysis, hyper_synthesis, hyper_prior, context, entropy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_roundtrip_preserves_parameters() {
        let m = CodecModel::toy(3, 32, 11).unwrap();
        let back = CodecModel::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(back.k(), 3);
        assert_eq!(back.n(), 32);
        assert_eq!(back.hyper_channels(), 16);
        // f32 storage: close but re-orthonormalized
        for (a, b) in m.transform.basis().iter().zip(back.transform.basis()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((back.transform.max_row_norm() - 1.0).abs() < 1e-12);
        // everything except the basis is stored verbatim
        let a = m.to_tensors().unwrap();
        let b = back.to_tensors().unwrap();
        for (x, y) in a.iter().zip(&b).filter(|(x, _)| x.name != T_BASIS) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn missing_tensor_is_reported() {
        let m = CodecModel::toy(2, 16, 1).unwrap();
        let mut tensors = m.to_tensors().unwrap();
        tensors.retain(|t| t.name != T_CTX_B);
        assert!(matches!(
            CodecModel::from_tensors(&tensors),
            Err(Error::ModelFormat(_))
        ));
    }

    #[test]
    fn toy_is_deterministic() {
        let a = CodecModel::toy(3, 24, 9).unwrap().to_bytes().unwrap();
        let b = CodecModel::toy(3, 24, 9).unwrap().to_bytes().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hyper_path_shapes() {
        let m = CodecModel::toy(3, 32, 2).unwrap();
        let y = Tensor3::zeros(Shape::new(32, 8, 4));
        let z = m.hyper_analysis(&y).unwrap();
        assert_eq!(z.shape(), Shape::new(16, 2, 1));
        let f = m.hyper_features(&LatentTensor::zeros(z.shape())).unwrap();
        assert_eq!(f.shape(), Shape::new(16, 8, 4));
        assert!(m.hyper_analysis(&Tensor3::zeros(Shape::new(32, 6, 4))).is_err());
    }
}
