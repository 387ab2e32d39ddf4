//! Discretized Gaussian-mixture likelihoods over the latent symbol alphabet.
//!
//! Each latent element is modelled by a `K`-component Gaussian mixture. The
//! mixture is integrated over the unit bin around every integer symbol, which
//! turns the continuous density into a probability mass function on the
//! lattice:
//!
//! ```text
//! p(s) = Σ_k w_k · [ C_k(s + ½) − C_k(s − ½) ]
//! ```
//!
//! The alphabet is clipped to `[-255, 256]`. At the two ends the outer CDF term
//! is replaced by its limit (`C(−∞) = 0` below `-255`, `C(+∞) = 1` above `256`)
//! so the table over the alphabet telescopes to exactly one.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::range_coder::QuantizedCdf;
use crate::tensor::{LatentTensor, Shape, Tensor3};

/// Fixed symbol alphabet shared by `ŷ`, `ẑ` and the range coder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolAlphabet;

impl SymbolAlphabet {
    pub const LO: i32 = -255;
    pub const HI: i32 = 256;
    pub const SIZE: usize = (Self::HI - Self::LO + 1) as usize;

    #[inline]
    pub const fn contains(symbol: i32) -> bool {
        symbol >= Self::LO && symbol <= Self::HI
    }

    /// Zero-based table index of `symbol`. The caller guarantees membership.
    #[inline]
    pub const fn index(symbol: i32) -> usize {
        (symbol - Self::LO) as usize
    }

    #[inline]
    pub const fn symbol(index: usize) -> i32 {
        index as i32 + Self::LO
    }

    pub(crate) fn check(symbol: i64) -> Result<i32> {
        if symbol < Self::LO as i64 || symbol > Self::HI as i64 {
            return Err(Error::InvalidSymbol(symbol));
        }
        Ok(symbol as i32)
    }
}

/// Scales are clamped to at least this before any CDF evaluation.
pub const SIGMA_FLOOR: f64 = 0.01;

/// Lower bound applied to probabilities before taking logarithms.
pub const MIN_PMF: f64 = 1.0 / (1u64 << 40) as f64;

/// Default mixture count carried in stream headers.
pub const DEFAULT_K: usize = 3;

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Mixture parameters for one latent element.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl GmmParams {
    /// Builds validated parameters. Weights must already be normalized
    /// (non-negative, summing to one); scales below [`SIGMA_FLOOR`] are
    /// clamped up to it.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != k || scales.len() != k {
            return Err(Error::shape(format!(
                "mixture arrays disagree: {} weights, {} means, {} scales",
                k,
                means.len(),
                scales.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        if scales.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
            return Err(Error::invalid("mixture scales must be finite"));
        }
        let scales = scales.into_iter().map(|s| s.max(SIGMA_FLOOR)).collect();
        Ok(GmmParams {
            weights,
            means,
            scales,
        })
    }

    /// Single Gaussian component.
    pub fn gaussian(mean: f64, scale: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![scale])
    }

    /// Builds parameters from unnormalized weight logits (softmax applied here).
    pub fn from_logits(logits: &[f64], means: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        Self::new(softmax(logits), means, scales)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-element mixture parameters for a whole latent tensor, all sharing one `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParamTensor {
    shape: Shape,
    k: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl GmmParamTensor {
    pub fn new(shape: Shape, elements: Vec<GmmParams>) -> Result<Self> {
        if elements.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} parameter sets for shape {shape:?}",
                elements.len()
            )));
        }
        let k = elements.first().map_or(DEFAULT_K, GmmParams::k);
        let mut out = GmmParamTensor {
            shape,
            k,
            weights: Vec::with_capacity(shape.len() * k),
            means: Vec::with_capacity(shape.len() * k),
            scales: Vec::with_capacity(shape.len() * k),
        };
        for p in elements {
            if p.k() != k {
                return Err(Error::shape("mixed component counts in one tensor"));
            }
            out.weights.extend_from_slice(&p.weights);
            out.means.extend_from_slice(&p.means);
            out.scales.extend_from_slice(&p.scales);
        }
        Ok(out)
    }

    pub(crate) fn with_capacity(shape: Shape, k: usize) -> Self {
        GmmParamTensor {
            shape,
            k,
            weights: vec![0.0; shape.len() * k],
            means: vec![0.0; shape.len() * k],
            scales: vec![0.0; shape.len() * k],
        }
    }

    pub(crate) fn put(&mut self, index: usize, p: &GmmParams) {
        let k = self.k;
        self.weights[index * k..(index + 1) * k].copy_from_slice(&p.weights);
        self.means[index * k..(index + 1) * k].copy_from_slice(&p.means);
        self.scales[index * k..(index + 1) * k].copy_from_slice(&p.scales);
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Parameters at a flat element index.
    pub fn element(&self, index: usize) -> GmmParams {
        let k = self.k;
        let r = index * k..(index + 1) * k;
        GmmParams {
            weights: self.weights[r.clone()].to_vec(),
            means: self.means[r.clone()].to_vec(),
            scales: self.scales[r].to_vec(),
        }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> GmmParams {
        self.element(self.shape.index(channel, row, col))
    }

    /// Raw parameter arrays, `K` consecutive values per element.
    pub fn raw(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.weights, &self.means, &self.scales)
    }
}

/// Rounds half away from zero, then clamps to the symbol alphabet.
pub fn quantize_value(v: f64) -> Result<i32> {
    if !v.is_finite() {
        return Err(Error::invalid(format!("non-finite latent value {v}")));
    }
    Ok(v.round()
        .clamp(SymbolAlphabet::LO as f64, SymbolAlphabet::HI as f64) as i32)
}

pub fn quantize_latent(y: &Tensor3) -> Result<LatentTensor> {
    let data = y
        .as_slice()
        .iter()
        .map(|&v| quantize_value(v))
        .collect::<Result<Vec<_>>>()?;
    LatentTensor::from_vec(y.shape(), data)
}

/// Standard normal CDF `Φ(x) = ½·erfc(−x/√2)`.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

#[inline]
fn component_cdf(edge: f64, mean: f64, scale: f64) -> f64 {
    std_normal_cdf((edge - mean) / scale)
}

/// Probability of one integer symbol under the discretized mixture.
pub fn discretized_pmf(symbol: i32, params: &GmmParams) -> Result<f64> {
    let symbol = SymbolAlphabet::check(symbol as i64)?;
    let s = symbol as f64;
    let mut acc = 0.0;
    for k in 0..params.k() {
        let (w, mu, sigma) = (params.weights[k], params.means[k], params.scales[k]);
        let upper = if symbol == SymbolAlphabet::HI {
            1.0
        } else {
            component_cdf(s + 0.5, mu, sigma)
        };
        let lower = if symbol == SymbolAlphabet::LO {
            0.0
        } else {
            component_cdf(s - 0.5, mu, sigma)
        };
        acc += w * (upper - lower);
    }
    Ok(acc)
}

/// Fills `out` with the pmf over the whole alphabet.
///
/// Entry `j` is bit-identical to `discretized_pmf(-255 + j, params)`: the same
/// bin edges are evaluated, just once each.
pub fn pmf_table_into(params: &GmmParams, out: &mut [f64; SymbolAlphabet::SIZE]) {
    const EDGES: usize = SymbolAlphabet::SIZE + 1;
    let k = params.k();
    let mut edges = vec![0.0f64; k * EDGES];
    for c in 0..k {
        let row = &mut edges[c * EDGES..(c + 1) * EDGES];
        let (mu, sigma) = (params.means[c], params.scales[c]);
        row[0] = 0.0;
        row[EDGES - 1] = 1.0;
        for (j, e) in row.iter_mut().enumerate().take(EDGES - 1).skip(1) {
            // lower edge of symbol j
            let edge = SymbolAlphabet::symbol(j) as f64 - 0.5;
            *e = component_cdf(edge, mu, sigma);
        }
    }
    for (j, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for c in 0..k {
            let row = &edges[c * EDGES..(c + 1) * EDGES];
            acc += params.weights[c] * (row[j + 1] - row[j]);
        }
        *slot = acc;
    }
}

pub fn pmf_table(params: &GmmParams) -> Box<[f64; SymbolAlphabet::SIZE]> {
    let mut out = Box::new([0.0; SymbolAlphabet::SIZE]);
    pmf_table_into(params, &mut out);
    out
}

/// Coder table for one element: the pmf over the alphabet, quantized.
pub fn quantized_cdf(params: &GmmParams) -> Result<QuantizedCdf> {
    let mut table = [0.0; SymbolAlphabet::SIZE];
    pmf_table_into(params, &mut table);
    QuantizedCdf::from_pmf(&table)
}

/// Information content of a probability, floored at [`MIN_PMF`].
#[inline]
pub fn bits_for(p: f64) -> f64 {
    -p.max(MIN_PMF).log2()
}

/// Cross-entropy estimate `Σ_i −log2 p_i(ŷ_i)` in bits.
pub fn estimate_rate_bits(latents: &LatentTensor, params: &GmmParamTensor) -> Result<f64> {
    latents
        .shape()
        .ensure_eq(&params.shape(), "latents vs. mixture parameters")?;
    let mut total = 0.0;
    for (i, &symbol) in latents.as_slice().iter().enumerate() {
        let p = discretized_pmf(symbol, &params.element(i))?;
        total += bits_for(p);
    }
    Ok(total)
}
