//! Autoregressive context model and entropy-parameter network.
//!
//! The context model is a 5×5 convolution masked to be spatially causal in
//! raster order: only the two rows above and the two columns to the left on the
//! current row contribute. Every channel at a position shares the same
//! context, so a decoder can reconstruct one spatial position (all channels)
//! per step from a 5×5 window of what it has already decoded.
//!
//! Encoder and decoder must produce bit-identical parameters. All dot products
//! therefore go through [`ctx_dot`] and [`dense`], which fix the accumulation
//! order: kernel row, then kernel column, then input channel; bias last.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::{quantized_cdf, softmax, GmmParamTensor, GmmParams};
use crate::range_coder::RangeDecoder;
use crate::tensor::{LatentTensor, Shape, Tensor3};

pub const KERNEL: usize = 5;
const HALF: usize = KERNEL / 2;
const TAPS: usize = KERNEL * KERNEL;

/// Kernel taps that survive the causal mask, in accumulation order.
const CAUSAL_TAPS: [(usize, usize); 12] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (0, 4),
    (1, 0),
    (1, 1),
    (1, 2),
    (1, 3),
    (1, 4),
    (2, 0),
    (2, 1),
];

#[inline]
pub fn is_causal_tap(row: usize, col: usize) -> bool {
    row < HALF || (row == HALF && col < HALF)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedConvWeights {
    cout: usize,
    cin: usize,
    /// `[cout][cin][5][5]`
    kernel: Vec<f64>,
    bias: Vec<f64>,
}

impl MaskedConvWeights {
    /// Wraps a kernel, zeroing every tap at or after the centre.
    pub fn new(cout: usize, cin: usize, mut kernel: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if kernel.len() != cout * cin * TAPS || bias.len() != cout {
            return Err(Error::shape(format!(
                "masked conv expects {} kernel and {cout} bias values, got {} and {}",
                cout * cin * TAPS,
                kernel.len(),
                bias.len()
            )));
        }
        for (i, w) in kernel.iter_mut().enumerate() {
            let tap = i % TAPS;
            if !is_causal_tap(tap / KERNEL, tap % KERNEL) {
                *w = 0.0;
            }
        }
        Ok(MaskedConvWeights {
            cout,
            cin,
            kernel,
            bias,
        })
    }

    pub fn zeros(cout: usize, cin: usize) -> Self {
        MaskedConvWeights {
            cout,
            cin,
            kernel: vec![0.0; cout * cin * TAPS],
            bias: vec![0.0; cout],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    pub fn in_channels(&self) -> usize {
        self.cin
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    fn weight(&self, co: usize, ci: usize, kr: usize, kc: usize) -> f64 {
        self.kernel[((co * self.cin + ci) * KERNEL + kr) * KERNEL + kc]
    }
}

/// One output channel of the masked convolution; `fetch(ci, kr, kc)` reads the
/// input under kernel tap `(kr, kc)`.
#[inline]
fn ctx_dot(w: &MaskedConvWeights, co: usize, fetch: impl Fn(usize, usize, usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for &(kr, kc) in &CAUSAL_TAPS {
        for ci in 0..w.cin {
            acc += w.weight(co, ci, kr, kc) * fetch(ci, kr, kc);
        }
    }
    acc + w.bias[co]
}

/// Full-tensor masked convolution (encoder side), zero-padded by two.
pub fn masked_conv_forward(latents: &LatentTensor, w: &MaskedConvWeights) -> Result<Tensor3> {
    let shape = latents.shape();
    if shape.channels != w.cin {
        return Err(Error::shape(format!(
            "context model expects {} latent channels, got {}",
            w.cin, shape.channels
        )));
    }
    let (h, wd) = (shape.height, shape.width);
    let out_shape = Shape::new(w.cout, h, wd);
    let positions: Vec<Vec<f64>> = (0..h * wd)
        .into_par_iter()
        .map(|p| {
            let (r, c) = (p / wd, p % wd);
            let fetch = |ci: usize, kr: usize, kc: usize| {
                let (rr, cc) = ((r + kr) as isize - HALF as isize, (c + kc) as isize - HALF as isize);
                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= wd {
                    0.0
                } else {
                    latents.get(ci, rr as usize, cc as usize) as f64
                }
            };
            (0..w.cout).map(|co| ctx_dot(w, co, fetch)).collect()
        })
        .collect();
    let mut out = Tensor3::zeros(out_shape);
    for (p, values) in positions.into_iter().enumerate() {
        for (co, v) in values.into_iter().enumerate() {
            out.set(co, p / wd, p % wd, v);
        }
    }
    Ok(out)
}

/// 5×5 patch of `partial` centred on `(row, col)`, `[cin][5][5]`, zero outside
/// the image.
pub fn window_extract(partial: &LatentTensor, row: usize, col: usize) -> Result<Vec<f64>> {
    let shape = partial.shape();
    if row >= shape.height || col >= shape.width {
        return Err(Error::IndexError(format!(
            "position ({row}, {col}) outside {}x{}",
            shape.height, shape.width
        )));
    }
    let mut window = vec![0.0; shape.channels * TAPS];
    for kr in 0..KERNEL {
        let rr = (row + kr) as isize - HALF as isize;
        if rr < 0 || rr as usize >= shape.height {
            continue;
        }
        for kc in 0..KERNEL {
            let cc = (col + kc) as isize - HALF as isize;
            if cc < 0 || cc as usize >= shape.width {
                continue;
            }
            for ci in 0..shape.channels {
                window[ci * TAPS + kr * KERNEL + kc] = partial.get(ci, rr as usize, cc as usize) as f64;
            }
        }
    }
    Ok(window)
}

/// Masked convolution evaluated on a single extracted window.
pub fn masked_conv_window(window: &[f64], w: &MaskedConvWeights) -> Result<Vec<f64>> {
    if window.len() != w.cin * TAPS {
        return Err(Error::shape(format!(
            "window has {} values, expected {}",
            window.len(),
            w.cin * TAPS
        )));
    }
    let fetch = |ci: usize, kr: usize, kc: usize| window[ci * TAPS + kr * KERNEL + kc];
    Ok((0..w.cout).map(|co| ctx_dot(w, co, fetch)).collect())
}

/// Fully connected layer with fixed accumulation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs][inputs]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::shape(format!(
                "dense {inputs}->{outputs}: {} weights, {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Dense {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.inputs);
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc + self.bias[o]);
        }
    }
}

/// Positivity map applied to raw scale outputs before the sigma floor.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Two 1×1 layers mapping (context ⊕ hyper) features to `3·K·N` mixture
/// parameters per position, with a ReLU in between.
///
/// Output layout: weight logits `[n][k]`, then means `[n][k]`, then raw scales
/// `[n][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyParamWeights {
    k: usize,
    n: usize,
    hidden: Dense,
    output: Dense,
}

impl EntropyParamWeights {
    pub fn new(k: usize, n: usize, hidden: Dense, output: Dense) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::invalid("K and N must be positive"));
        }
        if output.inputs != hidden.outputs {
            return Err(Error::shape(format!(
                "hidden layer emits {} features, output layer takes {}",
                hidden.outputs, output.inputs
            )));
        }
        if output.outputs != 3 * k * n {
            return Err(Error::shape(format!(
                "output layer emits {}, expected 3*K*N = {}",
                output.outputs,
                3 * k * n
            )));
        }
        Ok(EntropyParamWeights {
            k,
            n,
            hidden,
            output,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn input_width(&self) -> usize {
        self.hidden.inputs
    }

    pub fn hidden(&self) -> &Dense {
        &self.hidden
    }

    pub fn output(&self) -> &Dense {
        &self.output
    }

    /// Mixture parameters for every channel at one position.
    pub fn params_at(&self, context: &[f64], hyper: &[f64]) -> Result<Vec<GmmParams>> {
        if context.len() + hyper.len() != self.hidden.inputs {
            return Err(Error::shape(format!(
                "entropy network takes {} features, got {} context + {} hyper",
                self.hidden.inputs,
                context.len(),
                hyper.len()
            )));
        }
        let input: Vec<f64> = context.iter().chain(hyper).copied().collect();
        let mut h = Vec::with_capacity(self.hidden.outputs);
        self.hidden.apply(&input, &mut h);
        for v in &mut h {
            *v = v.max(0.0);
        }
        let mut raw = Vec::with_capacity(self.output.outputs);
        self.output.apply(&h, &mut raw);

        let (k, n) = (self.k, self.n);
        let (logits, rest) = raw.split_at(k * n);
        let (means, scales) = rest.split_at(k * n);
        (0..n)
            .map(|c| {
                let r = c * k..(c + 1) * k;
                GmmParams::new(
                    softmax(&logits[r.clone()]),
                    means[r.clone()].to_vec(),
                    scales[r].iter().map(|&s| softplus(s)).collect(),
                )
            })
            .collect()
    }
}

/// Hyper-decoder features on the latent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperFeatureTensor(pub Tensor3);

impl HyperFeatureTensor {
    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    fn features_at(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.shape().channels).map(|c| self.0.get(c, row, col)).collect()
    }
}

fn column(t: &Tensor3, row: usize, col: usize) -> Vec<f64> {
    (0..t.shape().channels).map(|c| t.get(c, row, col)).collect()
}

/// Per-element mixture parameters from context and hyper features.
pub fn entropy_params(
    context: &Tensor3,
    hyper: &HyperFeatureTensor,
    w: &EntropyParamWeights,
) -> Result<GmmParamTensor> {
    let cs = context.shape();
    cs.ensure_spatial_eq(&hyper.shape(), "context vs. hyper features")?;
    let (h, wd) = (cs.height, cs.width);
    let per_position: Vec<Vec<GmmParams>> = (0..h * wd)
        .into_par_iter()
        .map(|p| {
            let (r, c) = (p / wd, p % wd);
            w.params_at(&column(context, r, c), &hyper.features_at(r, c))
        })
        .collect::<Result<_>>()?;
    let shape = Shape::new(w.n, h, wd);
    let mut out = GmmParamTensor::with_capacity(shape, w.k);
    for (p, params) in per_position.iter().enumerate() {
        for (ch, gp) in params.iter().enumerate() {
            out.put(shape.index(ch, p / wd, p % wd), gp);
        }
    }
    Ok(out)
}

/// Output of [`serial_decode`]: the recovered latents and the mixture
/// parameters the decoder used for every element.
#[derive(Debug, Clone)]
pub struct SerialDecoded {
    pub latents: LatentTensor,
    pub params: GmmParamTensor,
}

/// Autoregressive decode of the main payload.
///
/// Positions are visited in raster order. At each one the decoder extracts the
/// 5×5 causal window, runs the masked convolution on it alone, evaluates the
/// entropy network, then decodes one symbol per channel whose `skip` flag is
/// clear. Skipped channels stay zero and never touch the coder.
pub fn serial_decode(
    payload: &[u8],
    hyper: &HyperFeatureTensor,
    ctx: &MaskedConvWeights,
    ep: &EntropyParamWeights,
    shape: Shape,
    skip: &[bool],
) -> Result<SerialDecoded> {
    if shape.channels != ep.n || shape.channels != ctx.cin || skip.len() != shape.channels {
        return Err(Error::shape(format!(
            "latent shape {shape:?} does not match the model (N = {}) or {} skip flags",
            ep.n,
            skip.len()
        )));
    }
    shape.ensure_spatial_eq(&hyper.shape(), "latents vs. hyper features")?;

    let mut latents = LatentTensor::zeros(shape);
    let mut params = GmmParamTensor::with_capacity(shape, ep.k);
    let coded: Vec<usize> = (0..shape.channels).filter(|&c| !skip[c]).collect();
    // nothing to decode means nothing may be stored
    let mut decoder = if coded.is_empty() || shape.plane() == 0 {
        if !payload.is_empty() {
            return Err(Error::CorruptStream("payload present but every channel is skipped".into()));
        }
        None
    } else {
        Some(RangeDecoder::new(payload)?)
    };

    for row in 0..shape.height {
        for col in 0..shape.width {
            let window = window_extract(&latents, row, col)?;
            let context = masked_conv_window(&window, ctx)?;
            let channel_params = ep.params_at(&context, &hyper.features_at(row, col))?;
            let cdfs = coded
                .par_iter()
                .map(|&c| quantized_cdf(&channel_params[c]))
                .collect::<Result<Vec<_>>>()?;
            if let Some(dec) = decoder.as_mut() {
                for (&c, cdf) in coded.iter().zip(&cdfs) {
                    latents.set(c, row, col, dec.decode(cdf)?);
                }
            }
            for (c, gp) in channel_params.iter().enumerate() {
                params.put(shape.index(c, row, col), gp);
            }
        }
    }
    if let Some(dec) = decoder {
        dec.finish()?;
    }
    Ok(SerialDecoded { latents, params })
}
