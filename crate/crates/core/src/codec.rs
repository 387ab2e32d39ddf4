//! End-to-end image codec and its byte container.
//!
//! Container layout (little-endian):
//!
//! | field | size |
//! |---|---|
//! | magic `GMC1` | 4 |
//! | version | 1 |
//! | K | 1 |
//! | N | 2 |
//! | width, height | 4 + 4 |
//! | zero-channel flags | ⌈N/8⌉ |
//! | hyper payload length + bytes | 4 + … |
//! | main payload length + bytes | 4 + … |
//! | crc32 (IEEE) of everything above | 4 |

use rayon::prelude::*;

use crate::context::{entropy_params, masked_conv_forward, serial_decode};
use crate::error::{Error, Result};
use crate::gmm::{bits_for, discretized_pmf, quantize_latent, quantized_cdf, GmmParamTensor};
use crate::model::{CodecModel, HYPER_POOL};
use crate::range_coder::{QuantizedCdf, RangeDecoder, RangeEncoder};
use crate::tensor::{LatentTensor, Shape, Tensor3};
use crate::transform::{ImagePlane, BLOCK};

pub const CONTAINER_MAGIC: &[u8; 4] = b"GMC1";
pub const CONTAINER_VERSION: u8 = 1;
/// Images are edge-padded to a multiple of this before analysis.
pub const PAD_MULTIPLE: usize = BLOCK * HYPER_POOL;
pub const DEFAULT_MAX_PIXELS: u64 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamContainer {
    pub k: u8,
    pub n: u16,
    pub width: u32,
    pub height: u32,
    pub flags: Vec<u8>,
    pub hyper_payload: Vec<u8>,
    pub main_payload: Vec<u8>,
}

impl BitstreamContainer {
    /// Fixed bytes before the flags.
    pub const HEADER_LEN: usize = 4 + 1 + 1 + 2 + 4 + 4;

    pub fn flag_bytes(n: usize) -> usize {
        n.div_ceil(8)
    }

    pub fn encoded_len(&self) -> usize {
        Self::HEADER_LEN + self.flags.len() + 4 + self.hyper_payload.len() + 4 + self.main_payload.len() + 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.push(CONTAINER_VERSION);
        out.push(self.k);
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.flags);
        out.extend_from_slice(&(self.hyper_payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.hyper_payload);
        out.extend_from_slice(&(self.main_payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.main_payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptStream(msg.to_string());
        if bytes.len() < 5 {
            return Err(corrupt("container shorter than its header"));
        }
        if &bytes[..4] != CONTAINER_MAGIC {
            return Err(corrupt("bad magic, expected GMC1"));
        }
        if bytes[4] != CONTAINER_VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        if bytes.len() < Self::HEADER_LEN + 4 {
            return Err(corrupt("container shorter than its header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
        if crc32fast::hash(body) != stored {
            return Err(corrupt("crc mismatch"));
        }

        let mut pos = 5;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos + n;
            if end > body.len() {
                return Err(corrupt("field runs past the end of the container"));
            }
            let s = &body[pos..end];
            pos = end;
            Ok(s)
        };
        let k = take(1)?[0];
        let n = u16::from_le_bytes(take(2)?.try_into().unwrap());
        let width = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let height = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let flags = take(Self::flag_bytes(n as usize))?.to_vec();
        let hl = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let hyper_payload = take(hl)?.to_vec();
        let ml = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let main_payload = take(ml)?.to_vec();
        if pos != body.len() {
            return Err(corrupt("trailing bytes after the main payload"));
        }
        if width == 0 || height == 0 || k == 0 || n == 0 {
            return Err(corrupt("zero dimension in header"));
        }
        Ok(BitstreamContainer {
            k,
            n,
            width,
            height,
            flags,
            hyper_payload,
            main_payload,
        })
    }
}

/// Bit `j` of byte `j / 8` (LSB first) is set iff channel `j` is all zero.
pub fn zero_channel_flags(latents: &LatentTensor) -> Vec<u8> {
    let n = latents.shape().channels;
    let mut flags = vec![0u8; BitstreamContainer::flag_bytes(n)];
    for c in 0..n {
        if latents.is_channel_zero(c) {
            flags[c / 8] |= 1 << (c % 8);
        }
    }
    flags
}

/// Expands flag bytes to one `bool` per channel; unused high bits must be 0.
pub fn flags_to_skip(flags: &[u8], n: usize) -> Result<Vec<bool>> {
    if flags.len() != BitstreamContainer::flag_bytes(n) {
        return Err(Error::CorruptStream(format!("{} flag bytes for N = {n}", flags.len())));
    }
    for bit in n..8 * flags.len() {
        if flags[bit / 8] & (1 << (bit % 8)) != 0 {
            return Err(Error::CorruptStream("flag set beyond the last channel".into()));
        }
    }
    Ok((0..n).map(|c| flags[c / 8] & (1 << (c % 8)) != 0).collect())
}

pub fn bpp(container_bytes: usize, width: usize, height: usize) -> Result<f64> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("bpp of an empty image"));
    }
    Ok(8.0 * container_bytes as f64 / (width as f64 * height as f64))
}

#[derive(Debug, Clone, Copy)]
pub struct EncodeOptions {
    pub max_pixels: u64,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            max_pixels: DEFAULT_MAX_PIXELS,
        }
    }
}

/// Bit accounting for one payload.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PayloadRate {
    /// `Σ −log2 p` under the continuous-parameter pmf.
    pub estimated_bits: f64,
    /// `Σ −log2 (freq / 2^16)` under the quantized CDFs actually used.
    pub quantized_bits: f64,
    pub actual_bits: u64,
    pub symbols: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub main: PayloadRate,
    pub hyper: PayloadRate,
    pub zero_channels: usize,
    pub container_bytes: usize,
    pub bpp: f64,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub container: BitstreamContainer,
    pub bytes: Vec<u8>,
    pub latents: LatentTensor,
    pub hyper_latents: LatentTensor,
    pub params: GmmParamTensor,
    pub report: RateReport,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub image: ImagePlane,
    pub latents: LatentTensor,
    pub hyper_latents: LatentTensor,
}

/// `y` on the latent grid and `z` on the hyper grid for a padded image.
pub fn analysis_transform(image: &ImagePlane, model: &CodecModel) -> Result<(Tensor3, Tensor3)> {
    if !image.height().is_multiple_of(PAD_MULTIPLE) || !image.width().is_multiple_of(PAD_MULTIPLE) {
        return Err(Error::shape(format!(
            "image {}x{} is not padded to a multiple of {PAD_MULTIPLE}",
            image.height(),
            image.width()
        )));
    }
    let y = model.transform.analysis(image)?;
    let z = model.hyper_analysis(&y)?;
    Ok((y, z))
}

pub fn synthesis_transform(latents: &LatentTensor, model: &CodecModel) -> Result<ImagePlane> {
    model.transform.synthesis_latent(latents)
}

fn hyper_cdfs(model: &CodecModel) -> Result<Vec<QuantizedCdf>> {
    (0..model.hyper_channels())
        .map(|c| quantized_cdf(&model.hyper_prior.params(c)?))
        .collect()
}

fn encode_hyper(z_hat: &LatentTensor, model: &CodecModel) -> Result<(Vec<u8>, PayloadRate)> {
    let cdfs = hyper_cdfs(model)?;
    let plane = z_hat.shape().plane();
    let mut enc = RangeEncoder::new();
    let mut rate = PayloadRate::default();
    for (i, &s) in z_hat.as_slice().iter().enumerate() {
        let c = i / plane;
        enc.encode(s, &cdfs[c])?;
        rate.estimated_bits += bits_for(discretized_pmf(s, &model.hyper_prior.params(c)?)?);
        rate.quantized_bits += cdfs[c].cost_bits(s);
        rate.symbols += 1;
    }
    let bytes = enc.finish().bytes;
    rate.actual_bits = 8 * bytes.len() as u64;
    Ok((bytes, rate))
}

fn decode_hyper(payload: &[u8], shape: Shape, model: &CodecModel) -> Result<LatentTensor> {
    let cdfs = hyper_cdfs(model)?;
    let mut dec = RangeDecoder::new(payload)?;
    let mut z = LatentTensor::zeros(shape);
    let plane = shape.plane();
    for (i, slot) in z.as_mut_slice().iter_mut().enumerate() {
        *slot = dec.decode(&cdfs[i / plane])?;
    }
    dec.finish()?;
    Ok(z)
}

/// Main payload: raster positions, channels inner, channels with `skip` set
/// omitted. An all-skipped tensor gives an empty payload.
pub fn encode_main_payload(
    y_hat: &LatentTensor,
    params: &GmmParamTensor,
    skip: &[bool],
) -> Result<(Vec<u8>, PayloadRate)> {
    let shape = y_hat.shape();
    shape.ensure_eq(&params.shape(), "latents vs. mixture parameters")?;
    if skip.len() != shape.channels {
        return Err(Error::shape(format!("{} skip flags for {} channels", skip.len(), shape.channels)));
    }
    let coded: Vec<usize> = (0..shape.channels).filter(|&c| !skip[c]).collect();
    let mut rate = PayloadRate::default();
    if coded.is_empty() {
        return Ok((Vec::new(), rate));
    }
    let mut enc = RangeEncoder::new();
    for row in 0..shape.height {
        // one row of CDFs at a time keeps memory bounded
        let row_cdfs: Vec<(QuantizedCdf, f64)> = (0..shape.width * coded.len())
            .into_par_iter()
            .map(|j| {
                let (col, c) = (j / coded.len(), coded[j % coded.len()]);
                let gp = params.get(c, row, col);
                let s = y_hat.get(c, row, col);
                Ok((quantized_cdf(&gp)?, bits_for(discretized_pmf(s, &gp)?)))
            })
            .collect::<Result<_>>()?;
        for (j, (cdf, est)) in row_cdfs.iter().enumerate() {
            let (col, c) = (j / coded.len(), coded[j % coded.len()]);
            let s = y_hat.get(c, row, col);
            enc.encode(s, cdf)?;
            rate.estimated_bits += est;
            rate.quantized_bits += cdf.cost_bits(s);
            rate.symbols += 1;
        }
    }
    let bytes = enc.finish().bytes;
    rate.actual_bits = 8 * bytes.len() as u64;
    Ok((bytes, rate))
}

pub fn encode_image(image: &ImagePlane, model: &CodecModel, opts: &EncodeOptions) -> Result<Encoded> {
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(Error::invalid("empty image"));
    }
    let pixels = h as u64 * w as u64;
    if pixels > opts.max_pixels {
        return Err(Error::ResourceLimit(format!(
            "{pixels} pixels exceeds the limit of {}",
            opts.max_pixels
        )));
    }
    if h > u32::MAX as usize || w > u32::MAX as usize || model.n() > u16::MAX as usize || model.k() > u8::MAX as usize {
        return Err(Error::ResourceLimit("dimension does not fit the container".into()));
    }

    let padded = image.pad_replicate(PAD_MULTIPLE);
    let (y, z) = analysis_transform(&padded, model)?;
    let y_hat = quantize_latent(&y)?;
    let z_hat = quantize_latent(&z)?;

    let (hyper_payload, hyper_rate) = encode_hyper(&z_hat, model)?;
    let features = model.hyper_features(&z_hat)?;
    let context = masked_conv_forward(&y_hat, &model.context)?;
    let params = entropy_params(&context, &features, &model.entropy)?;

    let flags = zero_channel_flags(&y_hat);
    let skip = flags_to_skip(&flags, model.n())?;
    let (main_payload, main_rate) = encode_main_payload(&y_hat, &params, &skip)?;

    let container = BitstreamContainer {
        k: model.k() as u8,
        n: model.n() as u16,
        width: w as u32,
        height: h as u32,
        flags,
        hyper_payload,
        main_payload,
    };
    let bytes = container.to_bytes();
    let report = RateReport {
        main: main_rate,
        hyper: hyper_rate,
        zero_channels: skip.iter().filter(|&&s| s).count(),
        container_bytes: bytes.len(),
        bpp: bpp(bytes.len(), w, h)?,
    };
    Ok(Encoded {
        container,
        bytes,
        latents: y_hat,
        hyper_latents: z_hat,
        params,
        report,
    })
}

pub fn decode_container(bytes: &[u8], model: &CodecModel) -> Result<Decoded> {
    let c = BitstreamContainer::parse(bytes)?;
    if c.k as usize != model.k() || c.n as usize != model.n() {
        return Err(Error::ModelMismatch(format!(
            "stream has K = {}, N = {}; model has K = {}, N = {}",
            c.k,
            c.n,
            model.k(),
            model.n()
        )));
    }
    let (h, w) = (c.height as usize, c.width as usize);
    let ph = h.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE;
    let pw = w.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE;
    let skip = flags_to_skip(&c.flags, model.n())?;

    let z_shape = Shape::new(model.hyper_channels(), ph / PAD_MULTIPLE, pw / PAD_MULTIPLE);
    let z_hat = decode_hyper(&c.hyper_payload, z_shape, model)?;
    let features = model.hyper_features(&z_hat)?;

    let y_shape = Shape::new(model.n(), ph / BLOCK, pw / BLOCK);
    let decoded = serial_decode(
        &c.main_payload,
        &features,
        &model.context,
        &model.entropy,
        y_shape,
        &skip,
    )?;
    for (ch, &skipped) in skip.iter().enumerate() {
        if !skipped && decoded.latents.is_channel_zero(ch) {
            return Err(Error::CorruptStream(format!(
                "channel {ch} is not flagged but decodes to all zeros"
            )));
        }
    }
    let image = synthesis_transform(&decoded.latents, model)?.crop(h, w)?;
    Ok(Decoded {
        image,
        latents: decoded.latents,
        hyper_latents: z_hat,
    })
}

pub fn decode_image(bytes: &[u8], model: &CodecModel) -> Result<ImagePlane> {
    Ok(decode_container(bytes, model)?.image)
}
