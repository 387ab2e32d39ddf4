//! Integer range coder over the 512-symbol latent alphabet.
//!
//! The coder keeps a 56-bit window of the code value in a `u64` (`low`) plus a
//! carry bit, and renormalizes one byte at a time whenever `range` drops below
//! 2^48. Symbol probabilities arrive as [`QuantizedCdf`] tables with a fixed
//! total of 2^16, so `range >> 16` always keeps at least 32 bits of precision
//! and the per-symbol truncation loss stays below 2^-32 relative.
//!
//! Carries are resolved with the usual cache + pending-0xFF scheme. The very
//! first byte such a coder produces is always zero (the interval never leaves
//! `[0, 2^56)`), so it is dropped on output and the decoder starts directly
//! with the following seven bytes.
//!
//! Termination writes a single byte: any value in the final interval whose low
//! 48 bits are zero identifies it, and the decoder treats reads past the end of
//! the payload as zero bytes. A well-formed stream is always read to exactly
//! `TAIL_PAD` bytes past its end, which the decoder checks.

use crate::error::{Error, Result};
use crate::gmm::SymbolAlphabet;

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;

const ALPHABET: usize = SymbolAlphabet::SIZE;
const WINDOW_BITS: u32 = 56;
const WINDOW_MASK: u64 = (1 << WINDOW_BITS) - 1;
const RENORM_BELOW: u64 = 1 << (WINDOW_BITS - 8);
const TOP_SHIFT: u32 = WINDOW_BITS - 8;
const INIT_BYTES: usize = (WINDOW_BITS / 8) as usize;

/// Number of implicit zero bytes a decoder consumes past the payload end.
pub const TAIL_PAD: usize = 6;

/// Cumulative frequency table with every symbol holding at least one count.
#[derive(Clone, PartialEq, Eq)]
pub struct QuantizedCdf {
    cum: Box<[u32; ALPHABET + 1]>,
}

impl std::fmt::Debug for QuantizedCdf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuantizedCdf")
            .field("total", &self.cum[ALPHABET])
            .finish_non_exhaustive()
    }
}

impl QuantizedCdf {
    /// Quantizes a probability vector to integer frequencies summing to 2^16.
    ///
    /// Each symbol first receives one reserved count; the remaining
    /// `2^16 − 512` counts are distributed by flooring `p · remaining`, and the
    /// leftover from flooring goes to the most probable symbol (lowest index
    /// on ties).
    pub fn from_pmf(pmf: &[f64]) -> Result<Self> {
        if pmf.len() != ALPHABET {
            return Err(Error::InvalidDistribution(format!(
                "expected {ALPHABET} probabilities, got {}",
                pmf.len()
            )));
        }
        if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = pmf.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution("all-zero pmf".into()));
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDistribution(format!(
                "pmf sums to {sum}, not 1"
            )));
        }

        let spare = (TOTAL as usize - ALPHABET) as f64;
        let mut freq = [0u32; ALPHABET];
        let mut assigned = 0u32;
        let mut best = 0usize;
        for (j, &p) in pmf.iter().enumerate() {
            let share = ((p / sum) * spare).floor().min(spare) as u32;
            freq[j] = 1 + share;
            assigned += freq[j];
            if p > pmf[best] {
                best = j;
            }
        }
        // flooring never overshoots, so the correction is non-negative
        freq[best] += TOTAL - assigned;

        let mut cum = Box::new([0u32; ALPHABET + 1]);
        for j in 0..ALPHABET {
            cum[j + 1] = cum[j] + freq[j];
        }
        debug_assert_eq!(cum[ALPHABET], TOTAL);
        Ok(QuantizedCdf { cum })
    }

    /// Builds a table from explicit frequencies (each ≥ 1, summing to 2^16).
    pub fn from_frequencies(freq: &[u32]) -> Result<Self> {
        if freq.len() != ALPHABET {
            return Err(Error::InvalidDistribution(format!(
                "expected {ALPHABET} frequencies, got {}",
                freq.len()
            )));
        }
        if freq.contains(&0) {
            return Err(Error::InvalidDistribution("zero frequency".into()));
        }
        let mut cum = Box::new([0u32; ALPHABET + 1]);
        for j in 0..ALPHABET {
            cum[j + 1] = cum[j].saturating_add(freq[j]);
        }
        if cum[ALPHABET] != TOTAL {
            return Err(Error::InvalidDistribution(format!(
                "frequencies sum to {}, not {TOTAL}",
                cum[ALPHABET]
            )));
        }
        Ok(QuantizedCdf { cum })
    }

    pub fn uniform() -> Self {
        Self::from_frequencies(&[TOTAL / ALPHABET as u32; ALPHABET]).expect("uniform table")
    }

    #[inline]
    pub fn freq(&self, index: usize) -> u32 {
        self.cum[index + 1] - self.cum[index]
    }

    #[inline]
    pub fn cum(&self, index: usize) -> u32 {
        self.cum[index]
    }

    pub fn frequencies(&self) -> Vec<u32> {
        (0..ALPHABET).map(|j| self.freq(j)).collect()
    }

    /// Ideal code length of `symbol` under this table, in bits.
    pub fn cost_bits(&self, symbol: i32) -> f64 {
        let f = self.freq(SymbolAlphabet::index(symbol));
        PRECISION_BITS as f64 - (f as f64).log2()
    }

    /// Index `j` with `cum[j] <= target < cum[j + 1]`.
    #[inline]
    fn lookup(&self, target: u32) -> usize {
        // partition_point over cum[1..] finds the first cum[j + 1] > target
        self.cum[1..].partition_point(|&c| c <= target)
    }
}

/// Encoded bytes together with their length in bits.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bitstream {
    pub bytes: Vec<u8>,
    pub bit_length: u64,
}

impl Bitstream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let bit_length = 8 * bytes.len() as u64;
        Bitstream { bytes, bit_length }
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u64,
    cache: u8,
    pending: u64,
    skip_first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: WINDOW_MASK,
            cache: 0,
            pending: 1,
            skip_first: true,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, symbol: i32, cdf: &QuantizedCdf) -> Result<()> {
        let symbol = SymbolAlphabet::check(symbol as i64)?;
        let j = SymbolAlphabet::index(symbol);
        let r = self.range >> PRECISION_BITS;
        self.low += r * cdf.cum(j) as u64;
        self.range = r * cdf.freq(j) as u64;
        while self.range < RENORM_BELOW {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    fn push(&mut self, byte: u8) {
        if self.skip_first {
            self.skip_first = false;
            debug_assert_eq!(byte, 0);
        } else {
            self.out.push(byte);
        }
    }

    fn shift_low(&mut self) {
        let carry = self.low > WINDOW_MASK;
        if carry || (self.low >> TOP_SHIFT) != 0xFF {
            let c = carry as u8;
            let first = self.cache.wrapping_add(c);
            self.push(first);
            for _ in 1..self.pending {
                self.push(0xFFu8.wrapping_add(c));
            }
            self.pending = 0;
            self.cache = ((self.low >> TOP_SHIFT) & 0xFF) as u8;
        }
        self.pending += 1;
        self.low = (self.low << 8) & WINDOW_MASK;
    }

    /// Bytes written so far, excluding the still-buffered carry window.
    pub fn bytes_written(&self) -> usize {
        self.out.len()
    }

    pub fn finish(mut self) -> Bitstream {
        // smallest multiple of 2^48 inside [low, low + range); range >= 2^48
        // guarantees it exists
        let step = RENORM_BELOW - 1;
        self.low = (self.low + step) & !step;
        self.shift_low();
        self.shift_low();
        Bitstream::from_bytes(self.out)
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u64,
    code: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut dec = RangeDecoder {
            data,
            pos: 0,
            range: WINDOW_MASK,
            code: 0,
        };
        for _ in 0..INIT_BYTES {
            dec.code = (dec.code << 8) | dec.next_byte()? as u64;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = match self.data.get(self.pos) {
            Some(&b) => b,
            None if self.pos < self.data.len() + TAIL_PAD => 0,
            None => return Err(Error::TruncatedStream),
        };
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, cdf: &QuantizedCdf) -> Result<i32> {
        let r = self.range >> PRECISION_BITS;
        let target = self.code / r;
        if target >= TOTAL as u64 {
            return Err(Error::CorruptStream("code value outside the coding interval".into()));
        }
        let j = cdf.lookup(target as u32);
        self.code -= r * cdf.cum(j) as u64;
        self.range = r * cdf.freq(j) as u64;
        while self.range < RENORM_BELOW {
            self.range <<= 8;
            self.code = ((self.code << 8) | self.next_byte()? as u64) & WINDOW_MASK;
        }
        Ok(SymbolAlphabet::symbol(j))
    }

    /// Checks that decoding consumed exactly the payload.
    pub fn finish(self) -> Result<()> {
        let expected = self.data.len() + TAIL_PAD;
        if self.pos < expected {
            return Err(Error::CorruptStream(format!(
                "{} unread payload bytes",
                expected - self.pos
            )));
        }
        Ok(())
    }
}

/// Encodes a symbol sequence, asking `cdfs` for the table of each position.
///
/// The provider sees the position and every symbol encoded before it, which
/// is exactly what the decoder will know at the same point.
pub fn encode<'c, F>(symbols: &[i32], mut cdfs: F) -> Result<Bitstream>
where
    F: FnMut(usize, &[i32]) -> &'c QuantizedCdf,
{
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        enc.encode(s, cdfs(i, &symbols[..i]))?;
    }
    Ok(enc.finish())
}

pub fn decode<'c, F>(stream: &Bitstream, mut cdfs: F, n: usize) -> Result<Vec<i32>>
where
    F: FnMut(usize, &[i32]) -> &'c QuantizedCdf,
{
    let mut dec = RangeDecoder::new(&stream.bytes)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let s = dec.decode(cdfs(i, &out))?;
        out.push(s);
    }
    dec.finish()?;
    Ok(out)
}
