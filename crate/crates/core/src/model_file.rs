//! Binary container for named `f32` tensors.
//!
//! Layout: magic `GMMP`, one version byte, then tensors back to back until end
//! of file. Each tensor is a `u8` name length, the UTF-8 name, a `u8` rank,
//! `rank` little-endian `u32` dimensions, and the row-major data as
//! little-endian `f32`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GMMP";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let count: usize = dims.iter().map(|&d| d as usize).product();
        if count != data.len() {
            return Err(Error::ModelFormat(format!(
                "tensor {name}: dims {dims:?} hold {count} values, got {}",
                data.len()
            )));
        }
        if name.len() > u8::MAX as usize || dims.len() > u8::MAX as usize {
            return Err(Error::ModelFormat(format!("tensor {name}: name or rank too long")));
        }
        Ok(NamedTensor { name, dims, data })
    }

    pub fn from_f64(name: impl Into<String>, dims: Vec<u32>, data: &[f64]) -> Result<Self> {
        Self::new(name, dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    for t in tensors {
        w.write_all(&[t.name.len() as u8])?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[t.dims.len() as u8])?;
        for d in &t.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * t.data.len());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat(format!("file ends inside {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn parse_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::ModelFormat("bad magic, expected GMMP".into()));
    }
    let version = cur.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported model version {version}")));
    }
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.take(1, "name length")?[0] as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| Error::ModelFormat("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = cur.take(4, "dims")?;
            dims.push(u32::from_le_bytes([d[0], d[1], d[2], d[3]]));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::ModelFormat(format!("tensor {name}: dims overflow")))?;
        let raw = cur.take(
            count
                .checked_mul(4)
                .ok_or_else(|| Error::ModelFormat(format!("tensor {name}: too large")))?,
            &name,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(NamedTensor { name, dims, data });
    }
    Ok(out)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_tensors(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_byte_exact() {
        let t = NamedTensor::new("ab", vec![2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, std::slice::from_ref(&t)).unwrap();
        let mut want = b"GMMP\x01\x02ab\x01".to_vec();
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
        assert_eq!(parse_tensors(&buf).unwrap(), vec![t]);
    }

    #[test]
    fn rejects_damage() {
        let t = NamedTensor::new("w", vec![3, 1], vec![0.5; 3]).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[t]).unwrap();
        assert!(parse_tensors(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(parse_tensors(&bad).is_err());
        let mut bad = buf;
        bad[4] = 9;
        assert!(parse_tensors(&bad).is_err());
        assert!(NamedTensor::new("x", vec![2, 2], vec![0.0; 3]).is_err());
    }
}
