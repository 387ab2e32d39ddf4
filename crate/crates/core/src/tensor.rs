//! Dense channel-major 3-D arrays.
//!
//! Both tensor types store their elements in `(channel, row, col)` order with
//! the column index varying fastest.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub const fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    pub(crate) fn ensure_eq(&self, other: &Shape, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::shape(format!("{what}: {self:?} vs {other:?}")));
        }
        Ok(())
    }

    pub(crate) fn ensure_spatial_eq(&self, other: &Shape, what: &str) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape(format!(
                "{what}: spatial {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Integer-valued tensor of quantized latents (`ŷ`) or hyper-latents (`ẑ`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentTensor {
    shape: Shape,
    data: Vec<i32>,
}

impl LatentTensor {
    pub fn zeros(shape: Shape) -> Self {
        LatentTensor {
            shape,
            data: vec![0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<i32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(LatentTensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [i32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<i32> {
        self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> i32 {
        self.data[self.shape.index(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: i32) {
        let i = self.shape.index(channel, row, col);
        self.data[i] = value;
    }

    pub fn channel(&self, channel: usize) -> &[i32] {
        let plane = self.shape.plane();
        &self.data[channel * plane..(channel + 1) * plane]
    }

    pub fn is_channel_zero(&self, channel: usize) -> bool {
        self.channel(channel).iter().all(|&v| v == 0)
    }
}

/// Real-valued channel-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(shape: Shape) -> Self {
        Tensor3 {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor3 { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.shape.index(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        let i = self.shape.index(channel, row, col);
        self.data[i] = value;
    }
}
