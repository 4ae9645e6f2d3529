//! Batched multi-channel 1D signals.
//!
//! Storage is a single contiguous buffer in `(batch, channels, length)`
//! row-major order, so `row(b, c)` is a plain slice.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub length: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, length: usize) -> Self {
        Self {
            batch,
            channels,
            length,
        }
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.length
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.batch, self.channels, self.length)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    data: Vec<f64>,
    shape: Shape,
}

impl SignalBatch {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "SignalBatch::new",
                format!("{} elements for shape {shape}", shape.numel()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            data: vec![0.0; shape.numel()],
            shape,
        }
    }

    /// A batch holding one single-channel signal.
    pub fn from_signal(signal: &[f64]) -> Self {
        Self {
            data: signal.to_vec(),
            shape: Shape::new(1, 1, signal.len()),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape.batch
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn length(&self) -> usize {
        self.shape.length
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let start = (b * self.shape.channels + c) * self.shape.length;
        &self.data[start..start + self.shape.length]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let start = (b * self.shape.channels + c) * self.shape.length;
        &mut self.data[start..start + self.shape.length]
    }

    /// All channels of sample `b`, contiguous.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.shape.channels * self.shape.length;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.shape.channels * self.shape.length;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fails with [`Error::NonFinite`] naming `layer` if any element is NaN or infinite.
    pub fn ensure_finite(&self, layer: &str) -> Result<()> {
        ensure_finite(&self.data, layer)
    }
}

/// Dense row-major matrix, used for kernel banks and exported tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols} = {} values", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

pub(crate) fn ensure_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_element_count() {
        let err = SignalBatch::new(Shape::new(2, 3, 4), vec![0.0; 23]).unwrap_err();
        assert!(err.to_string().contains("2x3x4"), "{err}");
    }

    #[test]
    fn rows_are_contiguous() {
        let data: Vec<f64> = (0..12).map(f64::from).collect();
        let x = SignalBatch::new(Shape::new(2, 2, 3), data).unwrap();
        assert_eq!(x.row(1, 0), &[6.0, 7.0, 8.0]);
        assert_eq!(x.sample(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn finiteness_check_names_layer() {
        let x = SignalBatch::new(Shape::new(1, 1, 2), vec![1.0, f64::NAN]).unwrap();
        let err = x.ensure_finite("conv2").unwrap_err();
        assert!(err.to_string().contains("conv2"));
    }
}
