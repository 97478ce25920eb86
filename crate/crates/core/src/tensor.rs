//! Dense NHWC `f32` tensors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape(format!("{n} values for {shape:?}"), format!("{}", data.len())));
        }
        Ok(Self { shape, data })
    }

    /// `[batch, height, width, channels]`
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped single samples into one batch.
    pub fn stack(samples: &[Tensor]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Data("cannot stack an empty batch".into()))?;
        let mut shape = first.shape;
        shape[0] = 0;
        let mut data = Vec::with_capacity(first.data.len() * samples.len());
        for s in samples {
            if s.shape[1..] != first.shape[1..] {
                return Err(Error::shape(format!("{:?}", first.shape), format!("{:?}", s.shape)));
            }
            shape[0] += s.shape[0];
            data.extend_from_slice(&s.data);
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}
