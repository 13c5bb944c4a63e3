//! Dense real and complex arrays.
//!
//! Feature maps use the `N×C×H×W` layout in row-major order. Gradient
//! bookkeeping lives on [`crate::autodiff::Var`], not here: a `Tensor` is a
//! plain value.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor(shape={:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, ", data={:?}", self.data)?;
        }
        write!(f, ")")
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if shape.len() > 5 {
            return Err(Error::dim(format!("rank {} not supported", shape.len())));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents of a 4-D feature map.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::dim(format!(
                "expected N×C×H×W tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Value at a 4-D index.
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let (_, cs, hs, ws) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    /// Contiguous `H×W` plane of a 4-D tensor.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let (cs, hs, ws) = (self.shape[1], self.shape[2], self.shape[3]);
        let start = (n * cs + c) * hs * ws;
        &self.data[start..start + hs * ws]
    }

    /// Concatenates tensors of equal trailing shape along the first axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::dim("empty batch"))?;
        let mut shape = first.shape.clone();
        let mut data = Vec::with_capacity(first.len() * parts.len());
        shape[0] = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::dim(format!(
                    "batch members differ: {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            shape[0] += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Tensor::new(&shape, data)
    }
}

/// Complex array stored as split real and imaginary buffers sharing one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexTensor {
    pub fn new(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if re.len() != n || im.len() != n {
            return Err(Error::dim(format!(
                "complex buffers of length {}/{} do not fit shape {:?}",
                re.len(),
                im.len(),
                shape
            )));
        }
        Ok(ComplexTensor {
            shape: shape.to_vec(),
            re,
            im,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn real_part(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.re.clone(),
        }
    }

    pub fn imag_part(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.im.clone(),
        }
    }
}
