//! Dense tensors and the handful of differentiable layers the embedding
//! network is made of.
//!
//! Every layer is a pair of free functions (or methods): a forward pass that
//! returns whatever the backward pass needs, and a backward pass that maps an
//! output gradient to an input gradient while accumulating parameter
//! gradients. There is no tape; the pathway in [`crate::model`] walks the
//! layers in reverse itself.

mod activation;
mod batchnorm;
mod conv;
mod normalize;
mod pool;
mod reduce;

#[cfg(test)]
pub(crate) mod gradcheck;

pub use activation::{elu, elu_backward, elu_backward_from_output, elu_inplace, ELU_ALPHA};
pub use batchnorm::{BatchNorm, BatchNormCache, BatchNormGrads, Mode};
pub use conv::{Conv2d, ConvGrads, Kernel};
pub use normalize::{l2_normalize, l2_normalize_backward, l2_normalize_rows, l2_normalize_rows_backward};
pub use pool::{global_average_pool, global_average_pool_backward, maxpool2x2, maxpool2x2_backward};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Four dimensional activation tensor in `(batch, channels, height, width)`
/// row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: [usize; 4], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(shape_err(
                "Tensor4::from_vec",
                format!("{expected} elements for dims {dims:?}"),
                data.len(),
            ));
        }
        Ok(Self { dims, data })
    }

    /// Stacks equally sized single-channel planes into a `(n, 1, h, w)` batch.
    pub fn stack_planes<'a, I>(height: usize, width: usize, planes: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [T]>,
    {
        let mut data = Vec::new();
        let mut n = 0;
        for plane in planes {
            if plane.len() != height * width {
                return Err(shape_err("Tensor4::stack_planes", height * width, plane.len()));
            }
            data.extend_from_slice(plane);
            n += 1;
        }
        Self::from_vec([n, 1, height, width], data)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.plane_len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects a subset of samples, in the given order.
    pub fn select(&self, samples: &[usize]) -> Self {
        let mut data = Vec::with_capacity(samples.len() * self.sample_len());
        for &n in samples {
            data.extend_from_slice(self.sample(n));
        }
        let mut dims = self.dims;
        dims[0] = samples.len();
        Self { dims, data }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Row-major matrix, used for batches of embedding vectors (one row each).
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(shape_err("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(shape_err("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Appends the rows of `other` below `self`.
    pub fn append(&mut self, other: &Matrix<T>) -> Result<()> {
        if self.rows == 0 {
            self.cols = other.cols;
        } else if other.rows > 0 && other.cols != self.cols {
            return Err(shape_err("Matrix::append", self.cols, other.cols));
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(())
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::<f64>::from_vec([1, 2, 2, 2], vec![0.0; 7]).is_err());
        let t = Tensor4::<f64>::from_vec([1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(0, 1, 0, 1), 5.0);
    }

    #[test]
    fn select_reorders_samples() {
        let t = Tensor4::<f32>::from_vec([3, 1, 1, 2], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let s = t.select(&[2, 0]);
        assert_eq!(s.data(), &[4., 5., 0., 1.]);
    }
}
