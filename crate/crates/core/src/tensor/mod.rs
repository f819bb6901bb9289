//! Dense row-major tensors, the reverse-mode autodiff graph built on top of
//! them, and the Adam optimizer.
//!
//! Everything here is generic over [`Element`] so the same code path runs in
//! 32-bit mode for training and in 64-bit mode for gradient checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use thiserror::Error;

mod graph;
pub mod kernels;
mod optim;

pub use graph::{GradError, Graph, Var};
pub use optim::{adam_step, lr_linear_decay, AdamConfig, AdamState, OptimError};

/// Floating point element type usable in tensors.
pub trait Element:
    num_traits::Float + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_element {
    ($t:ty, $gemm:path) => {
        impl Element for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                // Bounds of the strided views are checked by the callers,
                // which always pass contiguous buffers of the right length.
                debug_assert!(k == 0 || !a.is_empty());
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("data length {len} does not match dims {dims:?}")]
    DataLength { dims: Vec<usize>, len: usize },
    #[error("zero-sized dimension in {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("output extent ({extent} - {kernel}) is not divisible by stride {stride}")]
    NonIntegralExtent {
        extent: usize,
        kernel: usize,
        stride: usize,
    },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T, TensorError> {
    Err(TensorError::Shape(msg.into()))
}

/// Dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.dims, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.dims, self.data.len())
        }
    }
}

impl<T: Element> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim(dims.to_vec()));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                dims: dims.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Internal constructor for kernels that already guarantee the invariant.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, T::one())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let n = dims.iter().product();
        Self::from_parts(dims.to_vec(), vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = dims.iter().product();
        Self::from_parts(dims.to_vec(), (0..n).map(&mut f).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self, TensorError> {
        Self::new(dims, self.data.clone())
    }

    pub fn into_reshaped(self, dims: &[usize]) -> Result<Self, TensorError> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.dims.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        if self.dims != other.dims {
            return shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.dims, other.dims
            ));
        }
        Ok(Self::from_parts(
            self.dims.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.dims.clone(),
            self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }

    /// Slice `len` entries starting at `start` along axis 0.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Self, TensorError> {
        if self.dims.is_empty() || start + len > self.dims[0] || len == 0 {
            return shape_err(format!(
                "narrow {start}..{} of {:?}",
                start + len,
                self.dims
            ));
        }
        let row: usize = self.dims[1..].iter().product();
        let mut dims = self.dims.clone();
        dims[0] = len;
        Ok(Self::from_parts(
            dims,
            self.data[start * row..(start + len) * row].to_vec(),
        ))
    }

    /// Gather rows along axis 0.
    pub fn select_batch(&self, indices: &[usize]) -> Result<Self, TensorError> {
        if indices.is_empty() {
            return shape_err("empty batch selection");
        }
        let row: usize = self.dims[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= self.dims[0] {
                return shape_err(format!("row {i} out of range for {:?}", self.dims));
            }
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut dims = self.dims.clone();
        dims[0] = indices.len();
        Ok(Self::from_parts(dims, data))
    }

    /// Concatenate along axis 0.
    pub fn stack_batch(parts: &[Self]) -> Result<Self, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Shape("stack of nothing".into()))?;
        let mut dims = first.dims.clone();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.dims[1..] != first.dims[1..] {
                return shape_err(format!("stack {:?} with {:?}", first.dims, p.dims));
            }
            rows += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        dims[0] = rows;
        Ok(Self::from_parts(dims, data))
    }
}

impl Tensor<f32> {
    pub fn to_f64(&self) -> Tensor<f64> {
        self.cast()
    }
}
