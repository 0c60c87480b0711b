//! Dense row-major tensors and the arithmetic the recurrent layers are built on.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use thiserror::Error;

/// Errors raised by tensor and layer operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    Contract { op: &'static str, reason: String },
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        TensorError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn contract(op: &'static str, reason: impl Into<String>) -> Self {
        TensorError::Contract {
            op,
            reason: reason.into(),
        }
    }
}

/// Floating-point element type. Implemented for `f32` (default) and `f64`
/// (gradient checking).
pub trait Scalar: Float + Default + Debug + Display + Sum + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Pointwise operation kinds accepted by [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Dense tensor with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::contract("tensor", "extents must be positive"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::contract(
                "tensor",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor extents must be positive: {shape:?}"
        );
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    /// Single-column sequence `len × 1`.
    pub fn column(values: &[T]) -> Self {
        Tensor {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Number of rows of a 2-D tensor (time steps for sequences).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing extent of a 2-D tensor (features for sequences).
    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, t: usize) -> &[T] {
        let c = self.cols();
        &self.data[t * c..(t + 1) * c]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[t * c..(t + 1) * c]
    }

    fn require_2d(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::contract(
                op,
                format!("expected a 2-D tensor, got shape {:?}", self.shape),
            )),
        }
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return Err(TensorError::dim("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::dim(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Applies `kind` pointwise. Binary kinds take exactly one `other` of
    /// identical shape; unary kinds take none.
    pub fn elementwise(&self, kind: Elementwise, other: Option<&Self>) -> Result<Self, TensorError> {
        match (kind, other) {
            (Elementwise::Add, Some(b)) => self.zip_map(b, "add", |x, y| x + y),
            (Elementwise::Sub, Some(b)) => self.zip_map(b, "sub", |x, y| x - y),
            (Elementwise::Mul, Some(b)) => self.zip_map(b, "mul", |x, y| x * y),
            (Elementwise::Sigmoid, None) => Ok(self.map(sigmoid)),
            (Elementwise::Tanh, None) => Ok(self.map(|x| x.tanh())),
            (k, _) => Err(TensorError::contract(
                "elementwise",
                format!("wrong operand count for {k:?}"),
            )),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.elementwise(Elementwise::Add, Some(other))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.elementwise(Elementwise::Sub, Some(other))
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.elementwise(Elementwise::Mul, Some(other))
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(|x| x.tanh())
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::dim("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Standard matrix product of `m×k` and `k×n`.
    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        let (m, k) = self.require_2d("matmul")?;
        let (k2, n) = other.require_2d("matmul")?;
        if k != k2 {
            return Err(TensorError::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                axpy(a, &other.data[p * n..(p + 1) * n], out_row);
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self, TensorError> {
        let (m, n) = self.require_2d("transpose")?;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Per-time-step concatenation `T×F1 ++ T×F2 → T×(F1+F2)`, `self` first.
    pub fn concat_features(&self, other: &Self) -> Result<Self, TensorError> {
        let (t1, f1) = self.require_2d("concat_features")?;
        let (t2, f2) = other.require_2d("concat_features")?;
        if t1 != t2 {
            return Err(TensorError::dim("concat_features", &self.shape, &other.shape));
        }
        let mut data = Vec::with_capacity(t1 * (f1 + f2));
        for t in 0..t1 {
            data.extend_from_slice(self.row(t));
            data.extend_from_slice(other.row(t));
        }
        Ok(Tensor {
            shape: vec![t1, f1 + f2],
            data,
        })
    }

    /// Inverse of [`concat_features`](Self::concat_features): splits the
    /// feature axis at `at`.
    pub fn split_features(&self, at: usize) -> Result<(Self, Self), TensorError> {
        let (t, f) = self.require_2d("split_features")?;
        if at == 0 || at >= f {
            return Err(TensorError::contract(
                "split_features",
                format!("split point {at} outside 1..{f}"),
            ));
        }
        let mut a = Vec::with_capacity(t * at);
        let mut b = Vec::with_capacity(t * (f - at));
        for r in 0..t {
            let row = self.row(r);
            a.extend_from_slice(&row[..at]);
            b.extend_from_slice(&row[at..]);
        }
        Ok((
            Tensor {
                shape: vec![t, at],
                data: a,
            },
            Tensor {
                shape: vec![t, f - at],
                data: b,
            },
        ))
    }

    /// Reverses the order of rows (time reversal of a sequence).
    pub fn reverse_rows(&self) -> Self {
        let t = self.rows();
        let mut data = Vec::with_capacity(self.data.len());
        for r in (0..t).rev() {
            data.extend_from_slice(self.row(r));
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    // four partial sums; fixed order keeps results reproducible
    let mut acc = [T::zero(); 4];
    let chunks = x.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + x[i] * y[i];
        acc[1] = acc[1] + x[i + 1] * y[i + 1];
        acc[2] = acc[2] + x[i + 2] * y[i + 2];
        acc[3] = acc[3] + x[i + 3] * y[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..x.len() {
        s = s + x[i] * y[i];
    }
    s
}

/// Named tensors with deterministic (insertion) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T = f32> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        ParameterSet { entries: Vec::new() }
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<(), TensorError> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(TensorError::contract(
                "parameter_set",
                format!("duplicate parameter name {name}"),
            ));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn into_entries(self) -> Vec<(String, Tensor<T>)> {
        self.entries
    }
}

/// Anything that exposes its tensors by name in a fixed order.
pub trait TensorCollection<T: Scalar> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;
}

impl<T: Scalar> TensorCollection<T> for ParameterSet<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.clone(), t)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.clone(), t)).collect()
    }
}
