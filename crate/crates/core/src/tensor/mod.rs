//! Dense rank-4 `f64` tensors and a tape-based reverse-mode autodiff engine.
//!
//! [`Tensor`] is a plain value: an `(N, C, H, W)` shape and a row-major
//! buffer. Differentiable computation happens on a [`Tape`]: leaves are
//! pushed with [`Tape::leaf`] (or bound from a [`ParamStore`]), every
//! operation on a [`Var`] records a node, and [`Tape::backward`] walks the
//! nodes in reverse to fill in gradients of leaves.
//!
//! The raw forward/backward kernels live in [`kernels`] and are usable
//! without a tape.

pub mod kernels;
mod params;
mod tape;

pub use kernels::{ConvSpec, PoolStat, ResampleMode};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{bce_logit, sigmoid, Tape, Var};

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const SCALAR: Shape = Shape::new(1, 1, 1, 1);

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::dim(
                "from_vec",
                format!("shape {shape} needs {} values, got {}", shape.numel(), data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor { shape, data }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = v;
    }

    /// The `(H, W)` plane at batch `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = self.shape.index(n, c, 0, 0);
        &self.data[start..start + self.shape.plane()]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Samples `lo..hi` along the batch axis.
    pub fn slice_batch(&self, lo: usize, hi: usize) -> Result<Tensor> {
        if lo >= hi || hi > self.shape.n {
            return Err(Error::dim(
                "slice_batch",
                format!("batch range {lo}..{hi} outside N={}", self.shape.n),
            ));
        }
        let per = self.shape.c * self.shape.plane();
        Tensor::from_vec(
            Shape::new(hi - lo, self.shape.c, self.shape.h, self.shape.w),
            self.data[lo * per..hi * per].to_vec(),
        )
    }

    /// Concatenate along the batch axis.
    pub fn stack_batch(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("stack_batch of zero tensors".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * parts.len());
        let mut n = 0;
        for p in parts {
            if (p.shape.c, p.shape.h, p.shape.w) != (s.c, s.h, s.w) {
                return Err(Error::dim(
                    "stack_batch",
                    format!("C/H/W mismatch: {} vs {}", p.shape, s),
                ));
            }
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(Shape::new(n, s.c, s.h, s.w), data)
    }

    pub(crate) fn expect_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("shapes differ: {} vs {}", self.shape, other.shape),
            ));
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{} [", self.shape)?;
        for (i, x) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x:.6}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}
