//! Minimal 2-D convolutional network toolkit with hand-written backpropagation.
//!
//! Tensors use a channel-major `[c][n][h][w]` layout so that a convolution over a whole
//! batch is a single matrix product. All parameters of a network live in one flat vector
//! described by a [`ParamLayout`], which keeps optimizers, checkpoints and gradient
//! checks independent of the architecture.

mod adam;
mod layers;
mod unet;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

pub use adam::{Adam, OptimizerConfig};
pub use layers::{avg_pool2, avg_pool2_backward, elu, elu_backward, upsample2, upsample2_backward, Conv2d};
pub use unet::{UNet, UNetCache};

/// Floating-point element type of a network.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    /// Byte width, used as the dtype tag in checkpoints.
    const BYTES: usize;

    /// `c = alpha * a·b + beta * c` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

fn check_gemm_bounds(m: usize, k: usize, n: usize, la: usize, lb: usize, lc: usize, span_a: usize, span_b: usize) {
    assert!(lc >= m * n, "gemm output too small");
    if m > 0 && k > 0 {
        assert!(la > span_a, "gemm lhs too small");
    }
    if k > 0 && n > 0 {
        assert!(lb > span_b, "gemm rhs too small");
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path, $bytes:expr) => {
        impl Real for $t {
            const BYTES: usize = $bytes;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
            ) {
                let span_a = (m.max(1) - 1) * rsa + (k.max(1) - 1) * csa;
                let span_b = (k.max(1) - 1) * rsb + (n.max(1) - 1) * csb;
                check_gemm_bounds(m, k, n, a.len(), b.len(), c.len(), span_a, span_b);
                // SAFETY: the bounds check above guarantees every strided access stays
                // inside the slices; `c` is row-major m×n and does not alias a or b.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    )
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("exact element width"))
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm, 4);
impl_real!(f64, matrixmultiply::dgemm, 8);

/// Activation tensor in `[c][n][h][w]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w, data: vec![T::zero(); c * n * h * w] }
    }

    pub fn from_vec(c: usize, n: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * n * h * w, "tensor data length");
        Self { c, n, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.c, self.n, self.h, self.w]
    }

    /// Number of elements per channel (`n·h·w`).
    pub fn channel_len(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let l = self.channel_len();
        &self.data[c * l..(c + 1) * l]
    }

    /// The `h×w` plane of channel `c`, sample `s`.
    pub fn plane(&self, c: usize, s: usize) -> &[T] {
        let p = self.h * self.w;
        let start = (c * self.n + s) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, c: usize, s: usize) -> &mut [T] {
        let p = self.h * self.w;
        let start = (c * self.n + s) * p;
        &mut self.data[start..start + p]
    }

    /// Stack along channels: `[a; b]`.
    pub fn concat(a: &Self, b: &Self) -> Self {
        assert_eq!([a.n, a.h, a.w], [b.n, b.h, b.w], "concat spatial shape");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Self { c: a.c + b.c, n: a.n, h: a.h, w: a.w, data }
    }

    /// Inverse of [`Tensor::concat`]: the first `c_first` channels and the rest.
    pub fn split(self, c_first: usize) -> (Self, Self) {
        let at = c_first * self.channel_len();
        let mut first = self.data;
        let second = first.split_off(at);
        (
            Self { c: c_first, n: self.n, h: self.h, w: self.w, data: first },
            Self { c: self.c - c_first, n: self.n, h: self.h, w: self.w, data: second },
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "tensor add shape");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { c: self.c, n: self.n, h: self.h, w: self.w, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One named parameter array inside a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Allocation table for a flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserve a named array and return its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.total;
        let entry = ParamEntry { name: name.into(), offset, shape: shape.to_vec() };
        self.total += entry.len();
        self.entries.push(entry);
        offset
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}
