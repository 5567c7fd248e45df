//! Scalar abstraction and the handful of dense kernels the model needs.
//!
//! Matrices are row-major `Vec<T>` slices. All products go through
//! `matrixmultiply`, which accepts arbitrary strides, so transposed operands
//! are expressed by swapping strides rather than by copying.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Floating-point precision of a model instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Scalar type usable for weights and activations.
pub trait Real:
    Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    const PRECISION: Precision;
    const BYTES: usize;

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
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

    fn from_f64(x: f64) -> Self;
    fn to_le_bytes_vec(x: Self, out: &mut Vec<u8>);
    fn from_le_slice(b: &[u8]) -> Self;
}

macro_rules! impl_real {
    ($t:ty, $gemm:path, $prec:expr) => {
        impl Real for $t {
            const PRECISION: Precision = $prec;
            const BYTES: usize = std::mem::size_of::<$t>();

            fn gemm_raw(
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
                // SAFETY: callers go through `gemm`/`Mat` helpers, which check that
                // every strided index stays inside the slices.
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
            fn from_f64(x: f64) -> Self {
                x as $t
            }

            fn to_le_bytes_vec(x: Self, out: &mut Vec<u8>) {
                out.extend_from_slice(&x.to_le_bytes());
            }

            fn from_le_slice(b: &[u8]) -> Self {
                let mut arr = [0u8; std::mem::size_of::<$t>()];
                arr.copy_from_slice(b);
                <$t>::from_le_bytes(arr)
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm, Precision::F32);
impl_real!(f64, matrixmultiply::dgemm, Precision::F64);

/// Shorthand for `T::from_f64`.
#[inline]
pub fn c<T: Real>(x: f64) -> T {
    T::from_f64(x)
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T: Real> MatRef<'a, T> {
    /// Dense row-major `rows × cols`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert!(
            data.len() >= rows * cols,
            "matrix view {rows}x{cols} over slice of {}",
            data.len()
        );
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    /// Row-major view with an explicit row stride (a column block of a wider matrix).
    pub fn strided(data: &'a [T], rows: usize, cols: usize, rs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!((rows - 1) * rs + cols <= data.len(), "strided view out of bounds");
        }
        Self { data, rows, cols, rs, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    #[inline]
    pub fn at(&self, r: usize, col: usize) -> T {
        self.data[r * self.rs + col * self.cs]
    }
}

/// Strided mutable matrix view.
pub struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
}

impl<'a, T: Real> MatMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        Self { data, rows, cols, rs: cols }
    }

    pub fn strided(data: &'a mut [T], rows: usize, cols: usize, rs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!((rows - 1) * rs + cols <= data.len(), "strided view out of bounds");
        }
        Self { data, rows, cols, rs }
    }
}

/// `out = a · b` (overwrite) or `out += a · b` (accumulate).
pub fn gemm<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, out: MatMut<'_, T>, accumulate: bool) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(out.rows, a.rows, "gemm output rows");
    assert_eq!(out.cols, b.cols, "gemm output cols");
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(
        a.rows,
        a.cols,
        b.cols,
        T::one(),
        a.data,
        a.rs as isize,
        a.cs as isize,
        b.data,
        b.rs as isize,
        b.cs as isize,
        beta,
        out.data,
        out.rs as isize,
        1,
    );
}

/// Allocating product of two dense row-major matrices.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    gemm(MatRef::new(a, m, k), MatRef::new(b, k, n), MatMut::new(&mut out, m, n), false);
    out
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// Derivative of `silu` at `x`.
#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// In-place softmax over one row; returns the log-sum-exp of the input row.
/// Entries equal to `-inf` contribute zero mass.
pub fn softmax_row<T: Real>(row: &mut [T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|x| *x = T::zero());
        return T::neg_infinity();
    }
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|x| *x *= inv);
    max + sum.ln()
}

pub fn cast_vec<A: Real, B: Real>(v: &[A]) -> Vec<B> {
    v.iter().map(|x| B::from_f64(x.to_f64().unwrap_or(f64::NAN))).collect()
}
