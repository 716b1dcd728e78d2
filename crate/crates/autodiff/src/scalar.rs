//! Floating point element types and the matrix-product kernel behind them.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element width of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DType::F32 => f.write_str("f32"),
            DType::F64 => f.write_str("f64"),
        }
    }
}

/// Products below this many multiply-adds skip the packed kernel.
const SMALL_GEMM: usize = 4096;

/// A float type the tensor core can compute with.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a @ b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given extents and strides must be in
    /// bounds of the respective pointer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided view of one matrix operand inside a flat buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatRef {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl MatRef {
    pub fn row_major(offset: usize, cols: usize) -> Self {
        MatRef { offset, rs: cols, cs: 1 }
    }

    /// The same storage read as its transpose.
    pub fn t(self) -> Self {
        MatRef { offset: self.offset, rs: self.cs, cs: self.rs }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return self.offset;
        }
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// Bounds-checked `c = a @ b + beta * c` with `a: m×k`, `b: k×n`, `c: m×n`.
///
/// Single threaded; identical operands produce identical bits.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ar: MatRef,
    b: &[T],
    br: MatRef,
    beta: T,
    c: &mut [T],
    cr: MatRef,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > cr.last_index(m, n), "gemm: output out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = cr.offset + i * cr.rs + j * cr.cs;
                c[idx] = beta * c[idx];
            }
        }
        return;
    }
    assert!(a.len() > ar.last_index(m, k), "gemm: lhs out of bounds");
    assert!(b.len() > br.last_index(k, n), "gemm: rhs out of bounds");

    if m * k * n <= SMALL_GEMM {
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    acc = acc
                        + a[ar.offset + i * ar.rs + p * ar.cs] * b[br.offset + p * br.rs + j * br.cs];
                }
                let idx = cr.offset + i * cr.rs + j * cr.cs;
                c[idx] = if beta == T::zero() { acc } else { acc + beta * c[idx] };
            }
        }
        return;
    }

    // SAFETY: the asserts above bound the largest reachable index of every
    // operand, and all strides are non-negative.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr().add(ar.offset),
            ar.rs as isize,
            ar.cs as isize,
            b.as_ptr().add(br.offset),
            br.rs as isize,
            br.cs as isize,
            beta,
            c.as_mut_ptr().add(cr.offset),
            cr.rs as isize,
            cr.cs as isize,
        );
    }
}
