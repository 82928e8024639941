//! Matrix-multiply kernels.
//!
//! `seq::gemm` is a single call into a blocked GEMM. With the `parallel`
//! feature, `par::gemm` partitions the output along its larger extent and
//! runs the blocks on the rayon pool. Every output element is produced by
//! exactly one block with the same reduction order, so both paths agree
//! bit-for-bit.

use crate::tensor::Real;

/// Operand description: `op(A)` is `rows x cols`; `transposed` means the
/// buffer is stored as `cols x rows` row-major.
#[derive(Clone, Copy, Debug)]
pub struct Operand<'a, T> {
    pub data: &'a [T],
    pub transposed: bool,
}

impl<'a, T> Operand<'a, T> {
    pub fn new(data: &'a [T]) -> Self {
        Operand { data, transposed: false }
    }

    pub fn t(data: &'a [T]) -> Self {
        Operand { data, transposed: true }
    }
}

#[inline]
fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    let _ = rows;
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

fn check<T>(m: usize, k: usize, n: usize, a: &Operand<T>, b: &Operand<T>, c: &[T]) {
    assert_eq!(a.data.len(), m * k, "lhs holds {} values, expected {m}x{k}", a.data.len());
    assert_eq!(b.data.len(), k * n, "rhs holds {} values, expected {k}x{n}", b.data.len());
    assert_eq!(c.len(), m * n, "output holds {} values, expected {m}x{n}", c.len());
}

pub mod seq {
    use super::*;

    /// `C = op(A) op(B) + beta C` with `op(A): m x k`, `op(B): k x n`.
    pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: Operand<T>, b: Operand<T>, beta: T, c: &mut [T]) {
        check(m, k, n, &a, &b, c);
        if m == 0 || n == 0 {
            return;
        }
        let (rsa, csa) = strides(m, k, a.transposed);
        let (rsb, csb) = strides(k, n, b.transposed);
        // SAFETY: extents were checked against the slice lengths above.
        unsafe {
            T::gemm_raw(
                m,
                k,
                n,
                T::one(),
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

#[cfg(feature = "parallel")]
pub mod par {
    use rayon::prelude::*;

    use super::*;

    // Below this many multiply-adds the split overhead dominates.
    const MIN_WORK: usize = 1 << 18;

    #[derive(Clone, Copy)]
    struct SendPtr<T>(*mut T);
    unsafe impl<T> Send for SendPtr<T> {}
    unsafe impl<T> Sync for SendPtr<T> {}

    pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: Operand<T>, b: Operand<T>, beta: T, c: &mut [T]) {
        check(m, k, n, &a, &b, c);
        let threads = rayon::current_num_threads();
        if threads <= 1 || m * n * k.max(1) < MIN_WORK {
            return seq::gemm(m, k, n, a, b, beta, c);
        }
        let (rsa, csa) = strides(m, k, a.transposed);
        let (rsb, csb) = strides(k, n, b.transposed);
        let split_rows = m >= n;
        let extent = if split_rows { m } else { n };
        let chunk = extent.div_ceil(threads).max(1);
        let out = SendPtr(c.as_mut_ptr());
        let (pa, pb) = (a.data.as_ptr() as usize, b.data.as_ptr() as usize);
        (0..extent.div_ceil(chunk)).into_par_iter().for_each(|i| {
            let lo = i * chunk;
            let len = chunk.min(extent - lo);
            // Rebinding captures the Send wrapper rather than its raw field.
            #[allow(clippy::redundant_locals)]
            let out = out;
            let (pa, pb) = (pa as *const T, pb as *const T);
            // SAFETY: blocks write disjoint rows (or columns) of C; reads stay
            // within the operands whose extents were checked above.
            unsafe {
                if split_rows {
                    T::gemm_raw(
                        len,
                        k,
                        n,
                        T::one(),
                        pa.offset(lo as isize * rsa),
                        rsa,
                        csa,
                        pb,
                        rsb,
                        csb,
                        beta,
                        out.0.add(lo * n),
                        n as isize,
                        1,
                    );
                } else {
                    T::gemm_raw(
                        m,
                        k,
                        len,
                        T::one(),
                        pa,
                        rsa,
                        csa,
                        pb.offset(lo as isize * csb),
                        rsb,
                        csb,
                        beta,
                        out.0.add(lo),
                        n as isize,
                        1,
                    );
                }
            }
        });
    }
}

/// Default GEMM: parallel when the feature is on, sequential otherwise.
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: Operand<T>, b: Operand<T>, beta: T, c: &mut [T]) {
    #[cfg(feature = "parallel")]
    {
        par::gemm(m, k, n, a, b, beta, c)
    }
    #[cfg(not(feature = "parallel"))]
    {
        seq::gemm(m, k, n, a, b, beta, c)
    }
}
