//! Row-major GEMM on slices: thin safe wrapper over the matrixmultiply
//! kernels, with a naive inner loop for the tiny per-window matrices where
//! kernel setup costs more than the arithmetic.

use crate::parallel;
use crate::scalar::Scalar;

/// Below this `m*k*n` product the packed kernel is slower than three loops.
const NAIVE_CUTOFF: usize = 4096;
/// Minimum rows of C per worker before the row split engages.
const PAR_MIN_ROWS: usize = 64;

/// `c = op(a) @ op(b) + beta * c` where `op` is transpose when the flag is
/// set. Logical shapes after `op`: a is m×k, b is k×n, c is m×n, all row-major
/// in storage (a transposed operand is stored as its k×m / n×k layout).
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs buffer size");
    assert_eq!(b.len(), k * n, "gemm: rhs buffer size");
    assert_eq!(c.len(), m * n, "gemm: out buffer size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == T::zero() {
            c.fill(T::zero());
        } else if beta != T::one() {
            for v in c.iter_mut() {
                *v = *v * beta;
            }
        }
        return;
    }

    if m * k * n <= NAIVE_CUTOFF {
        gemm_naive(m, k, n, a, a_t, b, b_t, beta, c);
        return;
    }

    // Strides for the logical (possibly transposed) views.
    let (rsa, csa) = if a_t { (1isize, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1isize, k as isize) } else { (n as isize, 1) };

    let row_chunks = parallel::chunk_ranges(m, PAR_MIN_ROWS);
    if row_chunks.len() <= 1 {
        unsafe {
            T::gemm(
                m, k, n, T::one(),
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
        return;
    }

    // Disjoint row blocks of C; each worker sees the full k reduction, so the
    // result is bit-identical to the single-threaded call.
    std::thread::scope(|scope| {
        let mut c_rest = c;
        let mut row = 0usize;
        for r in row_chunks {
            let rows = r.len();
            let (c_head, c_tail) = c_rest.split_at_mut(rows * n);
            c_rest = c_tail;
            let a_off = if a_t { row } else { row * k };
            let a_ptr = SendPtr(unsafe { a.as_ptr().add(a_off) });
            let b_ptr = SendPtr(b.as_ptr());
            row += rows;
            scope.spawn(move || unsafe {
                T::gemm(
                    rows, k, n, T::one(),
                    a_ptr.get(), rsa, csa,
                    b_ptr.get(), rsb, csb,
                    beta,
                    c_head.as_mut_ptr(), n as isize, 1,
                );
            });
        }
    });
}

/// `op(a) @ op(b)` into a freshly allocated buffer, skipping the redundant
/// zero fill: the beta = 0 kernel writes every output element.
pub fn gemm_alloc<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
) -> Vec<T> {
    if m * k * n <= NAIVE_CUTOFF || m == 0 || n == 0 || k == 0 {
        let mut c = vec![T::zero(); m * n];
        gemm(m, k, n, a, a_t, b, b_t, T::zero(), &mut c);
        return c;
    }
    assert_eq!(a.len(), m * k, "gemm_alloc: lhs buffer size");
    assert_eq!(b.len(), k * n, "gemm_alloc: rhs buffer size");
    let mut out: Vec<std::mem::MaybeUninit<T>> = Vec::with_capacity(m * n);
    // SAFETY: MaybeUninit needs no initialization.
    unsafe { out.set_len(m * n) };

    let (rsa, csa) = if a_t { (1isize, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1isize, k as isize) } else { (n as isize, 1) };
    let row_chunks = parallel::chunk_ranges(m, PAR_MIN_ROWS);
    // SAFETY below: each kernel call writes rows*n contiguous elements of C
    // exactly once (beta = 0); row blocks are disjoint.
    if row_chunks.len() <= 1 {
        unsafe {
            T::gemm(
                m, k, n, T::one(),
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                T::zero(),
                out.as_mut_ptr() as *mut T, n as isize, 1,
            );
        }
    } else {
        std::thread::scope(|scope| {
            for r in row_chunks {
                let rows = r.len();
                let a_off = if a_t { r.start } else { r.start * k };
                let a_ptr = SendPtr(unsafe { a.as_ptr().add(a_off) });
                let b_ptr = SendPtr(b.as_ptr());
                let c_ptr = SendMutPtr(unsafe { (out.as_mut_ptr() as *mut T).add(r.start * n) });
                scope.spawn(move || unsafe {
                    T::gemm(
                        rows, k, n, T::one(),
                        a_ptr.get(), rsa, csa,
                        b_ptr.get(), rsb, csb,
                        T::zero(),
                        c_ptr.get(), n as isize, 1,
                    );
                });
            }
        });
    }
    // SAFETY: every element was written by exactly one kernel call.
    unsafe { std::mem::transmute::<Vec<std::mem::MaybeUninit<T>>, Vec<T>>(out) }
}

struct SendMutPtr<T>(*mut T);
unsafe impl<T> Send for SendMutPtr<T> {}

impl<T> SendMutPtr<T> {
    fn get(&self) -> *mut T {
        self.0
    }
}

struct SendPtr<T>(*const T);
unsafe impl<T> Send for SendPtr<T> {}

impl<T> SendPtr<T> {
    fn get(&self) -> *const T {
        self.0
    }
}

fn gemm_naive<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    let a_at = |i: usize, p: usize| if a_t { a[p * m + i] } else { a[i * k + p] };
    let b_at = |p: usize, j: usize| if b_t { b[j * k + p] } else { b[p * n + j] };
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc = acc + a_at(i, p) * b_at(p, j);
            }
            let slot = &mut c[i * n + j];
            *slot = if beta == T::zero() { acc } else { *slot * beta + acc };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_triple_loop_all_transposes() {
        let (m, k, n) = (33, 17, 29);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7 % 13) as f64) * 0.31 - 1.5).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 5 % 11) as f64) * 0.17 - 0.8).collect();
        let want = oracle(m, k, n, &a, &b);

        // a stored transposed: k×m layout.
        let mut a_tr = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                a_tr[p * m + i] = a[i * k + p];
            }
        }
        // b stored transposed: n×k layout.
        let mut b_tr = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                b_tr[j * k + p] = b[p * n + j];
            }
        }

        for (a_buf, a_t) in [(&a, false), (&a_tr, true)] {
            for (b_buf, b_t) in [(&b, false), (&b_tr, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, a_buf, a_t, b_buf, b_t, 0.0, &mut c);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-9, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn beta_accumulates() {
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [1.0f32, 0.0, 0.0, 1.0];
        let mut c = [10.0f32, 20.0, 30.0, 40.0];
        gemm(2, 2, 2, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c, [11.0, 22.0, 33.0, 44.0]);
    }

    #[test]
    fn large_path_matches_naive() {
        let (m, k, n) = (130, 40, 70); // above cutoff, hits the kernel path
        let a: Vec<f32> = (0..m * k).map(|i| ((i % 23) as f32) * 0.05 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i % 19) as f32) * 0.07 - 0.6).collect();
        let mut fast = vec![0.0f32; m * n];
        gemm(m, k, n, &a, false, &b, false, 0.0, &mut fast);
        let mut slow = vec![0.0f32; m * n];
        gemm_naive(m, k, n, &a, false, &b, false, 0.0, &mut slow);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }
}
