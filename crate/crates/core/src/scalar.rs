//! Scalar abstraction: every numeric routine in this crate is generic over
//! [`Scalar`], instantiated as `f32` for training and `f64` for verification.

use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Element type of tensors. `f32` is the default compute type; `f64` is used
/// wherever gradients are checked against finite differences.
pub trait Scalar:
    Float + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Additive mask value applied to blocked attention logits. Finite by
    /// design so gradients stay defined everywhere.
    fn neg_mask() -> Self {
        Self::from_f64(-1e9)
    }

    /// tanh for activation hot paths. `f32` uses a clamped Padé approximant
    /// (|error| < 2e-7) that the compiler can vectorize; `f64`, the
    /// verification type, keeps the libm call.
    fn tanh_activation(self) -> Self {
        self.tanh()
    }

    /// `c += alpha * op(a) @ op(b) * 1 + beta * c` on row-major buffers,
    /// dispatching to the matrixmultiply kernel for this element type.
    ///
    /// # Safety
    /// Caller guarantees the pointers cover `m*k`, `k*n`, `m*n` elements
    /// under the given strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }

    fn tanh_activation(self) -> Self {
        // Padé(7,6) in x^2, exact to f32 precision once |x| >= 4.97.
        let x = self.clamp(-4.97, 4.97);
        let x2 = x * x;
        let p = x * (135135.0 + x2 * (17325.0 + x2 * (378.0 + x2)));
        let q = 135135.0 + x2 * (62370.0 + x2 * (3150.0 + x2 * 28.0));
        p / q
    }

    unsafe fn gemm(
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
