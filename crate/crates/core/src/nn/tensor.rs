use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Float element type: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + Default + Debug + Send + Sync + 'static + AddAssign + SubAssign + MulAssign + Sum
{
    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).unwrap()
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap()
    }

    /// `c += a * b` for strided `m x k` and `k x n` views.
    fn gemm(m: usize, k: usize, n: usize, a: View<'_, Self>, b: View<'_, Self>, c: ViewMut<'_, Self>);
}

/// Strided read-only matrix view: element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct View<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

pub struct ViewMut<'a, T> {
    pub data: &'a mut [T],
    pub rs: usize,
    pub cs: usize,
}

fn last_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    (rows - 1) * rs + (cols - 1) * cs
}

fn check_views<T>(m: usize, k: usize, n: usize, a: &View<'_, T>, b: &View<'_, T>, c: &ViewMut<'_, T>) -> bool {
    if m == 0 || k == 0 || n == 0 {
        return false;
    }
    assert!(last_index(m, k, a.rs, a.cs) < a.data.len(), "gemm: a view out of bounds");
    assert!(last_index(k, n, b.rs, b.cs) < b.data.len(), "gemm: b view out of bounds");
    assert!(last_index(m, n, c.rs, c.cs) < c.data.len(), "gemm: c view out of bounds");
    true
}

macro_rules! real_impl {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(m: usize, k: usize, n: usize, a: View<'_, $t>, b: View<'_, $t>, c: ViewMut<'_, $t>) {
                if !check_views(m, k, n, &a, &b, &c) {
                    return;
                }
                // SAFETY: every index reachable through the strides is in bounds (checked above),
                // and `c` is a unique borrow that cannot alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.data.as_ptr(),
                        a.rs as isize,
                        a.cs as isize,
                        b.data.as_ptr(),
                        b.rs as isize,
                        b.cs as isize,
                        1.0,
                        c.data.as_mut_ptr(),
                        c.rs as isize,
                        c.cs as isize,
                    )
                }
            }
        }
    };
}

real_impl!(f32, matrixmultiply::sgemm);
real_impl!(f64, matrixmultiply::dgemm);

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|v| T::of(*v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape {
                op,
                left: self.shape.clone(),
                right: vec![0, 0],
            }),
        }
    }

    pub fn at2(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }
}

/// `a (m x k) * b (k x n)`, accumulating into `out (m x n)`.
pub(crate) fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm(
        m,
        k,
        n,
        View { data: a, rs: k, cs: 1 },
        View { data: b, rs: n, cs: 1 },
        ViewMut { data: out, rs: n, cs: 1 },
    );
}

/// `a^T * b` where `a` is `m x k` and `b` is `m x n`; result `k x n`.
pub(crate) fn matmul_tn_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm(
        k,
        m,
        n,
        View { data: a, rs: 1, cs: k },
        View { data: b, rs: n, cs: 1 },
        ViewMut { data: out, rs: n, cs: 1 },
    );
}

/// `a * b^T` where `a` is `m x n` and `b` is `k x n`; result `m x k`.
pub(crate) fn matmul_nt_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    T::gemm(
        m,
        n,
        k,
        View { data: a, rs: n, cs: 1 },
        View { data: b, rs: 1, cs: n },
        ViewMut { data: out, rs: k, cs: 1 },
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
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

    fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    fn close(x: &[f64], y: &[f64]) -> bool {
        x.iter().zip(y).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs()))
    }

    proptest! {
        #[test]
        fn products_match_triple_loop(
            (m, k, n, a, b) in (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(m, k, n)| (
                Just(m), Just(k), Just(n),
                proptest::collection::vec(-2.0f64..2.0, m * k),
                proptest::collection::vec(-2.0f64..2.0, k * n),
            ))
        ) {
            let want = naive(&a, &b, m, k, n);
            let mut c = vec![0.0; m * n];
            matmul_into(&a, &b, &mut c, m, k, n);
            prop_assert!(close(&c, &want));

            // a^T stored as k x m, so tn(at, b) = a * b.
            let at = transpose(&a, m, k);
            let mut c = vec![0.0; m * n];
            matmul_tn_into(&at, &b, &mut c, k, m, n);
            prop_assert!(close(&c, &want));

            // b^T stored as n x k, so nt(a, bt) = a * b.
            let bt = transpose(&b, k, n);
            let mut c = vec![0.0; m * n];
            matmul_nt_into(&a, &bt, &mut c, m, k, n);
            prop_assert!(close(&c, &want));
        }
    }

    #[test]
    fn products_accumulate_into_output() {
        let mut c = vec![1.0f32; 4];
        matmul_into(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 0.0, 1.0], &mut c, 2, 2, 2);
        assert_eq!(c, vec![2.0, 3.0, 4.0, 5.0]);
    }
}
