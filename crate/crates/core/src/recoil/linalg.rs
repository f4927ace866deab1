//! Dense complex kernels for the grid solver: cache-blocked products and a
//! right-looking blocked LU with partial pivoting.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const BLOCK: usize = 48;

/// `c ← alpha · a[r0.., k0..] · b[k0.., c0..] + beta · c` on column-major
/// sub-blocks, given as (pointer, rows, cols, column stride).
#[allow(clippy::too_many_arguments)]
unsafe fn zgemm_raw(
    m: usize,
    k: usize,
    n: usize,
    alpha: Complex64,
    a: *const Complex64,
    lda: usize,
    b: *const Complex64,
    ldb: usize,
    beta: Complex64,
    c: *mut Complex64,
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Complex64 is #[repr(C)] { re, im }, layout-compatible with [f64; 2]
    matrixmultiply::zgemm(
        matrixmultiply::CGemmOption::Standard,
        matrixmultiply::CGemmOption::Standard,
        m,
        k,
        n,
        [alpha.re, alpha.im],
        a as *const [f64; 2],
        1,
        lda as isize,
        b as *const [f64; 2],
        1,
        ldb as isize,
        [beta.re, beta.im],
        c as *mut [f64; 2],
        1,
        ldc as isize,
    );
}

/// `a · b`.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions differ");
    let mut c = CMatrix::zeros(a.nrows(), b.ncols());
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    unsafe {
        zgemm_raw(m, k, n, ONE, a.as_ptr(), m, b.as_ptr(), k, ZERO, c.as_mut_ptr(), m);
    }
    c
}

/// `c ← c − a · b`.
pub fn sub_matmul(c: &mut CMatrix, a: &CMatrix, b: &CMatrix) {
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!((c.nrows(), c.ncols()), (a.nrows(), b.ncols()));
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    unsafe {
        zgemm_raw(m, k, n, -ONE, a.as_ptr(), m, b.as_ptr(), k, ONE, c.as_mut_ptr(), m);
    }
}

/// Packed LU factors `P A = L U`, unit lower `L`.
pub struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(mut a: CMatrix) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let scale = a.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let mut perm: Vec<usize> = (0..n).collect();
        let mut k0 = 0;
        while k0 < n {
            let b = BLOCK.min(n - k0);
            // unblocked factorization of the panel a[k0.., k0..k0+b]
            for k in k0..k0 + b {
                let mut p = k;
                let mut best = a[(k, k)].norm();
                for i in k + 1..n {
                    let v = a[(i, k)].norm();
                    if v > best {
                        best = v;
                        p = i;
                    }
                }
                if !(best > 0.0) || !best.is_finite() {
                    return Err(Error::Singular {
                        pivot: best,
                        condition: f64::INFINITY,
                    });
                }
                if p != k {
                    a.swap_rows(k, p);
                    perm.swap(k, p);
                }
                let inv = ONE / a[(k, k)];
                for i in k + 1..n {
                    a[(i, k)] *= inv;
                }
                for j in k + 1..k0 + b {
                    let akj = a[(k, j)];
                    if akj != ZERO {
                        for i in k + 1..n {
                            let lik = a[(i, k)];
                            a[(i, j)] -= lik * akj;
                        }
                    }
                }
            }
            let rest = n - k0 - b;
            if rest > 0 {
                // U12 ← L11⁻¹ A12
                for j in k0 + b..n {
                    for k in k0..k0 + b {
                        let akj = a[(k, j)];
                        if akj != ZERO {
                            for i in k + 1..k0 + b {
                                let lik = a[(i, k)];
                                a[(i, j)] -= lik * akj;
                            }
                        }
                    }
                }
                // A22 ← A22 − L21 U12
                unsafe {
                    let base = a.as_mut_ptr();
                    let l21 = base.add(k0 + b + k0 * n);
                    let u12 = base.add(k0 + (k0 + b) * n);
                    let a22 = base.add(k0 + b + (k0 + b) * n);
                    zgemm_raw(rest, b, rest, -ONE, l21, n, u12, n, ONE, a22, n);
                }
            }
            k0 += b;
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let d = a[(i, i)].norm();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if !(lo > 1e-15 * scale.max(hi)) {
            return Err(Error::Singular {
                pivot: lo,
                condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
            });
        }
        Ok(Lu { lu: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    /// Ratio of the extreme pivot magnitudes, a cheap conditioning indicator.
    pub fn pivot_ratio(&self) -> f64 {
        let d = self.lu.diagonal();
        let hi = d.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let lo = d.iter().fold(f64::INFINITY, |m, z| m.min(z.norm()));
        hi / lo
    }

    pub fn solve_vector(&self, b: &CVector) -> CVector {
        let n = self.dim();
        let mut x = CVector::from_iterator(n, self.perm.iter().map(|&p| b[p]));
        for k in 0..n {
            let xk = x[k];
            if xk != ZERO {
                for i in k + 1..n {
                    x[i] -= self.lu[(i, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            x[k] /= self.lu[(k, k)];
            let xk = x[k];
            if xk != ZERO {
                for i in 0..k {
                    x[i] -= self.lu[(i, k)] * xk;
                }
            }
        }
        x
    }

    /// `A⁻¹ B` for a matrix right-hand side.
    pub fn solve_matrix(&self, b: &CMatrix) -> CMatrix {
        let n = self.dim();
        assert_eq!(b.nrows(), n);
        let m = b.ncols();
        let mut x = CMatrix::from_fn(n, m, |i, j| b[(self.perm[i], j)]);
        let lu = &self.lu;
        // forward: unit lower, blocked
        let mut k0 = 0;
        while k0 < n {
            let bs = BLOCK.min(n - k0);
            for j in 0..m {
                for k in k0..k0 + bs {
                    let xk = x[(k, j)];
                    if xk != ZERO {
                        for i in k + 1..k0 + bs {
                            x[(i, j)] -= lu[(i, k)] * xk;
                        }
                    }
                }
            }
            let rest = n - k0 - bs;
            if rest > 0 {
                unsafe {
                    let l = lu.as_ptr().add(k0 + bs + k0 * n);
                    let xb = x.as_mut_ptr();
                    zgemm_raw(rest, bs, m, -ONE, l, n, xb.add(k0), n, ONE, xb.add(k0 + bs), n);
                }
            }
            k0 += bs;
        }
        // backward: upper, blocked from the bottom
        let mut k1 = n;
        while k1 > 0 {
            let bs = BLOCK.min(k1);
            let k0 = k1 - bs;
            for j in 0..m {
                for k in (k0..k1).rev() {
                    x[(k, j)] /= lu[(k, k)];
                    let xk = x[(k, j)];
                    if xk != ZERO {
                        for i in k0..k {
                            x[(i, j)] -= lu[(i, k)] * xk;
                        }
                    }
                }
            }
            if k0 > 0 {
                unsafe {
                    let u = lu.as_ptr().add(k0 * n);
                    let xb = x.as_mut_ptr();
                    zgemm_raw(k0, bs, m, -ONE, u, n, xb.add(k0), n, ONE, xb, n);
                }
            }
            k1 = k0;
        }
        x
    }
}
