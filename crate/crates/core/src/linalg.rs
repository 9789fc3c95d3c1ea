//! Dense row-major matrices and a safe wrapper over `matrixmultiply`.

use alloc::vec;
use alloc::vec::Vec;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// Operand of a product: a row-major buffer, optionally read transposed.
#[derive(Clone, Copy)]
pub struct Operand<'a> {
    pub data: &'a [f64],
    /// Rows and columns of the buffer as stored.
    pub rows: usize,
    pub cols: usize,
    pub transpose: bool,
}

impl<'a> Operand<'a> {
    pub fn new(m: &'a Matrix) -> Self {
        Operand { data: &m.data, rows: m.rows, cols: m.cols, transpose: false }
    }

    pub fn t(m: &'a Matrix) -> Self {
        Operand { data: &m.data, rows: m.rows, cols: m.cols, transpose: true }
    }

    pub fn raw(data: &'a [f64], rows: usize, cols: usize, transpose: bool) -> Self {
        Operand { data, rows, cols, transpose }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transpose {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transpose {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = beta * out + op(a) * op(b)`, with `out` an `m x n` row-major buffer.
pub fn gemm(out: &mut [f64], a: Operand<'_>, b: Operand<'_>, beta: f64) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "inner dimensions");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(out.len(), m * n, "output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the assertions above guarantee that every index reached through
    // the given dimensions and strides lies inside the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: Operand<'_>, b: Operand<'_>) -> Matrix {
    let m = a.logical().0;
    let n = b.logical().1;
    let mut out = Matrix::zeros(m, n);
    gemm(&mut out.data, a, b, 0.0);
    out
}

/// `y = M x` for a row-major `M`.
pub fn matvec(m: &Matrix, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), m.cols);
    for (r, yr) in y.iter_mut().enumerate().take(m.rows) {
        *yr = dot(m.row(r), x);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Symmetric eigenvalues by cyclic Jacobi rotations. Intended for small
/// matrices in checks and diagnostics.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    #[cfg(not(feature = "std"))]
    use num_traits::Float;
    let n = m.rows;
    let mut a = m.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a.get(i, j) * a.get(i, j);
                }
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    (0..n).map(|i| a.get(i, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut s = 0.0;
                for p in 0..a.cols {
                    s += a.get(i, p) * b.get(p, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    fn transpose(a: &Matrix) -> Matrix {
        let mut t = Matrix::zeros(a.cols, a.rows);
        for i in 0..a.rows {
            for j in 0..a.cols {
                t.set(j, i, a.get(i, j));
            }
        }
        t
    }

    #[test]
    fn gemm_all_transpose_combinations() {
        let a = Matrix::from_vec(3, 4, (0..12).map(|x| x as f64 * 0.5 - 2.0).collect());
        let b = Matrix::from_vec(4, 2, (0..8).map(|x| (x as f64).sin()).collect());
        let want = naive(&a, &b);
        let at = transpose(&a);
        let bt = transpose(&b);
        for (oa, ob) in [
            (Operand::new(&a), Operand::new(&b)),
            (Operand::t(&at), Operand::new(&b)),
            (Operand::new(&a), Operand::t(&bt)),
            (Operand::t(&at), Operand::t(&bt)),
        ] {
            let got = matmul(oa, ob);
            for (x, y) in got.data.iter().zip(&want.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_eigenvalues() {
        let m = Matrix::from_vec(2, 2, vec![2.0, 1.0, 1.0, 2.0]);
        let mut e = symmetric_eigenvalues(&m);
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((e[0] - 1.0).abs() < 1e-10 && (e[1] - 3.0).abs() < 1e-10);
    }
}
