//! Small dense linear-algebra toolkit used throughout the crate.
//!
//! Matrices are row-major `f64`. Matrix products go through
//! `matrixmultiply::dgemm`; everything else (Jacobi SVD, non-negative
//! least squares, power iteration) is implemented here because the sizes
//! involved are desk-scale and determinism matters more than peak speed.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Reshape in place, reusing the allocation. Contents are unspecified
    /// afterwards unless the shape is unchanged.
    pub fn resize_to(&mut self, rows: usize, cols: usize) {
        if self.rows == rows && self.cols == cols {
            return;
        }
        self.rows = rows;
        self.cols = cols;
        self.data.clear();
        self.data.resize(rows * cols, 0.0);
    }

    pub fn reserve_capacity(&mut self, len: usize) {
        if self.data.capacity() < len {
            self.data.reserve(len - self.data.len());
        }
    }
}

/// C = A * B.
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.rows, b.cols);
    matmul_into(a, b, &mut c);
    c
}

/// C = A * B without reallocating C.
pub fn matmul_into(a: &Mat, b: &Mat, c: &mut Mat) {
    assert_eq!(a.cols, b.rows, "matmul dimension mismatch");
    assert_eq!((c.rows, c.cols), (a.rows, b.cols), "matmul output shape mismatch");
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.cols as isize,
            1,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            0.0,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// C = A * B^T, with B stored row-major (n x k).
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.rows, b.rows);
    matmul_nt_into(a, b, &mut c);
    c
}

/// C = A * B^T without reallocating C.
pub fn matmul_nt_into(a: &Mat, b: &Mat, c: &mut Mat) {
    assert_eq!(a.cols, b.cols, "matmul_nt dimension mismatch");
    assert_eq!((c.rows, c.cols), (a.rows, b.rows), "matmul_nt output shape mismatch");
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.rows,
            1.0,
            a.data.as_ptr(),
            a.cols as isize,
            1,
            b.data.as_ptr(),
            1,
            b.cols as isize,
            0.0,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// C = A^T * B, with A stored row-major (k x m).
pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.cols, b.cols);
    matmul_tn_into(a, b, &mut c);
    c
}

/// C = A^T * B without reallocating C.
pub fn matmul_tn_into(a: &Mat, b: &Mat, c: &mut Mat) {
    assert_eq!(a.rows, b.rows, "matmul_tn dimension mismatch");
    assert_eq!((c.rows, c.cols), (a.cols, b.cols), "matmul_tn output shape mismatch");
    unsafe {
        matrixmultiply::dgemm(
            a.cols,
            a.rows,
            b.cols,
            1.0,
            a.data.as_ptr(),
            1,
            a.cols as isize,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            0.0,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Singular values of `a`, descending, computed by one-sided Jacobi.
///
/// Jacobi is chosen over a Gram-matrix eigendecomposition because small
/// singular values keep full relative accuracy, which the rank tests at
/// tolerance 1e-8 depend on.
pub fn singular_values(a: &Mat) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(Error::data("singular_values: matrix has non-finite entries"));
    }
    if a.rows == 0 || a.cols == 0 {
        return Ok(Vec::new());
    }
    // Work on columns of the tall orientation (m >= n).
    let (m, n, colmajor) = if a.rows >= a.cols {
        let mut cm = vec![0.0; a.rows * a.cols];
        for i in 0..a.rows {
            for j in 0..a.cols {
                cm[j * a.rows + i] = a.get(i, j);
            }
        }
        (a.rows, a.cols, cm)
    } else {
        // Columns of A^T are rows of A, already contiguous.
        (a.cols, a.rows, a.data.clone())
    };
    let mut w = colmajor;

    let eps = 1e-15;
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (cp, cq) = {
                    let (lo, hi) = w.split_at_mut(q * m);
                    (&mut lo[p * m..p * m + m], &mut hi[..m])
                };
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if gamma.abs() <= eps * (alpha * beta).sqrt() || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let vp = cp[i];
                    let vq = cq[i];
                    cp[i] = c * vp - s * vq;
                    cq[i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigmas: Vec<f64> = (0..n).map(|j| norm2(&w[j * m..j * m + m])).collect();
    sigmas.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(sigmas)
}

/// Largest singular value of `a`, by power iteration on A^T A.
pub fn spectral_norm(a: &Mat, iters: usize) -> f64 {
    let n = a.cols;
    if n == 0 || a.rows == 0 {
        return 0.0;
    }
    // Deterministic start vector.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.7).sin() * 0.1).collect();
    let mut av = vec![0.0; a.rows];
    let mut s = 0.0;
    for _ in 0..iters {
        for i in 0..a.rows {
            av[i] = dot(a.row(i), &v);
        }
        for j in 0..n {
            v[j] = 0.0;
        }
        for i in 0..a.rows {
            let avi = av[i];
            let row = a.row(i);
            for j in 0..n {
                v[j] += row[j] * avi;
            }
        }
        let nv = norm2(&v);
        if nv == 0.0 {
            return 0.0;
        }
        for x in v.iter_mut() {
            *x /= nv;
        }
        s = nv.sqrt();
    }
    s
}

/// Non-negative least squares `min_{c >= 0} ||G c - x||_2` by projected
/// gradient descent with a fixed 1/L step. Returns the coefficients and
/// the final residual norm.
pub fn nnls(g: &Mat, x: &[f64], max_iters: usize) -> Result<(Vec<f64>, f64)> {
    if g.rows != x.len() {
        return Err(Error::argument(format!(
            "nnls: generator length {} does not match target length {}",
            g.rows,
            x.len()
        )));
    }
    let n = g.cols;
    let lip = {
        let s = spectral_norm(g, 60);
        (s * s).max(1e-300)
    };
    let step = 1.0 / lip;

    let mut c = vec![0.0; n];
    let mut gc = vec![0.0; g.rows];
    let mut grad = vec![0.0; n];
    for _ in 0..max_iters {
        for i in 0..g.rows {
            gc[i] = dot(g.row(i), &c) - x[i];
        }
        for j in 0..n {
            grad[j] = 0.0;
        }
        for i in 0..g.rows {
            let r = gc[i];
            let row = g.row(i);
            for j in 0..n {
                grad[j] += row[j] * r;
            }
        }
        let mut moved = 0.0f64;
        for j in 0..n {
            let next = (c[j] - step * grad[j]).max(0.0);
            moved = moved.max((next - c[j]).abs());
            c[j] = next;
        }
        if moved <= 1e-16 * (1.0 + norm2(&c)) {
            break;
        }
    }
    for i in 0..g.rows {
        gc[i] = dot(g.row(i), &c) - x[i];
    }
    Ok((c, norm2(&gc)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.as_slice(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_transposed_variants_agree() {
        let a = Mat::from_fn(5, 4, |i, j| (i * 7 + j) as f64 * 0.3 - 1.0);
        let b = Mat::from_fn(4, 6, |i, j| (i as f64 - j as f64) * 0.5);
        let c = matmul(&a, &b);
        let c_nt = matmul_nt(&a, &b.transpose());
        let c_tn = matmul_tn(&a.transpose(), &b);
        for i in 0..5 {
            for j in 0..6 {
                assert!((c.get(i, j) - c_nt.get(i, j)).abs() < 1e-12);
                assert!((c.get(i, j) - c_tn.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_values_identity() {
        let s = singular_values(&Mat::identity(4)).unwrap();
        for v in s {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_values_diag_rect() {
        // diag(3, 2) embedded in a 4x2, plus its transpose.
        let mut a = Mat::zeros(4, 2);
        a.set(0, 0, 3.0);
        a.set(1, 1, 2.0);
        let s = singular_values(&a).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-13 && (s[1] - 2.0).abs() < 1e-13);
        let s = singular_values(&a.transpose()).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-13 && (s[1] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn singular_values_match_gram_trace() {
        // sum of squared singular values equals the squared Frobenius norm
        let a = Mat::from_fn(6, 5, |i, j| ((i * 5 + j) as f64 * 12.9898).sin());
        let s = singular_values(&a).unwrap();
        let frob2: f64 = a.as_slice().iter().map(|v| v * v).sum();
        let sum2: f64 = s.iter().map(|v| v * v).sum();
        assert!((frob2 - sum2).abs() < 1e-10 * frob2);
    }

    #[test]
    fn singular_values_reject_nan() {
        let a = Mat::from_vec(1, 2, vec![1.0, f64::NAN]);
        assert!(singular_values(&a).is_err());
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let a = Mat::from_fn(7, 3, |i, j| ((i + 2 * j) as f64 * 0.37).cos());
        let s = singular_values(&a).unwrap();
        let p = spectral_norm(&a, 100);
        assert!((p - s[0]).abs() < 1e-8 * s[0]);
    }

    #[test]
    fn nnls_recovers_nonnegative_solution() {
        let g = Mat::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let truth = [2.0, 3.0];
        let x: Vec<f64> = (0..3).map(|i| dot(g.row(i), &truth)).collect();
        let (c, res) = nnls(&g, &x, 5000).unwrap();
        assert!(res < 1e-8);
        assert!((c[0] - 2.0).abs() < 1e-6 && (c[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn nnls_clamps_to_zero() {
        // best unconstrained fit of x = -g is c = -1; constrained answer is 0
        let g = Mat::from_vec(2, 1, vec![1.0, 1.0]);
        let x = [-1.0, -1.0];
        let (c, res) = nnls(&g, &x, 1000).unwrap();
        assert_eq!(c[0], 0.0);
        assert!((res - (2.0f64).sqrt()).abs() < 1e-12);
    }
}
