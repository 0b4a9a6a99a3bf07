//! Thin safe wrapper over `matrixmultiply` for strided dense products.

/// Read-only strided view of a dense matrix.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn col_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, 1, rows)
    }

    pub fn strided(data: &'a [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!((rows - 1) * rs + (cols - 1) * cs < data.len(), "view exceeds buffer");
        }
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c ← α·a·b + β·c`, with `c` stored with strides `(c_rs, c_cs)`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64], c_rs: usize, c_cs: usize) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * c_rs + (n - 1) * c_cs < c.len(), "output exceeds buffer");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * c_rs + j * c_cs] *= beta;
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked against its buffer above, and `c`
    // is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            c_rs as isize,
            c_cs as isize,
        );
    }
}

/// Column-major product `a·b` as a fresh buffer.
pub(crate) fn matmul_col_major(a: MatRef<'_>, b: MatRef<'_>) -> Vec<f64> {
    let mut c = vec![0.0; a.rows * b.cols];
    gemm(1.0, a, b, 0.0, &mut c, 1, a.rows);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product() {
        let a: Vec<f64> = (0..12).map(|x| x as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|x| (x as f64).sin()).collect();
        // a: 3×4 row-major, b: 4×5 col-major
        let am = MatRef::row_major(&a, 3, 4);
        let bm = MatRef::col_major(&b, 4, 5);
        let c = matmul_col_major(am, bm);
        for i in 0..3 {
            for j in 0..5 {
                let want: f64 = (0..4).map(|k| a[i * 4 + k] * b[j * 4 + k]).sum();
                assert!((c[j * 3 + i] - want).abs() < 1e-12);
            }
        }
        let ct = matmul_col_major(bm.t(), am.t());
        for i in 0..3 {
            for j in 0..5 {
                assert!((ct[i * 5 + j] - c[j * 3 + i]).abs() < 1e-12);
            }
        }
    }
}
