//! Dense row-major f64 matrices with gemm-backed products.

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Mat { rows, cols, data }
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// self (m,k) * b (k,n) -> (m,n)
    pub fn matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, b.cols);
        gemm(
            self.rows, self.cols, b.cols,
            &self.data, self.cols as isize, 1,
            &b.data, b.cols as isize, 1,
            &mut out.data,
        );
        out
    }

    /// self (m,k) * b^T where b is (n,k) -> (m,n)
    pub fn matmul_nt(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.cols, "matmul_nt shape mismatch");
        let mut out = Mat::zeros(self.rows, b.rows);
        gemm(
            self.rows, self.cols, b.rows,
            &self.data, self.cols as isize, 1,
            &b.data, 1, b.cols as isize,
            &mut out.data,
        );
        out
    }

    /// self^T * b where self is (k,m), b is (k,n) -> (m,n)
    pub fn matmul_tn(&self, b: &Mat) -> Mat {
        assert_eq!(self.rows, b.rows, "matmul_tn shape mismatch");
        let mut out = Mat::zeros(self.cols, b.cols);
        gemm(
            self.cols, self.rows, b.cols,
            &self.data, 1, self.cols as isize,
            &b.data, b.cols as isize, 1,
            &mut out.data,
        );
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize, k: usize, n: usize,
    a: &[f64], rsa: isize, csa: isize,
    b: &[f64], rsb: isize, csb: isize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n,
            1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree_with_naive() {
        let a = Mat::from_flat(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_flat(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);

        // a * b == a * (b^T)^T via matmul_nt on the transpose of b.
        let bt = Mat::from_flat(2, 3, vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);
        let c2 = a.matmul_nt(&bt);
        assert_eq!(c.data, c2.data);

        // a * b == (a^T)^T * b via matmul_tn on the transpose of a.
        let at = Mat::from_flat(3, 2, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let c3 = at.matmul_tn(&b);
        assert_eq!(c.data, c3.data);
    }

    #[test]
    #[ignore = "manual throughput probe"]
    fn bench_gemm() {
        let n = 512;
        let a = Mat::from_flat(n, n, (0..n * n).map(|i| (i % 97) as f64 * 0.01).collect());
        let b = a.clone();
        let start = std::time::Instant::now();
        let reps = 10;
        for _ in 0..reps {
            let _ = a.matmul(&b);
        }
        let dt = start.elapsed().as_secs_f64();
        let flops = 2.0 * (n as f64).powi(3) * reps as f64;
        println!("dgemm {}x{}: {:.2} GFlop/s", n, n, flops / dt / 1e9);
    }
}
