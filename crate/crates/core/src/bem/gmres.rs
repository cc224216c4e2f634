//! Full (non-restarted) GMRES with modified Gram-Schmidt for complex systems.

use num_complex::Complex64;

/// Outcome of a GMRES solve.
#[derive(Debug, Clone)]
pub struct GmresReport {
    /// Number of Arnoldi steps performed.
    pub iterations: usize,
    /// True relative residual ||b - A x|| / ||b|| of the returned iterate.
    pub final_relative_residual: f64,
    pub converged: bool,
    /// Estimated relative residual after each iteration.
    pub residual_history: Vec<f64>,
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn conj_dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Solve A x = b where `matvec` applies A. Stops once the relative residual
/// drops to `rtol` or `max_iter` Krylov vectors have been built; in the
/// latter case the best iterate is returned with `converged = false`.
pub fn gmres<F>(
    mut matvec: F,
    b: &[Complex64],
    rtol: f64,
    max_iter: usize,
) -> (Vec<Complex64>, GmresReport)
where
    F: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    assert!(rtol > 0.0, "rtol must be positive");
    assert!(max_iter >= 1, "max_iter must be >= 1");
    let n = b.len();
    let b_norm = vec_norm(b);
    if b_norm == 0.0 {
        let report = GmresReport {
            iterations: 0,
            final_relative_residual: 0.0,
            converged: true,
            residual_history: Vec::new(),
        };
        return (vec![Complex64::new(0.0, 0.0); n], report);
    }

    let m = max_iter.min(n);
    // Krylov basis, Hessenberg columns, Givens rotations, rotated rhs.
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m + 1);
    let mut h_cols: Vec<Vec<Complex64>> = Vec::with_capacity(m);
    let mut cs: Vec<Complex64> = Vec::with_capacity(m);
    let mut sn: Vec<Complex64> = Vec::with_capacity(m);
    let mut g: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); m + 1];
    g[0] = Complex64::new(b_norm, 0.0);
    basis.push(b.iter().map(|z| z / b_norm).collect());

    let mut history = Vec::new();
    let mut k = 0;
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut final_rel = 1.0;
    while k < m {
        let mut w = matvec(&basis[k]);
        let mut col = vec![Complex64::new(0.0, 0.0); k + 2];
        for (j, vj) in basis.iter().enumerate().take(k + 1) {
            let hjk = conj_dot(vj, &w);
            col[j] = hjk;
            for (wi, vi) in w.iter_mut().zip(vj) {
                *wi -= hjk * vi;
            }
        }
        let w_norm = vec_norm(&w);
        col[k + 1] = Complex64::new(w_norm, 0.0);

        // Apply accumulated Givens rotations to the new column.
        for j in 0..k {
            let tmp = cs[j].conj() * col[j] + sn[j].conj() * col[j + 1];
            col[j + 1] = -sn[j] * col[j] + cs[j] * col[j + 1];
            col[j] = tmp;
        }
        let (c, s) = givens(col[k], col[k + 1]);
        let tmp = c.conj() * col[k] + s.conj() * col[k + 1];
        col[k] = tmp;
        col[k + 1] = Complex64::new(0.0, 0.0);
        let g_next = -s * g[k];
        g[k] = c.conj() * g[k];
        g[k + 1] = g_next;
        cs.push(c);
        sn.push(s);
        h_cols.push(col);
        k += 1;

        let rel = g[k].norm() / b_norm;
        history.push(rel);

        let breakdown = w_norm <= f64::EPSILON * b_norm;
        if rel <= rtol || breakdown || k == m {
            // Estimated convergence (or no further progress possible):
            // confirm against the true residual before stopping.
            x = assemble_solution(&basis, &h_cols, &g, k, n);
            let ax = matvec(&x);
            let true_res = b
                .iter()
                .zip(&ax)
                .map(|(bi, ai)| (bi - ai).norm_sqr())
                .sum::<f64>()
                .sqrt();
            final_rel = true_res / b_norm;
            if final_rel <= rtol || breakdown || k == m {
                break;
            }
        }
        basis.push(w.iter().map(|z| z / w_norm).collect());
    }

    let report = GmresReport {
        iterations: k,
        final_relative_residual: final_rel,
        converged: final_rel <= rtol,
        residual_history: history,
    };
    (x, report)
}

fn assemble_solution(
    basis: &[Vec<Complex64>],
    h_cols: &[Vec<Complex64>],
    g: &[Complex64],
    k: usize,
    n: usize,
) -> Vec<Complex64> {
    // Back substitution on the rotated upper-triangular system.
    let mut y = vec![Complex64::new(0.0, 0.0); k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for j in (i + 1)..k {
            acc -= h_cols[j][i] * y[j];
        }
        if h_cols[i][i].norm() > 0.0 {
            y[i] = acc / h_cols[i][i];
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for (yi, vi) in y.iter().zip(basis) {
        for (xj, vj) in x.iter_mut().zip(vi) {
            *xj += yi * vj;
        }
    }
    x
}

fn givens(a: Complex64, b: Complex64) -> (Complex64, Complex64) {
    if b.norm() == 0.0 {
        return (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    }
    let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
    (a / r, b / r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_matvec(a: &[Complex64], n: usize) -> impl FnMut(&[Complex64]) -> Vec<Complex64> + '_ {
        move |x: &[Complex64]| {
            (0..n)
                .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
                .collect()
        }
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let b = vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 3.0)];
        let (x, report) = gmres(|v| v.to_vec(), &b, 1e-12, 10);
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_returns_zero_without_iterating() {
        let b = vec![Complex64::new(0.0, 0.0); 4];
        let (x, report) = gmres(|v| v.to_vec(), &b, 1e-10, 10);
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
        assert!(x.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn diagonal_complex_system() {
        // A = diag(1, 2+i), b = (1, 1) -> x = (1, 1/(2+i))
        let d = [Complex64::new(1.0, 0.0), Complex64::new(2.0, 1.0)];
        let b = vec![Complex64::new(1.0, 0.0); 2];
        let (x, report) = gmres(
            |v| vec![d[0] * v[0], d[1] * v[1]],
            &b,
            1e-12,
            10,
        );
        assert!(report.converged);
        assert!((x[0] - Complex64::new(1.0, 0.0)).norm() < 1e-10);
        assert!((x[1] - Complex64::new(1.0, 0.0) / d[1]).norm() < 1e-10);
    }

    #[test]
    fn matches_lu_on_random_complex_system() {
        use nalgebra::DMatrix;
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 20;
        // Diagonally dominant so the system is well conditioned.
        let mut a = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                a[i * n + j] = if i == j { z + Complex64::new(8.0, 0.0) } else { z };
            }
        }
        let b: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();

        let (x, report) = gmres(dense_matvec(&a, n), &b, 1e-10, 100);
        assert!(report.converged);

        let na = DMatrix::from_fn(n, n, |i, j| a[i * n + j]);
        let nb = nalgebra::DVector::from_column_slice(&b);
        let lu = na.lu().solve(&nb).expect("LU solve");
        for i in 0..n {
            assert!((x[i] - lu[i]).norm() < 1e-8, "mismatch at {i}");
        }
    }

    #[test]
    fn residual_history_is_non_increasing() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let mut a = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                a[i * n + j] = if i == j { z + Complex64::new(4.0, 0.0) } else { z };
            }
        }
        let b: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let (_, report) = gmres(dense_matvec(&a, n), &b, 1e-12, 50);
        for w in report.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn non_convergence_reports_false() {
        // Rotation-like system that full GMRES cannot solve in 1 iteration.
        let a = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ];
        let b = vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        let (_, report) = gmres(dense_matvec(&a, 2), &b, 1e-14, 1);
        assert!(!report.converged);
        assert_eq!(report.iterations, 1);
    }
}
