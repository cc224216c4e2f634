//! Dense single-layer boundary element solver: collocation at triangle
//! centroids with piecewise-constant elements, GMRES for the linear system,
//! and single-layer potential evaluation for field reconstruction.

mod gmres;
pub mod quadrature;

pub use gmres::{gmres, GmresReport};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Ellipsoid, TriangleMesh};
use crate::vec3::{self, Vec3};
use quadrature::{bary_point, inv_r_panel_integral, rule_7pt};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum BemError {
    #[error("Helmholtz kernel requires wavenumber > 0, got {0}")]
    InvalidWavenumber(f64),
    #[error("Green's function evaluated at zero distance")]
    Singularity,
    #[error("non-finite matrix entry for triangle pair ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("rhs length {got} does not match triangle count {expected}")]
    RhsLengthMismatch { got: usize, expected: usize },
    #[error("GMRES did not converge: {iterations} iterations, relative residual {residual:.3e}")]
    NotConverged { iterations: usize, residual: f64 },
}

/// Fundamental-solution kernel of the exterior problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Kernel {
    Laplace,
    Helmholtz { wavenumber: f64 },
}

impl Kernel {
    /// Helmholtz for k > 0; k = 0 degenerates to the Laplace kernel.
    pub fn helmholtz_or_laplace(wavenumber: f64) -> Result<Self, BemError> {
        if wavenumber < 0.0 || !wavenumber.is_finite() {
            Err(BemError::InvalidWavenumber(wavenumber))
        } else if wavenumber == 0.0 {
            Ok(Kernel::Laplace)
        } else {
            Ok(Kernel::Helmholtz { wavenumber })
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Kernel::Helmholtz { .. })
    }

    pub fn wavenumber(&self) -> f64 {
        match self {
            Kernel::Laplace => 0.0,
            Kernel::Helmholtz { wavenumber } => *wavenumber,
        }
    }
}

/// G at distance r > 0: -1/(4 pi r) for Laplace, -e^{ikr}/(4 pi r) for
/// Helmholtz (outgoing waves under the e^{-i omega t} convention).
#[inline]
fn green_at_distance(kernel: Kernel, r: f64) -> Complex64 {
    match kernel {
        Kernel::Laplace => Complex64::new(-1.0 / (FOUR_PI * r), 0.0),
        Kernel::Helmholtz { wavenumber } => {
            let kr = wavenumber * r;
            let scale = -1.0 / (FOUR_PI * r);
            Complex64::new(scale * kr.cos(), scale * kr.sin())
        }
    }
}

/// Smooth remainder G(r) + 1/(4 pi r), extended by its finite r -> 0 limit
/// (-ik/(4 pi) for Helmholtz, 0 for Laplace). Written with half-angle forms
/// so small kr does not cancel.
#[inline]
fn green_remainder(kernel: Kernel, r: f64) -> Complex64 {
    match kernel {
        Kernel::Laplace => Complex64::new(0.0, 0.0),
        Kernel::Helmholtz { wavenumber } => {
            if r == 0.0 {
                return Complex64::new(0.0, -wavenumber / FOUR_PI);
            }
            let kr = wavenumber * r;
            // e^{ikr} - 1 = -2 sin^2(kr/2) + i sin(kr)
            let s_half = (0.5 * kr).sin();
            let re = -2.0 * s_half * s_half;
            let im = kr.sin();
            Complex64::new(re, im) * (-1.0 / (FOUR_PI * r))
        }
    }
}

/// Green's function G(x - y).
pub fn greens(kernel: Kernel, x: Vec3, y: Vec3) -> Result<Complex64, BemError> {
    let r = vec3::dist(x, y);
    if r == 0.0 {
        return Err(BemError::Singularity);
    }
    Ok(green_at_distance(kernel, r))
}

/// Boundary values attached to mesh vertices; the imaginary part is
/// identically zero for Laplace problems.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub values: Vec<Complex64>,
}

impl BoundaryTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fully assembled collocation system.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub n: usize,
    /// Row-major N x N matrix.
    pub matrix: Vec<Complex64>,
    pub rhs: Vec<Complex64>,
}

impl DenseSystem {
    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        dense_matvec(&self.matrix, x, self.n)
    }
}

/// Assemble the full collocation system for a Dirichlet right-hand side.
pub fn assemble_system(
    mesh: &TriangleMesh,
    kernel: Kernel,
    rhs: &[Complex64],
) -> Result<DenseSystem, BemError> {
    let n = mesh.triangle_count();
    if rhs.len() != n {
        return Err(BemError::RhsLengthMismatch { got: rhs.len(), expected: n });
    }
    Ok(DenseSystem { n, matrix: assemble_single_layer(mesh, kernel)?, rhs: rhs.to_vec() })
}

pub fn dense_matvec(matrix: &[Complex64], x: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    y.par_iter_mut().enumerate().for_each(|(i, yi)| {
        let row = &matrix[i * n..(i + 1) * n];
        *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
    });
    y
}

/// Integral of G(x - y) over triangle t of the mesh, choosing the
/// singularity-aware split when `split` is set.
fn triangle_kernel_integral(
    mesh: &TriangleMesh,
    kernel: Kernel,
    x: Vec3,
    t: usize,
    split: bool,
) -> Complex64 {
    let [ia, ib, ic] = mesh.triangles[t];
    let a = mesh.vertices[ia as usize];
    let b = mesh.vertices[ib as usize];
    let c = mesh.vertices[ic as usize];
    let area = mesh.triangle_areas[t];
    if split {
        // Analytic static part plus 7-point rule on the smooth remainder.
        let static_part = -inv_r_panel_integral(x, a, b, c) / FOUR_PI;
        let mut remainder = Complex64::new(0.0, 0.0);
        for (bary, w) in rule_7pt() {
            let y = bary_point(a, b, c, bary);
            remainder += green_remainder(kernel, vec3::dist(x, y)) * w;
        }
        Complex64::new(static_part, 0.0) + remainder * area
    } else {
        let mut acc = Complex64::new(0.0, 0.0);
        for (bary, w) in rule_7pt() {
            let y = bary_point(a, b, c, bary);
            acc += green_at_distance(kernel, vec3::dist(x, y)) * w;
        }
        acc * area
    }
}

/// Triangles sharing at least one vertex, for the singular-quadrature path.
fn adjacency_sets(mesh: &TriangleMesh) -> Vec<Vec<u32>> {
    let nv = mesh.vertex_count();
    let mut by_vertex: Vec<Vec<u32>> = vec![Vec::new(); nv];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for &v in tri {
            by_vertex[v as usize].push(t as u32);
        }
    }
    let mut adjacent: Vec<Vec<u32>> = vec![Vec::new(); mesh.triangle_count()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let mut set: Vec<u32> = tri
            .iter()
            .flat_map(|&v| by_vertex[v as usize].iter().copied())
            .collect();
        set.sort_unstable();
        set.dedup();
        adjacent[t] = set;
    }
    adjacent
}

/// Assemble the collocation matrix A[i][j] = int_{T_j} G(c_i - y) dy.
pub fn assemble_single_layer(mesh: &TriangleMesh, kernel: Kernel) -> Result<Vec<Complex64>, BemError> {
    let n = mesh.triangle_count();
    let adjacent = adjacency_sets(mesh);
    let mut matrix = vec![Complex64::new(0.0, 0.0); n * n];
    matrix
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let x = mesh.triangle_centroids[i];
            let near = &adjacent[i];
            for (j, entry) in row.iter_mut().enumerate() {
                let split = near.binary_search(&(j as u32)).is_ok();
                *entry = triangle_kernel_integral(mesh, kernel, x, j, split);
            }
        });
    if let Some(bad) = matrix.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(BemError::NonFiniteEntry { row: bad / n, col: bad % n });
    }
    Ok(matrix)
}

/// Area-weighted average of incident per-triangle densities at each vertex.
pub fn density_to_vertex_trace(mesh: &TriangleMesh, density: &[Complex64]) -> BoundaryTrace {
    let nv = mesh.vertex_count();
    let mut weighted = vec![Complex64::new(0.0, 0.0); nv];
    let mut weights = vec![0.0; nv];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.triangle_areas[t];
        for &v in tri {
            weighted[v as usize] += density[t] * area;
            weights[v as usize] += area;
        }
    }
    let values = weighted
        .into_iter()
        .zip(weights)
        .map(|(w, a)| if a > 0.0 { w / a } else { w })
        .collect();
    BoundaryTrace { values }
}

/// Mean of the three vertex values on each triangle; the approximate inverse
/// of `density_to_vertex_trace` used when re-evaluating fields from traces.
pub fn vertex_trace_to_density(mesh: &TriangleMesh, trace: &BoundaryTrace) -> Vec<Complex64> {
    mesh.triangles
        .iter()
        .map(|tri| {
            (trace.values[tri[0] as usize]
                + trace.values[tri[1] as usize]
                + trace.values[tri[2] as usize])
                / 3.0
        })
        .collect()
}

/// Result of a Dirichlet solve: vertex trace, per-triangle density, report.
#[derive(Debug, Clone)]
pub struct DirichletSolution {
    pub trace: BoundaryTrace,
    pub density: Vec<Complex64>,
    pub report: GmresReport,
}

/// Solve S p = u at the collocation points and average the per-triangle
/// density to mesh vertices. Fails if GMRES does not reach `rtol`.
pub fn solve_dirichlet(
    mesh: &TriangleMesh,
    kernel: Kernel,
    dirichlet_at_centroids: &[Complex64],
    rtol: f64,
) -> Result<DirichletSolution, BemError> {
    let n = mesh.triangle_count();
    if dirichlet_at_centroids.len() != n {
        return Err(BemError::RhsLengthMismatch { got: dirichlet_at_centroids.len(), expected: n });
    }
    let matrix = assemble_single_layer(mesh, kernel)?;
    let max_iter = n.min(400);
    let (density, report) = gmres(
        |x| dense_matvec(&matrix, x, n),
        dirichlet_at_centroids,
        rtol,
        max_iter,
    );
    if !report.converged {
        return Err(BemError::NotConverged {
            iterations: report.iterations,
            residual: report.final_relative_residual,
        });
    }
    let trace = density_to_vertex_trace(mesh, &density);
    Ok(DirichletSolution { trace, density, report })
}

/// Evaluate u(x) = sum_j int_{T_j} G(x - y) dy p_j at `points`.
///
/// Points strictly inside any of `obstacles` are masked with NaN. A point
/// closer than one triangle diameter to a panel uses the singular split.
pub fn evaluate_single_layer_potential(
    mesh: &TriangleMesh,
    kernel: Kernel,
    density_per_triangle: &[Complex64],
    points: &[Vec3],
    obstacles: &[Ellipsoid],
) -> Vec<Complex64> {
    let diameters: Vec<f64> = (0..mesh.triangle_count())
        .map(|t| mesh.triangle_diameter(t))
        .collect();
    points
        .par_iter()
        .map(|&x| {
            if obstacles.iter().any(|e| e.contains(x)) {
                return Complex64::new(f64::NAN, f64::NAN);
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &p) in density_per_triangle.iter().enumerate() {
                let near = vec3::dist(x, mesh.triangle_centroids[t]) < diameters[t];
                acc += triangle_kernel_integral(mesh, kernel, x, t, near) * p;
            }
            acc
        })
        .collect()
}
