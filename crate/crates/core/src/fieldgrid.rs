//! Total-field reconstruction on a planar grid from a boundary trace, with
//! inside-obstacle masking and CSV/PGM export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use thiserror::Error;

use crate::bem::{evaluate_single_layer_potential, vertex_trace_to_density, BoundaryTrace, Kernel};
use crate::dataset::SampleRecord;
use crate::problems::{incident_field, ProblemError, ProblemSpec};
use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid resolution must be >= 1")]
    BadResolution,
    #[error("trace length {got} does not match vertex count {expected}")]
    TraceLengthMismatch { got: usize, expected: usize },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Planar evaluation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Height of the z = z0 plane.
    pub plane_z: f64,
    /// Side length of the square window, centered on the origin.
    pub side: f64,
    /// Cells per side.
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { plane_z: 0.0, side: 10.0, resolution: 128 }
    }
}

/// Complex total field sampled at cell centers; masked cells hold NaN.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub values: Vec<Complex64>,
    pub mask: Vec<bool>,
}

impl FieldGrid {
    pub fn point(&self, ix: usize, iy: usize) -> Vec3 {
        let h = self.spec.side / self.spec.resolution as f64;
        [
            -self.spec.side / 2.0 + (ix as f64 + 0.5) * h,
            -self.spec.side / 2.0 + (iy as f64 + 0.5) * h,
            self.spec.plane_z,
        ]
    }

    pub fn value(&self, ix: usize, iy: usize) -> Complex64 {
        self.values[iy * self.spec.resolution + ix]
    }

    pub fn masked(&self, ix: usize, iy: usize) -> bool {
        self.mask[iy * self.spec.resolution + ix]
    }
}

/// u_tot = S p + u_inc at the unmasked cell centers of the grid; cells whose
/// center lies inside an obstacle are masked with NaN.
pub fn evaluate_field(
    record: &SampleRecord,
    trace: &BoundaryTrace,
    spec: &GridSpec,
) -> Result<FieldGrid, FieldError> {
    if spec.resolution == 0 {
        return Err(FieldError::BadResolution);
    }
    let mesh = &record.scene.mesh;
    if trace.len() != mesh.vertex_count() {
        return Err(FieldError::TraceLengthMismatch {
            got: trace.len(),
            expected: mesh.vertex_count(),
        });
    }
    let kernel = match &record.problem {
        ProblemSpec::LaplaceDirichlet { .. } => Kernel::Laplace,
        ProblemSpec::HelmholtzDirichlet { wavenumber, .. }
        | ProblemSpec::HelmholtzNeumann { wavenumber, .. } => {
            Kernel::Helmholtz { wavenumber: *wavenumber }
        }
    };
    let density = vertex_trace_to_density(mesh, trace);
    let n = spec.resolution;
    let h = spec.side / n as f64;
    let mut points = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            points.push([
                -spec.side / 2.0 + (ix as f64 + 0.5) * h,
                -spec.side / 2.0 + (iy as f64 + 0.5) * h,
                spec.plane_z,
            ]);
        }
    }
    let scattered = evaluate_single_layer_potential(
        mesh,
        kernel,
        &density,
        &points,
        &record.scene.ellipsoids,
    );
    let mask: Vec<bool> = scattered.iter().map(|z| z.re.is_nan()).collect();
    let unmasked: Vec<Vec3> = points
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| !m)
        .map(|(&p, _)| p)
        .collect();
    let incident = incident_field(&record.problem, &unmasked)?;
    let mut values = Vec::with_capacity(n * n);
    let mut inc_iter = incident.into_iter();
    for (s, &m) in scattered.iter().zip(&mask) {
        if m {
            values.push(Complex64::new(f64::NAN, f64::NAN));
        } else {
            values.push(s + inc_iter.next().expect("incident value"));
        }
    }
    Ok(FieldGrid { spec: *spec, values, mask })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FieldError + '_ {
    move |source| FieldError::Io { path: path.to_path_buf(), source }
}

/// CSV export: x, y, re, im, |u|, masked flag; one row per cell.
pub fn export_csv(grid: &FieldGrid, path: &Path) -> Result<(), FieldError> {
    let mut out = String::from("x,y,re,im,abs,masked\n");
    let n = grid.spec.resolution;
    for iy in 0..n {
        for ix in 0..n {
            let p = grid.point(ix, iy);
            let v = grid.value(ix, iy);
            let masked = grid.masked(ix, iy);
            if masked {
                out.push_str(&format!("{:.12e},{:.12e},nan,nan,nan,1\n", p[0], p[1]));
            } else {
                out.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},0\n",
                    p[0],
                    p[1],
                    v.re,
                    v.im,
                    v.norm()
                ));
            }
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Binary 8-bit PGM of |u|, linearly scaled between the unmasked min and
/// max; masked cells are black.
pub fn export_pgm(grid: &FieldGrid, path: &Path) -> Result<(), FieldError> {
    let n = grid.spec.resolution;
    let magnitudes: Vec<f64> = grid
        .values
        .iter()
        .zip(&grid.mask)
        .filter(|(_, &m)| !m)
        .map(|(z, _)| z.norm())
        .collect();
    let lo = magnitudes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = magnitudes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
    for iy in 0..n {
        for ix in 0..n {
            if grid.masked(ix, iy) {
                bytes.push(0);
            } else {
                let t = (grid.value(ix, iy).norm() - lo) / span;
                bytes.push((t * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&bytes).map_err(io_err(path))
}
