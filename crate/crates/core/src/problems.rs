//! Boundary-condition generators and incident fields for the three benchmark
//! problems: Laplace Dirichlet, Helmholtz Dirichlet (monopole source) and
//! Helmholtz Neumann (plane wave).

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Scene;
use crate::vec3::{self, Vec3};

/// Wavelength sampling range; k = 2 pi / lambda.
pub const WAVELENGTH_RANGE: (f64, f64) = (0.6, 6.0);
/// Clearance between a sampled source point and obstacle bounding spheres.
pub const SOURCE_MARGIN: f64 = 0.1;
const MAX_REJECTIONS: u32 = 10_000;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("evaluation point coincides with the source location")]
    PointAtSource,
    #[error("source placement rejected {0} consecutive draws")]
    RejectionCapExceeded(u32),
}

/// Which benchmark problem a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemVariant {
    LaplaceDirichlet,
    HelmholtzDirichlet,
    HelmholtzNeumann,
}

impl ProblemVariant {
    pub fn is_complex(&self) -> bool {
        !matches!(self, ProblemVariant::LaplaceDirichlet)
    }
}

impl std::fmt::Display for ProblemVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProblemVariant::LaplaceDirichlet => "laplace_dirichlet",
            ProblemVariant::HelmholtzDirichlet => "helmholtz_dirichlet",
            ProblemVariant::HelmholtzNeumann => "helmholtz_neumann",
        };
        f.write_str(s)
    }
}

/// Boundary-condition parameters of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ProblemSpec {
    LaplaceDirichlet { phi: [f64; 3], source: Vec3, direction: Vec3 },
    HelmholtzDirichlet { source: Vec3, wavenumber: f64 },
    HelmholtzNeumann { direction: Vec3, wavenumber: f64 },
}

impl ProblemSpec {
    pub fn variant(&self) -> ProblemVariant {
        match self {
            ProblemSpec::LaplaceDirichlet { .. } => ProblemVariant::LaplaceDirichlet,
            ProblemSpec::HelmholtzDirichlet { .. } => ProblemVariant::HelmholtzDirichlet,
            ProblemSpec::HelmholtzNeumann { .. } => ProblemVariant::HelmholtzNeumann,
        }
    }

    pub fn wavenumber(&self) -> Option<f64> {
        match self {
            ProblemSpec::LaplaceDirichlet { .. } => None,
            ProblemSpec::HelmholtzDirichlet { wavenumber, .. }
            | ProblemSpec::HelmholtzNeumann { wavenumber, .. } => Some(*wavenumber),
        }
    }
}

/// u(x) = -e^{ik ||x - x0||} / ||x - x0|| on the boundary.
pub fn dirichlet_monopole_bc(
    source: Vec3,
    wavenumber: f64,
    points: &[Vec3],
) -> Result<Vec<Complex64>, ProblemError> {
    points
        .iter()
        .map(|&x| {
            let r = vec3::dist(x, source);
            if r == 0.0 {
                return Err(ProblemError::PointAtSource);
            }
            let kr = wavenumber * r;
            Ok(Complex64::new(-kr.cos() / r, -kr.sin() / r))
        })
        .collect()
}

/// du/dn = -ik e^{ik x.v}; the normals are validated but the printed
/// formula does not involve them.
pub fn neumann_planewave_bc(
    direction: Vec3,
    wavenumber: f64,
    points: &[Vec3],
    normals: &[Vec3],
) -> Vec<Complex64> {
    debug_assert_eq!(points.len(), normals.len());
    debug_assert!(normals.iter().all(|&n| (vec3::norm(n) - 1.0).abs() < 1e-9));
    points
        .iter()
        .map(|&x| {
            let phase = wavenumber * vec3::dot(x, direction);
            // -ik (cos + i sin) = k sin - i k cos
            Complex64::new(wavenumber * phase.sin(), -wavenumber * phase.cos())
        })
        .collect()
}

/// u(x) = -phi0 - phi1/r - 2 phi2 v.(x-x0)/r with r = ||x - x0||.
/// Returns the total and the three summands separately (the summands feed
/// the node features).
pub fn laplace_dirichlet_bc(
    phi: [f64; 3],
    source: Vec3,
    direction: Vec3,
    points: &[Vec3],
) -> Result<(Vec<f64>, Vec<[f64; 3]>), ProblemError> {
    let mut totals = Vec::with_capacity(points.len());
    let mut terms = Vec::with_capacity(points.len());
    for &x in points {
        let d = vec3::sub(x, source);
        let r = vec3::norm(d);
        if r == 0.0 {
            return Err(ProblemError::PointAtSource);
        }
        let t0 = -phi[0];
        let t1 = -phi[1] / r;
        let t2 = -2.0 * phi[2] * vec3::dot(direction, d) / r;
        totals.push(t0 + t1 + t2);
        terms.push([t0, t1, t2]);
    }
    Ok((totals, terms))
}

/// Incident field u_inc so that u = -u_inc on the boundary for the Dirichlet
/// problems; the plane wave itself for Neumann.
pub fn incident_field(spec: &ProblemSpec, points: &[Vec3]) -> Result<Vec<Complex64>, ProblemError> {
    match spec {
        ProblemSpec::HelmholtzDirichlet { source, wavenumber } => points
            .iter()
            .map(|&x| {
                let r = vec3::dist(x, *source);
                if r == 0.0 {
                    return Err(ProblemError::PointAtSource);
                }
                let kr = wavenumber * r;
                Ok(Complex64::new(kr.cos() / r, kr.sin() / r))
            })
            .collect(),
        ProblemSpec::HelmholtzNeumann { direction, wavenumber } => Ok(points
            .iter()
            .map(|&x| {
                let phase = wavenumber * vec3::dot(x, *direction);
                Complex64::new(phase.cos(), phase.sin())
            })
            .collect()),
        ProblemSpec::LaplaceDirichlet { phi, source, direction } => {
            let (totals, _) = laplace_dirichlet_bc(*phi, *source, *direction, points)?;
            Ok(totals.into_iter().map(|t| Complex64::new(-t, 0.0)).collect())
        }
    }
}

/// Dirichlet data of `spec` at `points` (boundary collocation values).
pub fn boundary_condition(
    spec: &ProblemSpec,
    points: &[Vec3],
    normals: &[Vec3],
) -> Result<Vec<Complex64>, ProblemError> {
    match spec {
        ProblemSpec::LaplaceDirichlet { phi, source, direction } => {
            let (totals, _) = laplace_dirichlet_bc(*phi, *source, *direction, points)?;
            Ok(totals.into_iter().map(|t| Complex64::new(t, 0.0)).collect())
        }
        ProblemSpec::HelmholtzDirichlet { source, wavenumber } => {
            dirichlet_monopole_bc(*source, *wavenumber, points)
        }
        ProblemSpec::HelmholtzNeumann { direction, wavenumber } => {
            Ok(neumann_planewave_bc(*direction, *wavenumber, points, normals))
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v: Vec3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = vec3::norm(v);
        if n > 1e-12 {
            return vec3::scale(v, 1.0 / n);
        }
    }
}

fn sample_source(scene: &Scene, rng: &mut ChaCha8Rng) -> Result<Vec3, ProblemError> {
    let half = scene.environment_half_extent;
    for _ in 0..MAX_REJECTIONS {
        let x0: Vec3 = [
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
        ];
        let clear = scene.ellipsoids.iter().all(|e| {
            vec3::dist(x0, e.center) > e.bounding_radius() + SOURCE_MARGIN
        });
        if clear {
            return Ok(x0);
        }
    }
    Err(ProblemError::RejectionCapExceeded(MAX_REJECTIONS))
}

/// Draw boundary-condition parameters for `variant`; deterministic given seed.
pub fn sample_problem(
    variant: ProblemVariant,
    scene: &Scene,
    rng_seed: u64,
) -> Result<ProblemSpec, ProblemError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let wavenumber = |rng: &mut ChaCha8Rng| {
        let lambda = rng.random_range(WAVELENGTH_RANGE.0..=WAVELENGTH_RANGE.1);
        2.0 * std::f64::consts::PI / lambda
    };
    match variant {
        ProblemVariant::LaplaceDirichlet => {
            let phi = [
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            ];
            let source = sample_source(scene, &mut rng)?;
            let direction = unit_vector(&mut rng);
            Ok(ProblemSpec::LaplaceDirichlet { phi, source, direction })
        }
        ProblemVariant::HelmholtzDirichlet => {
            let source = sample_source(scene, &mut rng)?;
            let wavenumber = wavenumber(&mut rng);
            Ok(ProblemSpec::HelmholtzDirichlet { source, wavenumber })
        }
        ProblemVariant::HelmholtzNeumann => {
            let direction = unit_vector(&mut rng);
            let wavenumber = wavenumber(&mut rng);
            Ok(ProblemSpec::HelmholtzNeumann { direction, wavenumber })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_scene;
    use std::f64::consts::PI;

    #[test]
    fn monopole_closed_forms() {
        let x0 = [0.0; 3];
        // k = 2 pi, r = 1 -> -1
        let v = dirichlet_monopole_bc(x0, 2.0 * PI, &[[1.0, 0.0, 0.0]]).unwrap();
        assert!((v[0] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        // k = pi, r = 2 -> -1/2
        let v = dirichlet_monopole_bc(x0, PI, &[[2.0, 0.0, 0.0]]).unwrap();
        assert!((v[0] - Complex64::new(-0.5, 0.0)).norm() < 1e-12);
        // k = pi/2, r = 1 -> -i
        let v = dirichlet_monopole_bc(x0, PI / 2.0, &[[0.0, 1.0, 0.0]]).unwrap();
        assert!((v[0] - Complex64::new(0.0, -1.0)).norm() < 1e-12);
        // point at source errors
        assert!(dirichlet_monopole_bc(x0, 1.0, &[x0]).is_err());
    }

    #[test]
    fn planewave_closed_forms() {
        let n = [[0.0, 0.0, 1.0]];
        // x.v = 0, k = 2 -> -2i
        let v = neumann_planewave_bc([1.0, 0.0, 0.0], 2.0, &[[0.0, 1.0, 0.0]], &n);
        assert!((v[0] - Complex64::new(0.0, -2.0)).norm() < 1e-12);
        // k (x.v) = pi -> -ik e^{i pi} = ik
        let v = neumann_planewave_bc([1.0, 0.0, 0.0], 1.0, &[[PI, 0.0, 0.0]], &n);
        assert!((v[0] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        // k = 2 pi, x.v = 1 -> -2 pi i
        let v = neumann_planewave_bc([1.0, 0.0, 0.0], 2.0 * PI, &[[1.0, 0.0, 0.0]], &n);
        assert!((v[0] - Complex64::new(0.0, -2.0 * PI)).norm() < 1e-10);
    }

    #[test]
    fn laplace_bc_terms() {
        let x0 = [0.0; 3];
        let v = [1.0, 0.0, 0.0];
        // phi0 = 1 only -> -1 everywhere
        let (tot, terms) =
            laplace_dirichlet_bc([1.0, 0.0, 0.0], x0, v, &[[3.0, 1.0, -2.0]]).unwrap();
        assert_eq!(tot[0], -1.0);
        assert_eq!(terms[0], [-1.0, 0.0, 0.0]);
        // phi1 = 1 only, r = 2 -> -1/2
        let (tot, _) = laplace_dirichlet_bc([0.0, 1.0, 0.0], x0, v, &[[2.0, 0.0, 0.0]]).unwrap();
        assert!((tot[0] + 0.5).abs() < 1e-15);
        // phi2 = 1 only, v aligned with x - x0 -> -2
        let (tot, _) = laplace_dirichlet_bc([0.0, 0.0, 1.0], x0, v, &[[5.0, 0.0, 0.0]]).unwrap();
        assert!((tot[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn incident_field_conventions() {
        // Dirichlet problems satisfy u = -u_inc on the boundary.
        let spec = ProblemSpec::HelmholtzDirichlet { source: [0.0; 3], wavenumber: 1.7 };
        let pts = [[1.0, 2.0, 0.5], [0.3, -0.2, 2.0]];
        let inc = incident_field(&spec, &pts).unwrap();
        let bc = boundary_condition(&spec, &pts, &[[0.0, 0.0, 1.0]; 2]).unwrap();
        for (i, b) in inc.iter().zip(&bc) {
            assert!((i + b).norm() < 1e-15);
        }

        // Plane wave at the origin is 1.
        let spec = ProblemSpec::HelmholtzNeumann { direction: [0.0, 1.0, 0.0], wavenumber: 3.0 };
        let inc = incident_field(&spec, &[[0.0; 3]]).unwrap();
        assert_eq!(inc[0], Complex64::new(1.0, 0.0));

        // Laplace with phi0 = 1 only -> +1 everywhere.
        let spec = ProblemSpec::LaplaceDirichlet {
            phi: [1.0, 0.0, 0.0],
            source: [0.0; 3],
            direction: [1.0, 0.0, 0.0],
        };
        let inc = incident_field(&spec, &[[1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(inc[0], Complex64::new(1.0, 0.0));

        // Laplace too satisfies u = -u_inc on the boundary.
        let spec = ProblemSpec::LaplaceDirichlet {
            phi: [0.3, -0.8, 0.5],
            source: [0.2, 0.1, -0.4],
            direction: [0.0, 0.0, 1.0],
        };
        let pts = [[2.0, -1.0, 0.7]];
        let inc = incident_field(&spec, &pts).unwrap();
        let bc = boundary_condition(&spec, &pts, &[[0.0, 0.0, 1.0]]).unwrap();
        assert!((inc[0] + bc[0]).norm() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let scene = sample_scene(2, 5, 0.6).unwrap();
        let a = sample_problem(ProblemVariant::HelmholtzDirichlet, &scene, 99).unwrap();
        let b = sample_problem(ProblemVariant::HelmholtzDirichlet, &scene, 99).unwrap();
        assert_eq!(a, b);

        let k_lo = 2.0 * PI / WAVELENGTH_RANGE.1;
        let k_hi = 2.0 * PI / WAVELENGTH_RANGE.0;
        for seed in 0..200 {
            match sample_problem(ProblemVariant::HelmholtzDirichlet, &scene, seed).unwrap() {
                ProblemSpec::HelmholtzDirichlet { source, wavenumber } => {
                    assert!(wavenumber >= k_lo && wavenumber <= k_hi);
                    for e in &scene.ellipsoids {
                        assert!(
                            vec3::dist(source, e.center)
                                > e.bounding_radius() + SOURCE_MARGIN
                        );
                    }
                }
                _ => unreachable!(),
            }
            match sample_problem(ProblemVariant::LaplaceDirichlet, &scene, seed).unwrap() {
                ProblemSpec::LaplaceDirichlet { phi, direction, .. } => {
                    assert!(phi.iter().all(|p| (-1.0..=1.0).contains(p)));
                    assert!((vec3::norm(direction) - 1.0).abs() < 1e-12);
                }
                _ => unreachable!(),
            }
        }
    }
}
