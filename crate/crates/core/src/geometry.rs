//! Ellipsoid obstacle meshing and random non-overlapping scene sampling.
//!
//! Obstacles are ellipsoids meshed as subdivided icosahedra; scenes place
//! several of them in a cubic environment box by rejection sampling on a
//! conservative bounding-sphere overlap test.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::{self, Vec3};

/// Default half extent of the cubic environment (10 x 10 x 10 box).
pub const ENVIRONMENT_HALF_EXTENT: f64 = 5.0;
/// Semi-axis sampling range for scene obstacles.
pub const SEMI_AXIS_RANGE: (f64, f64) = (0.3, 1.5);
/// Clearance required between bounding spheres of distinct obstacles.
pub const SEPARATION_MARGIN: f64 = 0.05;
/// Highest icosphere subdivision depth `mesh_ellipsoid` will attempt.
pub const MAX_SUBDIVISION_DEPTH: u32 = 7;
/// Consecutive rejections tolerated while placing one obstacle.
pub const MAX_CONSECUTIVE_REJECTIONS: u32 = 10_000;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("target edge length must be > 0, got {0}")]
    InvalidTargetEdge(f64),
    #[error("semi-axes must all be > 0, got {0:?}")]
    InvalidSemiAxes(Vec3),
    #[error("subdivision depth cap {cap} reached before mean edge length {achieved} <= {target}")]
    SubdivisionCapExceeded { cap: u32, achieved: f64, target: f64 },
    #[error("scene sampling rejected {rejections} consecutive placements (seed {seed}, obstacle {obstacle})")]
    RejectionCapExceeded { seed: u64, obstacle: usize, rejections: u32 },
    #[error("n_obstacles must be >= 1")]
    NoObstacles,
}

/// Axis-aligned ellipsoid obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Vec3,
    pub semi_axes: Vec3,
}

impl Ellipsoid {
    pub fn new(center: Vec3, semi_axes: Vec3) -> Result<Self, GeometryError> {
        if semi_axes.iter().any(|&s| !(s > 0.0)) {
            return Err(GeometryError::InvalidSemiAxes(semi_axes));
        }
        Ok(Self { center, semi_axes })
    }

    /// Radius of the bounding sphere (largest semi-axis).
    pub fn bounding_radius(&self) -> f64 {
        self.semi_axes.iter().cloned().fold(0.0, f64::max)
    }

    /// True if `p` lies strictly inside the ellipsoid.
    pub fn contains(&self, p: Vec3) -> bool {
        let d = vec3::sub(p, self.center);
        let s = self.semi_axes;
        let q = (d[0] / s[0]).powi(2) + (d[1] / s[1]).powi(2) + (d[2] / s[2]).powi(2);
        q < 1.0
    }

    /// Exact outward unit normal at a surface point `p`.
    ///
    /// For the implicit surface sum((x-c)/s)^2 = 1 the gradient component i
    /// is 2 (p_i - c_i) / s_i^2.
    pub fn unit_normal_at(&self, p: Vec3) -> Vec3 {
        let d = vec3::sub(p, self.center);
        let s = self.semi_axes;
        vec3::unit([d[0] / (s[0] * s[0]), d[1] / (s[1] * s[1]), d[2] / (s[2] * s[2])])
    }
}

/// Indexed triangle surface mesh of one or more closed obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    /// Vertex index triples, counter-clockwise seen from outside.
    pub triangles: Vec<[u32; 3]>,
    pub vertex_normals: Vec<Vec3>,
    pub triangle_areas: Vec<f64>,
    pub triangle_centroids: Vec<Vec3>,
    pub vertex_obstacle: Vec<u32>,
    pub triangle_obstacle: Vec<u32>,
}

impl TriangleMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn total_area(&self) -> f64 {
        self.triangle_areas.iter().sum()
    }

    /// Unique undirected edges as (lo, hi) vertex index pairs.
    pub fn undirected_edges(&self) -> Vec<(u32, u32)> {
        let mut edges: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| {
                [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]
                    .into_iter()
                    .map(|(a, b)| (a.min(b), a.max(b)))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.undirected_edges();
        if edges.is_empty() {
            return 0.0;
        }
        let total: f64 = edges
            .iter()
            .map(|&(a, b)| vec3::dist(self.vertices[a as usize], self.vertices[b as usize]))
            .sum();
        total / edges.len() as f64
    }

    /// Longest edge of triangle `t`, used as a near-field radius.
    pub fn triangle_diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (va, vb, vc) = (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        );
        vec3::dist(va, vb).max(vec3::dist(vb, vc)).max(vec3::dist(vc, va))
    }

    /// Every undirected edge must be shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts.values().all(|&c| c == 2)
    }

    /// Concatenate `other` into `self`, offsetting vertex indices.
    pub fn append(&mut self, other: TriangleMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend(other.vertices);
        self.vertex_normals.extend(other.vertex_normals);
        self.vertex_obstacle.extend(other.vertex_obstacle);
        self.triangles
            .extend(other.triangles.into_iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
        self.triangle_areas.extend(other.triangle_areas);
        self.triangle_centroids.extend(other.triangle_centroids);
        self.triangle_obstacle.extend(other.triangle_obstacle);
    }

    pub fn empty() -> Self {
        TriangleMesh {
            vertices: Vec::new(),
            triangles: Vec::new(),
            vertex_normals: Vec::new(),
            triangle_areas: Vec::new(),
            triangle_centroids: Vec::new(),
            vertex_obstacle: Vec::new(),
            triangle_obstacle: Vec::new(),
        }
    }
}

/// A full multiple-scattering scene: obstacles plus their merged mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub ellipsoids: Vec<Ellipsoid>,
    pub mesh: TriangleMesh,
    pub environment_half_extent: f64,
}

impl Scene {
    /// True if `p` lies strictly inside any obstacle.
    pub fn inside_any_obstacle(&self, p: Vec3) -> bool {
        self.ellipsoids.iter().any(|e| e.contains(p))
    }
}

// Icosahedron vertex/face tables; vertices are normalized to the unit sphere.
fn icosahedron() -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw: [Vec3; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let vertices = raw.iter().map(|&v| vec3::unit(v)).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, faces)
}

/// One 4-way subdivision step; midpoints are re-projected onto the unit sphere.
fn subdivide_unit_sphere(vertices: &mut Vec<Vec3>, faces: &[[u32; 3]]) -> Vec<[u32; 3]> {
    let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
    let mut out = Vec::with_capacity(faces.len() * 4);
    let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
        let key = (a.min(b), a.max(b));
        if let Some(&idx) = midpoint.get(&key) {
            return idx;
        }
        let m = vec3::unit(vec3::scale(
            vec3::add(vertices[a as usize], vertices[b as usize]),
            0.5,
        ));
        let idx = vertices.len() as u32;
        vertices.push(m);
        midpoint.insert(key, idx);
        idx
    };
    for &[a, b, c] in faces {
        let ab = mid(a, b, vertices);
        let bc = mid(b, c, vertices);
        let ca = mid(c, a, vertices);
        out.push([a, ab, ca]);
        out.push([b, bc, ab]);
        out.push([c, ca, bc]);
        out.push([ab, bc, ca]);
    }
    out
}

fn unit_icosphere(depth: u32) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let (mut vertices, mut faces) = icosahedron();
    for _ in 0..depth {
        faces = subdivide_unit_sphere(&mut vertices, &faces);
    }
    (vertices, faces)
}

fn build_ellipsoid_mesh(e: &Ellipsoid, depth: u32, obstacle_id: u32) -> TriangleMesh {
    let (unit_vertices, mut triangles) = unit_icosphere(depth);
    let vertices: Vec<Vec3> = unit_vertices
        .iter()
        .map(|&v| {
            vec3::add(
                e.center,
                [v[0] * e.semi_axes[0], v[1] * e.semi_axes[1], v[2] * e.semi_axes[2]],
            )
        })
        .collect();
    // Anisotropic scaling keeps the winding, but orient defensively so every
    // triangle is counter-clockwise seen from outside the convex body.
    for t in triangles.iter_mut() {
        let (a, b, c) = (
            vertices[t[0] as usize],
            vertices[t[1] as usize],
            vertices[t[2] as usize],
        );
        let n = vec3::cross(vec3::sub(b, a), vec3::sub(c, a));
        let centroid = vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0);
        if vec3::dot(n, vec3::sub(centroid, e.center)) < 0.0 {
            t.swap(1, 2);
        }
    }
    let vertex_normals = vertices.iter().map(|&v| e.unit_normal_at(v)).collect();
    let (areas, centroids): (Vec<f64>, Vec<Vec3>) = triangles
        .iter()
        .map(|t| {
            let (a, b, c) = (
                vertices[t[0] as usize],
                vertices[t[1] as usize],
                vertices[t[2] as usize],
            );
            let area = 0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)));
            let centroid = vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0);
            (area, centroid)
        })
        .unzip();
    let nv = vertices.len();
    let nt = triangles.len();
    TriangleMesh {
        vertices,
        triangles,
        vertex_normals,
        triangle_areas: areas,
        triangle_centroids: centroids,
        vertex_obstacle: vec![obstacle_id; nv],
        triangle_obstacle: vec![obstacle_id; nt],
    }
}

/// Mesh an ellipsoid at the smallest icosphere subdivision depth whose mean
/// edge length does not exceed `target_edge_length`.
pub fn mesh_ellipsoid(e: &Ellipsoid, target_edge_length: f64) -> Result<TriangleMesh, GeometryError> {
    mesh_ellipsoid_with_id(e, target_edge_length, 0)
}

pub fn mesh_ellipsoid_with_id(
    e: &Ellipsoid,
    target_edge_length: f64,
    obstacle_id: u32,
) -> Result<TriangleMesh, GeometryError> {
    if !(target_edge_length > 0.0) {
        return Err(GeometryError::InvalidTargetEdge(target_edge_length));
    }
    if e.semi_axes.iter().any(|&s| !(s > 0.0)) {
        return Err(GeometryError::InvalidSemiAxes(e.semi_axes));
    }
    let mut achieved = f64::INFINITY;
    for depth in 0..=MAX_SUBDIVISION_DEPTH {
        let mesh = build_ellipsoid_mesh(e, depth, obstacle_id);
        achieved = mesh.mean_edge_length();
        if achieved <= target_edge_length {
            return Ok(mesh);
        }
    }
    Err(GeometryError::SubdivisionCapExceeded {
        cap: MAX_SUBDIVISION_DEPTH,
        achieved,
        target: target_edge_length,
    })
}

/// Draw a random scene of non-overlapping ellipsoids; deterministic given seed.
pub fn sample_scene(
    n_obstacles: usize,
    rng_seed: u64,
    target_edge_length: f64,
) -> Result<Scene, GeometryError> {
    if n_obstacles == 0 {
        return Err(GeometryError::NoObstacles);
    }
    let half = ENVIRONMENT_HALF_EXTENT;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ellipsoids: Vec<Ellipsoid> = Vec::with_capacity(n_obstacles);
    for obstacle in 0..n_obstacles {
        let mut rejections = 0u32;
        loop {
            let semi_axes = [
                rng.random_range(SEMI_AXIS_RANGE.0..=SEMI_AXIS_RANGE.1),
                rng.random_range(SEMI_AXIS_RANGE.0..=SEMI_AXIS_RANGE.1),
                rng.random_range(SEMI_AXIS_RANGE.0..=SEMI_AXIS_RANGE.1),
            ];
            let candidate = Ellipsoid { center: [0.0; 3], semi_axes };
            let r = candidate.bounding_radius();
            let lim = half - r;
            let center = [
                rng.random_range(-lim..=lim),
                rng.random_range(-lim..=lim),
                rng.random_range(-lim..=lim),
            ];
            let candidate = Ellipsoid { center, semi_axes };
            let clear = ellipsoids.iter().all(|other| {
                vec3::dist(other.center, candidate.center)
                    > other.bounding_radius() + r + SEPARATION_MARGIN
            });
            if clear {
                ellipsoids.push(candidate);
                break;
            }
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(GeometryError::RejectionCapExceeded {
                    seed: rng_seed,
                    obstacle,
                    rejections,
                });
            }
        }
    }
    let mut mesh = TriangleMesh::empty();
    for (i, e) in ellipsoids.iter().enumerate() {
        mesh.append(mesh_ellipsoid_with_id(e, target_edge_length, i as u32)?);
    }
    Ok(Scene { ellipsoids, mesh, environment_half_extent: half })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_sphere() -> Ellipsoid {
        Ellipsoid { center: [0.0; 3], semi_axes: [1.0; 3] }
    }

    #[test]
    fn depth_zero_is_icosahedron() {
        // A large target forces depth 0.
        let mesh = mesh_ellipsoid(&unit_sphere(), 10.0).unwrap();
        assert_eq!(mesh.vertex_count(), 12);
        assert_eq!(mesh.triangle_count(), 20);
    }

    #[test]
    fn sphere_area_close_to_analytic() {
        let mesh = mesh_ellipsoid(&unit_sphere(), 0.3).unwrap();
        let exact = 4.0 * PI;
        assert!((mesh.total_area() - exact).abs() / exact < 0.05);
    }

    #[test]
    fn area_error_decreases_with_depth() {
        let exact = 4.0 * PI;
        let mut last = f64::INFINITY;
        for depth in 0..=4 {
            let mesh = build_ellipsoid_mesh(&unit_sphere(), depth, 0);
            let err = (mesh.total_area() - exact).abs();
            assert!(err < last, "area error not monotone at depth {depth}");
            last = err;
        }
    }

    #[test]
    fn translation_preserves_radius() {
        let e = Ellipsoid { center: [2.0, 0.0, 0.0], semi_axes: [1.0; 3] };
        let mesh = mesh_ellipsoid(&e, 0.5).unwrap();
        for &v in &mesh.vertices {
            assert!((vec3::dist(v, e.center) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn meshes_are_watertight_with_unit_outward_normals() {
        let e = Ellipsoid { center: [0.5, -0.25, 1.0], semi_axes: [1.2, 0.4, 0.8] };
        let mesh = mesh_ellipsoid(&e, 0.3).unwrap();
        assert!(mesh.is_watertight());
        for (&v, &n) in mesh.vertices.iter().zip(&mesh.vertex_normals) {
            assert!((vec3::norm(n) - 1.0).abs() < 1e-9);
            assert!(vec3::dot(n, vec3::sub(v, e.center)) > 0.0);
        }
        // Positive areas and counter-clockwise orientation seen from outside.
        for (t, &area) in mesh.triangles.iter().zip(&mesh.triangle_areas) {
            assert!(area > 0.0);
            let (a, b, c) = (
                mesh.vertices[t[0] as usize],
                mesh.vertices[t[1] as usize],
                mesh.vertices[t[2] as usize],
            );
            let n = vec3::cross(vec3::sub(b, a), vec3::sub(c, a));
            let centroid = vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0);
            assert!(vec3::dot(n, vec3::sub(centroid, e.center)) > 0.0);
        }
    }

    #[test]
    fn single_obstacle_scene_fits_in_box() {
        let scene = sample_scene(1, 42, 0.5).unwrap();
        assert_eq!(scene.ellipsoids.len(), 1);
        for &v in &scene.mesh.vertices {
            assert!(v.iter().all(|c| c.abs() <= ENVIRONMENT_HALF_EXTENT));
        }
    }

    #[test]
    fn scene_sampling_is_deterministic() {
        let a = sample_scene(3, 7, 0.5).unwrap();
        let b = sample_scene(3, 7, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_zero_obstacles_and_bad_edge() {
        assert!(matches!(sample_scene(0, 1, 0.5), Err(GeometryError::NoObstacles)));
        assert!(matches!(
            mesh_ellipsoid(&unit_sphere(), 0.0),
            Err(GeometryError::InvalidTargetEdge(_))
        ));
    }

    #[test]
    fn subdivision_cap_reported() {
        let err = mesh_ellipsoid(&unit_sphere(), 1e-6).unwrap_err();
        assert!(matches!(err, GeometryError::SubdivisionCapExceeded { .. }));
    }
}
