//! End-to-end sample generation and the on-disk dataset format.
//!
//! Each sample is one binary file: magic `MSCAT01\n`, an 8-byte little-endian
//! header length, a UTF-8 JSON header, then raw little-endian arrays in fixed
//! order (vertices f64 x 3N, triangle indices u32 x 3M, vertex obstacle ids
//! u32 x N, trace real f64 x N, trace imaginary f64 x N when complex).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bem::{solve_dirichlet, BemError, BoundaryTrace, Kernel};
use crate::geometry::{sample_scene, Ellipsoid, GeometryError, Scene, TriangleMesh};
use crate::problems::{boundary_condition, sample_problem, ProblemError, ProblemSpec, ProblemVariant};
use crate::vec3::{self, Vec3};

pub const SAMPLE_MAGIC: &[u8; 8] = b"MSCAT01\n";
pub const FORMAT_VERSION: u32 = 1;
/// GMRES tolerance used for ground-truth labels.
pub const GROUND_TRUTH_RTOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic bytes (not a sample file)")]
    BadMagic,
    #[error("truncated payload: expected {expected} bytes after header, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("header/array count mismatch: {0}")]
    CountMismatch(String),
    #[error("malformed header: {0}")]
    HeaderParse(#[from] serde_json::Error),
    #[error("ground truth generation is out of scope for {0}")]
    UnsupportedVariant(ProblemVariant),
    #[error("aborted after {redraws} re-draws over {samples} samples (> 10%); last failure: {last}")]
    TooManyRedraws { redraws: usize, samples: usize, last: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Bem(#[from] BemError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// One benchmark sample: scene, boundary condition, ground-truth trace and
/// the GMRES iteration count that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub scene: Scene,
    pub problem: ProblemSpec,
    pub trace: BoundaryTrace,
    pub gmres_iterations: usize,
    pub gmres_relative_residual: f64,
}

impl SampleRecord {
    pub fn wavenumber(&self) -> Option<f64> {
        self.problem.wavenumber()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleHeader {
    format_version: u32,
    problem: ProblemSpec,
    ellipsoids: Vec<Ellipsoid>,
    environment_half_extent: f64,
    vertex_count: u64,
    triangle_count: u64,
    trace_is_complex: bool,
    gmres_iterations: u64,
    gmres_relative_residual: f64,
}

/// Dataset index written next to the sample files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub problem: ProblemVariant,
    pub sample_count: usize,
    pub n_obstacles: usize,
    pub target_edge_length: f64,
    pub rng_seed_base: u64,
    pub files: Vec<String>,
}

impl DatasetManifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let path = Self::path(dir);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        let path = Self::path(dir);
        let text = serde_json::to_string_pretty(self).expect("manifest serialization");
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn sample_paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.files.iter().map(|f| dir.join(f)).collect()
    }
}

fn push_f64s(buf: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_u32s(buf: &mut Vec<u8>, values: impl Iterator<Item = u32>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize a record to the binary sample format.
pub fn sample_to_bytes(record: &SampleRecord) -> Vec<u8> {
    let mesh = &record.scene.mesh;
    let complex = record.problem.variant().is_complex();
    let header = SampleHeader {
        format_version: FORMAT_VERSION,
        problem: record.problem.clone(),
        ellipsoids: record.scene.ellipsoids.clone(),
        environment_half_extent: record.scene.environment_half_extent,
        vertex_count: mesh.vertex_count() as u64,
        triangle_count: mesh.triangle_count() as u64,
        trace_is_complex: complex,
        gmres_iterations: record.gmres_iterations as u64,
        gmres_relative_residual: record.gmres_relative_residual,
    };
    let header_json = serde_json::to_vec(&header).expect("header serialization");

    let mut buf = Vec::new();
    buf.extend_from_slice(SAMPLE_MAGIC);
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    push_f64s(&mut buf, mesh.vertices.iter().flat_map(|v| v.iter().copied()));
    push_u32s(&mut buf, mesh.triangles.iter().flat_map(|t| t.iter().copied()));
    push_u32s(&mut buf, mesh.vertex_obstacle.iter().copied());
    push_f64s(&mut buf, record.trace.values.iter().map(|z| z.re));
    if complex {
        push_f64s(&mut buf, record.trace.values.iter().map(|z| z.im));
    }
    buf
}

pub fn write_sample(record: &SampleRecord, path: &Path) -> Result<(), DatasetError> {
    let bytes = sample_to_bytes(record);
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&bytes).map_err(io_err(path))
}

fn read_f64s(payload: &[u8], offset: &mut usize, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut b = [0u8; 8];
        b.copy_from_slice(&payload[*offset..*offset + 8]);
        out.push(f64::from_le_bytes(b));
        *offset += 8;
    }
    out
}

fn read_u32s(payload: &[u8], offset: &mut usize, count: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut b = [0u8; 4];
        b.copy_from_slice(&payload[*offset..*offset + 4]);
        out.push(u32::from_le_bytes(b));
        *offset += 4;
    }
    out
}

/// Deserialize a record from sample-format bytes.
pub fn sample_from_bytes(bytes: &[u8]) -> Result<SampleRecord, DatasetError> {
    if bytes.len() < SAMPLE_MAGIC.len() + 8 || &bytes[..SAMPLE_MAGIC.len()] != SAMPLE_MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let mut off = SAMPLE_MAGIC.len();
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[off..off + 8]);
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    off += 8;
    if bytes.len() < off + header_len {
        return Err(DatasetError::TruncatedPayload {
            expected: header_len,
            found: bytes.len() - off,
        });
    }
    let header: SampleHeader = serde_json::from_slice(&bytes[off..off + header_len])?;
    off += header_len;

    let nv = header.vertex_count as usize;
    let nt = header.triangle_count as usize;
    let complex = header.trace_is_complex;
    let expected = 8 * 3 * nv + 4 * 3 * nt + 4 * nv + 8 * nv + if complex { 8 * nv } else { 0 };
    let found = bytes.len() - off;
    if found < expected {
        return Err(DatasetError::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(DatasetError::CountMismatch(format!(
            "{} payload bytes for counts implying {}",
            found, expected
        )));
    }
    if complex != header.problem.variant().is_complex() {
        return Err(DatasetError::CountMismatch(
            "trace_is_complex flag contradicts problem variant".to_string(),
        ));
    }

    let payload = &bytes[off..];
    let mut p = 0usize;
    let flat_vertices = read_f64s(payload, &mut p, 3 * nv);
    let flat_triangles = read_u32s(payload, &mut p, 3 * nt);
    let vertex_obstacle = read_u32s(payload, &mut p, nv);
    let trace_re = read_f64s(payload, &mut p, nv);
    let trace_im = if complex { read_f64s(payload, &mut p, nv) } else { vec![0.0; nv] };

    let vertices: Vec<Vec3> = flat_vertices
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let triangles: Vec<[u32; 3]> = flat_triangles
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let n_obstacles = header.ellipsoids.len() as u32;
    for t in &triangles {
        if t.iter().any(|&v| v as usize >= nv) {
            return Err(DatasetError::CountMismatch(format!(
                "triangle index out of range (vertex count {nv})"
            )));
        }
    }
    if vertex_obstacle.iter().any(|&o| o >= n_obstacles) {
        return Err(DatasetError::CountMismatch(format!(
            "vertex obstacle id out of range ({n_obstacles} obstacles)"
        )));
    }

    // Normals, areas and centroids are derived data: rebuild them from the
    // stored geometry exactly as the mesher does.
    let vertex_normals: Vec<Vec3> = vertices
        .iter()
        .zip(&vertex_obstacle)
        .map(|(&v, &o)| header.ellipsoids[o as usize].unit_normal_at(v))
        .collect();
    let mut triangle_areas = Vec::with_capacity(nt);
    let mut triangle_centroids = Vec::with_capacity(nt);
    let mut triangle_obstacle = Vec::with_capacity(nt);
    for t in &triangles {
        let (a, b, c) = (
            vertices[t[0] as usize],
            vertices[t[1] as usize],
            vertices[t[2] as usize],
        );
        triangle_areas.push(0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a))));
        triangle_centroids.push(vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0));
        triangle_obstacle.push(vertex_obstacle[t[0] as usize]);
    }

    let mesh = TriangleMesh {
        vertices,
        triangles,
        vertex_normals,
        triangle_areas,
        triangle_centroids,
        vertex_obstacle,
        triangle_obstacle,
    };
    let trace = BoundaryTrace {
        values: trace_re
            .into_iter()
            .zip(trace_im)
            .map(|(re, im)| Complex64::new(re, im))
            .collect(),
    };
    Ok(SampleRecord {
        scene: Scene {
            ellipsoids: header.ellipsoids,
            mesh,
            environment_half_extent: header.environment_half_extent,
        },
        problem: header.problem,
        trace,
        gmres_iterations: header.gmres_iterations as usize,
        gmres_relative_residual: header.gmres_relative_residual,
    })
}

pub fn read_sample(path: &Path) -> Result<SampleRecord, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    sample_from_bytes(&bytes)
}

fn triangle_normals(mesh: &TriangleMesh) -> Vec<Vec3> {
    mesh.triangles
        .iter()
        .map(|t| {
            let (a, b, c) = (
                mesh.vertices[t[0] as usize],
                mesh.vertices[t[1] as usize],
                mesh.vertices[t[2] as usize],
            );
            vec3::unit(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
        })
        .collect()
}

/// Solve one scene/problem pair at the ground-truth tolerance.
pub fn solve_sample(
    scene: &Scene,
    problem: &ProblemSpec,
    rtol: f64,
) -> Result<SampleRecord, DatasetError> {
    let kernel = match problem {
        ProblemSpec::LaplaceDirichlet { .. } => Kernel::Laplace,
        ProblemSpec::HelmholtzDirichlet { wavenumber, .. } => {
            Kernel::Helmholtz { wavenumber: *wavenumber }
        }
        ProblemSpec::HelmholtzNeumann { .. } => {
            return Err(DatasetError::UnsupportedVariant(ProblemVariant::HelmholtzNeumann))
        }
    };
    let normals = triangle_normals(&scene.mesh);
    let bc = boundary_condition(problem, &scene.mesh.triangle_centroids, &normals)?;
    let solution = solve_dirichlet(&scene.mesh, kernel, &bc, rtol)?;
    Ok(SampleRecord {
        scene: scene.clone(),
        problem: problem.clone(),
        trace: solution.trace,
        gmres_iterations: solution.report.iterations,
        gmres_relative_residual: solution.report.final_relative_residual,
    })
}

/// Deterministic per-sample seeds; re-draws shift into a disjoint stream.
pub fn sample_seeds(seed_base: u64, index: usize, attempt: u32) -> (u64, u64) {
    let s = seed_base
        .wrapping_add(index as u64)
        .wrapping_add(1_000_003u64.wrapping_mul(attempt as u64));
    (s, s ^ 0x9e37_79b9_7f4a_7c15)
}

/// Generate `n_samples` ground-truth records into `out_dir`.
pub fn generate_dataset(
    variant: ProblemVariant,
    n_samples: usize,
    n_obstacles: usize,
    target_edge_length: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    if variant == ProblemVariant::HelmholtzNeumann {
        return Err(DatasetError::UnsupportedVariant(variant));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let allowed_redraws = (n_samples as f64 * 0.1).ceil() as usize;
    let mut redraws = 0usize;
    let mut files = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut attempt = 0u32;
        let record = loop {
            let (scene_seed, problem_seed) = sample_seeds(seed, i, attempt);
            let result = sample_scene(n_obstacles, scene_seed, target_edge_length)
                .map_err(DatasetError::from)
                .and_then(|scene| {
                    let problem = sample_problem(variant, &scene, problem_seed)?;
                    solve_sample(&scene, &problem, GROUND_TRUTH_RTOL)
                });
            match result {
                Ok(record) => break record,
                Err(err) => {
                    redraws += 1;
                    log::warn!("sample {i} attempt {attempt} failed, re-drawing: {err}");
                    if redraws > allowed_redraws {
                        return Err(DatasetError::TooManyRedraws {
                            redraws,
                            samples: n_samples,
                            last: err.to_string(),
                        });
                    }
                    attempt += 1;
                }
            }
        };
        let name = format!("sample_{i:05}.bin");
        write_sample(&record, &out_dir.join(&name))?;
        files.push(name);
    }

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        problem: variant,
        sample_count: n_samples,
        n_obstacles,
        target_edge_length,
        rng_seed_base: seed,
        files,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Load every sample listed in a dataset directory's manifest.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SampleRecord>), DatasetError> {
    let manifest = DatasetManifest::load(dir)?;
    let records = manifest
        .sample_paths(dir)
        .iter()
        .map(|p| read_sample(p))
        .collect::<Result<Vec<_>, _>>()?;
    if records.len() != manifest.sample_count {
        return Err(DatasetError::CountMismatch(format!(
            "manifest claims {} samples, found {}",
            manifest.sample_count,
            records.len()
        )));
    }
    Ok((manifest, records))
}
