//! Python bindings: scene/mesh generation, ground-truth solves, dataset IO,
//! graph construction, training, evaluation and the trace metrics.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mscat::dataset;
use mscat::features::FeatureConfig;
use mscat::geometry;
use mscat::graphs::{build_multiscale_graphs, GraphParams};
use mscat::metrics;
use mscat::nn;
use mscat::problems::{self, ProblemVariant};

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_variant(name: &str) -> PyResult<ProblemVariant> {
    match name {
        "laplace" | "laplace_dirichlet" => Ok(ProblemVariant::LaplaceDirichlet),
        "helmholtz" | "helmholtz_dirichlet" => Ok(ProblemVariant::HelmholtzDirichlet),
        "neumann" | "helmholtz_neumann" => Ok(ProblemVariant::HelmholtzNeumann),
        other => Err(PyValueError::new_err(format!("unknown problem {other:?}"))),
    }
}

/// One generated or loaded benchmark sample.
#[pyclass]
struct SampleRecord {
    inner: dataset::SampleRecord,
}

#[pymethods]
impl SampleRecord {
    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.scene.mesh.vertex_count()
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.inner.scene.mesh.triangle_count()
    }

    #[getter]
    fn gmres_iterations(&self) -> usize {
        self.inner.gmres_iterations
    }

    #[getter]
    fn wavenumber(&self) -> Option<f64> {
        self.inner.wavenumber()
    }

    #[getter]
    fn problem(&self) -> String {
        serde_json::to_string(&self.inner.problem).unwrap_or_default()
    }

    fn vertices(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .scene
            .mesh
            .vertices
            .iter()
            .map(|v| (v[0], v[1], v[2]))
            .collect()
    }

    fn triangles(&self) -> Vec<(u32, u32, u32)> {
        self.inner
            .scene
            .mesh
            .triangles
            .iter()
            .map(|t| (t[0], t[1], t[2]))
            .collect()
    }

    /// Ground-truth boundary trace, one complex value per vertex.
    fn trace(&self) -> Vec<Complex64> {
        self.inner.trace.values.clone()
    }

    /// (boundary nodes, boundary edges, per-level node counts, distant edges)
    #[pyo3(signature = (levels=3, base_cell=0.6, alpha=0.1, n_c=2, seed=0))]
    fn graph_summary(
        &self,
        levels: usize,
        base_cell: f64,
        alpha: f64,
        n_c: usize,
        seed: u64,
    ) -> PyResult<(usize, usize, Vec<usize>, usize)> {
        let params = GraphParams { levels, base_cell, alpha, n_c, seed };
        let set = build_multiscale_graphs(
            &self.inner.scene.mesh,
            self.inner.scene.environment_half_extent,
            &params,
        )
        .map_err(runtime_err)?;
        Ok((
            set.boundary.node_count(),
            set.boundary.edges.len(),
            set.level_nodes.iter().map(|l| l.positions.len()).collect(),
            set.distant.edges.len(),
        ))
    }
}

/// Mesh one ellipsoid; returns (vertices, triangles).
#[pyfunction]
fn mesh_ellipsoid(
    center: (f64, f64, f64),
    semi_axes: (f64, f64, f64),
    target_edge_length: f64,
) -> PyResult<(Vec<(f64, f64, f64)>, Vec<(u32, u32, u32)>)> {
    let e = geometry::Ellipsoid::new(
        [center.0, center.1, center.2],
        [semi_axes.0, semi_axes.1, semi_axes.2],
    )
    .map_err(runtime_err)?;
    let mesh = geometry::mesh_ellipsoid(&e, target_edge_length).map_err(runtime_err)?;
    Ok((
        mesh.vertices.iter().map(|v| (v[0], v[1], v[2])).collect(),
        mesh.triangles.iter().map(|t| (t[0], t[1], t[2])).collect(),
    ))
}

/// Solve one random scene at the ground-truth tolerance.
#[pyfunction]
#[pyo3(signature = (problem, n_obstacles=3, edge=0.3, seed=0, rtol=1e-5))]
fn solve(problem: &str, n_obstacles: usize, edge: f64, seed: u64, rtol: f64) -> PyResult<SampleRecord> {
    let variant = parse_variant(problem)?;
    let scene = geometry::sample_scene(n_obstacles, seed, edge).map_err(runtime_err)?;
    let spec = problems::sample_problem(variant, &scene, seed ^ 0x9e37_79b9).map_err(runtime_err)?;
    let inner = dataset::solve_sample(&scene, &spec, rtol).map_err(runtime_err)?;
    Ok(SampleRecord { inner })
}

/// Generate a dataset directory; returns the list of sample files.
#[pyfunction]
#[pyo3(signature = (problem, out_dir, samples=8, n_obstacles=3, edge=0.3, seed=0))]
fn generate_dataset(
    problem: &str,
    out_dir: PathBuf,
    samples: usize,
    n_obstacles: usize,
    edge: f64,
    seed: u64,
) -> PyResult<Vec<String>> {
    let variant = parse_variant(problem)?;
    let manifest = dataset::generate_dataset(variant, samples, n_obstacles, edge, seed, &out_dir)
        .map_err(runtime_err)?;
    Ok(manifest.files)
}

#[pyfunction]
fn read_sample(path: PathBuf) -> PyResult<SampleRecord> {
    let inner = dataset::read_sample(&path).map_err(runtime_err)?;
    Ok(SampleRecord { inner })
}

#[pyfunction]
fn err_rel(predicted: Vec<Complex64>, reference: Vec<Complex64>) -> PyResult<f64> {
    metrics::err_rel(&predicted, &reference).map_err(runtime_err)
}

#[pyfunction]
fn err_ampl(predicted: Vec<Complex64>, reference: Vec<Complex64>) -> PyResult<f64> {
    metrics::err_ampl(&predicted, &reference).map_err(runtime_err)
}

#[pyfunction]
fn err_angle(predicted: Vec<Complex64>, reference: Vec<Complex64>) -> PyResult<f64> {
    metrics::err_angle(&predicted, &reference).map_err(runtime_err)
}

/// Train on a dataset directory; writes a checkpoint and returns the
/// per-epoch mean losses.
#[pyfunction]
#[pyo3(signature = (data_dir, checkpoint, epochs=10, batch=4, lr_start=1e-3, lr_end=1e-6,
                    latent=16, levels=2, boundary_blocks=1, distant_blocks=1,
                    alpha=0.1, n_c=2, seed=0, augment=true))]
#[allow(clippy::too_many_arguments)]
fn train(
    data_dir: PathBuf,
    checkpoint: PathBuf,
    epochs: usize,
    batch: usize,
    lr_start: f64,
    lr_end: f64,
    latent: usize,
    levels: usize,
    boundary_blocks: usize,
    distant_blocks: usize,
    alpha: f64,
    n_c: usize,
    seed: u64,
    augment: bool,
) -> PyResult<Vec<f64>> {
    let (manifest, records) = dataset::load_dataset(&data_dir).map_err(runtime_err)?;
    let model_cfg = nn::ModelConfig {
        variant: manifest.problem,
        latent_dim: latent,
        levels,
        n_boundary_blocks: boundary_blocks,
        n_distant_blocks: distant_blocks,
        feature: FeatureConfig::default(),
    };
    let graph_params = GraphParams {
        levels,
        base_cell: 2.0 * manifest.target_edge_length,
        alpha,
        n_c,
        seed,
    };
    let train_cfg = nn::TrainConfig {
        epochs,
        batch_size: batch,
        lr_start,
        lr_end,
        seed,
        augment,
        ..nn::TrainConfig::default()
    };
    let (params, stats) =
        nn::train(&records, &model_cfg, &graph_params, &train_cfg, |_| {}).map_err(runtime_err)?;
    nn::save_checkpoint(&params, &checkpoint).map_err(runtime_err)?;
    Ok(stats.iter().map(|s| s.mean_loss).collect())
}

/// Evaluate a checkpoint over a dataset; returns
/// (err_rel, err_ampl, err_angle, rel_std_err_rel).
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, seeds=1, n_c=2, alpha=0.1, seed=0))]
fn evaluate(
    checkpoint: PathBuf,
    data_dir: PathBuf,
    seeds: usize,
    n_c: usize,
    alpha: f64,
    seed: u64,
) -> PyResult<(f64, f64, f64, f64)> {
    if seeds == 0 {
        return Err(PyValueError::new_err("seeds must be >= 1"));
    }
    let params = nn::load_checkpoint(&checkpoint).map_err(runtime_err)?;
    let (manifest, records) = dataset::load_dataset(&data_dir).map_err(runtime_err)?;
    let gp = GraphParams {
        levels: params.config.levels,
        base_cell: 2.0 * manifest.target_edge_length,
        alpha,
        n_c,
        seed,
    };
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| seed + i).collect();
    let (summary, _) =
        metrics::evaluate_model_seeds(&params, &records, &gp, &seed_list).map_err(runtime_err)?;
    Ok((
        summary.mean_err_rel,
        summary.mean_err_ampl,
        summary.mean_err_angle,
        summary.rel_std_err_rel,
    ))
}

/// Predicted boundary trace of a stored sample under a checkpoint.
#[pyfunction]
#[pyo3(signature = (checkpoint, sample_path, n_c=2, alpha=0.1, base_cell=0.6, seed=0))]
fn predict_trace(
    checkpoint: PathBuf,
    sample_path: PathBuf,
    n_c: usize,
    alpha: f64,
    base_cell: f64,
    seed: u64,
) -> PyResult<Vec<Complex64>> {
    let params = nn::load_checkpoint(&checkpoint).map_err(runtime_err)?;
    let record = dataset::read_sample(Path::new(&sample_path)).map_err(runtime_err)?;
    let gp = GraphParams { levels: params.config.levels, base_cell, alpha, n_c, seed };
    let trace = metrics::predict_trace(&params, &record, &gp).map_err(runtime_err)?;
    Ok(trace.values)
}

#[pymodule]
fn mscat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SampleRecord>()?;
    m.add_function(wrap_pyfunction!(mesh_ellipsoid, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_sample, m)?)?;
    m.add_function(wrap_pyfunction!(err_rel, m)?)?;
    m.add_function(wrap_pyfunction!(err_ampl, m)?)?;
    m.add_function(wrap_pyfunction!(err_angle, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(predict_trace, m)?)?;
    Ok(())
}
