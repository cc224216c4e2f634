//! Trace-error metrics, obstacle dispersion, and model evaluation over a
//! dataset with optional distant-graph reseeding.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::bem::BoundaryTrace;
use crate::dataset::SampleRecord;
use crate::features::build_features;
use crate::geometry::Scene;
use crate::graphs::{build_multiscale_graphs, GraphParams};
use crate::mat::Mat;
use crate::nn::model::{model_forward, ModelParams};
use crate::nn::NnError;
use crate::vec3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trace lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("reference trace has zero total magnitude")]
    ZeroReference,
    #[error("reference trace has a zero-magnitude entry at vertex {0}")]
    ZeroEntry(usize),
    #[error("obstacle dispersion needs at least 2 obstacles")]
    SingleObstacle,
    #[error("model variant {model} does not match dataset variant {data}")]
    VariantMismatch { model: String, data: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Sum of absolute errors over the sum of reference magnitudes.
pub fn err_rel(predicted: &[Complex64], reference: &[Complex64]) -> Result<f64, MetricsError> {
    if predicted.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), reference.len()));
    }
    let denom: f64 = reference.iter().map(|z| z.norm()).sum();
    if denom == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    let num: f64 = predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r).norm())
        .sum();
    Ok(num / denom)
}

/// Mean relative amplitude error, entrywise.
pub fn err_ampl(predicted: &[Complex64], reference: &[Complex64]) -> Result<f64, MetricsError> {
    if predicted.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), reference.len()));
    }
    let mut acc = 0.0;
    for (i, (p, r)) in predicted.iter().zip(reference).enumerate() {
        let rm = r.norm();
        if rm == 0.0 {
            return Err(MetricsError::ZeroEntry(i));
        }
        acc += ((p.norm() - rm) / rm).abs();
    }
    Ok(acc / predicted.len() as f64)
}

/// Mean absolute wrapped phase error, in [0, pi].
pub fn err_angle(predicted: &[Complex64], reference: &[Complex64]) -> Result<f64, MetricsError> {
    if predicted.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), reference.len()));
    }
    let mut acc = 0.0;
    for (i, (p, r)) in predicted.iter().zip(reference).enumerate() {
        if p.norm() == 0.0 || r.norm() == 0.0 {
            return Err(MetricsError::ZeroEntry(i));
        }
        let delta = p.arg() - r.arg();
        acc += delta.sin().atan2(delta.cos()).abs();
    }
    Ok(acc / predicted.len() as f64)
}

/// Mean absolute error of the trace.
pub fn mean_absolute_error(predicted: &[Complex64], reference: &[Complex64]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r).norm())
        .sum::<f64>()
        / predicted.len() as f64
}

/// Max over obstacles of the min vertex-to-vertex distance to any other
/// obstacle.
pub fn obstacle_dispersion(scene: &Scene) -> Result<f64, MetricsError> {
    let n = scene.ellipsoids.len();
    if n < 2 {
        return Err(MetricsError::SingleObstacle);
    }
    let mesh = &scene.mesh;
    let mut per_pair = vec![vec![f64::INFINITY; n]; n];
    for (i, &vi) in mesh.vertices.iter().enumerate() {
        let oi = mesh.vertex_obstacle[i] as usize;
        for (j, &vj) in mesh.vertices.iter().enumerate().skip(i + 1) {
            let oj = mesh.vertex_obstacle[j] as usize;
            if oi == oj {
                continue;
            }
            let d = vec3::dist(vi, vj);
            if d < per_pair[oi][oj] {
                per_pair[oi][oj] = d;
                per_pair[oj][oi] = d;
            }
        }
    }
    let mut best = 0.0f64;
    for i in 0..n {
        let min_i = (0..n)
            .filter(|&j| j != i)
            .map(|j| per_pair[i][j])
            .fold(f64::INFINITY, f64::min);
        best = best.max(min_i);
    }
    Ok(best)
}

/// Per-sample evaluation row of the CSV report.
#[derive(Debug, Clone, Serialize)]
pub struct SampleMetrics {
    pub sample_id: usize,
    pub mae: f64,
    pub gmres_iterations: usize,
    pub wavenumber: f64,
    pub dispersion: f64,
    pub err_rel: f64,
    pub err_ampl: f64,
    pub err_angle: f64,
}

/// Dataset-level metric summary.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub mean_err_rel: f64,
    pub mean_err_ampl: f64,
    pub mean_err_angle: f64,
    pub per_sample: Vec<SampleMetrics>,
}

/// Mean and relative standard deviation over repeated evaluations.
#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub mean_err_rel: f64,
    pub mean_err_ampl: f64,
    pub mean_err_angle: f64,
    pub rel_std_err_rel: f64,
    pub rel_std_err_ampl: f64,
    pub rel_std_err_angle: f64,
}

fn prediction_to_trace(pred: &Mat) -> BoundaryTrace {
    let values = (0..pred.rows)
        .map(|i| {
            let row = pred.row(i);
            if pred.cols == 2 {
                Complex64::new(row[0], row[1])
            } else {
                Complex64::new(row[0], 0.0)
            }
        })
        .collect();
    BoundaryTrace { values }
}

/// Run the model on one record and return the predicted vertex trace.
pub fn predict_trace(
    params: &ModelParams,
    record: &SampleRecord,
    graph_params: &GraphParams,
) -> Result<BoundaryTrace, MetricsError> {
    let graphs = build_multiscale_graphs(
        &record.scene.mesh,
        record.scene.environment_half_extent,
        graph_params,
    )
    .map_err(NnError::from)?;
    let features = build_features(&record.problem, &graphs, &params.config.feature)
        .map_err(NnError::from)?;
    let pred = model_forward(params, &graphs, &features)?;
    Ok(prediction_to_trace(&pred))
}

/// Evaluate a model over a dataset with one distant-graph seed.
pub fn evaluate_model(
    params: &ModelParams,
    records: &[SampleRecord],
    graph_params: &GraphParams,
) -> Result<MetricReport, MetricsError> {
    let mut per_sample = Vec::with_capacity(records.len());
    for (sample_id, record) in records.iter().enumerate() {
        if record.problem.variant() != params.config.variant {
            return Err(MetricsError::VariantMismatch {
                model: params.config.variant.to_string(),
                data: record.problem.variant().to_string(),
            });
        }
        let predicted = predict_trace(params, record, graph_params)?;
        let reference = &record.trace.values;
        let complex = record.problem.variant().is_complex();
        per_sample.push(SampleMetrics {
            sample_id,
            mae: mean_absolute_error(&predicted.values, reference),
            gmres_iterations: record.gmres_iterations,
            wavenumber: record.wavenumber().unwrap_or(0.0),
            dispersion: if record.scene.ellipsoids.len() >= 2 {
                obstacle_dispersion(&record.scene)?
            } else {
                0.0
            },
            err_rel: err_rel(&predicted.values, reference)?,
            err_ampl: if complex { err_ampl(&predicted.values, reference)? } else { 0.0 },
            err_angle: if complex { err_angle(&predicted.values, reference)? } else { 0.0 },
        });
    }
    let n = records.len().max(1) as f64;
    Ok(MetricReport {
        mean_err_rel: per_sample.iter().map(|s| s.err_rel).sum::<f64>() / n,
        mean_err_ampl: per_sample.iter().map(|s| s.err_ampl).sum::<f64>() / n,
        mean_err_angle: per_sample.iter().map(|s| s.err_angle).sum::<f64>() / n,
        per_sample,
    })
}

fn mean_and_rel_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 || mean == 0.0 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / mean.abs())
}

/// Repeat evaluation over several distant-graph seeds; reports the mean and
/// relative standard deviation of each dataset-level metric.
pub fn evaluate_model_seeds(
    params: &ModelParams,
    records: &[SampleRecord],
    graph_params: &GraphParams,
    seeds: &[u64],
) -> Result<(SeedSummary, Vec<MetricReport>), MetricsError> {
    assert!(!seeds.is_empty());
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let gp = GraphParams { seed, ..*graph_params };
        reports.push(evaluate_model(params, records, &gp)?);
    }
    let rels: Vec<f64> = reports.iter().map(|r| r.mean_err_rel).collect();
    let ampls: Vec<f64> = reports.iter().map(|r| r.mean_err_ampl).collect();
    let angles: Vec<f64> = reports.iter().map(|r| r.mean_err_angle).collect();
    let (mr, sr) = mean_and_rel_std(&rels);
    let (ma, sa) = mean_and_rel_std(&ampls);
    let (mg, sg) = mean_and_rel_std(&angles);
    Ok((
        SeedSummary {
            seeds: seeds.to_vec(),
            mean_err_rel: mr,
            mean_err_ampl: ma,
            mean_err_angle: mg,
            rel_std_err_rel: sr,
            rel_std_err_ampl: sa,
            rel_std_err_angle: sg,
        },
        reports,
    ))
}

pub const CSV_HEADER: &str =
    "sample_id,mae,gmres_iterations,wavenumber,dispersion,err_rel,err_ampl,err_angle";

/// Per-sample CSV report with the fixed header above.
pub fn report_to_csv(report: &MetricReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in &report.per_sample {
        out.push_str(&format!(
            "{},{:.12e},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            s.sample_id,
            s.mae,
            s.gmres_iterations,
            s.wavenumber,
            s.dispersion,
            s.err_rel,
            s.err_ampl,
            s.err_angle
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mesh_ellipsoid, Ellipsoid, TriangleMesh};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn err_rel_closed_forms() {
        let p = vec![c(1.0, 0.0), c(-1.0, 0.0)];
        assert_eq!(err_rel(&p, &p).unwrap(), 0.0);
        let doubled: Vec<Complex64> = p.iter().map(|z| z * 2.0).collect();
        assert!((err_rel(&doubled, &p).unwrap() - 1.0).abs() < 1e-15);
        // p* = (1, -1), p_hat = (1.1, -0.8) -> 0.3 / 2 = 0.15
        let reference = vec![c(1.0, 0.0), c(-1.0, 0.0)];
        let predicted = vec![c(1.1, 0.0), c(-0.8, 0.0)];
        assert!((err_rel(&predicted, &reference).unwrap() - 0.15).abs() < 1e-15);
        assert!(matches!(
            err_rel(&[c(1.0, 0.0)], &[c(0.0, 0.0)]),
            Err(MetricsError::ZeroReference)
        ));
    }

    #[test]
    fn err_ampl_closed_forms() {
        // Pure phase rotation leaves amplitude error at zero.
        let reference = vec![c(1.0, 0.5), c(-0.3, 0.4)];
        let rotated: Vec<Complex64> = reference
            .iter()
            .map(|z| z * Complex64::from_polar(1.0, 1.234))
            .collect();
        assert!(err_ampl(&rotated, &reference).unwrap() < 1e-15);
        let scaled: Vec<Complex64> = reference.iter().map(|z| z * 1.5).collect();
        assert!((err_ampl(&scaled, &reference).unwrap() - 0.5).abs() < 1e-15);
        // |p*| = (1, 2), |p_hat| = (2, 1) -> mean(1, 0.5) = 0.75
        let reference = vec![c(1.0, 0.0), c(0.0, 2.0)];
        let predicted = vec![c(0.0, 2.0), c(1.0, 0.0)];
        assert!((err_ampl(&predicted, &reference).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(
            err_ampl(&[c(1.0, 0.0)], &[c(0.0, 0.0)]),
            Err(MetricsError::ZeroEntry(0))
        ));
    }

    #[test]
    fn err_angle_closed_forms_and_range() {
        let reference = vec![c(1.0, 1.0)];
        assert_eq!(err_angle(&reference, &reference).unwrap(), 0.0);
        // Opposite phases: pi.
        let flipped = vec![c(-1.0, -1.0)];
        assert!((err_angle(&flipped, &reference).unwrap() - std::f64::consts::PI).abs() < 1e-15);
        // Phases 3.0 vs -3.0 wrap to 2 pi - 6.
        let a = vec![Complex64::from_polar(1.0, 3.0)];
        let b = vec![Complex64::from_polar(1.0, -3.0)];
        let expected = 2.0 * std::f64::consts::PI - 6.0;
        assert!((err_angle(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn err_rel_is_scale_covariant() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(1..20);
            let reference: Vec<Complex64> = (0..n)
                .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let predicted: Vec<Complex64> = (0..n)
                .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            if reference.iter().map(|z| z.norm()).sum::<f64>() == 0.0 {
                continue;
            }
            let base = err_rel(&predicted, &reference).unwrap();
            let s = rng.random_range(0.1..10.0);
            let sp: Vec<Complex64> = predicted.iter().map(|z| z * s).collect();
            let sr: Vec<Complex64> = reference.iter().map(|z| z * s).collect();
            let scaled = err_rel(&sp, &sr).unwrap();
            assert!((base - scaled).abs() < 1e-12 * base.max(1.0));
        }
    }

    fn two_sphere_scene(gap_along_x: f64) -> Scene {
        let a = Ellipsoid { center: [0.0; 3], semi_axes: [1.0; 3] };
        let b = Ellipsoid { center: [2.0 + gap_along_x, 0.0, 0.0], semi_axes: [1.0; 3] };
        let mut mesh = mesh_ellipsoid(&a, 0.5).unwrap();
        let mb = crate::geometry::mesh_ellipsoid_with_id(&b, 0.5, 1).unwrap();
        mesh.append(mb);
        Scene { ellipsoids: vec![a, b], mesh, environment_half_extent: 5.0 }
    }

    #[test]
    fn dispersion_of_two_obstacles_is_their_gap() {
        let scene = two_sphere_scene(0.5);
        let d = obstacle_dispersion(&scene).unwrap();
        // Min vertex gap is close to (but at least) the analytic 0.5 surface gap.
        assert!(d >= 0.5 - 1e-9 && d < 0.7, "dispersion {d}");
        // Translation invariance.
        let mut moved = scene.clone();
        for v in moved.mesh.vertices.iter_mut() {
            *v = vec3::add(*v, [1.0, -2.0, 0.5]);
        }
        let dm = obstacle_dispersion(&moved).unwrap();
        assert!((d - dm).abs() < 1e-12);
    }

    #[test]
    fn dispersion_three_collinear_spheres() {
        let r = 0.5;
        let make = |x: f64| Ellipsoid { center: [x, 0.0, 0.0], semi_axes: [r; 3] };
        // Gaps of 1 and 5 between surfaces.
        let e0 = make(0.0);
        let e1 = make(2.0 * r + 1.0);
        let e2 = make((2.0 * r + 1.0) + 2.0 * r + 5.0);
        let mut mesh = TriangleMesh::empty();
        for (i, e) in [&e0, &e1, &e2].iter().enumerate() {
            mesh.append(crate::geometry::mesh_ellipsoid_with_id(e, 0.25, i as u32).unwrap());
        }
        let scene = Scene {
            ellipsoids: vec![e0, e1, e2],
            mesh,
            environment_half_extent: 10.0,
        };
        let d = obstacle_dispersion(&scene).unwrap();
        // Outer obstacle's nearest neighbor is 5 away; that's the max-min.
        assert!((d - 5.0).abs() < 0.05, "dispersion {d}");
        assert!(matches!(
            obstacle_dispersion(&Scene {
                ellipsoids: vec![make(0.0)],
                mesh: TriangleMesh::empty(),
                environment_half_extent: 5.0
            }),
            Err(MetricsError::SingleObstacle)
        ));
    }

    #[test]
    fn csv_report_shape() {
        let report = MetricReport {
            mean_err_rel: 0.1,
            mean_err_ampl: 0.2,
            mean_err_angle: 0.3,
            per_sample: vec![SampleMetrics {
                sample_id: 0,
                mae: 0.5,
                gmres_iterations: 12,
                wavenumber: 3.1,
                dispersion: 2.0,
                err_rel: 0.1,
                err_ampl: 0.2,
                err_angle: 0.3,
            }],
        };
        let csv = report_to_csv(&report);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("0,"));
    }
}
