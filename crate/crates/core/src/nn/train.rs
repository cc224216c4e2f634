//! Training loop: Huber loss, AdamW with cosine learning-rate decay, global
//! gradient clipping, and random-rotation data augmentation.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::features::build_features;
use crate::graphs::{build_multiscale_graphs, GraphParams};
use crate::mat::Mat;
use crate::nn::model::{forward_loss_grads, ModelConfig, ModelParams};
use crate::nn::NnError;
use crate::problems::ProblemSpec;
use crate::vec3::{self, Mat3};
#[cfg(test)]
use crate::vec3::Vec3;

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub huber_delta: f64,
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            lr_start: 1e-4,
            lr_end: 1e-7,
            huber_delta: 1.0,
            grad_clip_norm: 1.0,
            weight_decay: 0.01,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NnError::BadConfig("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return Err(NnError::BadConfig("need 0 < lr_end <= lr_start".into()));
        }
        if !(self.huber_delta > 0.0 && self.grad_clip_norm > 0.0) {
            return Err(NnError::BadConfig("huber_delta and grad_clip_norm must be > 0".into()));
        }
        Ok(())
    }
}

/// Mean Huber loss: 0.5 r^2 inside |r| <= delta, delta (|r| - delta/2) outside.
pub fn huber_loss(pred: &Mat, target: &Mat, delta: f64) -> f64 {
    assert_eq!((pred.rows, pred.cols), (target.rows, target.cols), "loss shape mismatch");
    let n = (pred.rows * pred.cols) as f64;
    pred.data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| {
            let r = p - t;
            if r.abs() <= delta {
                0.5 * r * r
            } else {
                delta * (r.abs() - 0.5 * delta)
            }
        })
        .sum::<f64>()
        / n
}

/// Cosine decay: lr(t) = lr_end + (lr_start - lr_end) (1 + cos(pi t / T)) / 2.
pub fn cosine_lr(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total_steps == 0 {
        return lr_start;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// First-moment/second-moment state of AdamW.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect(),
            v: params.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect(),
            step: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Scale all gradients by min(1, max_norm / ||g||); returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Mat::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(scale);
        }
    }
    norm
}

/// One decoupled-weight-decay Adam update over all tensors.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &[Mat],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, grad) in grads.iter().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let theta = Arc::make_mut(&mut params.tensors[i]);
        for j in 0..grad.data.len() {
            let g = grad.data[j];
            m.data[j] = ADAM_BETA1 * m.data[j] + (1.0 - ADAM_BETA1) * g;
            v.data[j] = ADAM_BETA2 * v.data[j] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m.data[j] / bc1;
            let v_hat = v.data[j] / bc2;
            theta.data[j] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * theta.data[j]);
        }
    }
}

/// Rotate a sample by an explicit rotation matrix: vertex positions, vertex
/// normals, source location and direction vector. Labels are unchanged; the
/// analytic ellipsoid list is not touched (it is unused by training).
pub fn rotate_sample(record: &SampleRecord, rot: &Mat3) -> SampleRecord {
    let mut out = record.clone();
    let mesh = &mut out.scene.mesh;
    for v in mesh.vertices.iter_mut() {
        *v = vec3::mat3_apply(rot, *v);
    }
    for n in mesh.vertex_normals.iter_mut() {
        *n = vec3::mat3_apply(rot, *n);
    }
    // Derived triangle data recomputed from the rotated vertices.
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (a, b, c) = (
            mesh.vertices[tri[0] as usize],
            mesh.vertices[tri[1] as usize],
            mesh.vertices[tri[2] as usize],
        );
        mesh.triangle_areas[t] = 0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)));
        mesh.triangle_centroids[t] = vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0);
    }
    out.problem = match out.problem {
        ProblemSpec::LaplaceDirichlet { phi, source, direction } => ProblemSpec::LaplaceDirichlet {
            phi,
            source: vec3::mat3_apply(rot, source),
            direction: vec3::mat3_apply(rot, direction),
        },
        ProblemSpec::HelmholtzDirichlet { source, wavenumber } => ProblemSpec::HelmholtzDirichlet {
            source: vec3::mat3_apply(rot, source),
            wavenumber,
        },
        ProblemSpec::HelmholtzNeumann { direction, wavenumber } => ProblemSpec::HelmholtzNeumann {
            direction: vec3::mat3_apply(rot, direction),
            wavenumber,
        },
    };
    out
}

/// Haar-uniform random rotation from a normalized quaternion.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = (q.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Random-rotation augmentation of a sample.
pub fn rotate_augment(record: &SampleRecord, rng: &mut ChaCha8Rng) -> SampleRecord {
    let rot = random_rotation(rng);
    rotate_sample(record, &rot)
}

/// Supervision target: one row per vertex, d_f columns.
pub fn trace_target(record: &SampleRecord, output_dim: usize) -> Mat {
    let n = record.trace.values.len();
    let mut data = Vec::with_capacity(n * output_dim);
    for z in &record.trace.values {
        data.push(z.re);
        if output_dim == 2 {
            data.push(z.im);
        }
    }
    Mat::from_flat(n, output_dim, data)
}

fn mix_seed(base: u64, epoch: u64, index: u64) -> u64 {
    // splitmix64 over a combined counter.
    let mut z = base
        .wrapping_add(epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Loss and gradients for one (possibly augmented) sample visit.
fn sample_pass(
    params: &ModelParams,
    graph_params: &GraphParams,
    train_cfg: &TrainConfig,
    record: &SampleRecord,
    visit_seed: u64,
) -> Result<(f64, Vec<Mat>), NnError> {
    let rotated;
    let record = if train_cfg.augment {
        let mut rng = ChaCha8Rng::seed_from_u64(visit_seed);
        rotated = rotate_augment(record, &mut rng);
        &rotated
    } else {
        record
    };
    let gp = GraphParams { seed: visit_seed ^ 0x5bf0_3635, ..*graph_params };
    let graphs = build_multiscale_graphs(&record.scene.mesh, record.scene.environment_half_extent, &gp)?;
    let features = build_features(&record.problem, &graphs, &params.config.feature)?;
    let target = trace_target(record, params.config.output_dim());
    forward_loss_grads(params, &graphs, &features, &target, train_cfg.huber_delta)
}

/// Per-epoch progress snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr_last: f64,
    pub grad_norm_last: f64,
}

/// Train a fresh model on `records`; deterministic given the seeds in the
/// configs. Returns the trained parameters and per-epoch statistics.
pub fn train(
    records: &[SampleRecord],
    model_cfg: &ModelConfig,
    graph_params: &GraphParams,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(ModelParams, Vec<EpochStats>), NnError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if records.is_empty() {
        return Err(NnError::BadConfig("training set is empty".into()));
    }
    if graph_params.levels != model_cfg.levels {
        return Err(NnError::BadConfig(format!(
            "graph levels {} != model levels {}",
            graph_params.levels, model_cfg.levels
        )));
    }
    for r in records {
        if r.problem.variant() != model_cfg.variant {
            return Err(NnError::VariantMismatch {
                expected: model_cfg.variant,
                found: r.problem.variant(),
            });
        }
    }

    let mut params = ModelParams::init(model_cfg, train_cfg.seed)?;
    let mut state = AdamState::new(&params);
    let steps_per_epoch = records.len().div_ceil(train_cfg.batch_size);
    let total_steps = steps_per_epoch * train_cfg.epochs;
    let mut stats = Vec::with_capacity(train_cfg.epochs);

    let mut order: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..train_cfg.epochs {
        // Deterministic shuffle per epoch.
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(train_cfg.seed, epoch as u64, u64::MAX));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut lr_last = 0.0;
        let mut grad_norm_last = 0.0;
        for (step, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            let global_step = epoch * steps_per_epoch + step;
            let lr = cosine_lr(global_step, total_steps, train_cfg.lr_start, train_cfg.lr_end);

            let passes: Result<Vec<(f64, Vec<Mat>)>, NnError> = batch
                .par_iter()
                .map(|&i| {
                    let visit_seed = mix_seed(train_cfg.seed, epoch as u64, i as u64);
                    sample_pass(&params, graph_params, train_cfg, &records[i], visit_seed)
                })
                .collect();
            let passes = passes?;

            // Average in fixed sample order.
            let inv = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            let mut grads: Vec<Mat> = params
                .tensors
                .iter()
                .map(|t| Mat::zeros(t.rows, t.cols))
                .collect();
            for (loss, sample_grads) in passes {
                batch_loss += loss;
                for (acc, g) in grads.iter_mut().zip(&sample_grads) {
                    acc.add_assign(g);
                }
            }
            batch_loss *= inv;
            for g in grads.iter_mut() {
                g.scale_assign(inv);
            }

            if !batch_loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, step });
            }
            grad_norm_last = clip_global_norm(&mut grads, train_cfg.grad_clip_norm);
            adamw_step(&mut params, &grads, &mut state, lr, train_cfg.weight_decay);
            epoch_loss += batch_loss * batch.len() as f64;
            lr_last = lr;
        }
        let snapshot = EpochStats {
            epoch,
            mean_loss: epoch_loss / records.len() as f64,
            lr_last,
            grad_norm_last,
        };
        on_epoch(&snapshot);
        stats.push(snapshot);
    }
    Ok((params, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemVariant;

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        let (start, end) = (1e-4, 1e-7);
        assert_eq!(cosine_lr(0, 100, start, end), start);
        let mid = cosine_lr(50, 100, start, end);
        assert!((mid - (start + end) / 2.0).abs() < 1e-18);
        let last = cosine_lr(100, 100, start, end);
        assert!((last - end).abs() < 1e-18);
    }

    #[test]
    fn adamw_first_step_is_signed_lr() {
        // From zero moments with constant gradient g, the first update is
        // approximately -lr * sign(g) per entry (no weight decay).
        let cfg = ModelConfig {
            variant: ProblemVariant::LaplaceDirichlet,
            latent_dim: 4,
            levels: 1,
            n_boundary_blocks: 1,
            n_distant_blocks: 1,
            feature: crate::features::FeatureConfig::default(),
        };
        let mut params = ModelParams::init(&cfg, 3).unwrap();
        let before: Vec<Mat> = params.tensors.iter().map(|t| (**t).clone()).collect();
        let grads: Vec<Mat> = params
            .tensors
            .iter()
            .map(|t| Mat::from_flat(t.rows, t.cols, vec![0.37; t.data.len()]))
            .collect();
        let mut state = AdamState::new(&params);
        let lr = 1e-3;
        adamw_step(&mut params, &grads, &mut state, lr, 0.0);
        for (t, b) in params.tensors.iter().zip(&before) {
            for (after, before) in t.data.iter().zip(&b.data) {
                let delta = after - before;
                assert!((delta + lr).abs() < lr * 1e-3, "delta {delta}");
            }
        }
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut grads = vec![Mat::from_flat(1, 2, vec![3.0, 4.0])];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-15);
        let clipped = grads[0].norm_sq().sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);
        // Below the threshold nothing changes.
        let mut grads = vec![Mat::from_flat(1, 2, vec![0.3, 0.4])];
        clip_global_norm(&mut grads, 1.0);
        assert_eq!(grads[0].data, vec![0.3, 0.4]);
    }

    #[test]
    fn rotations_are_proper_and_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            assert!((vec3::mat3_det(&r) - 1.0).abs() < 1e-12);
            let a: Vec3 = [0.3, -1.2, 2.0];
            let b: Vec3 = [-0.7, 0.4, 1.1];
            let (ra, rb) = (vec3::mat3_apply(&r, a), vec3::mat3_apply(&r, b));
            assert!((vec3::dist(ra, rb) - vec3::dist(a, b)).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_rotation_preserves_sample() {
        let scene = crate::geometry::sample_scene(2, 4, 0.7).unwrap();
        let problem =
            crate::problems::sample_problem(ProblemVariant::LaplaceDirichlet, &scene, 2).unwrap();
        let record = crate::dataset::solve_sample(&scene, &problem, 1e-4).unwrap();
        let id: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let rotated = rotate_sample(&record, &id);
        assert_eq!(record, rotated);
    }

    #[test]
    fn rotation_preserves_pairwise_distances_and_labels() {
        let scene = crate::geometry::sample_scene(2, 4, 0.7).unwrap();
        let problem =
            crate::problems::sample_problem(ProblemVariant::HelmholtzDirichlet, &scene, 2).unwrap();
        let record = crate::dataset::solve_sample(&scene, &problem, 1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rotated = rotate_augment(&record, &mut rng);
        assert_eq!(record.trace, rotated.trace);
        let v = &record.scene.mesh.vertices;
        let w = &rotated.scene.mesh.vertices;
        for i in (0..v.len()).step_by(7) {
            for j in (i + 1..v.len()).step_by(13) {
                assert!((vec3::dist(v[i], v[j]) - vec3::dist(w[i], w[j])).abs() < 1e-12);
            }
        }
    }
}
