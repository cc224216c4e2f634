//! Input feature construction for nodes and edges, per problem variant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::MultiscaleGraphSet;
use crate::mat::Mat;
use crate::problems::ProblemSpec;
use crate::vec3::{self, Vec3};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("node position coincides with the source location")]
    NodeAtSource,
    #[error("pe_pairs must be >= 1")]
    BadPePairs,
    #[error("positional encoding wavelengths must satisfy 0 < min < max")]
    BadPeRange,
}

/// Sinusoidal positional-encoding ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub pe_pairs: usize,
    pub pe_min_wavelength: f64,
    pub pe_max_wavelength: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { pe_pairs: 8, pe_min_wavelength: 0.1, pe_max_wavelength: 20.0 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.pe_pairs < 1 {
            return Err(FeatureError::BadPePairs);
        }
        if !(self.pe_min_wavelength > 0.0 && self.pe_min_wavelength < self.pe_max_wavelength) {
            return Err(FeatureError::BadPeRange);
        }
        Ok(())
    }

    pub fn pe_dim(&self) -> usize {
        2 * self.pe_pairs
    }

    /// Geometric wavelength ladder over [min, max].
    pub fn wavelengths(&self) -> Vec<f64> {
        let n = self.pe_pairs;
        if n == 1 {
            return vec![self.pe_min_wavelength];
        }
        let ratio = self.pe_max_wavelength / self.pe_min_wavelength;
        (0..n)
            .map(|f| self.pe_min_wavelength * ratio.powf(f as f64 / (n - 1) as f64))
            .collect()
    }
}

/// Append sin(2 pi d / lambda_f), cos(2 pi d / lambda_f) for each ladder step.
pub fn push_sinusoidal_pe(out: &mut Vec<f64>, d: f64, cfg: &FeatureConfig) {
    for lambda in cfg.wavelengths() {
        let phase = 2.0 * std::f64::consts::PI * d / lambda;
        out.push(phase.sin());
        out.push(phase.cos());
    }
}

pub fn sinusoidal_pe(d: f64, cfg: &FeatureConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.pe_dim());
    push_sinusoidal_pe(&mut out, d, cfg);
    out
}

/// Node-feature width of a problem variant at this encoding size.
pub fn node_feature_dim(spec: &ProblemSpec, cfg: &FeatureConfig) -> usize {
    match spec {
        // PE + direction to source + wavenumber + source phase pair
        ProblemSpec::HelmholtzDirichlet { .. } => cfg.pe_dim() + 3 + 1 + 2,
        // PE + direction to source + v + the three boundary-condition terms
        ProblemSpec::LaplaceDirichlet { .. } => cfg.pe_dim() + 3 + 3 + 3,
        // v + wavenumber + plane-wave phase pair + PE to centroid + direction
        ProblemSpec::HelmholtzNeumann { .. } => 3 + 1 + 2 + cfg.pe_dim() + 3,
    }
}

/// Edge-feature width of a problem variant at this encoding size.
pub fn edge_feature_dim(spec: &ProblemSpec, cfg: &FeatureConfig) -> usize {
    match spec {
        ProblemSpec::LaplaceDirichlet { .. } => cfg.pe_dim() + 3,
        _ => cfg.pe_dim() + 3 + 1 + 2,
    }
}

/// Per-node input features on the boundary graph nodes.
pub fn node_features(
    spec: &ProblemSpec,
    positions: &[Vec3],
    cfg: &FeatureConfig,
) -> Result<Mat, FeatureError> {
    cfg.validate()?;
    let dim = node_feature_dim(spec, cfg);
    let mut data = Vec::with_capacity(positions.len() * dim);
    match spec {
        ProblemSpec::HelmholtzDirichlet { source, wavenumber } => {
            for &x in positions {
                let to_source = vec3::sub(*source, x);
                let d = vec3::norm(to_source);
                if d == 0.0 {
                    return Err(FeatureError::NodeAtSource);
                }
                push_sinusoidal_pe(&mut data, d, cfg);
                data.extend_from_slice(&vec3::scale(to_source, 1.0 / d));
                data.push(*wavenumber);
                let phase = wavenumber * d;
                data.push(phase.sin());
                data.push(phase.cos());
            }
        }
        ProblemSpec::LaplaceDirichlet { phi, source, direction } => {
            for &x in positions {
                let to_source = vec3::sub(*source, x);
                let d = vec3::norm(to_source);
                if d == 0.0 {
                    return Err(FeatureError::NodeAtSource);
                }
                push_sinusoidal_pe(&mut data, d, cfg);
                data.extend_from_slice(&vec3::scale(to_source, 1.0 / d));
                data.extend_from_slice(direction);
                // The three summands of the boundary condition at x.
                let from_source = vec3::sub(x, *source);
                data.push(-phi[0]);
                data.push(-phi[1] / d);
                data.push(-2.0 * phi[2] * vec3::dot(*direction, from_source) / d);
            }
        }
        ProblemSpec::HelmholtzNeumann { direction, wavenumber } => {
            let inv = 1.0 / positions.len() as f64;
            let mut mean = [0.0; 3];
            for &x in positions {
                mean = vec3::add(mean, x);
            }
            let mean = vec3::scale(mean, inv);
            for &x in positions {
                data.extend_from_slice(direction);
                data.push(*wavenumber);
                let phase = wavenumber * vec3::dot(x, *direction);
                data.push(phase.sin());
                data.push(phase.cos());
                let to_mean = vec3::sub(mean, x);
                let d = vec3::norm(to_mean);
                push_sinusoidal_pe(&mut data, d, cfg);
                data.extend_from_slice(&vec3::unit(to_mean));
            }
        }
    }
    Ok(Mat::from_flat(positions.len(), dim, data))
}

/// Per-edge features for one graph, given endpoint positions.
///
/// Zero-length edges (the coarse representative's own transition edge) get a
/// zero direction vector and the d = 0 encodings.
pub fn edge_features(
    spec: &ProblemSpec,
    src_positions: &[Vec3],
    dst_positions: &[Vec3],
    edges: &[(u32, u32)],
    cfg: &FeatureConfig,
) -> Result<Mat, FeatureError> {
    cfg.validate()?;
    let dim = edge_feature_dim(spec, cfg);
    let k = spec.wavenumber();
    let mut data = Vec::with_capacity(edges.len() * dim);
    for &(s, d) in edges {
        let delta = vec3::sub(dst_positions[d as usize], src_positions[s as usize]);
        let len = vec3::norm(delta);
        push_sinusoidal_pe(&mut data, len, cfg);
        data.extend_from_slice(&vec3::unit(delta));
        if let Some(k) = k {
            data.push(k);
            let phase = k * len;
            data.push(phase.sin());
            data.push(phase.cos());
        }
    }
    Ok(Mat::from_flat(edges.len(), dim, data))
}

/// Features for every graph the model consumes, in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensors {
    pub node: Mat,
    pub boundary_edges: Mat,
    /// One per down level (1..L-1).
    pub down_edges: Vec<Mat>,
    /// One per up level (1..L-1), indexed like `down_edges`.
    pub up_edges: Vec<Mat>,
    pub distant_edges: Mat,
}

/// Build all feature tensors for a sample's graph set.
pub fn build_features(
    spec: &ProblemSpec,
    graphs: &MultiscaleGraphSet,
    cfg: &FeatureConfig,
) -> Result<FeatureTensors, FeatureError> {
    let node = node_features(spec, &graphs.boundary.node_positions, cfg)?;
    let boundary_edges = edge_features(
        spec,
        &graphs.boundary.node_positions,
        &graphs.boundary.node_positions,
        &graphs.boundary.edges,
        cfg,
    )?;
    let mut down_edges = Vec::new();
    let mut up_edges = Vec::new();
    for j in 0..graphs.level_nodes.len() {
        let fine = graphs.level_positions(j);
        let coarse = graphs.level_positions(j + 1);
        down_edges.push(edge_features(spec, fine, coarse, &graphs.down[j].edges, cfg)?);
        up_edges.push(edge_features(spec, coarse, fine, &graphs.up[j].edges, cfg)?);
    }
    let distant_edges = edge_features(
        spec,
        &graphs.distant.node_positions,
        &graphs.distant.node_positions,
        &graphs.distant.edges,
        cfg,
    )?;
    Ok(FeatureTensors { node, boundary_edges, down_edges, up_edges, distant_edges })
}
