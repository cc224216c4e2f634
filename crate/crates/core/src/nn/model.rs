//! The multiscale message-passing model: encoders, boundary/transition/
//! distant processor blocks, and the level expander/contraction MLPs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::features::{edge_feature_dim, node_feature_dim, FeatureConfig, FeatureTensors};
use crate::graphs::MultiscaleGraphSet;
use crate::mat::Mat;
use crate::nn::tape::{Tape, Var};
use crate::nn::NnError;
use crate::problems::ProblemVariant;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ProblemVariant,
    /// Latent width d0 at the finest level; level j uses d0 * 2^j.
    pub latent_dim: usize,
    /// Number of levels L (level 0 plus L-1 coarsened levels).
    pub levels: usize,
    /// Boundary processor blocks at entry and again at exit.
    pub n_boundary_blocks: usize,
    /// Processor blocks on the distant-nodes graph.
    pub n_distant_blocks: usize,
    pub feature: FeatureConfig,
}

impl ModelConfig {
    pub fn defaults(variant: ProblemVariant) -> Self {
        ModelConfig {
            variant,
            latent_dim: 64,
            levels: 3,
            n_boundary_blocks: 2,
            n_distant_blocks: 4,
            feature: FeatureConfig::default(),
        }
    }

    pub fn level_dim(&self, level: usize) -> usize {
        self.latent_dim << level
    }

    /// 1 output channel for Laplace, 2 (real, imaginary) for Helmholtz.
    pub fn output_dim(&self) -> usize {
        if self.variant.is_complex() {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.latent_dim == 0 || self.levels == 0 || self.n_boundary_blocks == 0 {
            return Err(NnError::BadConfig(
                "latent_dim, levels and n_boundary_blocks must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Shape of one MLP: two hidden layers, smooth activations between layers,
/// optional layer norm on the output. Hidden width equals the output width
/// for latent-to-latent maps; the decoder keeps the block's latent width so
/// its 1- or 2-channel output does not bottleneck the hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub norm: bool,
}

impl MlpSpec {
    pub fn latent(input: usize, output: usize, norm: bool) -> Self {
        MlpSpec { input, hidden: output, output, norm }
    }

    /// Tensor shapes in storage order.
    fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![
            (self.input, self.hidden),
            (1, self.hidden),
            (self.hidden, self.hidden),
            (1, self.hidden),
            (self.hidden, self.output),
            (1, self.output),
        ];
        if self.norm {
            shapes.push((1, self.output));
            shapes.push((1, self.output));
        }
        shapes
    }

    pub fn tensor_count(&self) -> usize {
        if self.norm {
            8
        } else {
            6
        }
    }
}

/// Handle to one MLP's tensors inside the flat parameter store.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpHandle {
    pub first_tensor: usize,
    pub spec: MlpSpec,
}

/// One processor block is an edge MLP followed by a node MLP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockHandles {
    pub edge_mlp: MlpHandle,
    pub node_mlp: MlpHandle,
}

/// All weights plus the block registry describing their canonical order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Arc<Mat>>,
    pub names: Vec<String>,
    pub node_encoder: MlpHandle,
    pub boundary_edge_encoder: MlpHandle,
    pub down_edge_encoders: Vec<MlpHandle>,
    pub up_edge_encoders: Vec<MlpHandle>,
    pub distant_edge_encoder: MlpHandle,
    pub boundary_in_blocks: Vec<BlockHandles>,
    pub expanders: Vec<MlpHandle>,
    pub down_blocks: Vec<BlockHandles>,
    pub distant_blocks: Vec<BlockHandles>,
    pub contractions: Vec<MlpHandle>,
    pub up_blocks: Vec<BlockHandles>,
    pub boundary_out_blocks: Vec<BlockHandles>,
}

struct ParamBuilder {
    tensors: Vec<Arc<Mat>>,
    names: Vec<String>,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    fn mlp(&mut self, name: &str, spec: MlpSpec) -> MlpHandle {
        let first_tensor = self.tensors.len();
        let suffixes: &[&str] = if spec.norm {
            &["w1", "b1", "w2", "b2", "w3", "b3", "ln_gamma", "ln_beta"]
        } else {
            &["w1", "b1", "w2", "b2", "w3", "b3"]
        };
        for ((rows, cols), suffix) in spec.tensor_shapes().into_iter().zip(suffixes) {
            let mat = match *suffix {
                "ln_gamma" => Mat::from_flat(rows, cols, vec![1.0; rows * cols]),
                s if s.starts_with('b') || s == "ln_beta" => Mat::zeros(rows, cols),
                _ => {
                    // Xavier-uniform over the layer's fan-in and fan-out.
                    let limit = (6.0 / (rows + cols) as f64).sqrt();
                    Mat::from_flat(
                        rows,
                        cols,
                        (0..rows * cols)
                            .map(|_| self.rng.random_range(-limit..limit))
                            .collect(),
                    )
                }
            };
            self.tensors.push(Arc::new(mat));
            self.names.push(format!("{name}.{suffix}"));
        }
        MlpHandle { first_tensor, spec }
    }

    fn block(&mut self, name: &str, latent: usize, node_out: usize) -> BlockHandles {
        // Edge update sees (edge, source, destination) features; node update
        // sees (node, aggregated incoming edge) features.
        let edge_mlp = self.mlp(
            &format!("{name}.edge"),
            MlpSpec::latent(3 * latent, latent, true),
        );
        // The only block whose node output width differs from its input is
        // the final decoder, which keeps latent-width hiddens and stays
        // un-normalized.
        let node_mlp = self.mlp(
            &format!("{name}.node"),
            MlpSpec { input: 2 * latent, hidden: latent, output: node_out, norm: latent == node_out },
        );
        BlockHandles { edge_mlp, node_mlp }
    }
}

impl ModelParams {
    /// Initialize all weights (Xavier uniform, seeded).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let d0 = config.latent_dim;
        let levels = config.levels;
        let node_in = node_feature_dim(&dummy_spec(config.variant), &config.feature);
        let edge_in = edge_feature_dim(&dummy_spec(config.variant), &config.feature);
        let coarse = config.level_dim(levels - 1);

        let mut b = ParamBuilder {
            tensors: Vec::new(),
            names: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };

        let node_encoder = b.mlp("node_encoder", MlpSpec::latent(node_in, d0, true));
        let boundary_edge_encoder =
            b.mlp("edge_encoder.boundary", MlpSpec::latent(edge_in, d0, true));
        let mut down_edge_encoders = Vec::new();
        let mut up_edge_encoders = Vec::new();
        for j in 1..levels {
            down_edge_encoders.push(b.mlp(
                &format!("edge_encoder.down{j}"),
                MlpSpec::latent(edge_in, config.level_dim(j), true),
            ));
            up_edge_encoders.push(b.mlp(
                &format!("edge_encoder.up{j}"),
                MlpSpec::latent(edge_in, config.level_dim(j - 1), true),
            ));
        }
        let distant_edge_encoder =
            b.mlp("edge_encoder.distant", MlpSpec::latent(edge_in, coarse, true));

        let boundary_in_blocks = (0..config.n_boundary_blocks)
            .map(|i| b.block(&format!("boundary_in{i}"), d0, d0))
            .collect();

        let mut expanders = Vec::new();
        let mut down_blocks = Vec::new();
        for j in 1..levels {
            let dj = config.level_dim(j);
            expanders.push(b.mlp(
                &format!("expander{j}"),
                MlpSpec::latent(config.level_dim(j - 1), dj, true),
            ));
            down_blocks.push(b.block(&format!("down{j}"), dj, dj));
        }

        let distant_blocks = (0..config.n_distant_blocks)
            .map(|i| b.block(&format!("distant{i}"), coarse, coarse))
            .collect();

        let mut contractions = Vec::new();
        let mut up_blocks = Vec::new();
        for j in (1..levels).rev() {
            let fine = config.level_dim(j - 1);
            contractions.push(b.mlp(
                &format!("contraction{j}"),
                MlpSpec::latent(config.level_dim(j), fine, true),
            ));
            up_blocks.push(b.block(&format!("up{j}"), fine, fine));
        }

        let n_out = config.n_boundary_blocks;
        let boundary_out_blocks = (0..n_out)
            .map(|i| {
                let node_out = if i + 1 == n_out { config.output_dim() } else { d0 };
                b.block(&format!("boundary_out{i}"), d0, node_out)
            })
            .collect();

        Ok(ModelParams {
            config: config.clone(),
            tensors: b.tensors,
            names: b.names,
            node_encoder,
            boundary_edge_encoder,
            down_edge_encoders,
            up_edge_encoders,
            distant_edge_encoder,
            boundary_in_blocks,
            expanders,
            down_blocks,
            distant_blocks,
            contractions,
            up_blocks,
            boundary_out_blocks,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

fn dummy_spec(variant: ProblemVariant) -> crate::problems::ProblemSpec {
    use crate::problems::ProblemSpec;
    match variant {
        ProblemVariant::LaplaceDirichlet => ProblemSpec::LaplaceDirichlet {
            phi: [0.0; 3],
            source: [9.0, 9.0, 9.0],
            direction: [1.0, 0.0, 0.0],
        },
        ProblemVariant::HelmholtzDirichlet => {
            ProblemSpec::HelmholtzDirichlet { source: [9.0, 9.0, 9.0], wavenumber: 1.0 }
        }
        ProblemVariant::HelmholtzNeumann => {
            ProblemSpec::HelmholtzNeumann { direction: [1.0, 0.0, 0.0], wavenumber: 1.0 }
        }
    }
}

/// Tape-resident parameter leaves, aligned with `ModelParams::tensors`.
pub struct TapeParams {
    pub vars: Vec<Var>,
}

pub fn stage_params(tape: &mut Tape, params: &ModelParams) -> TapeParams {
    let vars = params
        .tensors
        .iter()
        .map(|t| tape.leaf_shared(Arc::clone(t)))
        .collect();
    TapeParams { vars }
}

/// Apply one MLP: two hidden layers of the output width with SiLU between,
/// optional layer norm on the output.
pub fn mlp_apply(tape: &mut Tape, staged: &TapeParams, handle: &MlpHandle, input: Var) -> Var {
    let t = |i: usize| staged.vars[handle.first_tensor + i];
    let h1 = tape.matmul(input, t(0));
    let h1 = tape.add_bias(h1, t(1));
    let h1 = tape.silu(h1);
    let h2 = tape.matmul(h1, t(2));
    let h2 = tape.add_bias(h2, t(3));
    let h2 = tape.silu(h2);
    let out = tape.matmul(h2, t(4));
    let out = tape.add_bias(out, t(5));
    if handle.spec.norm {
        tape.layer_norm(out, t(6), t(7))
    } else {
        out
    }
}

/// One message-passing step on a graph given as (src, dst) index arrays.
///
/// Edge update phi_e(edge, f_src, f_dst), then node update phi_n(node, sum of
/// updated incoming edges). Residual connections are applied whenever input
/// and output widths match.
#[allow(clippy::too_many_arguments)]
pub fn processor_block(
    tape: &mut Tape,
    staged: &TapeParams,
    block: &BlockHandles,
    node_features: Var,
    edge_features: Var,
    src: &Arc<Vec<u32>>,
    dst: &Arc<Vec<u32>>,
    node_count: usize,
) -> (Var, Var) {
    let f_src = tape.gather_rows(node_features, Arc::clone(src));
    let f_dst = tape.gather_rows(node_features, Arc::clone(dst));
    let edge_in = tape.concat_cols(&[edge_features, f_src, f_dst]);
    let mut edge_out = mlp_apply(tape, staged, &block.edge_mlp, edge_in);
    if tape.value(edge_out).cols == tape.value(edge_features).cols {
        edge_out = tape.add(edge_out, edge_features);
    }
    let agg = tape.scatter_add_rows(edge_out, Arc::clone(dst), node_count);
    let node_in = tape.concat_cols(&[node_features, agg]);
    let mut node_out = mlp_apply(tape, staged, &block.node_mlp, node_in);
    if tape.value(node_out).cols == tape.value(node_features).cols {
        node_out = tape.add(node_out, node_features);
    }
    (node_out, edge_out)
}

fn split_edges(edges: &[(u32, u32)]) -> (Arc<Vec<u32>>, Arc<Vec<u32>>) {
    let src = edges.iter().map(|&(s, _)| s).collect();
    let dst = edges.iter().map(|&(_, d)| d).collect();
    (Arc::new(src), Arc::new(dst))
}

/// Build the forward graph on `tape`; returns the output variable holding
/// one d_f row per boundary node.
pub fn forward_on_tape(
    tape: &mut Tape,
    staged: &TapeParams,
    params: &ModelParams,
    graphs: &MultiscaleGraphSet,
    features: &FeatureTensors,
) -> Result<Var, NnError> {
    let cfg = &params.config;
    if graphs.levels != cfg.levels {
        return Err(NnError::BadConfig(format!(
            "graph set has {} levels, model expects {}",
            graphs.levels, cfg.levels
        )));
    }
    if features.node.cols != params.node_encoder.spec.input {
        return Err(NnError::BadConfig(format!(
            "node feature width {} does not match encoder input {}",
            features.node.cols, params.node_encoder.spec.input
        )));
    }
    let v0 = graphs.boundary.node_count();

    // Encoders.
    let node_in = tape.leaf(features.node.clone());
    let mut f_nodes = mlp_apply(tape, staged, &params.node_encoder, node_in);
    let be_in = tape.leaf(features.boundary_edges.clone());
    let mut f_bedges = mlp_apply(tape, staged, &params.boundary_edge_encoder, be_in);
    let (bsrc, bdst) = split_edges(&graphs.boundary.edges);

    // Entry boundary blocks.
    for block in &params.boundary_in_blocks {
        let (n, e) = processor_block(tape, staged, block, f_nodes, f_bedges, &bsrc, &bdst, v0);
        f_nodes = n;
        f_bedges = e;
    }

    // Down pass; cache the pre-expander features of each level for the
    // up-path initialization.
    let mut fine_cache: Vec<Var> = vec![f_nodes];
    let mut current = f_nodes;
    for (j, level) in graphs.level_nodes.iter().enumerate() {
        let expanded = mlp_apply(tape, staged, &params.expanders[j], current);
        let edge_in = tape.leaf(features.down_edges[j].clone());
        let f_edges = mlp_apply(tape, staged, &params.down_edge_encoders[j], edge_in);
        // Down edges run (fine, coarse); express coarse endpoints in the
        // fine level's indexing for message passing.
        let src: Arc<Vec<u32>> =
            Arc::new(graphs.down[j].edges.iter().map(|&(s, _)| s).collect());
        let dst: Arc<Vec<u32>> = Arc::new(
            graphs.down[j]
                .edges
                .iter()
                .map(|&(_, d)| level.parent_index[d as usize] as u32)
                .collect(),
        );
        let fine_count = graphs.level_positions(j).len();
        let (updated, _) = processor_block(
            tape,
            staged,
            &params.down_blocks[j],
            expanded,
            f_edges,
            &src,
            &dst,
            fine_count,
        );
        // Coarse node features: rows of the representatives.
        let reps: Arc<Vec<u32>> =
            Arc::new(level.parent_index.iter().map(|&i| i as u32).collect());
        current = tape.gather_rows(updated, reps);
        if j + 1 < graphs.level_nodes.len() {
            fine_cache.push(current);
        }
    }

    // Distant-nodes blocks at the coarsest level. An edgeless distant graph
    // (single occupied cell) still runs the node updates with zero aggregate.
    {
        let edge_in = tape.leaf(features.distant_edges.clone());
        let mut f_dedges = mlp_apply(tape, staged, &params.distant_edge_encoder, edge_in);
        let (dsrc, ddst) = split_edges(&graphs.distant.edges);
        let coarse_count = graphs.distant.node_count();
        for block in &params.distant_blocks {
            let (n, e) =
                processor_block(tape, staged, block, current, f_dedges, &dsrc, &ddst, coarse_count);
            current = n;
            f_dedges = e;
        }
    }

    // Up pass: coarse features are contracted to the finer width, written
    // over the cached fine features at the shared nodes, then one block runs
    // on the upsampling graph.
    for (slot, j) in (1..cfg.levels).rev().enumerate() {
        let level = &graphs.level_nodes[j - 1];
        let contracted = mlp_apply(tape, staged, &params.contractions[slot], current);
        let base = fine_cache[j - 1];
        let shared: Arc<Vec<u32>> =
            Arc::new(level.parent_index.iter().map(|&i| i as u32).collect());
        let init = tape.overwrite_rows(base, contracted, Arc::clone(&shared));

        let edge_in = tape.leaf(features.up_edges[j - 1].clone());
        let f_edges = mlp_apply(tape, staged, &params.up_edge_encoders[j - 1], edge_in);
        // Up edges run (coarse, fine); map the coarse endpoint into the fine
        // level's indexing.
        let src: Arc<Vec<u32>> = Arc::new(
            graphs.up[j - 1]
                .edges
                .iter()
                .map(|&(s, _)| level.parent_index[s as usize] as u32)
                .collect(),
        );
        let dst: Arc<Vec<u32>> =
            Arc::new(graphs.up[j - 1].edges.iter().map(|&(_, d)| d).collect());
        let fine_count = graphs.level_positions(j - 1).len();
        let (updated, _) = processor_block(
            tape,
            staged,
            &params.up_blocks[slot],
            init,
            f_edges,
            &src,
            &dst,
            fine_count,
        );
        current = updated;
    }

    // Exit boundary blocks; the last node update decodes to d_f.
    for block in &params.boundary_out_blocks {
        let (n, e) = processor_block(tape, staged, block, current, f_bedges, &bsrc, &bdst, v0);
        current = n;
        f_bedges = e;
    }
    Ok(current)
}

/// Inference: predicted trace channels, one row per boundary node.
pub fn model_forward(
    params: &ModelParams,
    graphs: &MultiscaleGraphSet,
    features: &FeatureTensors,
) -> Result<Mat, NnError> {
    let mut tape = Tape::new();
    let staged = stage_params(&mut tape, params);
    let out = forward_on_tape(&mut tape, &staged, params, graphs, features)?;
    Ok(tape.value(out).clone())
}

/// Loss and parameter gradients for one sample.
pub fn forward_loss_grads(
    params: &ModelParams,
    graphs: &MultiscaleGraphSet,
    features: &FeatureTensors,
    target: &Mat,
    huber_delta: f64,
) -> Result<(f64, Vec<Mat>), NnError> {
    let mut tape = Tape::new();
    let staged = stage_params(&mut tape, params);
    let out = forward_on_tape(&mut tape, &staged, params, graphs, features)?;
    let loss = tape.huber_mean(out, target.clone(), huber_delta);
    let loss_value = tape.value(loss).data[0];
    let grads = tape.backward(loss);
    let param_grads = staged
        .vars
        .iter()
        .enumerate()
        .map(|(i, v)| {
            grads[v.0].clone().unwrap_or_else(|| {
                let t = &params.tensors[i];
                Mat::zeros(t.rows, t.cols)
            })
        })
        .collect();
    Ok((loss_value, param_grads))
}

/// Loss only (no gradients), for evaluation loops.
pub fn forward_loss(
    params: &ModelParams,
    graphs: &MultiscaleGraphSet,
    features: &FeatureTensors,
    target: &Mat,
    huber_delta: f64,
) -> Result<f64, NnError> {
    let mut tape = Tape::new();
    let staged = stage_params(&mut tape, params);
    let out = forward_on_tape(&mut tape, &staged, params, graphs, features)?;
    let loss = tape.huber_mean(out, target.clone(), huber_delta);
    Ok(tape.value(loss).data[0])
}
