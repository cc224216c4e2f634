//! Multiscale graph hierarchy: boundary graph, octree-coarsened node sets
//! with down/up transition edges, and the distant-nodes graph built by the
//! shortest-of-n_c-candidates edge selection.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::TriangleMesh;
use crate::vec3::{self, Vec3};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("octree coarsening needs at least one position")]
    Empty,
    #[error("levels must be >= 1, got {0}")]
    BadLevels(usize),
    #[error("alpha must be in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("n_c must be >= 1")]
    BadCandidates,
    #[error("distant-edge selection needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A directed graph over explicit node positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    pub node_positions: Vec<Vec3>,
    /// For each node, its index in the parent node set (mesh vertices for
    /// the boundary graph, the coarsest level set for the distant graph).
    pub node_origin: Vec<usize>,
    pub edges: Vec<(u32, u32)>,
}

impl DirectedGraph {
    pub fn node_count(&self) -> usize {
        self.node_positions.len()
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count()];
        for &(s, _) in &self.edges {
            deg[s as usize] += 1;
        }
        deg
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count()];
        for &(_, d) in &self.edges {
            deg[d as usize] += 1;
        }
        deg
    }

    pub fn connected_components(&self) -> usize {
        let n = self.node_count();
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(s, d) in &self.edges {
            adj[s as usize].push(d);
            adj[d as usize].push(s);
        }
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start as u32);
            while let Some(u) = stack.pop() {
                for &v in &adj[u as usize] {
                    if !seen[v as usize] {
                        seen[v as usize] = true;
                        stack.push(v);
                    }
                }
            }
        }
        components
    }
}

/// Nodes of one coarsened level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelNodes {
    pub positions: Vec<Vec3>,
    /// Index of each node in the previous (finer) level's node list.
    pub parent_index: Vec<usize>,
    /// Index of each node in the level-0 vertex list.
    pub origin_vertex: Vec<usize>,
}

/// Edges of a transition graph: down edges run (fine node, coarse node),
/// up edges are their exact transposes.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEdges {
    pub edges: Vec<(u32, u32)>,
}

/// Everything the network consumes for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleGraphSet {
    pub levels: usize,
    pub boundary: DirectedGraph,
    /// Level sets V^1 .. V^{L-1} (empty when levels == 1).
    pub level_nodes: Vec<LevelNodes>,
    pub down: Vec<TransitionEdges>,
    pub up: Vec<TransitionEdges>,
    pub distant: DirectedGraph,
}

impl MultiscaleGraphSet {
    /// Positions of level j nodes (level 0 = boundary nodes).
    pub fn level_positions(&self, j: usize) -> &[Vec3] {
        if j == 0 {
            &self.boundary.node_positions
        } else {
            &self.level_nodes[j - 1].positions
        }
    }
}

/// Graph-construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    /// Number of levels L.
    pub levels: usize,
    /// Octree cell side at multiscale level j is base_cell * 4^j.
    pub base_cell: f64,
    /// Fraction of other coarse nodes each coarse node connects to.
    pub alpha: f64,
    /// Candidate edges proposed per required distant edge.
    pub n_c: usize,
    pub seed: u64,
}

impl GraphParams {
    pub fn defaults_for_edge_length(target_edge_length: f64) -> Self {
        GraphParams {
            levels: 3,
            base_cell: 2.0 * target_edge_length,
            alpha: 0.1,
            n_c: 2,
            seed: 0,
        }
    }
}

/// Boundary graph: mesh vertices with both directions of every mesh edge.
pub fn build_boundary_graph(mesh: &TriangleMesh) -> DirectedGraph {
    let mut edges = Vec::new();
    for (a, b) in mesh.undirected_edges() {
        edges.push((a, b));
        edges.push((b, a));
    }
    DirectedGraph {
        node_positions: mesh.vertices.clone(),
        node_origin: (0..mesh.vertex_count()).collect(),
        edges,
    }
}

fn cell_key(p: Vec3, anchor: Vec3, side: f64) -> [i64; 3] {
    [
        ((p[0] - anchor[0]) / side).floor() as i64,
        ((p[1] - anchor[1]) / side).floor() as i64,
        ((p[2] - anchor[2]) / side).floor() as i64,
    ]
}

fn cell_center(key: [i64; 3], anchor: Vec3, side: f64) -> Vec3 {
    [
        anchor[0] + (key[0] as f64 + 0.5) * side,
        anchor[1] + (key[1] as f64 + 0.5) * side,
        anchor[2] + (key[2] as f64 + 0.5) * side,
    ]
}

/// Coarsen `positions` into L-1 node sets on grids of side base_cell * 4^j,
/// anchored at `anchor`. Each occupied cell is represented by the contained
/// node closest to the cell center (ties to the lowest index); every fine
/// node gets exactly one down edge to its cell representative.
pub fn octree_coarsen(
    positions: &[Vec3],
    levels: usize,
    base_cell: f64,
    anchor: Vec3,
) -> Result<(Vec<LevelNodes>, Vec<TransitionEdges>, Vec<TransitionEdges>), GraphError> {
    if positions.is_empty() {
        return Err(GraphError::Empty);
    }
    if levels < 1 {
        return Err(GraphError::BadLevels(levels));
    }
    let mut level_nodes = Vec::new();
    let mut down = Vec::new();
    let mut up = Vec::new();

    let mut prev_positions: Vec<Vec3> = positions.to_vec();
    let mut prev_origin: Vec<usize> = (0..positions.len()).collect();
    for j in 1..levels {
        let side = base_cell * 4f64.powi(j as i32);
        // Representative per occupied cell: nearest to the cell center,
        // ties resolved by the lower node index via strict improvement.
        let mut cell_order: Vec<[i64; 3]> = Vec::new();
        let mut cells: HashMap<[i64; 3], (usize, usize, f64)> = HashMap::new();
        for (i, &p) in prev_positions.iter().enumerate() {
            let key = cell_key(p, anchor, side);
            let d2 = vec3::norm_sq(vec3::sub(p, cell_center(key, anchor, side)));
            match cells.get_mut(&key) {
                None => {
                    cells.insert(key, (cell_order.len(), i, d2));
                    cell_order.push(key);
                }
                Some(entry) => {
                    if d2 < entry.2 {
                        entry.1 = i;
                        entry.2 = d2;
                    }
                }
            }
        }
        let mut parent_index = vec![0usize; cell_order.len()];
        for key in &cell_order {
            let &(ord, rep, _) = cells.get(key).unwrap();
            parent_index[ord] = rep;
        }
        let positions_j: Vec<Vec3> = parent_index.iter().map(|&i| prev_positions[i]).collect();
        let origin_j: Vec<usize> = parent_index.iter().map(|&i| prev_origin[i]).collect();

        let mut down_edges = Vec::with_capacity(prev_positions.len());
        for (i, &p) in prev_positions.iter().enumerate() {
            let key = cell_key(p, anchor, side);
            let &(ord, _, _) = cells.get(&key).unwrap();
            down_edges.push((i as u32, ord as u32));
        }
        let up_edges = down_edges.iter().map(|&(a, b)| (b, a)).collect();

        prev_positions = positions_j.clone();
        prev_origin = origin_j.clone();
        level_nodes.push(LevelNodes { positions: positions_j, parent_index, origin_vertex: origin_j });
        down.push(TransitionEdges { edges: down_edges });
        up.push(TransitionEdges { edges: up_edges });
    }
    Ok((level_nodes, down, up))
}

/// Required out-degree of the distant graph before symmetrization.
pub fn required_distant_edges(n_nodes: usize, alpha: f64) -> usize {
    let others = n_nodes.saturating_sub(1);
    ((alpha * others as f64).round() as usize).clamp(1, others.max(1))
}

/// Per-node edge selection before symmetrization: for each required edge,
/// `n_c` distinct candidates are drawn from the nodes not yet linked and the
/// shortest is kept (ties to the lowest index).
pub fn select_distant_edges_raw(
    positions: &[Vec3],
    alpha: f64,
    n_c: usize,
    rng_seed: u64,
) -> Result<Vec<(u32, u32)>, GraphError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(GraphError::BadAlpha(alpha));
    }
    if n_c < 1 {
        return Err(GraphError::BadCandidates);
    }
    let n = positions.len();
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    let e_req = required_distant_edges(n, alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut selected = Vec::with_capacity(n * e_req);
    let mut available: Vec<u32> = Vec::with_capacity(n - 1);
    for u in 0..n {
        available.clear();
        available.extend((0..n as u32).filter(|&v| v as usize != u));
        for _ in 0..e_req {
            if available.is_empty() {
                break;
            }
            let m = n_c.min(available.len());
            // Partial Fisher-Yates: the first m entries become the candidates.
            for t in 0..m {
                let pick = rng.random_range(t..available.len());
                available.swap(t, pick);
            }
            let mut winner_slot = 0usize;
            let mut winner_dist = f64::INFINITY;
            for (slot, &v) in available.iter().enumerate().take(m) {
                let d = vec3::dist(positions[u], positions[v as usize]);
                let better = d < winner_dist
                    || (d == winner_dist && v < available[winner_slot]);
                if better {
                    winner_slot = slot;
                    winner_dist = d;
                }
            }
            let winner = available.swap_remove(winner_slot);
            selected.push((u as u32, winner));
        }
    }
    Ok(selected)
}

/// Distant-nodes edges: per-node selection followed by symmetrization
/// (reverses added, duplicates removed).
pub fn select_distant_edges(
    positions: &[Vec3],
    alpha: f64,
    n_c: usize,
    rng_seed: u64,
) -> Result<Vec<(u32, u32)>, GraphError> {
    let mut edges = select_distant_edges_raw(positions, alpha, n_c, rng_seed)?;
    let reverses: Vec<(u32, u32)> = edges.iter().map(|&(a, b)| (b, a)).collect();
    edges.extend(reverses);
    edges.sort_unstable();
    edges.dedup();
    Ok(edges)
}

/// Build the full multiscale graph set for one mesh.
pub fn build_multiscale_graphs(
    mesh: &TriangleMesh,
    environment_half_extent: f64,
    params: &GraphParams,
) -> Result<MultiscaleGraphSet, GraphError> {
    let boundary = build_boundary_graph(mesh);
    let anchor = [-environment_half_extent; 3];
    let (level_nodes, down, up) =
        octree_coarsen(&boundary.node_positions, params.levels, params.base_cell, anchor)?;

    let (coarse_positions, coarse_origin): (Vec<Vec3>, Vec<usize>) = match level_nodes.last() {
        Some(level) => (level.positions.clone(), (0..level.positions.len()).collect()),
        None => (boundary.node_positions.clone(), (0..boundary.node_count()).collect()),
    };
    let edges = if coarse_positions.len() >= 2 {
        select_distant_edges(&coarse_positions, params.alpha, params.n_c, params.seed)?
    } else {
        Vec::new()
    };
    let distant = DirectedGraph {
        node_positions: coarse_positions,
        node_origin: coarse_origin,
        edges,
    };
    Ok(MultiscaleGraphSet { levels: params.levels, boundary, level_nodes, down, up, distant })
}

/// Debug dump: nodes as `id,x,y,z`, edges as `src,dst`.
pub fn write_graph_csv(
    nodes: &[Vec3],
    edges: &[(u32, u32)],
    nodes_path: &Path,
    edges_path: &Path,
) -> Result<(), GraphError> {
    let mut nf = std::fs::File::create(nodes_path)?;
    writeln!(nf, "id,x,y,z")?;
    for (i, p) in nodes.iter().enumerate() {
        writeln!(nf, "{i},{:.17e},{:.17e},{:.17e}", p[0], p[1], p[2])?;
    }
    let mut ef = std::fs::File::create(edges_path)?;
    writeln!(ef, "src,dst")?;
    for &(s, d) in edges {
        writeln!(ef, "{s},{d}")?;
    }
    Ok(())
}
