//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values (visible under --nocapture).

mod common;

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;

use mscat::bem::{
    assemble_system, evaluate_single_layer_potential, gmres, greens, solve_dirichlet, Kernel,
};
use mscat::dataset::{
    generate_dataset, load_dataset, sample_seeds, solve_sample, SampleRecord,
};
use mscat::features::{build_features, FeatureConfig};
use mscat::geometry::{mesh_ellipsoid, sample_scene, Ellipsoid};
use mscat::graphs::{
    build_multiscale_graphs, required_distant_edges, select_distant_edges,
    select_distant_edges_raw, GraphParams,
};
use mscat::metrics::{err_ampl, err_angle, err_rel, evaluate_model, evaluate_model_seeds};
use mscat::nn::model::{forward_loss, forward_loss_grads, ModelConfig, ModelParams};
use mscat::nn::{rotate_sample, trace_target, train, TrainConfig};
use mscat::problems::{sample_problem, ProblemVariant};
use mscat::vec3::{self, Vec3};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pass(criterion: usize, name: &str, detail: String) {
    println!("ACCEPTANCE {criterion:>2} ({name}): PASS — {detail}");
}

#[test]
fn acceptance_01_sphere_laplace_oracle() {
    let start = Instant::now();
    let sphere = Ellipsoid { center: [0.0; 3], semi_axes: [1.0; 3] };
    let mesh = mesh_ellipsoid(&sphere, 0.3).unwrap();
    let rhs = vec![Complex64::new(1.0, 0.0); mesh.triangle_count()];
    let sol = solve_dirichlet(&mesh, Kernel::Laplace, &rhs, 1e-5).unwrap();
    let worst_density = sol
        .density
        .iter()
        .map(|p| (p.re + 1.0).abs())
        .fold(0.0, f64::max);
    assert!(worst_density < 0.02, "density deviation {worst_density}");

    let points: Vec<Vec3> = common::sphere_directions(6)
        .into_iter()
        .map(|d| vec3::scale(d, 2.0))
        .collect();
    let vals = evaluate_single_layer_potential(&mesh, Kernel::Laplace, &sol.density, &points, &[]);
    let worst_pot = vals
        .iter()
        .map(|v| (v.re - 0.5).abs() / 0.5)
        .fold(0.0, f64::max);
    assert!(worst_pot < 0.02, "potential deviation {worst_pot}");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "runtime {elapsed:.2}s exceeds 10s");
    pass(
        1,
        "sphere Laplace oracle",
        format!(
            "max |p+1| {worst_density:.4}, max |u(2)-0.5|/0.5 {worst_pot:.4}, {elapsed:.2}s"
        ),
    );
}

#[test]
fn acceptance_02_manufactured_helmholtz_oracle() {
    let start = Instant::now();
    let kernel = Kernel::Helmholtz { wavenumber: 3.0 };
    let sphere = Ellipsoid { center: [0.0; 3], semi_axes: [1.0; 3] };
    let mesh = mesh_ellipsoid(&sphere, 0.15).unwrap();
    let x_int: Vec3 = [0.2, -0.1, 0.15];
    let rhs: Vec<Complex64> = mesh
        .triangle_centroids
        .iter()
        .map(|&c| greens(kernel, c, x_int).unwrap())
        .collect();
    let sol = solve_dirichlet(&mesh, kernel, &rhs, 1e-6).unwrap();

    // 20 probes with 2 < ||x|| < 5.
    let points: Vec<Vec3> = common::sphere_directions(20)
        .iter()
        .enumerate()
        .map(|(i, &d)| vec3::scale(d, 2.0 + 3.0 * (i as f64 + 0.5) / 20.0))
        .collect();
    let vals = evaluate_single_layer_potential(&mesh, kernel, &sol.density, &points, &[]);
    let mut worst = 0.0f64;
    for (x, v) in points.iter().zip(&vals) {
        let exact = greens(kernel, *x, x_int).unwrap();
        worst = worst.max((v - exact).norm() / exact.norm());
    }
    assert!(worst < 0.02, "field deviation {worst}");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "runtime {elapsed:.2}s exceeds 30s");
    pass(
        2,
        "manufactured Helmholtz oracle",
        format!("max relative field error {worst:.4} over 20 probes, {elapsed:.2}s"),
    );
}

/// Independent dense matvec for the residual recomputation.
fn naive_matvec(matrix: &[Complex64], x: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            acc += matrix[i * n + j] * x[j];
        }
        y[i] = acc;
    }
    y
}

#[test]
fn acceptance_03_gmres_contract() {
    // Ground-truth samples: the recomputed residual stays below rtol ||u||.
    let tmp = tempfile::tempdir().unwrap();
    let mut worst_residual = 0.0f64;
    let mut checked = 0;
    for (variant, seed) in [
        (ProblemVariant::LaplaceDirichlet, 150u64),
        (ProblemVariant::HelmholtzDirichlet, 260u64),
    ] {
        let dir = tmp.path().join(format!("{variant}"));
        generate_dataset(variant, 4, 3, 0.45, seed, &dir).unwrap();
        let (_, records) = load_dataset(&dir).unwrap();
        for (i, record) in records.iter().enumerate() {
            // The pipeline is deterministic: re-deriving the sample from its
            // stored scene and problem reproduces the stored solution.
            let redone = solve_sample(&record.scene, &record.problem, 1e-5).unwrap();
            assert_eq!(redone.trace, record.trace, "sample {i} trace not reproduced");
            let kernel = match record.problem.variant() {
                ProblemVariant::LaplaceDirichlet => Kernel::Laplace,
                _ => Kernel::Helmholtz { wavenumber: record.wavenumber().unwrap() },
            };
            let normals: Vec<Vec3> = (0..record.scene.mesh.triangle_count())
                .map(|t| {
                    let tri = record.scene.mesh.triangles[t];
                    let (a, b, c) = (
                        record.scene.mesh.vertices[tri[0] as usize],
                        record.scene.mesh.vertices[tri[1] as usize],
                        record.scene.mesh.vertices[tri[2] as usize],
                    );
                    vec3::unit(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
                })
                .collect();
            let bc = mscat::problems::boundary_condition(
                &record.problem,
                &record.scene.mesh.triangle_centroids,
                &normals,
            )
            .unwrap();
            let system = assemble_system(&record.scene.mesh, kernel, &bc).unwrap();
            let ax = naive_matvec(&system.matrix, &redone_density(&redone), system.n);
            let resid = bc
                .iter()
                .zip(&ax)
                .map(|(b, a)| (b - a).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let bnorm = bc.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
            let rel = resid / bnorm;
            assert!(rel <= 1e-5, "sample {i} relative residual {rel:.3e}");
            worst_residual = worst_residual.max(rel);
            checked += 1;
        }
    }

    // GMRES matches dense LU on random 20x20 complex systems to 1e-8.
    use nalgebra::{DMatrix, DVector};
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_lu = 0.0f64;
    for _ in 0..5 {
        let n = 20;
        let mut a = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                a[i * n + j] = if i == j { z + Complex64::new(6.0, 0.0) } else { z };
            }
        }
        let b: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let (x, report) = gmres(|v| naive_matvec(&a, v, n), &b, 1e-10, 100);
        assert!(report.converged);
        let na = DMatrix::from_fn(n, n, |i, j| a[i * n + j]);
        let lu = na.lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for i in 0..n {
            worst_lu = worst_lu.max((x[i] - lu[i]).norm());
        }
    }
    assert!(worst_lu < 1e-8, "GMRES vs LU deviation {worst_lu:.3e}");
    pass(
        3,
        "GMRES contract",
        format!(
            "{checked} samples, worst recomputed residual {worst_residual:.3e} <= 1e-5; GMRES vs LU {worst_lu:.2e}"
        ),
    );
}

fn redone_density(record: &SampleRecord) -> Vec<Complex64> {
    // solve_sample does not persist the density; reconstruct it by solving
    // once more (deterministic) and return the per-triangle values.
    let kernel = match record.problem.variant() {
        ProblemVariant::LaplaceDirichlet => Kernel::Laplace,
        _ => Kernel::Helmholtz { wavenumber: record.wavenumber().unwrap() },
    };
    let normals: Vec<Vec3> = (0..record.scene.mesh.triangle_count())
        .map(|t| {
            let tri = record.scene.mesh.triangles[t];
            let (a, b, c) = (
                record.scene.mesh.vertices[tri[0] as usize],
                record.scene.mesh.vertices[tri[1] as usize],
                record.scene.mesh.vertices[tri[2] as usize],
            );
            vec3::unit(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
        })
        .collect();
    let bc = mscat::problems::boundary_condition(
        &record.problem,
        &record.scene.mesh.triangle_centroids,
        &normals,
    )
    .unwrap();
    solve_dirichlet(&record.scene.mesh, kernel, &bc, 1e-5)
        .unwrap()
        .density
}

#[test]
fn acceptance_04_graph_invariants() {
    let mut distant_checked = 0;
    for seed in 0..100u64 {
        let scene = sample_scene(3, 1000 + seed, 0.35).unwrap();
        // Default base cell plus a finer one so the coarsest level is
        // populated enough to exercise the distant-graph contract.
        for base_cell in [0.7, 0.25] {
            let params = GraphParams { levels: 3, base_cell, alpha: 0.1, n_c: 2, seed };
            let set = build_multiscale_graphs(&scene.mesh, 5.0, &params).unwrap();

            // Subset property p(V^j) within p(V^{j-1}).
            let mut prev: Vec<Vec3> = set.boundary.node_positions.clone();
            for (j, level) in set.level_nodes.iter().enumerate() {
                for (pos, &parent) in level.positions.iter().zip(&level.parent_index) {
                    assert_eq!(*pos, prev[parent], "subset violated at level {}", j + 1);
                }
                // Down-graph out-degree exactly 1; up graph is the transpose.
                let mut deg = vec![0usize; prev.len()];
                for &(s, d) in &set.down[j].edges {
                    deg[s as usize] += 1;
                    assert!((d as usize) < level.positions.len());
                }
                assert!(deg.iter().all(|&c| c == 1), "down out-degree != 1");
                let transposed: Vec<(u32, u32)> =
                    set.up[j].edges.iter().map(|&(a, b)| (b, a)).collect();
                assert_eq!(transposed, set.down[j].edges);
                prev = level.positions.clone();
            }

            // Distant graph: raw out-degree = E_req, symmetric loop-free set.
            let coarse = &set.distant.node_positions;
            if coarse.len() >= 2 {
                let raw = select_distant_edges_raw(coarse, 0.1, 2, seed).unwrap();
                let e_req = required_distant_edges(coarse.len(), 0.1);
                let mut deg = vec![0usize; coarse.len()];
                for &(s, _) in &raw {
                    deg[s as usize] += 1;
                }
                assert!(deg.iter().all(|&c| c == e_req), "raw out-degree != E_req");
                distant_checked += 1;
            }
            let edges: std::collections::HashSet<(u32, u32)> =
                set.distant.edges.iter().copied().collect();
            assert_eq!(edges.len(), set.distant.edges.len(), "duplicate edges");
            for &(s, d) in &set.distant.edges {
                assert_ne!(s, d, "self loop");
                assert!(edges.contains(&(d, s)), "asymmetric edge ({s},{d})");
            }
        }
    }
    assert!(distant_checked >= 100, "only {distant_checked} distant graphs were non-trivial");
    pass(
        4,
        "graph invariants",
        format!("100 scenes x 2 cell sizes, {distant_checked} distant graphs exercised"),
    );
}

#[test]
fn acceptance_05_edge_selection_statistics() {
    // Fixed point set: 40 uniform points in the environment box.
    let mut rng = ChaCha8Rng::seed_from_u64(4040);
    let positions: Vec<Vec3> = (0..40)
        .map(|_| {
            [
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ]
        })
        .collect();
    let mean_len = |n_c: usize, seeds: std::ops::Range<u64>| -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in seeds {
            let raw = select_distant_edges_raw(&positions, 0.1, n_c, seed).unwrap();
            for (s, d) in raw {
                total += vec3::dist(positions[s as usize], positions[d as usize]);
                count += 1;
            }
        }
        total / count as f64
    };
    let mean1 = mean_len(1, 0..10_000);
    let mean2 = mean_len(2, 0..10_000);
    assert!(
        mean2 < mean1,
        "n_c = 2 mean {mean2:.4} not below n_c = 1 mean {mean1:.4}"
    );

    // n_c = |V| - 1 reproduces exact nearest-neighbor selection.
    let e_req = required_distant_edges(positions.len(), 0.1);
    for seed in [0u64, 1, 2, 3, 4] {
        let raw = select_distant_edges_raw(&positions, 0.1, positions.len() - 1, seed).unwrap();
        for u in 0..positions.len() {
            let mut others: Vec<u32> =
                (0..positions.len() as u32).filter(|&v| v as usize != u).collect();
            others.sort_by(|&a, &b| {
                vec3::dist(positions[u], positions[a as usize])
                    .partial_cmp(&vec3::dist(positions[u], positions[b as usize]))
                    .unwrap()
            });
            let got: Vec<u32> = raw
                .iter()
                .filter(|&&(s, _)| s as usize == u)
                .map(|&(_, d)| d)
                .collect();
            assert_eq!(got, others[..e_req].to_vec(), "seed {seed}, node {u}");
        }
    }
    pass(
        5,
        "edge-selection statistics",
        format!("mean length n_c=2 {mean2:.4} < n_c=1 {mean1:.4}; n_c=39 = greedy NN"),
    );
}

#[test]
fn acceptance_06_differentiability() {
    // Tiny configuration d0 = 8, L = 2; >= 20 random parameters within 1e-4.
    let scene = sample_scene(2, 21, 0.8).unwrap();
    let problem = sample_problem(ProblemVariant::LaplaceDirichlet, &scene, 3).unwrap();
    let record = solve_sample(&scene, &problem, 1e-4).unwrap();
    let cfg = ModelConfig {
        variant: ProblemVariant::LaplaceDirichlet,
        latent_dim: 8,
        levels: 2,
        n_boundary_blocks: 1,
        n_distant_blocks: 1,
        feature: FeatureConfig::default(),
    };
    let gp = GraphParams { levels: 2, base_cell: 0.4, alpha: 0.2, n_c: 2, seed: 5 };
    let params = ModelParams::init(&cfg, 11).unwrap();
    let graphs = build_multiscale_graphs(&record.scene.mesh, 5.0, &gp).unwrap();
    let features = build_features(&record.problem, &graphs, &cfg.feature).unwrap();
    let target = trace_target(&record, cfg.output_dim());

    let (_, grads) = forward_loss_grads(&params, &graphs, &features, &target, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut attempts = 0;
    while checked < 20 && attempts < 200 {
        attempts += 1;
        let ti = rng.random_range(0..params.tensors.len());
        let ei = rng.random_range(0..params.tensors[ti].data.len());
        let analytic = grads[ti].data[ei];
        let h = 1e-5;
        let mut eval = |offset: f64| {
            let mut p = params.clone();
            let mut t = (*p.tensors[ti]).clone();
            t.data[ei] += offset;
            p.tensors[ti] = Arc::new(t);
            forward_loss(&p, &graphs, &features, &target, 1.0).unwrap()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let denom = fd.abs().max(analytic.abs());
        if denom < 1e-7 {
            continue;
        }
        let rel = (fd - analytic).abs() / denom;
        assert!(rel < 1e-4, "tensor {ti} entry {ei}: relative gap {rel:.3e}");
        worst = worst.max(rel);
        checked += 1;
    }
    assert!(checked >= 20);
    pass(
        6,
        "differentiability",
        format!("{checked} parameters checked, worst relative gap {worst:.2e}"),
    );
}

#[test]
fn acceptance_07_equivariance() {
    // Permutation equivariance, bitwise: covered on the built graphs.
    let scene = sample_scene(2, 21, 0.8).unwrap();
    let problem = sample_problem(ProblemVariant::HelmholtzDirichlet, &scene, 3).unwrap();
    let record = solve_sample(&scene, &problem, 1e-4).unwrap();
    let cfg = ModelConfig {
        variant: ProblemVariant::HelmholtzDirichlet,
        latent_dim: 8,
        levels: 2,
        n_boundary_blocks: 1,
        n_distant_blocks: 1,
        feature: FeatureConfig::default(),
    };
    let gp = GraphParams { levels: 2, base_cell: 0.4, alpha: 0.2, n_c: 2, seed: 5 };
    let params = ModelParams::init(&cfg, 23).unwrap();
    let graphs = build_multiscale_graphs(&record.scene.mesh, 5.0, &gp).unwrap();
    let features = build_features(&record.problem, &graphs, &cfg.feature).unwrap();
    let out = mscat::nn::model::model_forward(&params, &graphs, &features).unwrap();

    let n = graphs.boundary.node_count();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut pg = graphs.clone();
    let mut pf = features.clone();
    let mut positions = vec![[0.0; 3]; n];
    let mut origin = vec![0usize; n];
    let mut node_rows = mscat::mat::Mat::zeros(n, pf.node.cols);
    for (old, &new) in perm.iter().enumerate() {
        positions[new] = pg.boundary.node_positions[old];
        origin[new] = pg.boundary.node_origin[old];
        node_rows.row_mut(new).copy_from_slice(pf.node.row(old));
    }
    pg.boundary.node_positions = positions;
    pg.boundary.node_origin = origin;
    pf.node = node_rows;
    for e in pg.boundary.edges.iter_mut() {
        *e = (perm[e.0 as usize] as u32, perm[e.1 as usize] as u32);
    }
    for p in pg.level_nodes[0].parent_index.iter_mut() {
        *p = perm[*p];
    }
    for o in pg.level_nodes[0].origin_vertex.iter_mut() {
        *o = perm[*o];
    }
    for e in pg.down[0].edges.iter_mut() {
        e.0 = perm[e.0 as usize] as u32;
    }
    for e in pg.up[0].edges.iter_mut() {
        e.1 = perm[e.1 as usize] as u32;
    }
    let pout = mscat::nn::model::model_forward(&params, &pg, &pf).unwrap();
    for old in 0..n {
        assert_eq!(out.row(old), pout.row(perm[old]), "row {old} not bitwise equal");
    }

    // Rotation: scalar feature slots bitwise unchanged under an exactly
    // representable rotation (quarter turn about z), directions rotated.
    let quarter: vec3::Mat3 = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
    let rotated = rotate_sample(&record, &quarter);
    let rf = {
        let rg = build_multiscale_graphs(&rotated.scene.mesh, 5.0, &gp).unwrap();
        // Same topology: octree binning commutes with this axis-aligned
        // quarter turn only up to cell boundaries, so compare node features
        // on the boundary graph, whose node order is the vertex order.
        assert_eq!(rg.boundary.node_count(), graphs.boundary.node_count());
        build_features(&rotated.problem, &rg, &cfg.feature).unwrap()
    };
    let pe_dim = cfg.feature.pe_dim();
    for i in 0..n {
        let (a, b) = (features.node.row(i), rf.node.row(i));
        // Helmholtz Dirichlet layout: PE, direction (3), k, sin, cos.
        assert_eq!(&a[..pe_dim], &b[..pe_dim], "PE slots changed at node {i}");
        assert_eq!(&a[pe_dim + 3..], &b[pe_dim + 3..], "phase slots changed at node {i}");
        let dir: Vec3 = [a[pe_dim], a[pe_dim + 1], a[pe_dim + 2]];
        let want = vec3::mat3_apply(&quarter, dir);
        let got: Vec3 = [b[pe_dim], b[pe_dim + 1], b[pe_dim + 2]];
        assert_eq!(want, got, "direction slot not rotated at node {i}");
    }

    // Generic random rotations keep the scalar slots to round-off.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let rot = mscat::nn::train::random_rotation(&mut rng);
    let rotated = rotate_sample(&record, &rot);
    let rg = build_multiscale_graphs(&rotated.scene.mesh, 5.0, &gp).unwrap();
    let rf = build_features(&rotated.problem, &rg, &cfg.feature).unwrap();
    for i in 0..n {
        let (a, b) = (features.node.row(i), rf.node.row(i));
        for (x, y) in a[..pe_dim].iter().zip(&b[..pe_dim]) {
            assert!((x - y).abs() < 1e-9, "PE drifted at node {i}");
        }
    }
    pass(
        7,
        "equivariance",
        format!("bitwise permutation equivariance over {n} nodes; quarter-turn scalars bitwise stable"),
    );
}

#[test]
fn acceptance_08_desk_scale_learning() {
    let start = Instant::now();
    let edge = 0.3;
    let make = |count: usize, seed: u64| -> Vec<SampleRecord> {
        (0..count)
            .map(|i| {
                let (scene_seed, problem_seed) = sample_seeds(seed, i, 0);
                let scene = sample_scene(3, scene_seed, edge).unwrap();
                let problem =
                    sample_problem(ProblemVariant::LaplaceDirichlet, &scene, problem_seed).unwrap();
                solve_sample(&scene, &problem, 1e-5).unwrap()
            })
            .collect()
    };
    let train_set = make(256, 8000);
    let held_out = make(32, 9000);

    let model_cfg = ModelConfig::defaults(ProblemVariant::LaplaceDirichlet);
    let graph_params = GraphParams::defaults_for_edge_length(edge);
    // Desk-scale optimizer settings; the model architecture is the default.
    let train_cfg = TrainConfig {
        epochs: 50,
        batch_size: 4,
        lr_start: 1e-3,
        lr_end: 1e-6,
        seed: 1,
        ..TrainConfig::default()
    };
    let (params, stats) = train(&train_set, &model_cfg, &graph_params, &train_cfg, |s| {
        if s.epoch % 10 == 0 {
            println!("  epoch {:>2}: loss {:.6e}", s.epoch, s.mean_loss);
        }
    })
    .unwrap();
    let first = stats.first().unwrap().mean_loss;
    let last = stats.last().unwrap().mean_loss;
    assert!(last < 0.5 * first, "loss at epoch 50 {last:.4e} >= half of epoch 1 {first:.4e}");

    // Best constant predictor: the held-out dataset's mean trace value.
    let mut total = Complex64::new(0.0, 0.0);
    let mut count = 0usize;
    for r in &held_out {
        for z in &r.trace.values {
            total += z;
            count += 1;
        }
    }
    let constant = total / count as f64;
    let mut const_errs = Vec::new();
    for r in &held_out {
        let pred = vec![constant; r.trace.values.len()];
        const_errs.push(err_rel(&pred, &r.trace.values).unwrap());
    }
    let const_err = const_errs.iter().sum::<f64>() / const_errs.len() as f64;

    let report = evaluate_model(&params, &held_out, &graph_params).unwrap();
    assert!(
        report.mean_err_rel <= 0.5 * const_err,
        "model err_rel {:.4} above half the constant baseline {:.4}",
        report.mean_err_rel,
        const_err
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 7200.0, "runtime {elapsed:.0}s exceeds 2h");
    pass(
        8,
        "desk-scale learning",
        format!(
            "epoch-1 loss {first:.3e} -> epoch-50 {last:.3e}; held-out err_rel {:.4} vs constant {:.4}; {:.0}s",
            report.mean_err_rel, const_err, elapsed
        ),
    );
}

#[test]
fn acceptance_09_metrics_unit_examples() {
    let c = Complex64::new;
    // err_rel examples.
    let p = vec![c(1.0, 0.0), c(-1.0, 0.0)];
    assert_eq!(err_rel(&p, &p).unwrap(), 0.0);
    let doubled: Vec<Complex64> = p.iter().map(|z| z * 2.0).collect();
    assert!((err_rel(&doubled, &p).unwrap() - 1.0).abs() < 1e-15);
    let reference = vec![c(1.0, 0.0), c(-1.0, 0.0)];
    let predicted = vec![c(1.1, 0.0), c(-0.8, 0.0)];
    assert!((err_rel(&predicted, &reference).unwrap() - 0.15).abs() < 1e-15);

    // err_ampl examples.
    let reference = vec![c(1.0, 0.5), c(-0.3, 0.4)];
    let rotated: Vec<Complex64> = reference
        .iter()
        .map(|z| z * Complex64::from_polar(1.0, 0.777))
        .collect();
    assert!(err_ampl(&rotated, &reference).unwrap() < 1e-15);
    let scaled: Vec<Complex64> = reference.iter().map(|z| z * 1.5).collect();
    assert!((err_ampl(&scaled, &reference).unwrap() - 0.5).abs() < 1e-15);
    let reference2 = vec![c(1.0, 0.0), c(0.0, 2.0)];
    let predicted2 = vec![c(0.0, 2.0), c(1.0, 0.0)];
    assert!((err_ampl(&predicted2, &reference2).unwrap() - 0.75).abs() < 1e-15);

    // err_angle examples and range.
    assert_eq!(err_angle(&reference, &reference).unwrap(), 0.0);
    let flipped: Vec<Complex64> = reference.iter().map(|z| -z).collect();
    assert!((err_angle(&flipped, &reference).unwrap() - std::f64::consts::PI).abs() < 1e-15);
    let a = vec![Complex64::from_polar(1.0, 3.0)];
    let b = vec![Complex64::from_polar(1.0, -3.0)];
    assert!((err_angle(&a, &b).unwrap() - (2.0 * std::f64::consts::PI - 6.0)).abs() < 1e-12);

    // Random checks: range and scale covariance.
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..100 {
        let n = rng.random_range(1..24);
        let reference: Vec<Complex64> = (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) + c(1.5, 0.0))
            .collect();
        let predicted: Vec<Complex64> = (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) + c(1.5, 0.0))
            .collect();
        let angle = err_angle(&predicted, &reference).unwrap();
        assert!((0.0..=std::f64::consts::PI).contains(&angle));
        let base = err_rel(&predicted, &reference).unwrap();
        let s = rng.random_range(0.05..20.0);
        let sp: Vec<Complex64> = predicted.iter().map(|z| z * s).collect();
        let sr: Vec<Complex64> = reference.iter().map(|z| z * s).collect();
        let scaled = err_rel(&sp, &sr).unwrap();
        assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
    }
    pass(9, "metrics unit examples", "all closed-form and random checks hold".into());
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_mscat"))
        .args(args)
        .status()
        .expect("spawn mscat");
    assert!(status.success(), "mscat {args:?} failed");
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn acceptance_10_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();

    // generate twice -> byte-identical directories.
    for run in ["g1", "g2"] {
        run_cli(&[
            "generate", "--deterministic", "--problem", "laplace", "--samples", "4",
            "--obstacles", "3", "--edge", "0.45", "--seed", "12", "--out", &p(run),
        ]);
    }
    let (g1, g2) = (dir_bytes(&tmp.path().join("g1")), dir_bytes(&tmp.path().join("g2")));
    assert_eq!(g1.len(), g2.len());
    for ((n1, b1), (n2, b2)) in g1.iter().zip(&g2) {
        assert_eq!(n1, n2);
        assert_eq!(b1, b2, "generate artifact {n1} differs");
    }

    // train twice -> byte-identical checkpoint and loss log.
    for run in ["t1", "t2"] {
        run_cli(&[
            "train", "--deterministic", "--data", &p("g1"), "--out", &p(run), "--epochs", "2",
            "--batch", "2", "--lr-start", "1e-3", "--lr-end", "1e-5", "--latent", "8",
            "--levels", "2", "--boundary-blocks", "1", "--distant-blocks", "1", "--seed", "3",
        ]);
    }
    for name in ["checkpoint.bin", "loss_log.csv", "resolved_config.json"] {
        let a = std::fs::read(tmp.path().join("t1").join(name)).unwrap();
        let b = std::fs::read(tmp.path().join("t2").join(name)).unwrap();
        assert_eq!(a, b, "train artifact {name} differs");
    }

    // eval twice with five seeds -> byte-identical outputs.
    for run in ["e1", "e2"] {
        run_cli(&[
            "eval", "--deterministic", "--model", &p("t1/checkpoint.bin"), "--data", &p("g1"),
            "--seeds", "5", "--nc", "2", "--seed", "11", "--out", &p(run),
        ]);
    }
    let (e1, e2) = (dir_bytes(&tmp.path().join("e1")), dir_bytes(&tmp.path().join("e2")));
    assert_eq!(e1.len(), e2.len());
    for ((n1, b1), (n2, b2)) in e1.iter().zip(&e2) {
        assert_eq!(n1, n2);
        assert_eq!(b1, b2, "eval artifact {n1} differs");
    }

    // Five-seed evaluation reports a small relative standard deviation.
    let (_, records) = load_dataset(&tmp.path().join("g1")).unwrap();
    let params = mscat::nn::load_checkpoint(&tmp.path().join("t1/checkpoint.bin")).unwrap();
    let gp = GraphParams { levels: 2, base_cell: 0.9, alpha: 0.1, n_c: 2, seed: 0 };
    let (summary, _) = evaluate_model_seeds(&params, &records, &gp, &[0, 1, 2, 3, 4]).unwrap();
    assert!(
        summary.rel_std_err_rel < 0.05,
        "five-seed relative std {:.4} >= 5%",
        summary.rel_std_err_rel
    );
    pass(
        10,
        "reproducibility",
        format!(
            "generate/train/eval byte-identical across runs; five-seed rel std {:.2e}",
            summary.rel_std_err_rel
        ),
    );
}
