//! Command-line entry point: dataset generation, single solves, graph dumps,
//! training, evaluation sweeps, field export and the analytic self-test.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::bem::{evaluate_single_layer_potential, greens, solve_dirichlet, Kernel};
use crate::dataset::{
    generate_dataset, load_dataset, read_sample, solve_sample, write_sample,
};
use crate::features::FeatureConfig;
use crate::fieldgrid::{evaluate_field, export_csv, export_pgm, GridSpec};
use crate::geometry::{mesh_ellipsoid, sample_scene, Ellipsoid};
use crate::graphs::{build_multiscale_graphs, write_graph_csv, GraphParams};
use crate::metrics::{evaluate_model_seeds, predict_trace, report_to_csv};
use crate::nn::{
    load_checkpoint, save_checkpoint, train, ModelConfig, TrainConfig,
};
use crate::problems::{sample_problem, ProblemVariant};
use crate::vec3;

#[derive(Parser)]
#[command(name = "mscat", version, about = "Multiple-scattering boundary traces: BEM ground truth and a multiscale graph surrogate")]
struct Cli {
    /// Worker threads (falls back to MSCAT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Force strictly ordered reductions (outputs are bit-reproducible).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth dataset.
    Generate(GenerateArgs),
    /// Solve a single random scene and write the sample.
    Solve(SolveArgs),
    /// Dump the multiscale graphs of a sample as CSV.
    Graphs(GraphsArgs),
    /// Train the surrogate on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on datasets; supports n_c and obstacle sweeps.
    Eval(EvalArgs),
    /// Reconstruct the total field on a planar grid.
    Field(FieldArgs),
    /// Run the built-in analytic oracles.
    Selftest,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Parse and dispatch; returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/version output.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = cli
        .threads
        .or_else(|| std::env::var("MSCAT_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        // Ignore the error if a pool already exists (repeated calls in-process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = RunContext { threads, deterministic: cli.deterministic };
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args, &ctx),
        Command::Solve(args) => cmd_solve(args, &ctx),
        Command::Graphs(args) => cmd_graphs(args, &ctx),
        Command::Train(args) => cmd_train(args, &ctx),
        Command::Eval(args) => cmd_eval(args, &ctx),
        Command::Field(args) => cmd_field(args, &ctx),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: config: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

struct RunContext {
    threads: Option<usize>,
    deterministic: bool,
}

#[derive(Serialize)]
struct ResolvedRun<'a, T: Serialize> {
    command: &'a str,
    deterministic: bool,
    threads: Option<usize>,
    params: &'a T,
}

fn write_resolved_config<T: Serialize>(
    dir: &Path,
    command: &str,
    ctx: &RunContext,
    params: &T,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("create {dir:?}: {e}")))?;
    let resolved = ResolvedRun {
        command,
        deterministic: ctx.deterministic,
        threads: ctx.threads,
        params,
    };
    let text = serde_json::to_string_pretty(&resolved).expect("config serialization");
    fs::write(dir.join("resolved_config.json"), text)
        .map_err(|e| CliError::Runtime(format!("write resolved config: {e}")))?;
    Ok(())
}

/// Load a JSON config file, rejecting unknown keys with a full list.
fn load_config_file<T: DeserializeOwned>(path: &Path, allowed: &[&str]) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {path:?}: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("config {path:?} is not valid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::usage(format!("config {path:?} must be a JSON object")))?;
    let offending: Vec<String> = obj
        .keys()
        .filter(|k| !allowed.contains(&k.as_str()))
        .cloned()
        .collect();
    if !offending.is_empty() {
        return Err(CliError::usage(format!(
            "unknown config keys in {path:?}: {}",
            offending.join(", ")
        )));
    }
    serde_json::from_value(value).map_err(|e| CliError::usage(format!("config {path:?}: {e}")))
}

fn parse_problem(name: &str) -> Result<ProblemVariant, CliError> {
    match name {
        "laplace" | "laplace_dirichlet" => Ok(ProblemVariant::LaplaceDirichlet),
        "helmholtz" | "helmholtz_dirichlet" => Ok(ProblemVariant::HelmholtzDirichlet),
        "neumann" | "helmholtz_neumann" => Ok(ProblemVariant::HelmholtzNeumann),
        other => Err(CliError::usage(format!(
            "unknown problem {other:?} (expected laplace, helmholtz or neumann)"
        ))),
    }
}

macro_rules! merge {
    ($cfg:expr, $($field:ident),* $(,)?) => {
        $(if let Some(v) = $field { $cfg.$field = v; })*
    };
}

// ---------------------------------------------------------------- generate

#[derive(Args)]
struct GenerateArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    obstacles: Option<usize>,
    /// Target mesh edge length.
    #[arg(long)]
    edge: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenerateConfig {
    problem: String,
    samples: usize,
    obstacles: usize,
    edge: f64,
    seed: u64,
    out: String,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            problem: "laplace".into(),
            samples: 8,
            obstacles: 3,
            edge: 0.3,
            seed: 0,
            out: "dataset".into(),
        }
    }
}

const GENERATE_KEYS: &[&str] = &["problem", "samples", "obstacles", "edge", "seed", "out"];

fn cmd_generate(args: GenerateArgs, ctx: &RunContext) -> Result<(), CliError> {
    let mut cfg: GenerateConfig = match &args.config {
        Some(path) => load_config_file(path, GENERATE_KEYS)?,
        None => GenerateConfig::default(),
    };
    let GenerateArgs { problem, samples, obstacles, edge, seed, out, .. } = args;
    let out = out.map(|p| p.to_string_lossy().into_owned());
    merge!(cfg, problem, samples, obstacles, edge, seed, out);

    let variant = parse_problem(&cfg.problem)?;
    let out_dir = PathBuf::from(&cfg.out);
    write_resolved_config(&out_dir, "generate", ctx, &cfg)?;
    let manifest = generate_dataset(
        variant,
        cfg.samples,
        cfg.obstacles,
        cfg.edge,
        cfg.seed,
        &out_dir,
    )?;
    println!(
        "generated {} {} samples ({} obstacles, edge {}) in {}",
        manifest.sample_count, manifest.problem, manifest.n_obstacles, manifest.target_edge_length,
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- solve

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    obstacles: Option<usize>,
    #[arg(long)]
    edge: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolveConfig {
    problem: String,
    obstacles: usize,
    edge: f64,
    seed: u64,
    rtol: f64,
    out: String,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            problem: "laplace".into(),
            obstacles: 3,
            edge: 0.3,
            seed: 0,
            rtol: 1e-5,
            out: "solve_run".into(),
        }
    }
}

const SOLVE_KEYS: &[&str] = &["problem", "obstacles", "edge", "seed", "rtol", "out"];

fn cmd_solve(args: SolveArgs, ctx: &RunContext) -> Result<(), CliError> {
    let mut cfg: SolveConfig = match &args.config {
        Some(path) => load_config_file(path, SOLVE_KEYS)?,
        None => SolveConfig::default(),
    };
    let SolveArgs { problem, obstacles, edge, seed, rtol, out, .. } = args;
    let out = out.map(|p| p.to_string_lossy().into_owned());
    merge!(cfg, problem, obstacles, edge, seed, rtol, out);

    let variant = parse_problem(&cfg.problem)?;
    let out_dir = PathBuf::from(&cfg.out);
    write_resolved_config(&out_dir, "solve", ctx, &cfg)?;
    let scene = sample_scene(cfg.obstacles, cfg.seed, cfg.edge)?;
    let problem = sample_problem(variant, &scene, cfg.seed ^ 0x9e37_79b9)?;
    let record = solve_sample(&scene, &problem, cfg.rtol)?;
    let path = out_dir.join("sample_00000.bin");
    write_sample(&record, &path)?;
    println!(
        "solved: vertices={} triangles={} gmres_iterations={} relative_residual={:.3e} -> {}",
        record.scene.mesh.vertex_count(),
        record.scene.mesh.triangle_count(),
        record.gmres_iterations,
        record.gmres_relative_residual,
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- graphs

#[derive(Args)]
struct GraphsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample file to build graphs for.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    base_cell: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GraphsConfig {
    input: String,
    levels: usize,
    base_cell: f64,
    alpha: f64,
    nc: usize,
    seed: u64,
    out: String,
}

impl Default for GraphsConfig {
    fn default() -> Self {
        GraphsConfig {
            input: String::new(),
            levels: 3,
            base_cell: 0.6,
            alpha: 0.1,
            nc: 2,
            seed: 0,
            out: "graphs_run".into(),
        }
    }
}

const GRAPHS_KEYS: &[&str] = &["input", "levels", "base_cell", "alpha", "nc", "seed", "out"];

fn cmd_graphs(args: GraphsArgs, ctx: &RunContext) -> Result<(), CliError> {
    let mut cfg: GraphsConfig = match &args.config {
        Some(path) => load_config_file(path, GRAPHS_KEYS)?,
        None => GraphsConfig::default(),
    };
    let GraphsArgs { input, levels, base_cell, alpha, nc, seed, out, .. } = args;
    let input = input.map(|p| p.to_string_lossy().into_owned());
    let out = out.map(|p| p.to_string_lossy().into_owned());
    merge!(cfg, input, levels, base_cell, alpha, nc, seed, out);
    if cfg.input.is_empty() {
        return Err(CliError::usage("graphs requires --input <sample file>"));
    }

    let out_dir = PathBuf::from(&cfg.out);
    write_resolved_config(&out_dir, "graphs", ctx, &cfg)?;
    let record = read_sample(Path::new(&cfg.input))?;
    let params = GraphParams {
        levels: cfg.levels,
        base_cell: cfg.base_cell,
        alpha: cfg.alpha,
        n_c: cfg.nc,
        seed: cfg.seed,
    };
    let set = build_multiscale_graphs(
        &record.scene.mesh,
        record.scene.environment_half_extent,
        &params,
    )?;
    write_graph_csv(
        &set.boundary.node_positions,
        &set.boundary.edges,
        &out_dir.join("boundary_nodes.csv"),
        &out_dir.join("boundary_edges.csv"),
    )?;
    for (j, level) in set.level_nodes.iter().enumerate() {
        let tag = j + 1;
        write_graph_csv(
            &level.positions,
            &set.down[j].edges,
            &out_dir.join(format!("level{tag}_nodes.csv")),
            &out_dir.join(format!("down{tag}_edges.csv")),
        )?;
        write_graph_csv(
            &level.positions,
            &set.up[j].edges,
            &out_dir.join(format!("level{tag}_nodes.csv")),
            &out_dir.join(format!("up{tag}_edges.csv")),
        )?;
    }
    write_graph_csv(
        &set.distant.node_positions,
        &set.distant.edges,
        &out_dir.join("distant_nodes.csv"),
        &out_dir.join("distant_edges.csv"),
    )?;
    let mut summary = format!("boundary: {} nodes, {} edges\n", set.boundary.node_count(), set.boundary.edges.len());
    for (j, level) in set.level_nodes.iter().enumerate() {
        let _ = writeln!(summary, "level {}: {} nodes", j + 1, level.positions.len());
    }
    let _ = write!(summary, "distant: {} nodes, {} edges", set.distant.node_count(), set.distant.edges.len());
    println!("{summary}");
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory with manifest.json.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable rotation augmentation.
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    boundary_blocks: Option<usize>,
    #[arg(long)]
    distant_blocks: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long)]
    base_cell: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainCliConfig {
    data: String,
    out: String,
    epochs: usize,
    batch: usize,
    lr_start: f64,
    lr_end: f64,
    seed: u64,
    augment: bool,
    latent: usize,
    levels: usize,
    boundary_blocks: usize,
    distant_blocks: usize,
    alpha: f64,
    nc: usize,
    /// 0 means "2 x the dataset's mesh edge length".
    base_cell: f64,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        TrainCliConfig {
            data: String::new(),
            out: "train_run".into(),
            epochs: 100,
            batch: 16,
            lr_start: 1e-4,
            lr_end: 1e-7,
            seed: 0,
            augment: true,
            latent: 64,
            levels: 3,
            boundary_blocks: 2,
            distant_blocks: 4,
            alpha: 0.1,
            nc: 2,
            base_cell: 0.0,
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "data", "out", "epochs", "batch", "lr_start", "lr_end", "seed", "augment", "latent", "levels",
    "boundary_blocks", "distant_blocks", "alpha", "nc", "base_cell",
];

fn cmd_train(args: TrainArgs, ctx: &RunContext) -> Result<(), CliError> {
    let mut cfg: TrainCliConfig = match &args.config {
        Some(path) => load_config_file(path, TRAIN_KEYS)?,
        None => TrainCliConfig::default(),
    };
    let TrainArgs {
        data,
        out,
        epochs,
        batch,
        lr_start,
        lr_end,
        seed,
        no_augment,
        latent,
        levels,
        boundary_blocks,
        distant_blocks,
        alpha,
        nc,
        base_cell,
        ..
    } = args;
    let data = data.map(|p| p.to_string_lossy().into_owned());
    let out = out.map(|p| p.to_string_lossy().into_owned());
    merge!(
        cfg, data, out, epochs, batch, lr_start, lr_end, seed, latent, levels, boundary_blocks,
        distant_blocks, alpha, nc, base_cell
    );
    if no_augment {
        cfg.augment = false;
    }
    if cfg.data.is_empty() {
        return Err(CliError::usage("train requires --data <dataset dir>"));
    }

    let out_dir = PathBuf::from(&cfg.out);
    write_resolved_config(&out_dir, "train", ctx, &cfg)?;
    let (manifest, records) = load_dataset(Path::new(&cfg.data))?;
    let base_cell = if cfg.base_cell > 0.0 {
        cfg.base_cell
    } else {
        2.0 * manifest.target_edge_length
    };
    let model_cfg = ModelConfig {
        variant: manifest.problem,
        latent_dim: cfg.latent,
        levels: cfg.levels,
        n_boundary_blocks: cfg.boundary_blocks,
        n_distant_blocks: cfg.distant_blocks,
        feature: FeatureConfig::default(),
    };
    let graph_params = GraphParams {
        levels: cfg.levels,
        base_cell,
        alpha: cfg.alpha,
        n_c: cfg.nc,
        seed: cfg.seed,
    };
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        lr_start: cfg.lr_start,
        lr_end: cfg.lr_end,
        seed: cfg.seed,
        augment: cfg.augment,
        ..TrainConfig::default()
    };

    let mut loss_log = String::from("epoch,mean_loss,lr_last,grad_norm_last\n");
    let (params, _) = train(&records, &model_cfg, &graph_params, &train_cfg, |s| {
        let _ = writeln!(
            loss_log,
            "{},{:.12e},{:.12e},{:.12e}",
            s.epoch, s.mean_loss, s.lr_last, s.grad_norm_last
        );
        log::info!("epoch {}: loss {:.6e}", s.epoch, s.mean_loss);
    })?;
    fs::write(out_dir.join("loss_log.csv"), loss_log)
        .map_err(|e| CliError::Runtime(format!("write loss log: {e}")))?;
    let ckpt = out_dir.join("checkpoint.bin");
    save_checkpoint(&params, &ckpt)?;
    println!(
        "trained {} epochs on {} samples ({} parameters) -> {}",
        cfg.epochs,
        records.len(),
        params.parameter_count(),
        ckpt.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated dataset directories.
    #[arg(long)]
    data: Option<String>,
    /// Evaluation repetitions with distinct distant-graph seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Comma-separated n_c values to sweep.
    #[arg(long)]
    nc: Option<String>,
    /// Keep only datasets with these obstacle counts (comma-separated).
    #[arg(long)]
    obstacles: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    base_cell: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    model: String,
    data: String,
    seeds: usize,
    nc: String,
    obstacles: String,
    alpha: f64,
    base_cell: f64,
    seed: u64,
    out: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            model: String::new(),
            data: String::new(),
            seeds: 1,
            nc: "2".into(),
            obstacles: String::new(),
            alpha: 0.1,
            base_cell: 0.0,
            seed: 0,
            out: "eval_run".into(),
        }
    }
}

const EVAL_KEYS: &[&str] =
    &["model", "data", "seeds", "nc", "obstacles", "alpha", "base_cell", "seed", "out"];

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::usage(format!("cannot parse {what} value {s:?}")))
        })
        .collect()
}

fn cmd_eval(args: EvalArgs, ctx: &RunContext) -> Result<(), CliError> {
    let mut cfg: EvalConfig = match &args.config {
        Some(path) => load_config_file(path, EVAL_KEYS)?,
        None => EvalConfig::default(),
    };
    let EvalArgs { model, data, seeds, nc, obstacles, alpha, base_cell, seed, out, .. } = args;
    let model = model.map(|p| p.to_string_lossy().into_owned());
    let out = out.map(|p| p.to_string_lossy().into_owned());
    merge!(cfg, model, data, seeds, nc, obstacles, alpha, base_cell, seed, out);
    if cfg.model.is_empty() || cfg.data.is_empty() {
        return Err(CliError::usage("eval requires --model <checkpoint> and --data <dirs>"));
    }
    if cfg.seeds == 0 {
        return Err(CliError::usage("--seeds must be >= 1"));
    }

    let out_dir = PathBuf::from(&cfg.out);
    write_resolved_config(&out_dir, "eval", ctx, &cfg)?;
    let params = load_checkpoint(Path::new(&cfg.model))?;
    let nc_values: Vec<usize> = parse_list(&cfg.nc, "nc")?;
    let obstacle_filter: Vec<usize> = if cfg.obstacles.is_empty() {
        Vec::new()
    } else {
        parse_list(&cfg.obstacles, "obstacles")?
    };
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.seed + i).collect();

    let mut summary_rows = Vec::new();
    for dir in cfg.data.split(',').filter(|s| !s.is_empty()) {
        let dir = Path::new(dir.trim());
        let (manifest, records) = load_dataset(dir)?;
        if !obstacle_filter.is_empty() && !obstacle_filter.contains(&manifest.n_obstacles) {
            continue;
        }
        let base_cell = if cfg.base_cell > 0.0 {
            cfg.base_cell
        } else {
            2.0 * manifest.target_edge_length
        };
        for &n_c in &nc_values {
            let gp = GraphParams {
                levels: params.config.levels,
                base_cell,
                alpha: cfg.alpha,
                n_c,
                seed: cfg.seed,
            };
            let (summary, reports) = evaluate_model_seeds(&params, &records, &gp, &seeds)?;
            let csv = report_to_csv(&reports[0]);
            let tag = format!("{}obs_nc{}", manifest.n_obstacles, n_c);
            fs::write(out_dir.join(format!("per_sample_{tag}.csv")), csv)
                .map_err(|e| CliError::Runtime(format!("write per-sample csv: {e}")))?;
            println!(
                "eval data={} obstacles={} nc={} seeds={} err_rel={:.6e} err_ampl={:.6e} err_angle={:.6e} rel_std_err_rel={:.3e}",
                dir.display(),
                manifest.n_obstacles,
                n_c,
                cfg.seeds,
                summary.mean_err_rel,
                summary.mean_err_ampl,
                summary.mean_err_angle,
                summary.rel_std_err_rel,
            );
            summary_rows.push(serde_json::json!({
                "data": dir.to_string_lossy(),
                "obstacles": manifest.n_obstacles,
                "nc": n_c,
                "summary": summary,
            }));
        }
    }
    if summary_rows.is_empty() {
        return Err(CliError::usage("no dataset matched the --obstacles filter"));
    }
    let text = serde_json::to_string_pretty(&summary_rows).expect("summary serialization");
    fs::write(out_dir.join("summary.json"), text)
        .map_err(|e| CliError::Runtime(format!("write summary: {e}")))?;
    Ok(())
}

// ---------------------------------------------------------------- field

#[derive(Args)]
struct FieldArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample file holding geometry and the ground-truth trace.
    #[arg(long)]
    sample: Option<PathBuf>,
    /// Optional checkpoint; without it the stored trace is used.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    plane_z: Option<f64>,
    #[arg(long)]
    side: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    /// csv or pgm.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    base_cell: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FieldConfig {
    sample: String,
    model: String,
    plane_z: f64,
    side: f64,
    resolution: usize,
    format: String,
    nc: usize,
    alpha: f64,
    base_cell: f64,
    seed: u64,
    out: String,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            sample: String::new(),
            model: String::new(),
            plane_z: 0.0,
            side: 10.0,
            resolution: 128,
            format: "csv".into(),
            nc: 2,
            alpha: 0.1,
            base_cell: 0.0,
            seed: 0,
            out: "field_run".into(),
        }
    }
}

const FIELD_KEYS: &[&str] = &[
    "sample", "model", "plane_z", "side", "resolution", "format", "nc", "alpha", "base_cell",
    "seed", "out",
];

fn cmd_field(args: FieldArgs, ctx: &RunContext) -> Result<(), CliError> {
    let mut cfg: FieldConfig = match &args.config {
        Some(path) => load_config_file(path, FIELD_KEYS)?,
        None => FieldConfig::default(),
    };
    let FieldArgs {
        sample, model, plane_z, side, resolution, format, nc, alpha, base_cell, seed, out, ..
    } = args;
    let sample = sample.map(|p| p.to_string_lossy().into_owned());
    let model = model.map(|p| p.to_string_lossy().into_owned());
    let out = out.map(|p| p.to_string_lossy().into_owned());
    merge!(cfg, sample, model, plane_z, side, resolution, format, nc, alpha, base_cell, seed, out);
    if cfg.sample.is_empty() {
        return Err(CliError::usage("field requires --sample <file>"));
    }
    if cfg.format != "csv" && cfg.format != "pgm" {
        return Err(CliError::usage(format!(
            "unknown format {:?} (expected csv or pgm)",
            cfg.format
        )));
    }

    let out_dir = PathBuf::from(&cfg.out);
    write_resolved_config(&out_dir, "field", ctx, &cfg)?;
    let record = read_sample(Path::new(&cfg.sample))?;
    let trace = if cfg.model.is_empty() {
        record.trace.clone()
    } else {
        let params = load_checkpoint(Path::new(&cfg.model))?;
        let base_cell = if cfg.base_cell > 0.0 { cfg.base_cell } else { 0.6 };
        let gp = GraphParams {
            levels: params.config.levels,
            base_cell,
            alpha: cfg.alpha,
            n_c: cfg.nc,
            seed: cfg.seed,
        };
        predict_trace(&params, &record, &gp)?
    };
    let spec = GridSpec { plane_z: cfg.plane_z, side: cfg.side, resolution: cfg.resolution };
    let grid = evaluate_field(&record, &trace, &spec)?;
    let path = out_dir.join(format!("field.{}", cfg.format));
    match cfg.format.as_str() {
        "csv" => export_csv(&grid, &path)?,
        _ => export_pgm(&grid, &path)?,
    }
    println!("field grid {}x{} on z={} -> {}", cfg.resolution, cfg.resolution, cfg.plane_z, path.display());
    Ok(())
}

// ---------------------------------------------------------------- selftest

fn check(name: &str, pass: bool, detail: String) -> bool {
    println!("selftest {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn cmd_selftest() -> Result<(), CliError> {
    let mut all = true;

    // Sphere Laplace oracle: unit sphere, u = 1 -> density -1, u(2) = 0.5.
    {
        let sphere = Ellipsoid { center: [0.0; 3], semi_axes: [1.0; 3] };
        let mesh = mesh_ellipsoid(&sphere, 0.3)?;
        let rhs = vec![Complex64::new(1.0, 0.0); mesh.triangle_count()];
        let sol = solve_dirichlet(&mesh, Kernel::Laplace, &rhs, 1e-5)?;
        let worst = sol
            .density
            .iter()
            .map(|p| (p.re + 1.0).abs())
            .fold(0.0, f64::max);
        all &= check(
            "sphere_laplace_density",
            worst < 0.02,
            format!("max |p + 1| = {worst:.4}"),
        );
        let potential =
            evaluate_single_layer_potential(&mesh, Kernel::Laplace, &sol.density, &[[2.0, 0.0, 0.0]], &[]);
        let dev = (potential[0].re - 0.5).abs() / 0.5;
        all &= check(
            "sphere_laplace_potential",
            dev < 0.02,
            format!("u(2) = {:.5}, relative deviation {dev:.4}", potential[0].re),
        );
    }

    // Manufactured Helmholtz oracle: interior source at k = 3.
    {
        let kernel = Kernel::Helmholtz { wavenumber: 3.0 };
        let sphere = Ellipsoid { center: [0.0; 3], semi_axes: [1.0; 3] };
        let mesh = mesh_ellipsoid(&sphere, 0.15)?;
        let x_int = [0.2, -0.1, 0.15];
        let rhs: Vec<Complex64> = mesh
            .triangle_centroids
            .iter()
            .map(|&c| greens(kernel, c, x_int).expect("distinct points"))
            .collect();
        let sol = solve_dirichlet(&mesh, kernel, &rhs, 1e-6)?;
        let mut worst = 0.0f64;
        for i in 0..20 {
            let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / 20.0;
            let r = (1.0 - y * y).sqrt();
            let t = golden * i as f64;
            let radius = 2.0 + 3.0 * (i as f64 + 0.5) / 20.0;
            let x = vec3::scale([r * t.cos(), y, r * t.sin()], radius);
            let got = evaluate_single_layer_potential(&mesh, kernel, &sol.density, &[x], &[])[0];
            let exact = greens(kernel, x, x_int).expect("distinct points");
            worst = worst.max((got - exact).norm() / exact.norm());
        }
        all &= check(
            "manufactured_helmholtz",
            worst < 0.02,
            format!("max relative field error {worst:.4} over 20 probes"),
        );
    }

    if all {
        Ok(())
    } else {
        Err(CliError::Runtime("selftest failed".into()))
    }
}
