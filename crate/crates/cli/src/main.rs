use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use streamgs::filter::{FilterStats, Tile};
use streamgs::metrics::{cross_boundary_stats, psnr};
use streamgs::render::{render_frame_reference, render_frame_streaming, RenderOptions};
use streamgs::scene::ply::{load_ply, save_ply};
use streamgs::scene::{generate_scene, Aabb, Camera, SceneSpec};
use streamgs::schedule::{traverse, write_dag};
use streamgs::traffic::{
    compare_pipelines, estimate, traffic_breakdown, ComparisonReport, PerfConfig, PipelineEstimate, Stage,
    StageCounter, TrafficBreakdown, TrafficLedger, WorkCounts,
};
use streamgs::voxel::{build_grid, VoxelStore};
use streamgs::vq::{CodebookSet, EntryCounts};

#[derive(Parser)]
#[command(name = "streamgs", version, about = "Voxel-streaming Gaussian splatting renderer and traffic model")]
struct Cli {
    /// Worker threads for rendering and training. Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write every tile's voxel ordering DAG to this file (render and compare).
    #[arg(long, global = true, value_name = "PATH")]
    dump_dag: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded random scene as a PLY file.
    GenScene(GenSceneArgs),
    /// Partition a PLY scene into a voxel store.
    BuildVoxels(BuildVoxelsArgs),
    /// Train second-half codebooks from a voxel store.
    TrainCodebook(TrainArgs),
    /// Render one frame with either pipeline.
    Render(RenderArgs),
    /// Render both pipelines and report quality, traffic and performance.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenSceneArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep every Gaussian's 3-sigma box inside one voxel.
    #[arg(long)]
    constrained: bool,
    #[arg(long, default_value_t = 2.0)]
    edge: f32,
    #[arg(long, default_value_t = 0.4)]
    max_extent_fraction: f32,
    /// Half size of the cubic scene bounds.
    #[arg(long, default_value_t = 4.0)]
    half_size: f32,
    #[arg(long, default_value_t = 0.0)]
    margin: f32,
    #[arg(long)]
    out: PathBuf,
    /// Also write a camera looking at the scene center.
    #[arg(long, value_name = "PATH")]
    camera_out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    width: u32,
    #[arg(long, default_value_t = 256)]
    height: u32,
    #[arg(long, default_value_t = 50.0)]
    fov: f32,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [8.0f32, 3.0, -9.0])]
    eye: Vec<f32>,
}

#[derive(Args)]
struct BuildVoxelsArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    edge: f32,
    /// Store second halves as codebook indices.
    #[arg(long)]
    books: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    voxels: PathBuf,
    /// Entry counts, e.g. `scale=4096,rot=4096,dc=4096,sh=512`.
    #[arg(long, default_value = "scale=4096,rot=4096,dc=4096,sh=512")]
    entries: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Streaming,
    Reference,
}

#[derive(Args)]
struct FrameArgs {
    #[arg(long)]
    voxels: PathBuf,
    #[arg(long)]
    books: Option<PathBuf>,
    #[arg(long)]
    camera: PathBuf,
    /// Blend every voxel even after all pixels are opaque.
    #[arg(long)]
    no_early_exit: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, value_enum, default_value_t = Mode::Streaming)]
    mode: Mode,
    #[command(flatten)]
    frame: FrameArgs,
    /// Image output; `.png` or `.ppm`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    frame: FrameArgs,
    #[arg(long)]
    report: PathBuf,
    /// Per-stage byte table for both pipelines.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STREAMINGGS_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    let dag = cli.dump_dag.as_deref();
    match cli.command {
        Command::GenScene(a) => gen_scene(a),
        Command::BuildVoxels(a) => build_voxels(a),
        Command::TrainCodebook(a) => train_codebook(a),
        Command::Render(a) => render(a, dag),
        Command::Compare(a) => compare(a, dag),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn gen_scene(a: GenSceneArgs) -> Result<()> {
    let spec = SceneSpec {
        bounds: Aabb::new([-a.half_size; 3], [a.half_size; 3]),
        max_extent_fraction: a.max_extent_fraction,
        voxel_edge: a.edge,
        constrained: a.constrained,
        cell_margin: a.margin,
        ..SceneSpec::new(a.count, a.seed)
    };
    let scene = generate_scene(&spec)?;
    save_ply(&a.out, &scene).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.camera_out {
        let eye = [a.eye[0], a.eye[1], a.eye[2]];
        let cam = Camera::look_at(eye, [0.0; 3], [0.0, -1.0, 0.0], a.width, a.height, a.fov)?;
        std::fs::write(path, cam.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} gaussians to {}", scene.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct OccupancyReport {
    gaussians: usize,
    occupied_voxels: usize,
    dims: [u32; 3],
    mean_per_voxel: f64,
    max_per_voxel: usize,
    cross_boundary_ratio: f64,
}

fn build_voxels(a: BuildVoxelsArgs) -> Result<()> {
    let scene = load_ply(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let mut store = build_grid(&scene, a.edge)?;
    let cross = cross_boundary_stats(&scene, &store.grid);
    if let Some(path) = &a.books {
        let books = load_books(path)?;
        store = store.encode(&books)?;
    }
    store.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let occupied = store.grid.occupied_count();
    let report = OccupancyReport {
        gaussians: store.gaussian_count(),
        occupied_voxels: occupied,
        dims: store.grid.dims,
        mean_per_voxel: if occupied == 0 { 0.0 } else { store.gaussian_count() as f64 / occupied as f64 },
        max_per_voxel: store.records.iter().map(|r| r.count()).max().unwrap_or(0),
        cross_boundary_ratio: cross.ratio,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn parse_entries(text: &str) -> Result<EntryCounts> {
    let mut counts = EntryCounts::default();
    for part in text.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .with_context(|| format!("entry spec `{part}` is not key=value"))?;
        let n: usize = value.trim().parse().with_context(|| format!("bad entry count `{value}`"))?;
        match key.trim() {
            "scale" => counts.scale = n,
            "rot" | "rotation" => counts.rotation = n,
            "dc" => counts.dc = n,
            "sh" | "sh_rest" => counts.sh_rest = n,
            other => bail!("unknown codebook `{other}`"),
        }
    }
    Ok(counts)
}

fn train_codebook(a: TrainArgs) -> Result<()> {
    let counts = parse_entries(&a.entries)?;
    let store = load_store(&a.voxels)?;
    if store.is_encoded() {
        bail!("{} already holds codebook indices; train from a raw voxel store", a.voxels.display());
    }
    let scene = store.to_scene(None)?;
    let books = CodebookSet::train(&scene.gaussians, counts, a.seed, a.max_iters, a.tol)?;
    books.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    for b in [&books.scale, &books.rotation, &books.dc, &books.sh_rest] {
        println!(
            "{:?}: {} entries, {} iterations, mse {:.6e}{}",
            b.attribute,
            b.entry_count(),
            b.report.iterations,
            b.report.final_mse,
            if b.report.padded { " (padded)" } else { "" }
        );
    }
    Ok(())
}

fn load_store(path: &Path) -> Result<VoxelStore> {
    VoxelStore::load(path).with_context(|| format!("reading {}", path.display()))
}

fn load_books(path: &Path) -> Result<CodebookSet> {
    CodebookSet::load(path).with_context(|| format!("reading {}", path.display()))
}

fn load_camera(path: &Path) -> Result<Camera> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Camera::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Inputs shared by `render` and `compare`.
struct Frame {
    camera: Camera,
    books: Option<CodebookSet>,
    /// Store the streaming pipeline reads; encoded when books are given.
    stream_store: VoxelStore,
    /// Scene the reference pipeline reads.
    reference_scene: streamgs::scene::Scene,
    opts: RenderOptions,
}

fn load_frame(a: &FrameArgs) -> Result<Frame> {
    let camera = load_camera(&a.camera)?;
    let store = load_store(&a.voxels)?;
    let books = a.books.as_deref().map(load_books).transpose()?;
    if store.is_encoded() && books.is_none() {
        bail!("{} holds codebook indices; pass --books", a.voxels.display());
    }
    // The reference always sees full-precision parameters when they exist.
    let reference_scene = store.to_scene(books.as_ref())?;
    let stream_store = match &books {
        Some(b) if !store.is_encoded() => store.encode(b)?,
        _ => store,
    };
    let opts = RenderOptions {
        early_exit: !a.no_early_exit,
        ..RenderOptions::default()
    };
    Ok(Frame {
        camera,
        books,
        stream_store,
        reference_scene,
        opts,
    })
}

fn dump_dags(path: &Path, f: &Frame) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("writing {}", path.display()))?);
    for tile in Tile::all(&f.camera) {
        writeln!(w, "# tile {} {}", tile.x, tile.y)?;
        write_dag(&mut w, &traverse(tile, &f.camera, &f.stream_store.grid))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RenderStats {
    mode: Mode,
    width: u32,
    height: u32,
    total_bytes: u64,
    intermediate_bytes: u64,
    stages: std::collections::BTreeMap<&'static str, StageCounter>,
    macs_coarse: u64,
    macs_fine: u64,
    filter: FilterStats,
    fragments: u64,
    cycles_broken: u64,
    early_exit_tiles: u64,
    skipped_voxels: u64,
}

fn stats_of(mode: Mode, cam: &Camera, ledger: &TrafficLedger, filter: FilterStats, fragments: u64) -> RenderStats {
    RenderStats {
        mode,
        width: cam.width,
        height: cam.height,
        total_bytes: ledger.total_bytes(),
        intermediate_bytes: ledger.intermediate_bytes(),
        stages: ledger.stage_map(),
        macs_coarse: ledger.macs_coarse,
        macs_fine: ledger.macs_fine,
        filter,
        fragments,
        cycles_broken: 0,
        early_exit_tiles: 0,
        skipped_voxels: 0,
    }
}

fn render(a: RenderArgs, dag: Option<&Path>) -> Result<()> {
    let f = load_frame(&a.frame)?;
    if let Some(path) = dag {
        dump_dags(path, &f)?;
    }
    let (image, stats) = match a.mode {
        Mode::Streaming => {
            let r = render_frame_streaming(&f.camera, &f.stream_store, f.books.as_ref(), &f.opts)?;
            let mut s = stats_of(a.mode, &f.camera, &r.ledger, r.stats, r.fragments);
            s.cycles_broken = r.cycles_broken;
            s.early_exit_tiles = r.early_exit_tiles;
            s.skipped_voxels = r.skipped_voxels;
            (r.frame, s)
        }
        Mode::Reference => {
            let r = render_frame_reference(&f.camera, &f.reference_scene, &f.opts)?;
            let s = stats_of(a.mode, &f.camera, &r.ledger, r.stats, r.fragments);
            (r.frame, s)
        }
    };
    image.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.stats {
        write_json(path, &stats)?;
    }
    log::info!("rendered {}x{} frame, {} bytes", f.camera.width, f.camera.height, stats.total_bytes);
    Ok(())
}

#[derive(Serialize)]
struct CompareReport {
    /// `None` when both images are identical.
    psnr_vs_reference: Option<f64>,
    max_abs_diff: f32,
    vq_enabled: bool,
    comparison: ComparisonReport,
    stream_breakdown: TrafficBreakdown,
    reference_breakdown: TrafficBreakdown,
    stream: RenderStats,
    reference: RenderStats,
    cross_boundary_ratio: f64,
    mean_voxel_survivor_fraction: f64,
    perf: PipelineEstimate,
}

fn compare(a: CompareArgs, dag: Option<&Path>) -> Result<()> {
    let f = load_frame(&a.frame)?;
    if let Some(path) = dag {
        dump_dags(path, &f)?;
    }
    let s = render_frame_streaming(&f.camera, &f.stream_store, f.books.as_ref(), &f.opts)?;
    let r = render_frame_reference(&f.camera, &f.reference_scene, &f.opts)?;
    let p = psnr(&s.frame, &r.frame)?;
    let comparison = compare_pipelines(&s.ledger, &r.ledger)?;
    let perf = estimate(&PerfConfig::default(), &WorkCounts::from_stats(&s.stats, s.fragments))?;
    let mut stream = stats_of(Mode::Streaming, &f.camera, &s.ledger, s.stats, s.fragments);
    stream.cycles_broken = s.cycles_broken;
    stream.early_exit_tiles = s.early_exit_tiles;
    stream.skipped_voxels = s.skipped_voxels;
    let report = CompareReport {
        psnr_vs_reference: p.is_finite().then_some(p),
        max_abs_diff: s.frame.max_abs_diff(&r.frame)?,
        vq_enabled: f.books.is_some(),
        comparison,
        stream_breakdown: traffic_breakdown(&s.ledger)?,
        reference_breakdown: traffic_breakdown(&r.ledger)?,
        stream,
        reference: stats_of(Mode::Reference, &f.camera, &r.ledger, r.stats, r.fragments),
        cross_boundary_ratio: cross_boundary_stats(&f.reference_scene, &f.stream_store.grid).ratio,
        mean_voxel_survivor_fraction: s.stats.mean_voxel_survivor_fraction(),
        perf,
    };
    write_json(&a.report, &report)?;
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["stage", "stream_bytes", "reference_bytes"])?;
        for stage in Stage::ALL {
            w.write_record([
                stage.name().to_string(),
                s.ledger.bytes(stage).to_string(),
                r.ledger.bytes(stage).to_string(),
            ])?;
        }
        w.flush()?;
    }
    match report.psnr_vs_reference {
        Some(p) => println!("psnr vs reference: {p:.2} dB"),
        None => println!("psnr vs reference: identical"),
    }
    println!(
        "traffic: stream {} B, reference {} B ({:.1}% less)",
        report.comparison.stream_total_bytes,
        report.comparison.reference_total_bytes,
        100.0 * report.comparison.total_traffic_reduction
    );
    Ok(())
}
