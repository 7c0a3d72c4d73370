//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line with
//! the measured values; the process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamgs::filter::{coarse_filter, fine_filter, FineResult, Tile};
use streamgs::metrics::psnr;
use streamgs::render::{render_frame_reference, render_frame_streaming, RenderOptions, StreamingFrame};
use streamgs::scene::{generate_scene, Aabb, Camera, Gaussian, Scene, SceneSpec, SH_COEFFS};
use streamgs::schedule::{count_violations, schedule, traverse, VoxelOrderingTable};
use streamgs::traffic::{
    compare_pipelines, estimate, traffic_breakdown, PerfConfig, Stage, WorkCounts, COARSE_MACS, FINE_MACS,
};
use streamgs::voxel::{build_grid, VoxelStore};
use streamgs::vq::{CodebookSet, EntryCounts};

const SCENES: u64 = 20;
const SCENE_SIZE: usize = 3000;
const IMAGE: u32 = 256;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, id: u32, name: &'static str, pass: bool, detail: String) {
    println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { id, name, pass, detail });
}

/// Seeded scene with every Gaussian's footprint kept inside its voxel.
fn constrained_scene(seed: u64) -> Scene {
    let spec = SceneSpec {
        max_extent_fraction: 0.5,
        ..SceneSpec::new(SCENE_SIZE, seed).constrained().with_margin(0.25)
    };
    generate_scene(&spec).unwrap()
}

fn orbit_camera(seed: u64, size: u32) -> Camera {
    let a = seed as f32 * 0.7;
    let eye = [12.0 * a.cos(), 3.0 + (seed % 3) as f32, 12.0 * a.sin()];
    Camera::look_at(eye, [0.0; 3], [0.0, -1.0, 0.0], size, size, 50.0).unwrap()
}

/// Dense scene where each tile's frustum crosses many occupied voxels.
fn cluttered() -> (Scene, VoxelStore, Camera) {
    let edge = 0.4;
    let spec = SceneSpec {
        voxel_edge: edge,
        max_extent_fraction: 0.8,
        bounds: Aabb::new([-4.0; 3], [4.0; 3]),
        ..SceneSpec::new(50_000, 99)
    };
    let scene = generate_scene(&spec).unwrap();
    let store = build_grid(&scene, edge).unwrap();
    let cam = Camera::look_at([10.0, 4.0, -9.0], [0.0; 3], [0.0, -1.0, 0.0], IMAGE, IMAGE, 20.0).unwrap();
    (scene, store, cam)
}

struct ConstrainedRun {
    stream: StreamingFrame,
    max_diff: f32,
    psnr: f64,
}

fn equivalence(out: &mut Vec<Outcome>) -> Vec<ConstrainedRun> {
    let start = Instant::now();
    let opts = RenderOptions::default();
    let mut runs = Vec::new();
    for seed in 0..SCENES {
        let scene = constrained_scene(seed);
        let store = build_grid(&scene, 2.0).unwrap();
        let cam = orbit_camera(seed, IMAGE);
        let s = render_frame_streaming(&cam, &store, None, &opts).unwrap();
        let r = render_frame_reference(&cam, &scene, &opts).unwrap();
        runs.push(ConstrainedRun {
            max_diff: s.frame.max_abs_diff(&r.frame).unwrap(),
            psnr: psnr(&s.frame, &r.frame).unwrap(),
            stream: s,
        });
    }
    let elapsed = start.elapsed().as_secs_f64();
    let worst = runs.iter().map(|r| r.max_diff).fold(0.0, f32::max);
    let min_psnr = runs.iter().map(|r| r.psnr).fold(f64::INFINITY, f64::min);
    let pass = worst <= 1e-4 && min_psnr >= 60.0 && elapsed < 120.0;
    report(
        out,
        1,
        "oracle equivalence",
        pass,
        format!("{SCENES} scenes x {SCENE_SIZE} gaussians at {IMAGE}x{IMAGE}: max |diff| {worst:.3e}, min PSNR {min_psnr:.1} dB, {elapsed:.1}s"),
    );
    runs
}

fn vq_quality(out: &mut Vec<Outcome>) -> Vec<StreamingFrame> {
    let opts = RenderOptions::default();
    let mut degradations = Vec::new();
    let mut frames = Vec::new();
    for seed in 0..SCENES {
        let scene = constrained_scene(seed);
        let store = build_grid(&scene, 2.0).unwrap();
        let cam = orbit_camera(seed, IMAGE);
        let books = CodebookSet::train(&scene.gaussians, EntryCounts::default(), seed, 25, 1e-4).unwrap();
        let encoded = store.encode(&books).unwrap();
        // Ground truth: the exact pipeline at twice the resolution, box-filtered down.
        let truth = render_frame_reference(&cam.scaled(2), &scene, &opts).unwrap().frame.downsample(2);
        let reference = render_frame_reference(&cam, &scene, &opts).unwrap();
        let stream = render_frame_streaming(&cam, &encoded, Some(&books), &opts).unwrap();
        let base = psnr(&reference.frame, &truth).unwrap();
        let quantized = psnr(&stream.frame, &truth).unwrap();
        degradations.push(base - quantized);
        frames.push(stream);
    }
    let mean = degradations.iter().sum::<f64>() / degradations.len() as f64;
    let max = degradations.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    report(
        out,
        2,
        "quality band with VQ",
        mean <= 1.0,
        format!("PSNR loss vs supersampled ground truth: mean {mean:.2} dB, worst {max:.2} dB (bound 1.0 dB)"),
    );
    frames
}

fn random_quat(rng: &mut impl Rng) -> [f32; 4] {
    loop {
        let q: [f32; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 0.2 {
            return q.map(|x| x / n);
        }
    }
}

fn conservativeness(out: &mut Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let samples = 100_000;
    let (mut fine_passes, mut misses) = (0u64, 0u64);
    for _ in 0..samples {
        let eye = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-14.0..-3.0)];
        let w = 16 * rng.gen_range(2..16);
        let h = 16 * rng.gen_range(2..16);
        let cam = Camera::look_at(eye, [0.0; 3], [0.0, -1.0, 0.0], w, h, rng.gen_range(20.0..100.0)).unwrap();
        let tile = Tile::new(rng.gen_range(0..cam.tiles_x()), rng.gen_range(0..cam.tiles_y()));
        let [x0, y0, x1, y1] = tile.rect();
        let (x, y, z) = (
            rng.gen_range(x0 - 48.0..x1 + 48.0),
            rng.gen_range(y0 - 48.0..y1 + 48.0),
            rng.gen_range(0.3..40.0),
        );
        let local = Vector3::new((x - cam.cx) / cam.fx * z, (y - cam.cy) / cam.fy * z, z);
        let p = cam.rotation.transpose() * (local - cam.translation);
        let big = 10f32.powf(rng.gen_range(-4.0..0.3));
        let g = Gaussian {
            id: 0,
            position: [p.x, p.y, p.z],
            scale: [big, big * rng.gen_range(0.0..1.0), big * rng.gen_range(0.0..1.0)],
            rotation: random_quat(&mut rng),
            opacity: 0.5,
            sh: [[0.0; 3]; SH_COEFFS],
        };
        if let FineResult::Pass(_) = fine_filter(&g, &cam, tile) {
            fine_passes += 1;
            if !coarse_filter(g.position, g.max_scale(), &cam, tile).pass {
                misses += 1;
            }
        }
    }
    report(
        out,
        3,
        "coarse filter conservativeness",
        misses == 0 && fine_passes > 0,
        format!("{samples} gaussian/camera/tile triples, {fine_passes} fine passes, {misses} rejected by coarse"),
    );
}

fn intermediate_traffic(out: &mut Vec<Outcome>, frames: &[&StreamingFrame]) {
    let worst = frames
        .iter()
        .map(|f| f.ledger.bytes(Stage::ProjectionWriteback) + f.ledger.bytes(Stage::SortSpill))
        .max()
        .unwrap_or(0);
    report(
        out,
        4,
        "intermediate traffic elimination",
        worst == 0,
        format!("{} streaming frames, largest projection-writeback + sort-spill total {worst} B", frames.len()),
    );
}

fn vq_traffic(out: &mut Vec<Outcome>, frames: &[StreamingFrame]) {
    let (mut fine, mut raw, mut bits) = (0u64, 0u64, 0u64);
    for f in frames {
        fine += f.ledger.bytes(Stage::FineLoad);
        raw += f.ledger.fine_raw_equivalent_bytes;
        bits += f.ledger.fine_packed_bits;
    }
    let reduction = 1.0 - fine as f64 / raw as f64;
    let packed = 1.0 - bits as f64 / 8.0 / raw as f64;
    report(
        out,
        5,
        "VQ second-half traffic reduction",
        (0.90..=0.96).contains(&reduction),
        format!("{:.2}% with 12-byte records ({:.2}% if bit-packed); reported figure 92.3%", 100.0 * reduction, 100.0 * packed),
    );
}

fn filtering_and_baseline(out: &mut Vec<Outcome>) -> (StreamingFrame, VoxelStore, Camera, Scene) {
    let (scene, store, cam) = cluttered();
    let per_tile: Vec<usize> = Tile::all(&cam).map(|t| traverse(t, &cam, &store.grid).voxels().len()).collect();
    let min_voxels = *per_tile.iter().min().unwrap();
    let opts = RenderOptions::default();
    let s = render_frame_streaming(&cam, &store, None, &opts).unwrap();
    let r = render_frame_reference(&cam, &scene, &opts).unwrap();
    let frac = s.stats.mean_voxel_survivor_fraction();
    report(
        out,
        6,
        "filtering effectiveness",
        min_voxels >= 50 && frac <= 0.5,
        format!(
            "{} gaussians, >= {min_voxels} occupied voxels per tile frustum; fine survivors / loaded {frac:.3} per voxel ({:.1}% removed; reported figure 76.3%)",
            scene.len(),
            100.0 * (1.0 - frac)
        ),
    );
    let b = traffic_breakdown(&r.ledger).unwrap();
    let sum = b.projection.fraction + b.sorting.fraction;
    report(
        out,
        7,
        "baseline traffic shape",
        sum >= 0.80,
        format!(
            "reference projection {:.1}% + sorting {:.1}% = {:.1}% (reported 41% + 49%)",
            100.0 * b.projection.fraction,
            100.0 * b.sorting.fraction,
            100.0 * sum
        ),
    );
    let cmp = compare_pipelines(&s.ledger, &r.ledger).unwrap();
    println!(
        "       cluttered scene totals: streaming {} B, reference {} B, intermediate {} B eliminated",
        cmp.stream_total_bytes, cmp.reference_total_bytes, cmp.reference_intermediate_bytes
    );
    (s, store, cam, scene)
}

fn cyclic_edges(table: &VoxelOrderingTable) -> BTreeSet<(u32, u32)> {
    let adj = table.adjacency();
    let reaches = |from: u32, to: u32| {
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(x) = queue.pop_front() {
            if x == to {
                return true;
            }
            for y in adj.get(&x).into_iter().flatten() {
                if seen.insert(*y) {
                    queue.push_back(*y);
                }
            }
        }
        false
    };
    adj.iter()
        .flat_map(|(u, vs)| vs.iter().map(move |v| (*u, *v)))
        .filter(|(u, v)| reaches(*v, *u))
        .collect()
}

fn scheduler(out: &mut Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let scenes: Vec<VoxelStore> = (0..4)
        .map(|i| {
            let s = generate_scene(&SceneSpec::new(4000, 500 + i)).unwrap();
            build_grid(&s, [0.5, 0.8, 1.0, 2.0][i as usize]).unwrap()
        })
        .collect();
    let (mut tiles, mut acyclic, mut constraints, mut violations, mut nonempty) = (0, 0, 0usize, 0usize, 0);
    while tiles < 10_000 {
        let store = &scenes[rng.gen_range(0..scenes.len())];
        let eye = [rng.gen_range(-16.0..16.0), rng.gen_range(-16.0..16.0), rng.gen_range(-16.0..16.0)];
        let target = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let Ok(cam) = Camera::look_at(eye, target, [0.0, -1.0, 0.0], 128, 128, rng.gen_range(20.0..90.0)) else {
            continue;
        };
        tiles += 1;
        let table = traverse(Tile::new(rng.gen_range(0..8), rng.gen_range(0..8)), &cam, &store.grid);
        let s = schedule(&table, |v| cam.to_camera(store.grid.voxel_center(v)).z);
        nonempty += !s.order.is_empty() as usize;
        if s.cycles_broken == 0 {
            acyclic += 1;
            constraints += table.pixels.iter().map(|p| p.len().saturating_sub(1)).sum::<usize>();
            violations += count_violations(&table, &s.order);
        }
    }

    let crafted = VoxelOrderingTable {
        pixels: vec![vec![0, 1, 2], vec![2, 3], vec![3, 1], vec![3, 4], vec![0, 4]],
    };
    let depth: BTreeMap<u32, f32> = (0..5).map(|v| (v, v as f32)).collect();
    let s = schedule(&crafted, |v| depth[&v]);
    let cyclic = cyclic_edges(&crafted);
    let pos: BTreeMap<u32, usize> = s.order.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let leftover = crafted
        .pixels
        .iter()
        .flat_map(|p| p.windows(2))
        .filter(|w| !cyclic.contains(&(w[0], w[1])) && pos[&w[0]] >= pos[&w[1]])
        .count();
    report(
        out,
        8,
        "scheduler correctness",
        violations == 0 && acyclic > 0 && s.cycles_broken >= 1 && leftover == 0 && s.order.len() == 5,
        format!(
            "{tiles} random tiles ({nonempty} non-empty, {acyclic} acyclic): {violations} of {constraints} per-pixel constraints violated; crafted cycle: cycles_broken {}, {leftover} other constraints violated",
            s.cycles_broken
        ),
    );
}

fn mac_constants(out: &mut Vec<Outcome>, frame: &StreamingFrame, scene: &Scene, cam: &Camera) {
    let l = &frame.ledger;
    let st = &frame.stats;
    let per_loaded = l.macs_coarse as f64 / st.loaded as f64;
    let per_survivor = (l.macs_coarse as f64 / st.loaded as f64) + l.macs_fine as f64 / st.coarse_survivors as f64;
    let exact = l.macs_coarse == 55 * st.loaded && l.macs_fine == 372 * st.coarse_survivors;
    let r = render_frame_reference(cam, scene, &RenderOptions::default()).unwrap();
    let reference_exact = r.ledger.macs_coarse + r.ledger.macs_fine == 427 * scene.len() as u64;
    report(
        out,
        9,
        "MAC constants",
        exact && reference_exact && COARSE_MACS == 55 && COARSE_MACS + FINE_MACS == 427,
        format!("coarse {per_loaded} MACs per loaded gaussian, coarse+fine {per_survivor} per coarse survivor; reference {} per gaussian", (r.ledger.macs_coarse + r.ledger.macs_fine) / scene.len() as u64),
    );
}

fn perf_model(out: &mut Vec<Outcome>, frame: &StreamingFrame) {
    let work = WorkCounts::from_stats(&frame.stats, frame.fragments);
    let mut monotone = true;
    let mut configs = 0;
    for cfu in [1, 2, 4, 8] {
        for ffu in [1, 2, 4] {
            for sorters in [1, 2, 4] {
                for renderers in [16, 64, 256] {
                    let c = PerfConfig {
                        cfu_count: cfu,
                        ffu_count: ffu,
                        sorter_count: sorters,
                        renderer_count: renderers,
                        ..PerfConfig::default()
                    };
                    let t = estimate(&c, &work).unwrap().total_cycles;
                    let bumped = [
                        PerfConfig { cfu_count: cfu + 1, ..c.clone() },
                        PerfConfig { ffu_count: ffu + 1, ..c.clone() },
                        PerfConfig { sorter_count: sorters + 1, ..c.clone() },
                        PerfConfig { renderer_count: renderers + 1, ..c.clone() },
                    ];
                    monotone &= bumped.iter().all(|b| estimate(b, &work).unwrap().total_cycles <= t);
                    configs += 1;
                }
            }
        }
    }
    // A configuration whose fine stage has slack: plenty of fine units, few renderers.
    let slack = PerfConfig {
        ffu_count: 64,
        renderer_count: 1,
        ..PerfConfig::default()
    };
    let before = estimate(&slack, &work).unwrap();
    let after = estimate(&PerfConfig { ffu_count: 128, ..slack.clone() }, &work).unwrap();
    let identical = before.bottleneck != "fine-filter" && before.total_cycles.to_bits() == after.total_cycles.to_bits();
    report(
        out,
        10,
        "performance model properties",
        monotone && identical,
        format!(
            "{configs} configurations monotone: {monotone}; bottleneck {} at {:.0} cycles, doubling fine units leaves {:.0} cycles",
            before.bottleneck, before.total_cycles, after.total_cycles
        ),
    );
}

fn determinism(out: &mut Vec<Outcome>) {
    let scene = generate_scene(&SceneSpec::new(5000, 4242)).unwrap();
    let store = build_grid(&scene, 1.0).unwrap();
    let cam = orbit_camera(5, IMAGE);
    let counts = EntryCounts {
        scale: 256,
        rotation: 256,
        dc: 256,
        sh_rest: 64,
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let books = pool.install(|| CodebookSet::train(&scene.gaussians, counts, 3, 10, 1e-4).unwrap());
        let mut book_bytes = Vec::new();
        books.write_to(&mut book_bytes).unwrap();
        let encoded = store.encode(&books).unwrap();
        let opts = RenderOptions {
            threads: Some(threads),
            ..RenderOptions::default()
        };
        let s = render_frame_streaming(&cam, &store, None, &opts).unwrap();
        let v = render_frame_streaming(&cam, &encoded, Some(&books), &opts).unwrap();
        let r = render_frame_reference(&cam, &scene, &opts).unwrap();
        (book_bytes, s.frame, s.ledger, v.frame, v.ledger, r.frame, r.ledger)
    };
    let base = run(1);
    let mut identical = true;
    for t in [2, 4, 7] {
        identical &= run(t) == base;
    }
    report(
        out,
        11,
        "determinism across worker counts",
        identical,
        format!("1, 2, 4 and 7 workers: codebooks, streaming (raw and VQ) and reference frames and ledgers bit-identical: {identical}"),
    );
}

fn main() {
    let mut out = Vec::new();
    let runs = equivalence(&mut out);
    let vq_frames = vq_quality(&mut out);
    conservativeness(&mut out);
    let (cluttered_frame, _store, cam, scene) = filtering_and_baseline(&mut out);

    let mut streaming: Vec<&StreamingFrame> = runs.iter().map(|r| &r.stream).collect();
    streaming.extend(vq_frames.iter());
    streaming.push(&cluttered_frame);
    intermediate_traffic(&mut out, &streaming);
    vq_traffic(&mut out, &vq_frames);
    scheduler(&mut out);
    mac_constants(&mut out, &cluttered_frame, &scene, &cam);
    perf_model(&mut out, &cluttered_frame);
    determinism(&mut out);

    out.sort_by_key(|o| o.id);
    let failed: Vec<&Outcome> = out.iter().filter(|o| !o.pass).collect();
    println!("acceptance: {} of {} criteria passed", out.len() - failed.len(), out.len());
    if !failed.is_empty() {
        for f in &failed {
            eprintln!("failed criterion {} ({}): {}", f.id, f.name, f.detail);
        }
        std::process::exit(1);
    }
}
