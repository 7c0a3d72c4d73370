use streamgs::filter::{disc_overlaps_tile, project, Projection, Tile};
use streamgs::metrics::{cross_boundary_stats, psnr, trace_ordering};
use streamgs::render::{render_frame_reference, render_frame_streaming, sort_passes, RenderOptions};
use streamgs::scene::{generate_scene, Camera, Gaussian, Scene, SceneSpec, SH_COEFFS};
use streamgs::traffic::Stage;
use streamgs::voxel::build_grid;

fn constrained(n: usize, seed: u64) -> Scene {
    let spec = SceneSpec {
        max_extent_fraction: 0.5,
        ..SceneSpec::new(n, seed).constrained().with_margin(0.25)
    };
    generate_scene(&spec).unwrap()
}

fn camera(seed: u64, size: u32) -> Camera {
    let a = seed as f32 * 0.7;
    let eye = [12.0 * a.cos(), 3.0 + (seed % 3) as f32, 12.0 * a.sin()];
    Camera::look_at(eye, [0.0; 3], [0.0, -1.0, 0.0], size, size, 50.0).unwrap()
}

#[test]
fn constrained_scenes_match_reference() {
    for seed in 0..3 {
        let scene = constrained(1500, seed);
        let store = build_grid(&scene, 2.0).unwrap();
        let cam = camera(seed, 128);
        let opts = RenderOptions::default();
        let s = render_frame_streaming(&cam, &store, None, &opts).unwrap();
        let r = render_frame_reference(&cam, &scene, &opts).unwrap();
        assert!(s.frame.max_abs_diff(&r.frame).unwrap() <= 1e-4);
        assert!(psnr(&s.frame, &r.frame).unwrap() >= 60.0);
        assert_eq!(s.ledger.scene_hash, r.ledger.scene_hash);
    }
}

#[test]
fn early_exit_changes_little() {
    // Dense, opaque scene so that many tiles saturate.
    let spec = SceneSpec {
        opacity_range: (0.8, 0.99),
        max_extent_fraction: 0.9,
        ..SceneSpec::new(5000, 9)
    };
    let scene = generate_scene(&spec).unwrap();
    let store = build_grid(&scene, 2.0).unwrap();
    let cam = camera(1, 128);
    let on = RenderOptions::default();
    let off = RenderOptions {
        early_exit: false,
        ..RenderOptions::default()
    };
    let a = render_frame_streaming(&cam, &store, None, &on).unwrap();
    let b = render_frame_streaming(&cam, &store, None, &off).unwrap();
    assert!(a.early_exit_tiles > 0 && a.skipped_voxels > 0);
    assert_eq!(b.skipped_voxels, 0);
    assert!(a.frame.max_abs_diff(&b.frame).unwrap() <= 1e-3);
    assert!(a.ledger.total_bytes() < b.ledger.total_bytes());

    let ra = render_frame_reference(&cam, &scene, &on).unwrap();
    let rb = render_frame_reference(&cam, &scene, &off).unwrap();
    assert!(ra.frame.max_abs_diff(&rb.frame).unwrap() <= 1e-3);
}

#[test]
fn identical_across_worker_counts() {
    let scene = generate_scene(&SceneSpec::new(3000, 12)).unwrap();
    let store = build_grid(&scene, 1.0).unwrap();
    let cam = camera(2, 128);
    let run = |threads| {
        let opts = RenderOptions {
            threads: Some(threads),
            ..RenderOptions::default()
        };
        (
            render_frame_streaming(&cam, &store, None, &opts).unwrap(),
            render_frame_reference(&cam, &scene, &opts).unwrap(),
        )
    };
    let (s1, r1) = run(1);
    for t in [2, 3, 8] {
        let (s, r) = run(t);
        assert_eq!(s.frame, s1.frame);
        assert_eq!(s.ledger, s1.ledger);
        assert_eq!(s.stats, s1.stats);
        assert_eq!(r.frame, r1.frame);
        assert_eq!(r.ledger, r1.ledger);
    }
}

#[test]
fn small_voxel_capacity_splits_without_changing_pixels() {
    let scene = constrained(3000, 4);
    let store = build_grid(&scene, 2.0).unwrap();
    let cam = camera(4, 64);
    let wide = render_frame_streaming(&cam, &store, None, &RenderOptions::default()).unwrap();
    let narrow = RenderOptions {
        voxel_capacity: 4,
        ..RenderOptions::default()
    };
    let split = render_frame_streaming(&cam, &store, None, &narrow).unwrap();
    assert!(split.batch_splits > 0);
    assert_eq!(wide.batch_splits, 0);
    assert_eq!(split.frame, wide.frame);
}

#[test]
fn empty_scene_renders_background() {
    let scene = Scene::new(Vec::new());
    let store = build_grid(&scene, 2.0).unwrap();
    let cam = camera(0, 32);
    let opts = RenderOptions {
        background: [0.25, 0.5, 1.0],
        ..RenderOptions::default()
    };
    let s = render_frame_streaming(&cam, &store, None, &opts).unwrap();
    assert!(s.frame.data.chunks(3).all(|p| p == [0.25, 0.5, 1.0]));
    assert_eq!(s.ledger.intermediate_bytes(), 0);
    assert_eq!(s.ledger.bytes(Stage::PixelWriteback), 32 * 32 * 3);
    let r = render_frame_reference(&cam, &scene, &opts).unwrap();
    assert_eq!(r.frame, s.frame);
}

#[test]
fn reference_charges_follow_tile_lists() {
    let scene = generate_scene(&SceneSpec::new(2000, 13)).unwrap();
    let cam = camera(3, 96);
    let opts = RenderOptions {
        early_exit: false,
        ..RenderOptions::default()
    };
    let r = render_frame_reference(&cam, &scene, &opts).unwrap();

    let tiles: Vec<Tile> = Tile::all(&cam).collect();
    let mut per_tile = vec![0u64; tiles.len()];
    let mut writeback = 0u64;
    for g in &scene.gaussians {
        if let Projection::Visible(p) = project(g, &cam) {
            let hits: Vec<usize> = (0..tiles.len()).filter(|&i| disc_overlaps_tile(p.mean2d, p.radius, tiles[i])).collect();
            if !hits.is_empty() {
                writeback += 48 + 8 * hits.len() as u64;
            }
            for i in hits {
                per_tile[i] += 1;
            }
        }
    }
    let log2_ceil = |n: u64| if n < 2 { 0 } else { (n as f64).log2().ceil() as u64 };
    let sort: u64 = per_tile.iter().map(|&n| log2_ceil(n) * n * 16).sum();
    let entries: u64 = per_tile.iter().sum();
    assert_eq!(r.ledger.bytes(Stage::Projection), 236 * scene.len() as u64);
    assert_eq!(r.ledger.bytes(Stage::ProjectionWriteback), writeback);
    assert_eq!(r.ledger.bytes(Stage::SortSpill), sort);
    assert_eq!(r.ledger.bytes(Stage::RenderLoad), 48 * entries);
    assert_eq!(r.tile_entries, entries);
    for n in [0u64, 1, 2, 3, 4, 5, 1023, 1024, 1025] {
        assert_eq!(sort_passes(n), log2_ceil(n), "n = {n}");
    }
}

fn blob(id: u32, position: [f32; 3], scale: f32) -> Gaussian {
    let mut sh = [[0.0; 3]; SH_COEFFS];
    sh[0] = [0.5, -0.5, 0.2];
    Gaussian {
        id,
        position,
        scale: [scale; 3],
        rotation: [1.0, 0.0, 0.0, 0.0],
        opacity: 0.9,
        sh,
    }
}

#[test]
fn straddling_gaussians_show_ordering_penalty() {
    // Two side-by-side voxels at equal depth. Rays crossing from the left one into
    // the right one force the left voxel first, yet the right voxel holds the
    // nearer Gaussian.
    let scene = Scene::new(vec![blob(0, [1.5, 1.0, 1.9], 0.6), blob(1, [2.5, 1.0, 0.1], 0.6)]);
    let store = build_grid(&scene, 2.0).unwrap();
    assert_eq!(store.grid.occupied_count(), 2);
    assert_eq!(cross_boundary_stats(&scene, &store.grid).ratio, 1.0);

    let cam = Camera::look_at([0.0, 1.0, -10.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], 128, 128, 60.0).unwrap();
    let p = cam.to_camera([2.0, 1.0, 1.0]);
    let (u, v) = (cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy);
    let tile = Tile::new(u as u32 / 16, v as u32 / 16);
    let opts = RenderOptions {
        trace_tile: Some(tile),
        ..RenderOptions::default()
    };
    let s = render_frame_streaming(&cam, &store, None, &opts).unwrap();
    let trace = s.trace.expect("traced tile");
    let ordering = trace_ordering(&trace);
    assert!(ordering.per_tile.l_cbp > 0.0);
    assert!(ordering.per_pixel_mean.l_cbp > 0.0);

    // Independent scan of the same trace.
    let scan = |seq: &[(f32, f32)]| {
        let mut worst = f32::NEG_INFINITY;
        let mut sum = 0.0f64;
        for &(d, s) in seq {
            if d < worst {
                sum += s as f64;
            }
            worst = worst.max(d);
        }
        sum / seq.len() as f64
    };
    let pairs: Vec<(f32, f32)> = trace.tile_order.iter().map(|e| (e.depth, e.max_scale)).collect();
    assert!((scan(&pairs) - ordering.per_tile.l_cbp).abs() < 1e-12);
    let per_pixel: Vec<f64> = trace
        .pixel_orders
        .iter()
        .filter(|o| !o.is_empty())
        .map(|o| scan(&o.iter().map(|&i| pairs[i as usize]).collect::<Vec<_>>()))
        .collect();
    let mean = per_pixel.iter().sum::<f64>() / per_pixel.len() as f64;
    assert!((mean - ordering.per_pixel_mean.l_cbp).abs() < 1e-12);

    let r = render_frame_reference(&cam, &scene, &RenderOptions::default()).unwrap();
    assert!(s.frame.max_abs_diff(&r.frame).unwrap() > 1e-3);
}
