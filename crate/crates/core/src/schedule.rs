//! Per-tile voxel ordering: exact grid walking along every pixel ray collects
//! per-pixel front-to-back voxel lists, and a topological sort over the
//! dependencies they induce yields one voxel order for the whole tile.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::filter::Tile;
use crate::scene::{Aabb, Camera, TILE_SIZE};
use crate::voxel::VoxelGrid;

/// Front-to-back list of occupied voxels (renamed ids) for every pixel of a tile.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VoxelOrderingTable {
    pub pixels: Vec<Vec<u32>>,
}

/// Source voxel to the set of voxels that must follow it.
pub type AdjacencyTable = BTreeMap<u32, BTreeSet<u32>>;
/// Number of distinct sources per voxel.
pub type InDegreeTable = BTreeMap<u32, u32>;

/// Parametric entry and exit of a ray through a box, or `None` on a miss.
pub fn ray_box(origin: &Vector3<f32>, dir: &Vector3<f32>, b: &Aabb) -> Option<(f32, f32)> {
    let mut t0 = f32::NEG_INFINITY;
    let mut t1 = f32::INFINITY;
    for i in 0..3 {
        if dir[i] == 0.0 {
            if origin[i] < b.min[i] || origin[i] > b.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[i];
        let (mut a, mut c) = ((b.min[i] - origin[i]) * inv, (b.max[i] - origin[i]) * inv);
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        t0 = t0.max(a);
        t1 = t1.min(c);
    }
    (t1 >= t0.max(0.0)).then_some((t0, t1))
}

/// Occupied voxels pierced by the ray, in order, skipping empty ones through
/// the renaming table.
pub fn walk_ray(grid: &VoxelGrid, origin: &Vector3<f32>, dir: &Vector3<f32>) -> Vec<u32> {
    let mut out = Vec::new();
    let Some((t_enter, t_exit)) = ray_box(origin, dir, &grid.bounds()) else {
        return out;
    };
    let t_start = t_enter.max(0.0);
    let start = origin + dir * t_start;

    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f32::INFINITY; 3];
    let mut t_delta = [f32::INFINITY; 3];
    for i in 0..3 {
        let rel = (start[i] - grid.origin[i]) / grid.edge;
        cell[i] = (rel.floor() as i64).clamp(0, grid.dims[i] as i64 - 1);
        if dir[i] > 0.0 {
            step[i] = 1;
            let boundary = grid.origin[i] + (cell[i] + 1) as f32 * grid.edge;
            t_max[i] = (boundary - origin[i]) / dir[i];
            t_delta[i] = grid.edge / dir[i];
        } else if dir[i] < 0.0 {
            step[i] = -1;
            let boundary = grid.origin[i] + cell[i] as f32 * grid.edge;
            t_max[i] = (boundary - origin[i]) / dir[i];
            t_delta[i] = -grid.edge / dir[i];
        }
    }

    loop {
        let c = [cell[0] as u32, cell[1] as u32, cell[2] as u32];
        if let Some(vid_r) = grid.rename(grid.linear_id(c)) {
            out.push(vid_r);
        }
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[axis] > t_exit {
            break;
        }
        cell[axis] += step[axis];
        if cell[axis] < 0 || cell[axis] >= grid.dims[axis] as i64 {
            break;
        }
        t_max[axis] += t_delta[axis];
    }
    out
}

/// Walks the ray of every pixel in `tile`.
pub fn traverse(tile: Tile, camera: &Camera, grid: &VoxelGrid) -> VoxelOrderingTable {
    let mut pixels = Vec::with_capacity((TILE_SIZE * TILE_SIZE) as usize);
    for dy in 0..TILE_SIZE {
        for dx in 0..TILE_SIZE {
            let (o, d) = camera.pixel_ray(tile.x * TILE_SIZE + dx, tile.y * TILE_SIZE + dy);
            pixels.push(walk_ray(grid, &o, &d));
        }
    }
    VoxelOrderingTable { pixels }
}

impl VoxelOrderingTable {
    /// Distinct voxels across all pixels, ascending.
    pub fn voxels(&self) -> BTreeSet<u32> {
        self.pixels.iter().flatten().copied().collect()
    }

    /// Edges between consecutive entries of every per-pixel list.
    pub fn adjacency(&self) -> AdjacencyTable {
        let mut adj = AdjacencyTable::new();
        for list in &self.pixels {
            for w in list.windows(2) {
                if w[0] != w[1] {
                    adj.entry(w[0]).or_default().insert(w[1]);
                }
            }
        }
        adj
    }
}

pub fn in_degrees(voxels: &BTreeSet<u32>, adj: &AdjacencyTable) -> InDegreeTable {
    let mut deg: InDegreeTable = voxels.iter().map(|v| (*v, 0)).collect();
    for dsts in adj.values() {
        for d in dsts {
            *deg.entry(*d).or_default() += 1;
        }
    }
    deg
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub order: Vec<u32>,
    /// Times the ready set ran dry with voxels left and one had to be forced out.
    pub cycles_broken: u32,
}

#[derive(Clone, Copy, PartialEq)]
struct ReadyKey(f32, u32);

impl Eq for ReadyKey {}

impl PartialOrd for ReadyKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ReadyKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Kahn's algorithm over the table's dependency graph. Among ready voxels the
/// one with the smallest `depth` goes first (ties by id). If the graph has a
/// cycle, the remaining voxel with the smallest depth is released regardless
/// of its in-degree.
pub fn schedule(table: &VoxelOrderingTable, depth: impl Fn(u32) -> f32) -> Schedule {
    let voxels = table.voxels();
    let adj = table.adjacency();
    let mut indeg = in_degrees(&voxels, &adj);

    let mut ready: BinaryHeap<Reverse<ReadyKey>> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(v, _)| Reverse(ReadyKey(depth(*v), *v)))
        .collect();

    let mut out = Schedule {
        order: Vec::with_capacity(voxels.len()),
        cycles_broken: 0,
    };
    while out.order.len() < voxels.len() {
        let next = match ready.pop() {
            Some(Reverse(ReadyKey(_, v))) => v,
            None => {
                out.cycles_broken += 1;
                indeg
                    .keys()
                    .map(|v| ReadyKey(depth(*v), *v))
                    .min()
                    .expect("voxels remain")
                    .1
            }
        };
        indeg.remove(&next);
        out.order.push(next);
        if let Some(dsts) = adj.get(&next) {
            for d in dsts {
                if let Some(k) = indeg.get_mut(d) {
                    *k -= 1;
                    if *k == 0 {
                        ready.push(Reverse(ReadyKey(depth(*d), *d)));
                    }
                }
            }
        }
    }
    out
}

/// Writes the table's dependency graph, one `src dst` edge per line.
pub fn write_dag<W: Write>(mut w: W, table: &VoxelOrderingTable) -> std::io::Result<()> {
    for (src, dsts) in table.adjacency() {
        for dst in dsts {
            writeln!(w, "{src} {dst}")?;
        }
    }
    Ok(())
}

/// Number of per-pixel consecutive-pair constraints the order violates.
pub fn count_violations(table: &VoxelOrderingTable, order: &[u32]) -> usize {
    let pos: BTreeMap<u32, usize> = order.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    table
        .pixels
        .iter()
        .flat_map(|l| l.windows(2))
        .filter(|w| pos[&w[0]] >= pos[&w[1]])
        .count()
}
