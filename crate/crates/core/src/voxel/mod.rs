//! Scene partitioning into a regular voxel grid, the renaming table over
//! occupied voxels, and per-voxel records in the split first-half / second-half
//! layout.

mod file;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::{Aabb, Gaussian, Scene};
use crate::traffic::{Stage, TrafficLedger, COARSE_RECORD_BYTES, RAW_SECOND_HALF_BYTES};
use crate::vq::{decode, encode, CodebookSet, EncodedGaussian, SecondHalf};

/// Regular grid aligned to integer multiples of `edge`, plus the renaming table
/// that maps linear voxel ids of occupied voxels onto `0..occupied_count()`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub origin: [f32; 3],
    pub edge: f32,
    pub dims: [u32; 3],
    /// Linear ids of occupied voxels, ascending. The position in this list is the renamed id.
    occupied: Vec<u64>,
}

impl VoxelGrid {
    fn covering(bounds: &Aabb, edge: f32) -> Self {
        let origin = bounds.min.map(|m| (m / edge).floor() * edge);
        let dims = std::array::from_fn(|i| ((bounds.max[i] - origin[i]) / edge).floor() as u32 + 1);
        Self {
            origin,
            edge,
            dims,
            occupied: Vec::new(),
        }
    }

    /// Grid cell containing `p`, clamped into the grid. Points on a face belong
    /// to the voxel whose minimum corner lies on that face.
    pub fn cell_of(&self, p: [f32; 3]) -> [u32; 3] {
        std::array::from_fn(|i| {
            let c = ((p[i] - self.origin[i]) / self.edge).floor();
            c.clamp(0.0, (self.dims[i] - 1) as f32) as u32
        })
    }

    pub fn linear_id(&self, cell: [u32; 3]) -> u64 {
        let [dx, dy, _] = self.dims.map(|d| d as u64);
        cell[0] as u64 + dx * (cell[1] as u64 + dy * cell[2] as u64)
    }

    pub fn cell_from_linear(&self, vid: u64) -> [u32; 3] {
        let [dx, dy, _] = self.dims.map(|d| d as u64);
        [(vid % dx) as u32, ((vid / dx) % dy) as u32, (vid / (dx * dy)) as u32]
    }

    /// Renamed id of an occupied voxel; `None` for empty voxels.
    pub fn rename(&self, vid: u64) -> Option<u32> {
        self.occupied.binary_search(&vid).ok().map(|i| i as u32)
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.len()
    }

    /// The renaming table: `renaming()[vid_r]` is the linear id.
    pub fn renaming(&self) -> &[u64] {
        &self.occupied
    }

    pub fn cell_aabb(&self, cell: [u32; 3]) -> Aabb {
        let min: [f32; 3] = std::array::from_fn(|i| self.origin[i] + cell[i] as f32 * self.edge);
        Aabb::new(min, min.map(|m| m + self.edge))
    }

    pub fn voxel_aabb(&self, vid_r: u32) -> Aabb {
        self.cell_aabb(self.cell_from_linear(self.occupied[vid_r as usize]))
    }

    pub fn voxel_center(&self, vid_r: u32) -> [f32; 3] {
        let b = self.voxel_aabb(vid_r);
        std::array::from_fn(|i| 0.5 * (b.min[i] + b.max[i]))
    }

    /// World-space box covered by the whole grid.
    pub fn bounds(&self) -> Aabb {
        let max = std::array::from_fn(|i| self.origin[i] + self.dims[i] as f32 * self.edge);
        Aabb::new(self.origin, max)
    }
}

/// First-half parameters: all the coarse filter reads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoarseEntry {
    pub position: [f32; 3],
    pub max_scale: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FineBlock {
    Raw(Vec<SecondHalf>),
    Encoded(Vec<EncodedGaussian>),
}

impl FineBlock {
    pub fn len(&self) -> usize {
        match self {
            FineBlock::Raw(v) => v.len(),
            FineBlock::Encoded(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All Gaussians of one occupied voxel, ordered by ascending id.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelRecord {
    pub vid_r: u32,
    pub coarse: Vec<CoarseEntry>,
    pub fine: FineBlock,
    pub ids: Vec<u32>,
}

impl VoxelRecord {
    pub fn count(&self) -> usize {
        self.ids.len()
    }
}

/// A partitioned scene: the grid and one record per occupied voxel, sorted by renamed id.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelStore {
    pub grid: VoxelGrid,
    pub records: Vec<VoxelRecord>,
}

/// Partitions `scene` by Gaussian center into cubes of side `edge`.
pub fn build_grid(scene: &Scene, edge: f32) -> Result<VoxelStore> {
    if !(edge > 0.0 && edge.is_finite()) {
        return Err(Error::Precondition(format!("voxel edge {edge} must be positive")));
    }
    let mut grid = VoxelGrid::covering(&scene.bounds, edge);

    let mut keyed: Vec<(u64, &Gaussian)> = scene
        .gaussians
        .iter()
        .map(|g| (grid.linear_id(grid.cell_of(g.position)), g))
        .collect();
    keyed.sort_by_key(|(vid, g)| (*vid, g.id));

    let mut records: Vec<VoxelRecord> = Vec::new();
    for (vid, g) in keyed {
        if grid.occupied.last() != Some(&vid) {
            grid.occupied.push(vid);
            records.push(VoxelRecord {
                vid_r: records.len() as u32,
                coarse: Vec::new(),
                fine: FineBlock::Raw(Vec::new()),
                ids: Vec::new(),
            });
        }
        let rec = records.last_mut().unwrap();
        rec.coarse.push(CoarseEntry {
            position: g.position,
            max_scale: g.max_scale(),
        });
        if let FineBlock::Raw(v) = &mut rec.fine {
            v.push(SecondHalf::of(g));
        }
        rec.ids.push(g.id);
    }
    Ok(VoxelStore { grid, records })
}

impl VoxelStore {
    pub fn gaussian_count(&self) -> usize {
        self.records.iter().map(|r| r.count()).sum()
    }

    pub fn is_encoded(&self) -> bool {
        self.records.iter().any(|r| matches!(r.fine, FineBlock::Encoded(_)))
    }

    /// Copy of this store with every raw second half replaced by codebook indices.
    pub fn encode(&self, books: &CodebookSet) -> Result<VoxelStore> {
        let records = self
            .records
            .iter()
            .map(|r| {
                let fine = match &r.fine {
                    FineBlock::Raw(halves) => FineBlock::Encoded(
                        halves
                            .iter()
                            .zip(&r.coarse)
                            .zip(&r.ids)
                            .map(|((h, c), id)| encode(&h.into_gaussian(*id, c.position), books))
                            .collect(),
                    ),
                    FineBlock::Encoded(_) => {
                        return Err(Error::Precondition("voxel store is already encoded".into()))
                    }
                };
                Ok(VoxelRecord { fine, ..r.clone() })
            })
            .collect::<Result<_>>()?;
        Ok(VoxelStore {
            grid: self.grid.clone(),
            records,
        })
    }

    /// Reassembles the scene; encoded stores need their codebooks.
    pub fn to_scene(&self, books: Option<&CodebookSet>) -> Result<Scene> {
        let mut gaussians = Vec::with_capacity(self.gaussian_count());
        for r in &self.records {
            let all: Vec<usize> = (0..r.count()).collect();
            gaussians.extend(decode_fine(r, &all, books)?);
        }
        gaussians.sort_by_key(|g| g.id);
        Ok(Scene::new(gaussians))
    }

    /// All Gaussians as `(id, position)`, the content identity used by ledgers.
    pub fn positions(&self) -> impl Iterator<Item = (u32, [f32; 3])> + '_ {
        self.records
            .iter()
            .flat_map(|r| r.ids.iter().copied().zip(r.coarse.iter().map(|c| c.position)))
    }
}

/// Loads the first half of every Gaussian in `record`, charging the ledger.
pub fn stream_coarse<'a>(record: &'a VoxelRecord, ledger: &mut TrafficLedger) -> &'a [CoarseEntry] {
    let n = record.count() as u64;
    ledger.charge(Stage::CoarseLoad, n * COARSE_RECORD_BYTES, n);
    &record.coarse
}

fn decode_fine(record: &VoxelRecord, survivors: &[usize], books: Option<&CodebookSet>) -> Result<Vec<Gaussian>> {
    survivors
        .iter()
        .map(|&i| {
            if i >= record.count() {
                return Err(Error::Precondition(format!(
                    "survivor {i} outside voxel {} of {} Gaussians",
                    record.vid_r,
                    record.count()
                )));
            }
            let half = match &record.fine {
                FineBlock::Raw(v) => v[i].clone(),
                FineBlock::Encoded(v) => {
                    let books = books.ok_or_else(|| {
                        Error::Precondition("encoded voxel store requires codebooks".into())
                    })?;
                    decode(&v[i], books)?
                }
            };
            Ok(half.into_gaussian(record.ids[i], record.coarse[i].position))
        })
        .collect()
}

/// Loads and decodes the second half of the `survivors` only, charging the ledger
/// for exactly those records.
pub fn stream_fine(
    record: &VoxelRecord,
    survivors: &[usize],
    books: Option<&CodebookSet>,
    ledger: &mut TrafficLedger,
) -> Result<Vec<Gaussian>> {
    let decoded = decode_fine(record, survivors, books)?;
    let n = survivors.len() as u64;
    let (bytes, bits) = match &record.fine {
        FineBlock::Raw(_) => {
            let b = (SecondHalf::FLOATS * 4) as u64;
            (b, b * 8)
        }
        FineBlock::Encoded(_) => (
            EncodedGaussian::BYTES as u64,
            books.map(|b| b.packed_bits() as u64).unwrap_or(0),
        ),
    };
    ledger.charge(Stage::FineLoad, n * bytes, n);
    ledger.fine_raw_equivalent_bytes += n * RAW_SECOND_HALF_BYTES;
    ledger.fine_packed_bits += n * bits;
    Ok(decoded)
}
