use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Bytes of one first-half record: position (3) and max scale (1), 32-bit each.
pub const COARSE_RECORD_BYTES: u64 = 4 * 4;
/// Bytes of the 55 parameters left after the 4 first-half ones, uncompressed.
pub const RAW_SECOND_HALF_BYTES: u64 = 55 * 4;
/// Bytes of a full Gaussian (59 parameters).
pub const RAW_GAUSSIAN_BYTES: u64 = 59 * 4;
/// Projected feature record written back by the tile-centric projection stage:
/// mean2d (2), conic (3), rgb (3), opacity, depth, radius, id.
pub const PROJECTED_RECORD_BYTES: u64 = 48;
/// One (key, payload) record of the tile-centric sort.
pub const SORT_RECORD_BYTES: u64 = 8;
/// Final RGB8 pixel.
pub const PIXEL_BYTES: u64 = 3;

/// Multiply-accumulates of the coarse filter per Gaussian.
pub const COARSE_MACS: u64 = 55;
/// Additional multiply-accumulates of the fine filter per coarse survivor.
pub const FINE_MACS: u64 = 427 - COARSE_MACS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    CoarseLoad,
    FineLoad,
    Projection,
    ProjectionWriteback,
    SortSpill,
    RenderLoad,
    PixelWriteback,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::CoarseLoad,
        Stage::FineLoad,
        Stage::Projection,
        Stage::ProjectionWriteback,
        Stage::SortSpill,
        Stage::RenderLoad,
        Stage::PixelWriteback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::CoarseLoad => "coarse-load",
            Stage::FineLoad => "fine-load",
            Stage::Projection => "projection",
            Stage::ProjectionWriteback => "projection-writeback",
            Stage::SortSpill => "sort-spill",
            Stage::RenderLoad => "render-load",
            Stage::PixelWriteback => "pixel-writeback",
        }
    }

    /// Stages that move data produced by one pipeline stage and consumed by another.
    pub fn is_intermediate(self) -> bool {
        matches!(self, Stage::ProjectionWriteback | Stage::SortSpill | Stage::RenderLoad)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounter {
    pub bytes: u64,
    pub records: u64,
}

/// Off-chip byte and MAC counters. Each worker owns one; [`TrafficLedger::merge`]
/// folds them together (plain sums, so merge order does not matter).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficLedger {
    stages: [StageCounter; 7],
    pub macs_coarse: u64,
    pub macs_fine: u64,
    /// What the fine-load records would cost uncompressed, 55 x 32-bit each.
    pub fine_raw_equivalent_bytes: u64,
    /// Fine-load volume if codebook indices were bit-packed instead of byte-aligned.
    pub fine_packed_bits: u64,
    /// Gaussians sorted in on-chip buffers (no off-chip traffic).
    pub on_chip_sorted: u64,
    /// Identifies the scene and camera the ledger was produced for.
    pub scene_hash: u64,
}

impl TrafficLedger {
    pub fn new(scene_hash: u64) -> Self {
        Self {
            scene_hash,
            ..Self::default()
        }
    }

    pub fn charge(&mut self, stage: Stage, bytes: u64, records: u64) {
        let c = &mut self.stages[stage as usize];
        c.bytes += bytes;
        c.records += records;
    }

    pub fn stage(&self, stage: Stage) -> StageCounter {
        self.stages[stage as usize]
    }

    pub fn bytes(&self, stage: Stage) -> u64 {
        self.stage(stage).bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.stages.iter().map(|s| s.bytes).sum()
    }

    pub fn intermediate_bytes(&self) -> u64 {
        Stage::ALL.iter().filter(|s| s.is_intermediate()).map(|s| self.bytes(*s)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_bytes() == 0
    }

    pub fn merge(&mut self, other: &TrafficLedger) {
        for (a, b) in self.stages.iter_mut().zip(other.stages.iter()) {
            a.bytes += b.bytes;
            a.records += b.records;
        }
        self.macs_coarse += other.macs_coarse;
        self.macs_fine += other.macs_fine;
        self.fine_raw_equivalent_bytes += other.fine_raw_equivalent_bytes;
        self.fine_packed_bits += other.fine_packed_bits;
        self.on_chip_sorted += other.on_chip_sorted;
    }

    pub fn stage_map(&self) -> BTreeMap<&'static str, StageCounter> {
        Stage::ALL.iter().map(|s| (s.name(), self.stage(*s))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_constants() {
        assert_eq!(COARSE_MACS, 55);
        assert_eq!(COARSE_MACS + FINE_MACS, 427);
    }

    #[test]
    fn merge_adds_counters() {
        let mut a = TrafficLedger::new(1);
        a.charge(Stage::CoarseLoad, 160, 10);
        let mut b = TrafficLedger::new(1);
        b.charge(Stage::CoarseLoad, 16, 1);
        b.charge(Stage::SortSpill, 64, 4);
        b.macs_fine = 372;
        a.merge(&b);
        assert_eq!(a.stage(Stage::CoarseLoad), StageCounter { bytes: 176, records: 11 });
        assert_eq!(a.intermediate_bytes(), 64);
        assert_eq!(a.macs_fine, 372);
        assert_eq!(a.stage_map()["sort-spill"].records, 4);
    }
}
