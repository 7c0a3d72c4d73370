use serde::{Deserialize, Serialize};

use super::{Stage, TrafficLedger};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageShare {
    pub bytes: u64,
    pub fraction: f64,
}

/// Traffic grouped into the three classic pipeline stages. Parameter loads of
/// either pipeline count as projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficBreakdown {
    pub projection: StageShare,
    pub sorting: StageShare,
    pub rendering: StageShare,
    pub intermediate: StageShare,
    pub total_bytes: u64,
}

pub fn traffic_breakdown(ledger: &TrafficLedger) -> Result<TrafficBreakdown> {
    let total = ledger.total_bytes();
    if total == 0 {
        return Err(Error::EmptyLedger);
    }
    let share = |bytes: u64| StageShare {
        bytes,
        fraction: bytes as f64 / total as f64,
    };
    let b = |s| ledger.bytes(s);
    Ok(TrafficBreakdown {
        projection: share(
            b(Stage::CoarseLoad) + b(Stage::FineLoad) + b(Stage::Projection) + b(Stage::ProjectionWriteback),
        ),
        sorting: share(b(Stage::SortSpill)),
        rendering: share(b(Stage::RenderLoad) + b(Stage::PixelWriteback)),
        intermediate: share(ledger.intermediate_bytes()),
        total_bytes: total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub stream_total_bytes: u64,
    pub reference_total_bytes: u64,
    pub stream_intermediate_bytes: u64,
    pub reference_intermediate_bytes: u64,
    pub intermediate_eliminated: bool,
    /// `1 - fine bytes / raw-equivalent fine bytes`, byte-aligned indices.
    pub second_half_reduction: f64,
    /// Same, with indices bit-packed.
    pub second_half_reduction_bitpacked: f64,
    /// `1 - fine survivors / loaded` in the streaming pipeline.
    pub gaussian_reduction: f64,
    /// `1 - stream total / reference total`.
    pub total_traffic_reduction: f64,
}

fn reduction(part: f64, whole: f64) -> f64 {
    if whole <= 0.0 {
        0.0
    } else {
        (1.0 - part / whole).clamp(0.0, 1.0)
    }
}

pub fn compare_pipelines(stream: &TrafficLedger, reference: &TrafficLedger) -> Result<ComparisonReport> {
    if stream.scene_hash != reference.scene_hash {
        return Err(Error::SceneMismatch(stream.scene_hash, reference.scene_hash));
    }
    let raw = stream.fine_raw_equivalent_bytes as f64;
    let loaded = stream.stage(Stage::CoarseLoad).records as f64;
    Ok(ComparisonReport {
        stream_total_bytes: stream.total_bytes(),
        reference_total_bytes: reference.total_bytes(),
        stream_intermediate_bytes: stream.intermediate_bytes(),
        reference_intermediate_bytes: reference.intermediate_bytes(),
        intermediate_eliminated: stream.intermediate_bytes() == 0,
        second_half_reduction: reduction(stream.bytes(Stage::FineLoad) as f64, raw),
        second_half_reduction_bitpacked: reduction(stream.fine_packed_bits as f64 / 8.0, raw),
        gaussian_reduction: reduction(stream.on_chip_sorted as f64, loaded),
        total_traffic_reduction: reduction(stream.total_bytes() as f64, reference.total_bytes() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::RAW_SECOND_HALF_BYTES;

    #[test]
    fn empty_ledger_is_an_error() {
        assert!(matches!(traffic_breakdown(&TrafficLedger::default()), Err(Error::EmptyLedger)));
    }

    #[test]
    fn fractions_sum_to_one() {
        let mut l = TrafficLedger::default();
        l.charge(Stage::Projection, 400, 1);
        l.charge(Stage::SortSpill, 500, 1);
        l.charge(Stage::PixelWriteback, 100, 1);
        let b = traffic_breakdown(&l).unwrap();
        assert_eq!(b.projection.fraction + b.sorting.fraction + b.rendering.fraction, 1.0);
        assert_eq!(b.intermediate.bytes, 500);
    }

    #[test]
    fn mismatched_scenes_rejected() {
        let a = TrafficLedger::new(1);
        let b = TrafficLedger::new(2);
        assert!(matches!(compare_pipelines(&a, &b), Err(Error::SceneMismatch(1, 2))));
    }

    #[test]
    fn default_packing_reduction() {
        let mut s = TrafficLedger::new(0);
        s.charge(Stage::FineLoad, 12 * 10, 10);
        s.fine_raw_equivalent_bytes = 10 * RAW_SECOND_HALF_BYTES;
        s.fine_packed_bits = 10 * 77;
        s.charge(Stage::CoarseLoad, 160, 10);
        s.on_chip_sorted = 10;
        let r = compare_pipelines(&s, &TrafficLedger::new(0)).unwrap();
        assert!((r.second_half_reduction - (1.0 - 12.0 / 220.0)).abs() < 1e-12);
        assert!((r.second_half_reduction_bitpacked - (1.0 - 9.625 / 220.0)).abs() < 1e-12);
        assert_eq!(r.gaussian_reduction, 0.0);
        assert!(r.intermediate_eliminated);
    }
}
