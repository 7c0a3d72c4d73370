//! Throughput model of the streaming hardware: each stage's cycle count is its
//! work divided by its unit count, and with stages fully overlapped the frame
//! takes as long as the slowest one.

use serde::{Deserialize, Serialize};

use super::{COARSE_MACS, FINE_MACS};
use crate::error::{Error, Result};
use crate::filter::FilterStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfConfig {
    pub cfu_count: u32,
    pub ffu_count: u32,
    pub sorter_count: u32,
    pub renderer_count: u32,
    pub macs_per_unit_cycle: u32,
    pub coarse_macs: u64,
    pub fine_macs: u64,
}

impl Default for PerfConfig {
    fn default() -> Self {
        Self {
            cfu_count: 4,
            ffu_count: 1,
            sorter_count: 2,
            renderer_count: 64,
            macs_per_unit_cycle: 1,
            coarse_macs: COARSE_MACS,
            fine_macs: FINE_MACS,
        }
    }
}

impl PerfConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.cfu_count,
            self.ffu_count,
            self.sorter_count,
            self.renderer_count,
            self.macs_per_unit_cycle,
        ];
        if counts.contains(&0) {
            return Err(Error::Precondition("all unit counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Every unit count multiplied by `k`.
    pub fn scaled(&self, k: u32) -> Self {
        Self {
            cfu_count: self.cfu_count * k,
            ffu_count: self.ffu_count * k,
            sorter_count: self.sorter_count * k,
            renderer_count: self.renderer_count * k,
            ..self.clone()
        }
    }
}

/// Work items per stage for one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkCounts {
    pub loaded: u64,
    pub coarse_survivors: u64,
    /// Gaussians entering the per-voxel sort.
    pub sort_records: u64,
    /// Gaussian-pixel blend evaluations.
    pub render_fragments: u64,
}

impl WorkCounts {
    pub fn from_stats(stats: &FilterStats, render_fragments: u64) -> Self {
        Self {
            loaded: stats.loaded,
            coarse_survivors: stats.coarse_survivors,
            sort_records: stats.fine_survivors,
            render_fragments,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEstimate {
    pub name: String,
    pub work: f64,
    pub units: u32,
    pub cycles: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineEstimate {
    pub stages: Vec<StageEstimate>,
    pub bottleneck: String,
    pub total_cycles: f64,
    pub overlap_model: String,
}

pub fn estimate(config: &PerfConfig, work: &WorkCounts) -> Result<PipelineEstimate> {
    config.validate()?;
    let mpc = config.macs_per_unit_cycle as f64;
    let stage = |name: &str, work: f64, units: u32, per_cycle: f64| StageEstimate {
        name: name.to_string(),
        work,
        units,
        cycles: work / (units as f64 * per_cycle),
    };
    let stages = vec![
        stage(
            "coarse-filter",
            (work.loaded * config.coarse_macs) as f64,
            config.cfu_count,
            mpc,
        ),
        stage(
            "fine-filter",
            (work.coarse_survivors * config.fine_macs) as f64,
            config.ffu_count,
            mpc,
        ),
        stage("sorting", work.sort_records as f64, config.sorter_count, 1.0),
        stage("rendering", work.render_fragments as f64, config.renderer_count, 1.0),
    ];
    let mut bottleneck = &stages[0];
    for s in &stages[1..] {
        if s.cycles > bottleneck.cycles {
            bottleneck = s;
        }
    }
    Ok(PipelineEstimate {
        bottleneck: bottleneck.name.clone(),
        total_cycles: bottleneck.cycles,
        overlap_model: "perfect overlap: total = max over stage cycles".into(),
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config() {
        let c = PerfConfig::default();
        assert_eq!((c.cfu_count, c.ffu_count, c.sorter_count, c.renderer_count), (4, 1, 2, 64));
        assert_eq!(c.coarse_macs + c.fine_macs, 427);
    }

    #[test]
    fn zero_units_rejected() {
        let c = PerfConfig {
            ffu_count: 0,
            ..PerfConfig::default()
        };
        assert!(estimate(&c, &WorkCounts::default()).is_err());
    }

    #[test]
    fn doubling_cfus_halves_coarse_bound_total() {
        let w = WorkCounts {
            loaded: 1_000_000,
            coarse_survivors: 100,
            sort_records: 50,
            render_fragments: 1000,
        };
        let c = PerfConfig::default();
        let a = estimate(&c, &w).unwrap();
        assert_eq!(a.bottleneck, "coarse-filter");
        let b = estimate(&PerfConfig { cfu_count: 8, ..c }, &w).unwrap();
        assert_eq!(b.total_cycles * 2.0, a.total_cycles);
    }
}
