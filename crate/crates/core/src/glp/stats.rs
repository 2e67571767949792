use serde::Serialize;

use super::layerset::{LayerSetPlan, StageTally};
use super::placement::MappingPlan;
use crate::error::Result;
use crate::workload::LayerId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStat {
    pub layer: String,
    pub subarrays: u32,
    /// Groups holding at least one column of the layer.
    pub groups_active: u64,
    /// Sequential ADC conversions per group per input-bit cycle.
    pub degree: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingStats {
    pub mapping: String,
    pub acim_chiplets: u32,
    pub subarrays_used: u64,
    pub cells_allocated: u64,
    pub cells_used: u64,
    pub cells_wasted: u64,
    pub mean_degree: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_counts: Option<[StageTally; 4]>,
    pub layers: Vec<LayerStat>,
}

pub fn mapping_stats(plan: &MappingPlan, sets: Option<&LayerSetPlan>) -> Result<MappingStats> {
    let mut ids: Vec<LayerId> = plan.units.iter().flat_map(|u| u.members.iter().copied()).collect();
    ids.sort();
    let mut layers = Vec::with_capacity(ids.len());
    let mut cells_used = 0u64;
    for id in &ids {
        let fp = plan.footprint(id)?;
        cells_used += fp.subarrays.iter().map(|s| s.rows as u64 * s.columns as u64).sum::<u64>();
        layers.push(LayerStat {
            layer: id.to_string(),
            subarrays: fp.subarrays.len() as u32,
            groups_active: fp.groups_active(),
            degree: fp.degree(),
        });
    }
    let cells_allocated = plan.subarrays_used() * plan.sa_rows as u64 * plan.sa_cols as u64;
    let mean_degree = if layers.is_empty() {
        0.0
    } else {
        layers.iter().map(|l| l.degree as f64).sum::<f64>() / layers.len() as f64
    };
    Ok(MappingStats {
        mapping: plan.kind.to_string(),
        acim_chiplets: plan.n_acim_chiplets,
        subarrays_used: plan.subarrays_used(),
        cells_allocated,
        cells_used,
        cells_wasted: cells_allocated - cells_used,
        mean_degree,
        stage_counts: sets.map(|s| s.stage_counts),
        layers,
    })
}

impl MappingStats {
    /// Plain-text table, one line per layer.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "mapping={} chiplets={} subarrays={} cells_used={} cells_wasted={} mean_degree={:.3}\n",
            self.mapping, self.acim_chiplets, self.subarrays_used, self.cells_used, self.cells_wasted, self.mean_degree
        );
        out.push_str("layer\tsubarrays\tgroups_active\tdegree\n");
        for l in &self.layers {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", l.layer, l.subarrays, l.groups_active, l.degree));
        }
        out
    }
}
