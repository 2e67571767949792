//! Physical placement of layer sets onto ACIM subarrays.
//!
//! Each mapping unit (one GLP set, or one layer under layer-wise mapping) gets a
//! contiguous run of subarrays. Inside a unit, augmented column position `p`
//! lands in group block `p / M` at slot `p % M`; each group block expands to one
//! physical group per bit-slice, all holding the same slot layout. Row tiles of
//! one column tile are adjacent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::layerset::LayerSetPlan;
use crate::error::{Error, Result};
use crate::hwconfig::SystemConfig;
use crate::workload::{LayerId, ViTModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    Layerwise,
    Glp,
}

impl std::str::FromStr for MappingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "layerwise" | "layer-wise" | "baseline" => Ok(MappingKind::Layerwise),
            "glp" => Ok(MappingKind::Glp),
            other => Err(Error::Parse(format!("unknown mapping kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for MappingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MappingKind::Layerwise => "layerwise",
            MappingKind::Glp => "glp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SlotCoord {
    pub chiplet: u32,
    pub pe: u32,
    pub subarray: u32,
    /// Group index inside the subarray.
    pub group: u32,
    pub slot: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MappingUnit {
    /// Index into `LayerSetPlan::glp_sets` for GLP units.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub glp_set: Option<usize>,
    /// Members in slot order.
    pub members: Vec<LayerId>,
    /// Augmented-column stride: `M` for GLP units (empty slots padded), 1 for layer-wise.
    pub stride: u32,
    pub rows: u32,
    pub cols: u32,
    pub row_tiles: u32,
    pub col_tiles: u32,
    /// Global index of the unit's first subarray.
    pub first_subarray: u64,
}

impl MappingUnit {
    pub fn subarrays(&self) -> u64 {
        self.row_tiles as u64 * self.col_tiles as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingPlan {
    pub kind: MappingKind,
    pub group_size: u32,
    /// Physical columns per logical weight column (`ceil(weight_bits / cell_bits)`).
    pub slices: u32,
    pub sa_rows: u32,
    pub sa_cols: u32,
    pub sa_per_pe: u32,
    pub pe_per_chiplet: u32,
    pub n_acim_chiplets: u32,
    pub units: Vec<MappingUnit>,
    /// Row-tiled layers need cross-tile partial-sum accumulation.
    pub partial_sum_tiles: u32,
    #[serde(skip)]
    index: BTreeMap<LayerId, (usize, u32)>,
}

/// One subarray as seen by one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubarrayUse {
    pub global: u64,
    pub chiplet: u32,
    /// Global PE index.
    pub pe: u64,
    /// Wordlines driven (rows of this tile).
    pub rows: u32,
    /// Physical columns of this layer in the subarray.
    pub columns: u32,
    /// Groups holding at least one of those columns.
    pub groups: u32,
    /// Max columns of this layer sharing one group.
    pub degree: u32,
    pub row_tile: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFootprint {
    pub layer: LayerId,
    pub subarrays: Vec<SubarrayUse>,
    pub row_tiles: u32,
    /// Logical output columns per chiplet (attributed to the first slice, first row tile).
    pub out_cols_by_chiplet: BTreeMap<u32, u32>,
}

impl LayerFootprint {
    pub fn degree(&self) -> u32 {
        self.subarrays.iter().map(|s| s.degree).max().unwrap_or(0)
    }

    pub fn groups_active(&self) -> u64 {
        self.subarrays.iter().map(|s| s.groups as u64).sum()
    }

    pub fn chiplets(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.subarrays.iter().map(|s| s.chiplet).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

impl MappingPlan {
    pub fn unit_of(&self, layer: &LayerId) -> Option<(&MappingUnit, u32)> {
        self.index.get(layer).map(|&(u, slot)| (&self.units[u], slot))
    }

    pub fn sa_per_chiplet(&self) -> u64 {
        self.pe_per_chiplet as u64 * self.sa_per_pe as u64
    }

    pub fn total_groups(&self) -> u64 {
        self.n_acim_chiplets as u64 * self.sa_per_chiplet() * (self.sa_cols / self.group_size) as u64
    }

    pub fn subarrays_used(&self) -> u64 {
        self.units.iter().map(|u| u.subarrays()).sum()
    }

    /// Coordinate of one physical cell column: logical column `col` of `layer`,
    /// bit-slice `slice`, row tile `row_tile`.
    pub fn locate(&self, layer: &LayerId, col: u32, slice: u32, row_tile: u32) -> Option<SlotCoord> {
        let (unit, member) = self.unit_of(layer)?;
        if col >= unit.cols || slice >= self.slices || row_tile >= unit.row_tiles {
            return None;
        }
        let (col_tile, col_in_sa) = self.unit_column(unit, member, col, slice);
        let global = unit.first_subarray + col_tile as u64 * unit.row_tiles as u64 + row_tile as u64;
        Some(self.coord(global, col_in_sa))
    }

    fn unit_column(&self, unit: &MappingUnit, member: u32, col: u32, slice: u32) -> (u32, u32) {
        let m = self.group_size;
        let pos = col * unit.stride + member;
        let group = (pos / m) * self.slices + slice;
        let phys = group * m + pos % m;
        (phys / self.sa_cols, phys % self.sa_cols)
    }

    fn coord(&self, global: u64, col_in_sa: u32) -> SlotCoord {
        let per_chiplet = self.sa_per_chiplet();
        let local = global % per_chiplet;
        SlotCoord {
            chiplet: (global / per_chiplet) as u32,
            pe: (local / self.sa_per_pe as u64) as u32,
            subarray: (local % self.sa_per_pe as u64) as u32,
            group: col_in_sa / self.group_size,
            slot: col_in_sa % self.group_size,
        }
    }

    /// Every placed physical column as `(layer, col, slice, row_tile) → coordinate`.
    pub fn placements(&self) -> impl Iterator<Item = ((LayerId, u32, u32, u32), SlotCoord)> + '_ {
        self.units.iter().flat_map(move |unit| {
            unit.members.iter().flat_map(move |layer| {
                (0..unit.cols).flat_map(move |c| {
                    (0..self.slices).flat_map(move |s| {
                        (0..unit.row_tiles).map(move |r| {
                            ((*layer, c, s, r), self.locate(layer, c, s, r).expect("member is placed"))
                        })
                    })
                })
            })
        })
    }

    pub fn footprint(&self, layer: &LayerId) -> Result<LayerFootprint> {
        let (unit, member) = self
            .unit_of(layer)
            .ok_or_else(|| Error::Unplaced(layer.to_string()))?;
        // (col_tile) -> group -> columns
        let mut per_tile: BTreeMap<u32, BTreeMap<u32, u32>> = BTreeMap::new();
        let mut out_tiles: BTreeMap<u32, u32> = BTreeMap::new();
        for c in 0..unit.cols {
            for s in 0..self.slices {
                let (tile, col_in_sa) = self.unit_column(unit, member, c, s);
                *per_tile
                    .entry(tile)
                    .or_default()
                    .entry(col_in_sa / self.group_size)
                    .or_default() += 1;
                if s == 0 {
                    *out_tiles.entry(tile).or_default() += 1;
                }
            }
        }
        let mut subarrays = Vec::new();
        let mut out_cols_by_chiplet = BTreeMap::new();
        for (&tile, groups) in &per_tile {
            let columns = groups.values().sum();
            let degree = *groups.values().max().unwrap_or(&0);
            for r in 0..unit.row_tiles {
                let global = unit.first_subarray + tile as u64 * unit.row_tiles as u64 + r as u64;
                let coord = self.coord(global, 0);
                let rows = (unit.rows - r * self.sa_rows).min(self.sa_rows);
                subarrays.push(SubarrayUse {
                    global,
                    chiplet: coord.chiplet,
                    pe: global / self.sa_per_pe as u64,
                    rows,
                    columns,
                    groups: groups.len() as u32,
                    degree,
                    row_tile: r,
                });
                if r == 0 {
                    *out_cols_by_chiplet.entry(coord.chiplet).or_insert(0) += out_tiles.get(&tile).copied().unwrap_or(0);
                }
            }
        }
        Ok(LayerFootprint {
            layer: *layer,
            subarrays,
            row_tiles: unit.row_tiles,
            out_cols_by_chiplet,
        })
    }
}

fn unit_for(
    glp_set: Option<usize>,
    members: Vec<LayerId>,
    stride: u32,
    rows: u32,
    cols: u32,
    config: &SystemConfig,
    slices: u32,
) -> MappingUnit {
    let a = &config.acim;
    let m = a.group_size;
    let positions = cols * stride;
    let phys_cols = positions.div_ceil(m) * slices * m;
    MappingUnit {
        glp_set,
        members,
        stride,
        rows,
        cols,
        row_tiles: rows.div_ceil(a.sa_rows),
        col_tiles: phys_cols.div_ceil(a.sa_cols),
        first_subarray: 0,
    }
}

fn assign(
    kind: MappingKind,
    mut units: Vec<MappingUnit>,
    spec: &ViTModelSpec,
    config: &SystemConfig,
) -> Result<MappingPlan> {
    let a = &config.acim;
    let per_chiplet = a.sa_per_chiplet();
    let total: u64 = units.iter().map(|u| u.subarrays()).sum();
    let n_chiplets = match config.system.n_acim_chiplets {
        Some(n) => n as u64,
        None => total.div_ceil(per_chiplet).max(1),
    };
    let available = n_chiplets * per_chiplet;
    let mut next = 0u64;
    let mut index = BTreeMap::new();
    for (u, unit) in units.iter_mut().enumerate() {
        if next + unit.subarrays() > available {
            return Err(Error::Capacity {
                layer: unit.members.first().map(|l| l.to_string()).unwrap_or_default(),
                needed: total,
                available,
            });
        }
        unit.first_subarray = next;
        next += unit.subarrays();
        for (slot, layer) in unit.members.iter().enumerate() {
            index.insert(*layer, (u, slot as u32));
        }
    }
    let d = spec.embed_dim;
    Ok(MappingPlan {
        kind,
        group_size: a.group_size,
        slices: a.slices(spec.weight_bits),
        sa_rows: a.sa_rows,
        sa_cols: a.sa_cols,
        sa_per_pe: a.sa_per_pe,
        pe_per_chiplet: a.pe_per_chiplet,
        n_acim_chiplets: n_chiplets as u32,
        units,
        partial_sum_tiles: d.div_ceil(a.sa_rows),
        index,
    })
}

/// GLP placement: layer sets first in set order, then the baseline set layer-wise.
pub fn place(plan: &LayerSetPlan, spec: &ViTModelSpec, config: &SystemConfig) -> Result<MappingPlan> {
    let d = spec.embed_dim;
    let slices = config.acim.slices(spec.weight_bits);
    let m = config.acim.group_size;
    let mut units: Vec<MappingUnit> = plan
        .glp_sets
        .iter()
        .enumerate()
        .map(|(i, set)| unit_for(Some(i), set.members.clone(), m, d, d, config, slices))
        .collect();
    units.extend(
        plan.baseline_set
            .iter()
            .map(|l| unit_for(None, vec![*l], 1, d, d, config, slices)),
    );
    assign(MappingKind::Glp, units, spec, config)
}

/// Conventional mapping: every layer on its own subarrays, columns packed into groups.
pub fn place_layerwise(spec: &ViTModelSpec, config: &SystemConfig) -> Result<MappingPlan> {
    let slices = config.acim.slices(spec.weight_bits);
    let units = spec
        .static_layers()
        .into_iter()
        .map(|l| unit_for(None, vec![l.id], 1, l.rows, l.cols, config, slices))
        .collect();
    assign(MappingKind::Layerwise, units, spec, config)
}

/// Builds the mapping of the requested kind.
pub fn build_mapping(spec: &ViTModelSpec, config: &SystemConfig, kind: MappingKind) -> Result<MappingPlan> {
    match kind {
        MappingKind::Layerwise => place_layerwise(spec, config),
        MappingKind::Glp => {
            let plan = super::build_layersets(spec, config.acim.group_size)?;
            place(&plan, spec, config)
        }
    }
}
