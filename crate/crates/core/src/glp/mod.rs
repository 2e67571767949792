//! Group-level-parallel weight mapping: layer-set construction, augmented
//! matrices and physical placement.

mod interleave;
mod layerset;
mod placement;
mod stats;

pub use interleave::{deinterleave, interleave};
pub use layerset::{build_layersets, GlpLayerSet, LayerSetPlan, StageTally};
pub use placement::{
    build_mapping, place, place_layerwise, LayerFootprint, MappingKind, MappingPlan, MappingUnit, SlotCoord,
    SubarrayUse,
};
pub use stats::{mapping_stats, LayerStat, MappingStats};
