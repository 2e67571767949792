//! Event-driven latency and energy simulation of one inference.

pub mod acim;
mod dataflow;
pub mod dcim;
pub mod des;
mod report;

use serde::{Deserialize, Serialize};

pub use acim::{acim_layer_latency, acim_subarray_cost, AcimCost};
pub use dataflow::{Endpoint, TaskMeta, TransferInfo};
pub use dcim::{dcim_block_cost, dcim_op_latency, DcimCost};
pub use des::{Category, PerCategory};
pub use report::{breakdown_speedup, BreakdownSpeedup, LayerTiming, SelfCheck, SimEvent, SimReport};

use crate::error::{Error, Result};
use crate::glp::{build_mapping, MappingKind, MappingPlan};
use crate::hwconfig::{validate, SystemConfig};
use crate::workload::ViTModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataflowMode {
    Native,
    Pipelined,
    Hemlet,
}

impl DataflowMode {
    pub const ALL: [DataflowMode; 3] = [DataflowMode::Native, DataflowMode::Pipelined, DataflowMode::Hemlet];
}

impl std::str::FromStr for DataflowMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "native" => Ok(DataflowMode::Native),
            "pipelined" | "pipeline" => Ok(DataflowMode::Pipelined),
            "hemlet" => Ok(DataflowMode::Hemlet),
            other => Err(Error::Parse(format!("unknown dataflow mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for DataflowMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataflowMode::Native => "native",
            DataflowMode::Pipelined => "pipelined",
            DataflowMode::Hemlet => "hemlet",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Static-layer inputs start out resident in the destination chiplet buffer.
    pub peak: bool,
    /// Keep per-task events in the report.
    pub event_log: bool,
    /// Overrides `nop.link_contention` from the config.
    pub link_contention: Option<bool>,
}

/// Validates the config, then maps and simulates.
pub fn run(spec: &ViTModelSpec, config: &SystemConfig, mapping: MappingKind, mode: DataflowMode) -> Result<SimReport> {
    run_with(spec, config, mapping, mode, &RunOptions::default())
}

pub fn run_with(
    spec: &ViTModelSpec,
    config: &SystemConfig,
    mapping: MappingKind,
    mode: DataflowMode,
    opts: &RunOptions,
) -> Result<SimReport> {
    validate(config, spec)?;
    let plan = build_mapping(spec, config, mapping)?;
    simulate(spec, config, &plan, mode, opts)
}

/// Simulates an existing mapping.
pub fn simulate(
    spec: &ViTModelSpec,
    config: &SystemConfig,
    plan: &MappingPlan,
    mode: DataflowMode,
    opts: &RunOptions,
) -> Result<SimReport> {
    let built = dataflow::build(spec, config, plan, mode, opts)?;
    let schedule = built.sched.run()?;
    Ok(report::assemble(spec, config, plan, mode, opts.peak, &built, &schedule, opts.event_log))
}
