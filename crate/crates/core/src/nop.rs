//! Analytic 2D-mesh network-on-package: XY routing, no contention.

use serde::{Deserialize, Serialize};

use crate::hwconfig::NopConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeshCoord {
    pub x: u32,
    pub y: u32,
}

impl MeshCoord {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub src: MeshCoord,
    pub dst: MeshCoord,
    pub bytes: u64,
    pub tag: String,
}

/// Cost of one transfer, split into the per-hop router delay and the payload
/// serialization time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransferCost {
    pub hop_ns: f64,
    pub serialization_ns: f64,
    pub energy_pj: f64,
}

impl TransferCost {
    pub fn latency_ns(&self) -> f64 {
        self.hop_ns + self.serialization_ns
    }
}

/// Dimension-order (XY) route length.
pub fn route_hops(src: MeshCoord, dst: MeshCoord) -> u32 {
    src.x.abs_diff(dst.x) + src.y.abs_diff(dst.y)
}

/// Latency `hops·t_hop + bytes/bw` and energy `bytes·8·e_bit`. A transfer that
/// stays on one chiplet costs nothing here; buffer costs cover it.
pub fn transfer_cost(t: &Transfer, nop: &NopConfig) -> TransferCost {
    if t.src == t.dst {
        return TransferCost::default();
    }
    TransferCost {
        hop_ns: route_hops(t.src, t.dst) as f64 * nop.t_hop_ns,
        serialization_ns: t.bytes as f64 / nop.bw_gbps,
        energy_pj: t.bytes as f64 * 8.0 * nop.e_bit_pj,
    }
}
