use serde::Serialize;

use crate::hwconfig::DcimConfig;
use crate::workload::{DynamicKind, DynamicOp};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DcimCost {
    pub write_ns: f64,
    pub compute_ns: f64,
    pub write_pj: f64,
    pub mac_pj: f64,
    pub macs: u64,
    pub blocks: u64,
}

impl DcimCost {
    pub fn ns(&self) -> f64 {
        self.write_ns + self.compute_ns
    }

    pub fn pj(&self) -> f64 {
        self.write_pj + self.mac_pj
    }

    fn add(&mut self, o: &DcimCost) {
        self.write_ns += o.write_ns;
        self.compute_ns += o.compute_ns;
        self.write_pj += o.write_pj;
        self.mac_pj += o.mac_pj;
        self.macs += o.macs;
        self.blocks += o.blocks;
    }
}

/// One key block of `block` tokens on a single DCIM PE.
///
/// The stationary operand is the key-side block: `d_h x block` for `QK^T`,
/// `block x d_h` for `PV`. All `L` query rows stream through it bit-serially.
pub fn dcim_block_cost(op: &DynamicOp, block: u32, dcim: &DcimConfig, act_bits: u32) -> DcimCost {
    let (rows, cols) = match op.kind {
        DynamicKind::Qkt => (op.head_dim, block),
        DynamicKind::Pv => (block, op.head_dim),
    };
    let row_tiles = rows.div_ceil(dcim.sa_rows) as u64;
    let col_tiles = cols.div_ceil(dcim.sa_cols) as u64;
    let waves = (row_tiles * col_tiles).div_ceil(dcim.sa_per_pe as u64);
    let rows_per_tile = rows.min(dcim.sa_rows) as u64;
    let macs = op.seq_len as u64 * op.head_dim as u64 * block as u64;
    DcimCost {
        write_ns: waves as f64 * rows_per_tile as f64 * dcim.t_write_ns,
        compute_ns: waves as f64 * op.seq_len as f64 * act_bits as f64 * dcim.t_cycle_ns,
        write_pj: rows as f64 * col_tiles as f64 * dcim.e_write_pj,
        mac_pj: macs as f64 * dcim.e_mac_pj,
        macs,
        blocks: 1,
    }
}

/// Token blocks `[0, L)` cut into pieces of at most `block`.
pub fn block_sizes(seq_len: u32, block: u32) -> impl Iterator<Item = u32> {
    let block = block.clamp(1, seq_len.max(1));
    (0..seq_len.div_ceil(block)).map(move |j| block.min(seq_len - j * block))
}

/// Whole operator processed as `ceil(L/B)` key blocks, one after another.
pub fn dcim_op_latency(op: &DynamicOp, dcim: &DcimConfig, block: u32, act_bits: u32) -> DcimCost {
    let mut total = DcimCost::default();
    for bl in block_sizes(op.seq_len, block) {
        total.add(&dcim_block_cost(op, bl, dcim, act_bits));
    }
    total
}
