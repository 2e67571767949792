//! Expands one inference into a task DAG for the chosen dataflow.

use std::collections::{BTreeMap, BTreeSet};

use super::acim::acim_subarray_cost;
use super::dcim::{block_sizes, dcim_block_cost, dcim_op_latency, DcimCost};
use super::des::{ns_to_ps, PerCategory, ResourceId, Scheduler, Task, TaskId, TaskKind};
use super::{DataflowMode, RunOptions};
use crate::error::{Error, Result};
use crate::glp::{LayerFootprint, MappingPlan};
use crate::hwconfig::{auto_mesh, AccessCost, Floorplan, SystemConfig};
use crate::nop::{transfer_cost, MeshCoord, Transfer};
use crate::workload::{DynamicKind, DynamicOp, LayerId, LayerKind, ViTModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Endpoint {
    Idp,
    Acim(u32),
    Dcim(u32),
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Idp => f.write_str("idp"),
            Endpoint::Acim(c) => write!(f, "acim{c}"),
            Endpoint::Dcim(c) => write!(f, "dcim{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferInfo {
    pub tag: &'static str,
    pub src: Endpoint,
    pub dst: Endpoint,
    /// Bytes carried over the package network (zero when both ends are the same chiplet).
    pub nop_bytes: u64,
}

/// Bookkeeping attached to every task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskMeta {
    /// Transformer block.
    pub block: u32,
    pub layer: Option<LayerId>,
    pub static_macs: u64,
    pub dynamic_macs: u64,
    /// ADC groups kept busy during the SA part of the task.
    pub adc_groups: u64,
    /// Task belongs to the ACIM side (static-layer transfers, staging, compute).
    pub acim: bool,
    pub transfer: Option<TransferInfo>,
}

#[derive(Debug, Clone, Copy)]
enum OutRoute {
    Idp(&'static str),
    /// Split by head ownership across the DCIM chiplets.
    DcimHeads,
}

pub(crate) struct Built {
    pub sched: Scheduler<TaskMeta>,
}

struct Builder<'a> {
    spec: &'a ViTModelSpec,
    cfg: &'a SystemConfig,
    map: &'a MappingPlan,
    mode: DataflowMode,
    opts: RunOptions,
    floor: Floorplan,
    s: Scheduler<TaskMeta>,
    fps: BTreeMap<LayerId, LayerFootprint>,
    unit_of: BTreeMap<LayerId, usize>,
    act_bytes: u64,
    token_blocks: Vec<u64>,
    idp_simd: ResourceId,
    block: u32,
}

fn simd_ps(elements: u64, width: u32, t_ns: f64) -> u64 {
    ns_to_ps(elements.div_ceil(width.max(1) as u64) as f64 * t_ns)
}

fn access(cost: AccessCost, bytes: u64) -> (u64, f64) {
    (ns_to_ps(cost.ns_per_byte * bytes as f64), cost.pj_per_byte * bytes as f64)
}

impl<'a> Builder<'a> {
    fn new(
        spec: &'a ViTModelSpec,
        cfg: &'a SystemConfig,
        map: &'a MappingPlan,
        mode: DataflowMode,
        opts: RunOptions,
    ) -> Result<Self> {
        let n_dcim = cfg.system.n_dcim_chiplets;
        let total = map.n_acim_chiplets + n_dcim + 1;
        let (mx, my) = match (cfg.nop.mesh_x, cfg.nop.mesh_y) {
            (Some(x), Some(y)) => (x, y),
            _ => auto_mesh(total),
        };
        let floor = Floorplan::new(mx, my, map.n_acim_chiplets, n_dcim)?;
        let mut fps = BTreeMap::new();
        let mut unit_of = BTreeMap::new();
        for (u, unit) in map.units.iter().enumerate() {
            for l in &unit.members {
                unit_of.insert(*l, u);
                fps.insert(*l, map.footprint(l)?);
            }
        }
        let l = spec.seq_len;
        let block_tokens = match mode {
            DataflowMode::Native => l,
            DataflowMode::Pipelined | DataflowMode::Hemlet => cfg.system.block_tokens,
        };
        let token_blocks = block_sizes(l, block_tokens).map(u64::from).collect();
        let mut s = Scheduler::default();
        let idp_simd = s.resource("idp.simd", 1);
        Ok(Self {
            spec,
            cfg,
            map,
            mode,
            opts,
            floor,
            s,
            fps,
            unit_of,
            act_bytes: spec.act_bytes(),
            token_blocks,
            idp_simd,
            block: 0,
        })
    }

    fn coord(&self, e: Endpoint) -> MeshCoord {
        match e {
            Endpoint::Idp => self.floor.idp,
            Endpoint::Acim(c) => self.floor.acim[c as usize],
            Endpoint::Dcim(c) => self.floor.dcim[c as usize],
        }
    }

    fn buffer_pj(&self, e: Endpoint, write: bool) -> f64 {
        match (e, write) {
            (Endpoint::Idp, false) => self.cfg.idp.e_buf_read_pj,
            (Endpoint::Idp, true) => self.cfg.idp.e_buf_write_pj,
            _ => self.cfg.system.chiplet_buffer.pj_per_byte,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn task(
        &mut self,
        kind: TaskKind,
        tag: String,
        deps: Vec<TaskId>,
        resources: Vec<ResourceId>,
        time: PerCategory<u64>,
        energy: PerCategory<f64>,
        meta: TaskMeta,
    ) -> TaskId {
        self.s.add(Task {
            kind,
            tag,
            deps,
            resources,
            time,
            energy,
            meta: TaskMeta { block: self.block, ..meta },
        })
    }

    /// Payload streaming on an ordered stream followed by the router flight delay.
    #[allow(clippy::too_many_arguments)]
    fn transfer(
        &mut self,
        deps: Vec<TaskId>,
        src: Endpoint,
        dst: Endpoint,
        bytes: u64,
        tag: &'static str,
        stream: String,
        acim: bool,
    ) -> TaskId {
        let t = Transfer {
            src: self.coord(src),
            dst: self.coord(dst),
            bytes,
            tag: tag.to_owned(),
        };
        let cost = transfer_cost(&t, &self.cfg.nop);
        let mut resources = vec![self.s.resource(&format!("stream:{stream}"), 1)];
        if self.opts.link_contention.unwrap_or(self.cfg.nop.link_contention) && src != dst {
            resources.push(self.s.resource(&format!("port.out:{src}"), 1));
            resources.push(self.s.resource(&format!("port.in:{dst}"), 1));
        }
        let time = PerCategory {
            ic: ns_to_ps(cost.serialization_ns),
            ..Default::default()
        };
        let energy = PerCategory {
            ic: cost.energy_pj,
            buffer: bytes as f64 * (self.buffer_pj(src, false) + self.buffer_pj(dst, true)),
            ..Default::default()
        };
        let info = TransferInfo {
            tag,
            src,
            dst,
            nop_bytes: if t.src == t.dst { 0 } else { bytes },
        };
        let ser = self.task(
            TaskKind::Transfer,
            format!("{tag} {src}->{dst}"),
            deps,
            resources,
            time,
            energy,
            TaskMeta {
                acim,
                transfer: Some(info),
                ..Default::default()
            },
        );
        let hop_ps = ns_to_ps(cost.hop_ns);
        if hop_ps == 0 {
            return ser;
        }
        self.task(
            TaskKind::Transfer,
            format!("{tag} flight"),
            vec![ser],
            vec![],
            PerCategory { ic: hop_ps, ..Default::default() },
            PerCategory::default(),
            TaskMeta { acim, ..Default::default() },
        )
    }

    fn idp_op(&mut self, deps: Vec<TaskId>, elements: u64, tag: &str) -> TaskId {
        let idp = &self.cfg.idp;
        let bytes = elements * self.act_bytes;
        let time = PerCategory {
            simd: simd_ps(elements, idp.simd_width, idp.t_simd_ns),
            ..Default::default()
        };
        let energy = PerCategory {
            simd: elements as f64 * idp.e_simd_pj,
            buffer: bytes as f64 * (idp.e_buf_read_pj + idp.e_buf_write_pj),
            ..Default::default()
        };
        let r = self.idp_simd;
        self.task(TaskKind::Simd, format!("idp {tag}"), deps, vec![r], time, energy, TaskMeta::default())
    }

    fn heads_per_dcim(&self) -> Vec<(u32, Vec<u32>)> {
        (0..self.cfg.system.n_dcim_chiplets)
            .map(|j| (j, self.cfg.heads_on_dcim(self.spec.heads, j)))
            .filter(|(_, h)| !h.is_empty())
            .collect()
    }

    /// One static layer: per holding chiplet and token block, input delivery,
    /// staging into PE local buffers, analog compute and output return.
    fn static_layer(&mut self, layer: LayerId, deps: &[TaskId], in_tag: &'static str, route: OutRoute) -> Vec<TaskId> {
        let fp = self.fps[&layer].clone();
        let unit = self.unit_of[&layer];
        let sys = self.cfg.system.clone();
        let acim = self.cfg.acim.clone();
        let ab = self.act_bytes;
        let slices = self.map.slices as u64;
        let bias = !(layer.kind == LayerKind::W2 && layer.sub.unwrap_or(0) > 0);
        let heads = self.heads_per_dcim();
        let mut finals = Vec::new();
        for chiplet in fp.chiplets() {
            let subs: Vec<_> = fp.subarrays.iter().filter(|s| s.chiplet == chiplet).copied().collect();
            let row_tiles: BTreeMap<u32, u32> = subs.iter().map(|s| (s.row_tile, s.rows)).collect();
            let in_rows: u64 = row_tiles.values().map(|&r| r as u64).sum();
            let mut pe_rows: BTreeMap<u64, BTreeSet<(u32, u32)>> = BTreeMap::new();
            for s in &subs {
                pe_rows.entry(s.pe).or_default().insert((s.row_tile, s.rows));
            }
            let pe_rows: Vec<u64> = pe_rows
                .values()
                .map(|t| t.iter().map(|&(_, r)| r as u64).sum())
                .collect();
            let max_pe_rows = pe_rows.iter().copied().max().unwrap_or(0);
            let sum_pe_rows: u64 = pe_rows.iter().sum();
            let sub_rows: u64 = subs.iter().map(|s| s.rows as u64).sum();
            let groups: u64 = subs.iter().map(|s| s.groups as u64).sum();
            let out_cols = fp.out_cols_by_chiplet.get(&chiplet).copied().unwrap_or(0) as u64;
            let sa_res = self.s.resource(&format!("acim.sa:{unit}:{chiplet}"), 1);
            let stage_res = self.s.resource(&format!("acim.stage:{unit}:{chiplet}"), 1);
            let mut stages: Vec<TaskId> = Vec::new();
            let mut computes: Vec<TaskId> = Vec::new();
            for (b, tokens) in self.token_blocks.clone().into_iter().enumerate() {
                let in_bytes = tokens * ab * in_rows;
                let mut stage_deps = deps.to_vec();
                if self.opts.peak {
                    if b >= 2 {
                        stage_deps.push(stages[b - 2]);
                    }
                } else {
                    let mut d = deps.to_vec();
                    if b >= 2 {
                        d.push(stages[b - 2]);
                    }
                    stage_deps = vec![self.transfer(
                        d,
                        Endpoint::Idp,
                        Endpoint::Acim(chiplet),
                        in_bytes,
                        in_tag,
                        format!("{layer}:in:{chiplet}"),
                        true,
                    )];
                }
                if b >= 2 {
                    stage_deps.push(computes[b - 2]);
                }
                let (cb_ps, cb_pj) = access(sys.chiplet_buffer, in_bytes);
                let (lb_ps, _) = access(sys.local_buffer, max_pe_rows * tokens * ab);
                let (_, lb_pj) = access(sys.local_buffer, sub_rows * tokens * ab);
                let (ic_ps, _) = access(sys.intra_ic, max_pe_rows * tokens * ab);
                let (_, ic_pj) = access(sys.intra_ic, sum_pe_rows * tokens * ab);
                let stage = self.task(
                    TaskKind::Buffer,
                    format!("{layer} stage"),
                    stage_deps,
                    vec![stage_res],
                    PerCategory { buffer: cb_ps + lb_ps, ic: ic_ps, ..Default::default() },
                    PerCategory { buffer: cb_pj + lb_pj, ic: ic_pj, ..Default::default() },
                    TaskMeta { layer: Some(layer), acim: true, ..Default::default() },
                );
                stages.push(stage);

                let sa = acim_subarray_cost(&subs, &acim, self.spec.act_bits, tokens);
                let simd_elems = sa.partial_sum_elements / slices + if bias { tokens * out_cols } else { 0 };
                let out_bytes = tokens * out_cols * ab;
                let (ob_ps, ob_pj) = access(sys.chiplet_buffer, out_bytes);
                let (oi_ps, oi_pj) = access(sys.intra_ic, out_bytes);
                let compute = self.task(
                    TaskKind::Compute,
                    format!("{layer} compute"),
                    vec![stage],
                    vec![sa_res],
                    PerCategory {
                        sa: ns_to_ps(sa.ns),
                        simd: simd_ps(simd_elems, acim.simd_width, acim.t_simd_ns),
                        buffer: ob_ps,
                        ic: oi_ps,
                        ..Default::default()
                    },
                    PerCategory {
                        sa: sa.pj,
                        simd: simd_elems as f64 * acim.e_simd_pj,
                        buffer: ob_pj,
                        ic: oi_pj,
                        ..Default::default()
                    },
                    TaskMeta {
                        layer: Some(layer),
                        static_macs: tokens * fp_rows(&fp) * out_cols,
                        adc_groups: groups,
                        acim: true,
                        ..Default::default()
                    },
                );
                computes.push(compute);
                if out_cols == 0 {
                    continue;
                }
                match route {
                    OutRoute::Idp(tag) => {
                        let t = self.transfer(
                            vec![compute],
                            Endpoint::Acim(chiplet),
                            Endpoint::Idp,
                            out_bytes,
                            tag,
                            format!("{layer}:out:{chiplet}"),
                            true,
                        );
                        finals.push(t);
                    }
                    OutRoute::DcimHeads => {
                        let h = self.spec.heads as u64;
                        let mut sent = 0u64;
                        let mut assigned = 0u64;
                        for (j, hs) in &heads {
                            assigned += hs.len() as u64;
                            let upto = out_bytes * assigned / h;
                            let bytes = upto - sent;
                            sent = upto;
                            let t = self.transfer(
                                vec![compute],
                                Endpoint::Acim(chiplet),
                                Endpoint::Dcim(*j),
                                bytes,
                                "QKV→DCIM",
                                format!("{layer}:out:{chiplet}:dcim{j}"),
                                true,
                            );
                            finals.push(t);
                        }
                    }
                }
            }
        }
        finals
    }

    fn dcim_task(&mut self, deps: Vec<TaskId>, pool: ResourceId, cost: &DcimCost, simd_elems: u64, tag: String) -> TaskId {
        let d = &self.cfg.dcim;
        let time = PerCategory {
            dcim_write: ns_to_ps(cost.write_ns),
            sa: ns_to_ps(cost.compute_ns),
            simd: simd_ps(simd_elems, d.simd_width, d.t_simd_ns),
            ..Default::default()
        };
        let energy = PerCategory {
            dcim_write: cost.write_pj,
            sa: cost.mac_pj,
            simd: simd_elems as f64 * d.e_simd_pj,
            ..Default::default()
        };
        let kind = if cost.macs > 0 { TaskKind::Compute } else { TaskKind::Simd };
        self.task(
            kind,
            tag,
            deps,
            vec![pool],
            time,
            energy,
            TaskMeta {
                dynamic_macs: cost.macs,
                ..Default::default()
            },
        )
    }

    fn dynamic_op(&self, head: u32, kind: DynamicKind) -> DynamicOp {
        DynamicOp {
            block: self.block,
            head,
            kind,
            seq_len: self.spec.seq_len,
            head_dim: self.spec.head_dim(),
        }
    }

    fn pool(&mut self, j: u32) -> ResourceId {
        let cap = self.cfg.dcim.pe_per_chiplet;
        self.s.resource(&format!("dcim.pe:{j}"), cap)
    }

    /// Dense attention with the IDP in the loop: Q/K/V and both score
    /// matrices travel through the IDP.
    fn attention_via_idp(&mut self, qkv: Vec<TaskId>) -> Vec<TaskId> {
        let (l, dh) = (self.spec.seq_len as u64, self.spec.head_dim() as u64);
        let ab = self.act_bytes;
        let heads = self.heads_per_dcim();
        let b = self.block;
        let mut scores = Vec::new();
        let mut pv_inputs = Vec::new();
        for (j, hs) in &heads {
            let n = hs.len() as u64;
            let t = self.transfer(
                qkv.clone(),
                Endpoint::Idp,
                Endpoint::Dcim(*j),
                3 * l * dh * ab * n,
                "QKV→DCIM",
                format!("b{b}:qkv:dcim{j}"),
                false,
            );
            pv_inputs.push(t);
            let pool = self.pool(*j);
            let qkts: Vec<TaskId> = hs
                .iter()
                .map(|&h| {
                    let cost = dcim_op_latency(&self.dynamic_op(h, DynamicKind::Qkt), &self.cfg.dcim, l as u32, self.spec.act_bits);
                    self.dcim_task(vec![t], pool, &cost, 0, format!("b{b}.h{h} QK^T"))
                })
                .collect();
            scores.push(self.transfer(
                qkts,
                Endpoint::Dcim(*j),
                Endpoint::Idp,
                n * l * l * ab,
                "P′→IDP",
                format!("b{b}:scores:dcim{j}"),
                false,
            ));
        }
        let softmax = self.idp_op(scores, self.spec.heads as u64 * l * 4 * l, "softmax");
        let mut outs = Vec::new();
        for (i, (j, hs)) in heads.iter().enumerate() {
            let n = hs.len() as u64;
            let p = self.transfer(
                vec![softmax, pv_inputs[i]],
                Endpoint::Idp,
                Endpoint::Dcim(*j),
                n * l * l * ab,
                "P→DCIM",
                format!("b{b}:probs:dcim{j}"),
                false,
            );
            let pool = self.pool(*j);
            let pvs: Vec<TaskId> = hs
                .iter()
                .map(|&h| {
                    let cost = dcim_op_latency(&self.dynamic_op(h, DynamicKind::Pv), &self.cfg.dcim, l as u32, self.spec.act_bits);
                    self.dcim_task(vec![p], pool, &cost, 0, format!("b{b}.h{h} PV"))
                })
                .collect();
            outs.push(self.transfer(
                pvs,
                Endpoint::Dcim(*j),
                Endpoint::Idp,
                n * l * dh * ab,
                "S→IDP",
                format!("b{b}:s:dcim{j}"),
                false,
            ));
        }
        outs
    }

    /// Blocked attention kept on the DCIM chiplets: per key block a score
    /// tile, a local softmax and a rescaled accumulation, then one global
    /// normalization per head.
    fn attention_on_dcim(&mut self, qkv: Vec<TaskId>) -> Vec<TaskId> {
        let (l, dh) = (self.spec.seq_len, self.spec.head_dim() as u64);
        let ab = self.act_bytes;
        let heads = self.heads_per_dcim();
        let b = self.block;
        let blocks: Vec<u32> = block_sizes(l, self.cfg.system.block_tokens).collect();
        let mut outs = Vec::new();
        for (j, hs) in &heads {
            let pool = self.pool(*j);
            let mut norms = Vec::new();
            for &h in hs {
                let mut prev_sm: Option<TaskId> = None;
                let mut prev_pv: Option<TaskId> = None;
                for (jb, &bl) in blocks.iter().enumerate() {
                    let qkt_cost = dcim_block_cost(&self.dynamic_op(h, DynamicKind::Qkt), bl, &self.cfg.dcim, self.spec.act_bits);
                    let qkt = self.dcim_task(qkv.clone(), pool, &qkt_cost, 0, format!("b{b}.h{h}.k{jb} QK^T"));
                    let mut deps = vec![qkt];
                    deps.extend(prev_sm);
                    let sm = self.dcim_task(
                        deps,
                        pool,
                        &DcimCost::default(),
                        l as u64 * 3 * bl as u64,
                        format!("b{b}.h{h}.k{jb} local softmax"),
                    );
                    prev_sm = Some(sm);
                    let pv_cost = dcim_block_cost(&self.dynamic_op(h, DynamicKind::Pv), bl, &self.cfg.dcim, self.spec.act_bits);
                    let mut deps = vec![sm];
                    deps.extend(prev_pv);
                    let rescale = if jb > 0 { l as u64 * dh } else { 0 };
                    prev_pv = Some(self.dcim_task(deps, pool, &pv_cost, rescale, format!("b{b}.h{h}.k{jb} PV")));
                }
                norms.push(self.dcim_task(
                    prev_pv.into_iter().collect(),
                    pool,
                    &DcimCost::default(),
                    l as u64 * dh,
                    format!("b{b}.h{h} global norm"),
                ));
            }
            outs.push(self.transfer(
                norms,
                Endpoint::Dcim(*j),
                Endpoint::Idp,
                hs.len() as u64 * l as u64 * dh * ab,
                "S→IDP",
                format!("b{b}:s:dcim{j}"),
                false,
            ));
        }
        outs
    }

    fn transformer_block(&mut self, input: Vec<TaskId>) -> Vec<TaskId> {
        let spec = self.spec;
        let (l, d) = (spec.seq_len as u64, spec.embed_dim as u64);
        let b = self.block;
        let direct = self.mode == DataflowMode::Hemlet;
        let route = if direct { OutRoute::DcimHeads } else { OutRoute::Idp("QKV→IDP") };
        let mut qkv = Vec::new();
        for kind in [LayerKind::Wq, LayerKind::Wk, LayerKind::Wv] {
            qkv.extend(self.static_layer(LayerId::mha(b, kind), &input, "X→ACIM", route));
        }
        let s = if direct {
            self.attention_on_dcim(qkv)
        } else {
            self.attention_via_idp(qkv)
        };
        let wo = self.static_layer(LayerId::mha(b, LayerKind::Wo), &s, "S→ACIM", OutRoute::Idp("Y→IDP"));
        let res = self.idp_op(wo, l * d, "residual");
        let mut last = vec![self.idp_op(vec![res], l * d, "layernorm")];
        let k = spec.ffn_ratio();
        for sub in 0..k {
            last = self.static_layer(LayerId::ffn(b, LayerKind::W1, sub), &last, "Z→ACIM", OutRoute::Idp("H→IDP"));
        }
        last = vec![self.idp_op(last, l * spec.ffn_dim as u64, "gelu")];
        for sub in 0..k {
            last = self.static_layer(LayerId::ffn(b, LayerKind::W2, sub), &last, "H→ACIM", OutRoute::Idp("Y→IDP"));
        }
        let acc = self.idp_op(last, (k as u64 - 1) * l * d, "ffn accumulate");
        let res = self.idp_op(vec![acc], l * d, "residual");
        vec![self.idp_op(vec![res], l * d, "layernorm")]
    }
}

fn fp_rows(fp: &LayerFootprint) -> u64 {
    let mut tiles: BTreeMap<u32, u32> = BTreeMap::new();
    for s in &fp.subarrays {
        tiles.insert(s.row_tile, s.rows);
    }
    tiles.values().map(|&r| r as u64).sum()
}

pub(crate) fn build(
    spec: &ViTModelSpec,
    cfg: &SystemConfig,
    map: &MappingPlan,
    mode: DataflowMode,
    opts: &RunOptions,
) -> Result<Built> {
    if mode == DataflowMode::Hemlet {
        let needed = cfg.dcim_buffer_needed(spec);
        if needed > cfg.dcim.buffer_bytes {
            let heads = spec.heads.div_ceil(cfg.system.n_dcim_chiplets.max(1)) as usize;
            return Err(Error::DcimBuffer {
                chiplet: 0,
                heads,
                needed,
                available: cfg.dcim.buffer_bytes,
            });
        }
    }
    let mut b = Builder::new(spec, cfg, map, mode, opts.clone())?;
    let mut input = Vec::new();
    for block in 0..spec.blocks {
        b.block = block;
        input = b.transformer_block(input);
    }
    Ok(Built { sched: b.s })
}
