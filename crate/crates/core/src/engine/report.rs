use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::dataflow::{Built, TaskMeta};
use super::des::{union_length, Category, PerCategory, Ps, Schedule, TaskKind};
use super::DataflowMode;
use crate::error::Result;
use crate::glp::MappingPlan;
use crate::hwconfig::SystemConfig;
use crate::workload::{mac_count, OpCount, ViTModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTiming {
    pub layer: String,
    pub start_ns: f64,
    pub end_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// One task as it ran.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEvent {
    pub time: f64,
    pub kind: TaskKind,
    pub resource: String,
    pub duration: f64,
    pub energy: f64,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub model: String,
    pub config: String,
    pub bw_gbps: f64,
    pub mapping: String,
    pub mode: DataflowMode,
    pub peak: bool,
    pub acim_chiplets: u32,
    pub dcim_chiplets: u32,
    pub latency_ps: Ps,
    pub latency_ns: f64,
    pub energy_pj: f64,
    pub energy_breakdown_pj: PerCategory<f64>,
    /// Accumulated busy time over all tasks.
    pub busy_ns: PerCategory<f64>,
    /// Busy time of the ACIM side only (static-layer transfers, staging, compute).
    pub acim_busy_ns: PerCategory<f64>,
    pub adc_utilization: f64,
    pub simulated: OpCount,
    pub ops: u64,
    pub tops: f64,
    pub tops_per_w: f64,
    /// Network bytes per transfer tag and transformer block.
    pub nop_bytes: BTreeMap<String, BTreeMap<u32, u64>>,
    pub layers: Vec<LayerTiming>,
    pub tasks: usize,
    pub checks: Vec<SelfCheck>,
    #[serde(skip)]
    pub events: Vec<SimEvent>,
}

impl SimReport {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn nop_bytes_for(&self, tag: &str) -> u64 {
        self.nop_bytes.get(tag).map(|m| m.values().sum()).unwrap_or(0)
    }

    pub fn total_nop_bytes(&self) -> u64 {
        self.nop_bytes.values().flat_map(|m| m.values()).sum()
    }

    /// Line-delimited JSON, one record per task in start order.
    pub fn write_event_log<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn ps_to_ns(ps: Ps) -> f64 {
    ps as f64 / 1000.0
}

fn check(checks: &mut Vec<SelfCheck>, name: &str, passed: bool, detail: String) {
    checks.push(SelfCheck {
        name: name.to_owned(),
        passed,
        detail,
    });
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    spec: &ViTModelSpec,
    cfg: &SystemConfig,
    map: &MappingPlan,
    mode: DataflowMode,
    peak: bool,
    built: &Built,
    sched: &Schedule,
    keep_events: bool,
) -> SimReport {
    let tasks = built.sched.tasks();
    let mut energy = PerCategory::<f64>::default();
    let mut busy = PerCategory::<Ps>::default();
    let mut acim_busy = PerCategory::<Ps>::default();
    let mut static_macs = 0u64;
    let mut dynamic_macs = 0u64;
    let mut adc_busy = 0f64;
    let mut sa_intervals = Vec::new();
    let mut nop_bytes: BTreeMap<String, BTreeMap<u32, u64>> = BTreeMap::new();
    let mut spans: BTreeMap<_, (Ps, Ps)> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        let m: &TaskMeta = &t.meta;
        energy.add_all(&t.energy);
        busy.add_all(&t.time);
        if m.acim {
            acim_busy.add_all(&t.time);
        }
        static_macs += m.static_macs;
        dynamic_macs += m.dynamic_macs;
        if m.adc_groups > 0 && t.time.sa > 0 {
            adc_busy += m.adc_groups as f64 * t.time.sa as f64;
            sa_intervals.push((sched.start[i], sched.start[i] + t.time.sa));
        }
        if let Some(x) = &m.transfer {
            if x.nop_bytes > 0 {
                *nop_bytes.entry(x.tag.to_owned()).or_default().entry(m.block).or_default() += x.nop_bytes;
            }
        }
        if let Some(l) = m.layer {
            let e = spans.entry(l).or_insert((Ps::MAX, 0));
            e.0 = e.0.min(sched.start[i]);
            e.1 = e.1.max(sched.end[i]);
        }
    }
    let total_adcs = map.total_groups() as f64;
    let active = union_length(sa_intervals) as f64;
    let adc_utilization = if active > 0.0 && total_adcs > 0.0 {
        adc_busy / (total_adcs * active)
    } else {
        0.0
    };
    let expected = mac_count(spec);
    let simulated = OpCount {
        static_macs,
        dynamic_macs,
        vector_ops: expected.vector_ops,
    };
    let ops = simulated.total_ops();
    let latency_ps = sched.makespan;
    let energy_pj = energy.total();

    let mut checks = Vec::new();
    check(
        &mut checks,
        "mac_conservation",
        simulated == expected,
        format!(
            "static {static_macs} vs {}, dynamic {dynamic_macs} vs {}",
            expected.static_macs, expected.dynamic_macs
        ),
    );
    let cat_sum: f64 = Category::ALL.iter().map(|&c| energy.get(c)).sum();
    check(
        &mut checks,
        "energy_breakdown_sums",
        (cat_sum - energy_pj).abs() <= 1e-9 * energy_pj.max(1.0),
        format!("{cat_sum} vs {energy_pj}"),
    );
    let busy_total: Ps = tasks.iter().map(|t| t.duration()).sum();
    check(
        &mut checks,
        "busy_breakdown_sums",
        busy.total() == busy_total,
        format!("{} vs {busy_total}", busy.total()),
    );
    check(
        &mut checks,
        "adc_utilization_in_unit_interval",
        (0.0..=1.0 + 1e-12).contains(&adc_utilization),
        format!("{adc_utilization}"),
    );
    let causal = tasks
        .iter()
        .enumerate()
        .all(|(i, t)| t.deps.iter().all(|d| sched.end[d.0] <= sched.start[i]));
    check(&mut checks, "dependencies_respected", causal, String::new());
    if mode == DataflowMode::Hemlet {
        let leaked: u64 = ["P′→IDP", "QKV→IDP"]
            .iter()
            .map(|t| nop_bytes.get(*t).map(|m| m.values().sum::<u64>()).unwrap_or(0))
            .sum();
        check(&mut checks, "no_idp_round_trip", leaked == 0, format!("{leaked} bytes"));
    }

    let mut layers: Vec<LayerTiming> = spans
        .into_iter()
        .map(|(l, (s, e))| LayerTiming {
            layer: l.to_string(),
            start_ns: ps_to_ns(s),
            end_ns: ps_to_ns(e),
        })
        .collect();
    layers.sort_by(|a, b| a.start_ns.total_cmp(&b.start_ns).then_with(|| a.layer.cmp(&b.layer)));

    let events = if keep_events {
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        order.sort_by_key(|&i| (sched.start[i], i));
        order
            .into_iter()
            .map(|i| {
                let t = &tasks[i];
                SimEvent {
                    time: ps_to_ns(sched.start[i]),
                    kind: t.kind,
                    resource: t
                        .resources
                        .first()
                        .map(|r| built.sched.resource_name(*r).to_owned())
                        .unwrap_or_else(|| "-".into()),
                    duration: ps_to_ns(t.duration()),
                    energy: t.energy.total(),
                    tag: t.tag.clone(),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let to_ns = |p: PerCategory<Ps>| PerCategory {
        sa: ps_to_ns(p.sa),
        buffer: ps_to_ns(p.buffer),
        ic: ps_to_ns(p.ic),
        simd: ps_to_ns(p.simd),
        dcim_write: ps_to_ns(p.dcim_write),
    };
    SimReport {
        model: spec.name.clone(),
        config: cfg.label(),
        bw_gbps: cfg.nop.bw_gbps,
        mapping: map.kind.to_string(),
        mode,
        peak,
        acim_chiplets: map.n_acim_chiplets,
        dcim_chiplets: cfg.system.n_dcim_chiplets,
        latency_ps,
        latency_ns: ps_to_ns(latency_ps),
        energy_pj,
        energy_breakdown_pj: energy,
        busy_ns: to_ns(busy),
        acim_busy_ns: to_ns(acim_busy),
        adc_utilization,
        simulated,
        ops,
        tops: if latency_ps > 0 { ops as f64 / latency_ps as f64 } else { 0.0 },
        tops_per_w: if energy_pj > 0.0 { ops as f64 / energy_pj } else { 0.0 },
        nop_bytes,
        layers,
        tasks: tasks.len(),
        checks,
        events,
    }
}

/// Per-category speedup of `b` over `a` on the ACIM side: `busy(a) / busy(b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakdownSpeedup {
    pub sa: f64,
    pub buffer: f64,
    pub ic: f64,
}

pub fn breakdown_speedup(a: &SimReport, b: &SimReport) -> BreakdownSpeedup {
    let ratio = |x: f64, y: f64| {
        if y > 0.0 {
            x / y
        } else if x > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    };
    BreakdownSpeedup {
        sa: ratio(a.acim_busy_ns.sa, b.acim_busy_ns.sa),
        buffer: ratio(a.acim_busy_ns.buffer, b.acim_busy_ns.buffer),
        ic: ratio(a.acim_busy_ns.ic, b.acim_busy_ns.ic),
    }
}
