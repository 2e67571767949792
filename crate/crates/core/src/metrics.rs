//! Figures of merit and tabular output for sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::engine::{DataflowMode, SimReport};
use crate::error::{Error, Result};
use crate::glp::MappingKind;
use crate::workload::{mac_count, ViTModelSpec};

pub const CSV_HEADER: &str =
    "model,config,bw_GBps,mapping,mode,latency_ns,energy_pJ,tops,tops_per_w,sa_ns,buffer_ns,ic_ns,adc_util";

/// Published reference throughput for ViT-L/16 on A32D16 at 32 GB/s.
pub const REFERENCE_TOPS: f64 = 9.24;
/// Published reference energy efficiency for the same point.
pub const REFERENCE_TOPS_PER_W: f64 = 4.98;

/// `(2·MACs + vector ops) / latency`, in tera-operations per second.
pub fn tops(report: &SimReport, spec: &ViTModelSpec) -> f64 {
    ops_per_ps(mac_count(spec).total_ops(), report.latency_ps)
}

/// Operations per picojoule equals tera-operations per joule, i.e. TOPS/W.
pub fn tops_per_watt(report: &SimReport, spec: &ViTModelSpec) -> f64 {
    let ops = mac_count(spec).total_ops() as f64;
    if report.energy_pj > 0.0 {
        ops / report.energy_pj
    } else {
        0.0
    }
}

fn ops_per_ps(ops: u64, ps: u64) -> f64 {
    if ps == 0 {
        0.0
    } else {
        ops as f64 / ps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub config: String,
    pub bw_gbps: f64,
    pub model: String,
    pub mapping: MappingKind,
    pub mode: DataflowMode,
    pub report: SimReport,
}

impl SweepPoint {
    pub fn new(report: SimReport, mapping: MappingKind) -> Self {
        Self {
            config: report.config.clone(),
            bw_gbps: report.bw_gbps,
            model: report.model.clone(),
            mapping,
            mode: report.mode,
            report,
        }
    }

    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{:.3},{:.3},{:.6},{:.6},{:.3},{:.3},{:.3},{:.6}",
            self.model,
            self.config,
            self.bw_gbps,
            self.mapping,
            self.mode,
            r.latency_ns,
            r.energy_pj,
            r.tops,
            r.tops_per_w,
            r.acim_busy_ns.sa,
            r.acim_busy_ns.buffer,
            r.acim_busy_ns.ic,
            r.adc_utilization
        )
    }

    fn key(&self) -> (String, String, u64, MappingKind, DataflowMode) {
        (self.model.clone(), self.config.clone(), self.bw_gbps.to_bits(), self.mapping, self.mode)
    }
}

pub fn to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&p.csv_row());
        out.push('\n');
    }
    out
}

/// Which point a row is divided by. Fields left `None` are taken from the row itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub mapping: MappingKind,
    pub mode: DataflowMode,
    pub config: Option<String>,
    pub bw_gbps: Option<f64>,
}

impl Baseline {
    /// Layer-wise mapping with the native dataflow at the same configuration and bandwidth.
    pub fn same_point() -> Self {
        Self {
            mapping: MappingKind::Layerwise,
            mode: DataflowMode::Native,
            config: None,
            bw_gbps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedRow {
    pub model: String,
    pub config: String,
    pub bw_gbps: f64,
    pub mapping: MappingKind,
    pub mode: DataflowMode,
    pub latency: f64,
    pub energy: f64,
}

/// Latency and energy of every point relative to its baseline point.
pub fn normalize(points: &[SweepPoint], baseline: &Baseline) -> Result<Vec<NormalizedRow>> {
    let index: BTreeMap<_, &SweepPoint> = points.iter().map(|p| (p.key(), p)).collect();
    points
        .iter()
        .map(|p| {
            let key = (
                p.model.clone(),
                baseline.config.clone().unwrap_or_else(|| p.config.clone()),
                baseline.bw_gbps.unwrap_or(p.bw_gbps).to_bits(),
                baseline.mapping,
                baseline.mode,
            );
            let base = index.get(&key).ok_or_else(|| {
                Error::Invariant(format!(
                    "no baseline point for {} {} {} GB/s",
                    key.0,
                    key.1,
                    f64::from_bits(key.2)
                ))
            })?;
            Ok(NormalizedRow {
                model: p.model.clone(),
                config: p.config.clone(),
                bw_gbps: p.bw_gbps,
                mapping: p.mapping,
                mode: p.mode,
                latency: p.report.latency_ps as f64 / base.report.latency_ps as f64,
                energy: p.report.energy_pj / base.report.energy_pj,
            })
        })
        .collect()
}

pub fn normalized_csv(rows: &[NormalizedRow]) -> String {
    let mut out = String::from("model,config,bw_GBps,mapping,mode,norm_latency,norm_energy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6}",
            r.model, r.config, r.bw_gbps, r.mapping, r.mode, r.latency, r.energy
        );
    }
    out
}

/// Gnuplot data: one indexed block per model, one line per (config, bandwidth),
/// one latency/energy column pair per strategy.
pub fn normalized_dat(rows: &[NormalizedRow]) -> String {
    type Cells<'a> = BTreeMap<(MappingKind, DataflowMode), &'a NormalizedRow>;
    let mut strategies: Vec<(MappingKind, DataflowMode)> = Vec::new();
    let mut table: BTreeMap<&str, BTreeMap<(String, u64), Cells>> = BTreeMap::new();
    for r in rows {
        if !strategies.contains(&(r.mapping, r.mode)) {
            strategies.push((r.mapping, r.mode));
        }
        table
            .entry(r.model.as_str())
            .or_default()
            .entry((r.config.clone(), r.bw_gbps.to_bits()))
            .or_default()
            .insert((r.mapping, r.mode), r);
    }
    let mut out = String::new();
    for (i, (model, lines)) in table.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = write!(out, "# {model}\n# config bw_GBps");
        for (m, d) in &strategies {
            let _ = write!(out, " lat_{m}_{d} energy_{m}_{d}");
        }
        out.push('\n');
        for ((config, bw), cells) in lines {
            let _ = write!(out, "{config} {}", f64::from_bits(*bw));
            for s in &strategies {
                match cells.get(s) {
                    Some(r) => {
                        let _ = write!(out, " {:.6} {:.6}", r.latency, r.energy);
                    }
                    None => out.push_str(" NaN NaN"),
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::hwconfig::SystemConfig;

    fn tiny_report(mapping: MappingKind, mode: DataflowMode) -> SimReport {
        let spec = ViTModelSpec::new("tiny", 64, 128, 1, 2, 8);
        run(&spec, &SystemConfig::reference(), mapping, mode).unwrap()
    }

    #[test]
    fn one_tera_op_per_second() {
        let mut r = tiny_report(MappingKind::Glp, DataflowMode::Native);
        r.latency_ps = 1_000_000_000_000;
        r.energy_pj = 1e12;
        let spec = ViTModelSpec::new("tiny", 64, 128, 1, 2, 8);
        let ops = mac_count(&spec).total_ops() as f64;
        assert_eq!(tops(&r, &spec), ops / 1e12);
        assert_eq!(tops_per_watt(&r, &spec), ops / 1e12);
        let slow = SimReport { latency_ps: 2 * r.latency_ps, ..r.clone() };
        assert_eq!(tops(&slow, &spec), tops(&r, &spec) / 2.0);
    }

    #[test]
    fn report_figures_agree_with_metric_functions() {
        let spec = ViTModelSpec::new("tiny", 64, 128, 1, 2, 8);
        let r = tiny_report(MappingKind::Glp, DataflowMode::Hemlet);
        assert_eq!(r.tops, tops(&r, &spec));
        assert_eq!(r.tops_per_w, tops_per_watt(&r, &spec));
        // TOPS x latency recovers the op count
        assert!((r.tops * r.latency_ps as f64 - r.ops as f64).abs() < 1e-6 * r.ops as f64);
    }

    #[test]
    fn normalization() {
        let base = SweepPoint::new(tiny_report(MappingKind::Layerwise, DataflowMode::Native), MappingKind::Layerwise);
        let mut other = base.clone();
        other.mapping = MappingKind::Glp;
        other.report.latency_ps = base.report.latency_ps / 2;
        other.report.energy_pj = base.report.energy_pj * 3.0;
        let rows = normalize(&[base.clone(), other.clone()], &Baseline::same_point()).unwrap();
        assert_eq!((rows[0].latency, rows[0].energy), (1.0, 1.0));
        assert!((rows[1].latency - 0.5).abs() < 1e-9);
        assert!((rows[1].energy - 3.0).abs() < 1e-12);

        // scale-free
        let mut a = base.clone();
        let mut b = other.clone();
        a.report.latency_ps *= 7;
        b.report.latency_ps *= 7;
        let scaled = normalize(&[a, b], &Baseline::same_point()).unwrap();
        assert!((scaled[1].latency - rows[1].latency).abs() < 1e-12);

        assert!(normalize(&[other], &Baseline::same_point()).is_err());
    }

    #[test]
    fn csv_and_dat_shapes() {
        let p = SweepPoint::new(tiny_report(MappingKind::Layerwise, DataflowMode::Native), MappingKind::Layerwise);
        let csv = to_csv(std::slice::from_ref(&p));
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1].split(',').count(), CSV_HEADER.split(',').count());
        let rows = normalize(std::slice::from_ref(&p), &Baseline::same_point()).unwrap();
        let dat = normalized_dat(&rows);
        assert!(dat.starts_with("# tiny"));
        assert!(dat.contains("A32D16 32 1.000000 1.000000"));
    }
}
