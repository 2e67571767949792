//! Design-space sweeps. Points are independent simulations; with the
//! `parallel` feature they are spread over a rayon pool, otherwise run in order.
//! Both paths return points in grid order.

use crate::engine::{simulate, DataflowMode, RunOptions};
use crate::error::Result;
use crate::glp::{build_mapping, MappingKind};
use crate::hwconfig::{validate, SystemConfig};
use crate::metrics::SweepPoint;
use crate::workload::ViTModelSpec;

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub configs: Vec<SystemConfig>,
    pub bandwidths: Vec<f64>,
    pub models: Vec<ViTModelSpec>,
    pub strategies: Vec<(MappingKind, DataflowMode)>,
    pub options: RunOptions,
}

/// Every mapping with every dataflow.
pub fn all_strategies() -> Vec<(MappingKind, DataflowMode)> {
    [MappingKind::Layerwise, MappingKind::Glp]
        .into_iter()
        .flat_map(|m| DataflowMode::ALL.map(|d| (m, d)))
        .collect()
}

impl SweepGrid {
    /// The three standard chiplet sizes crossed with 8 to 32 GB/s links over the preset models.
    pub fn standard(base: &SystemConfig) -> Self {
        Self {
            configs: [(18, 9), (32, 16), (50, 25)]
                .into_iter()
                .map(|(a, d)| base.clone().with_chiplet_sizes(a, d))
                .collect(),
            bandwidths: vec![8.0, 16.0, 32.0],
            models: ViTModelSpec::table(),
            strategies: all_strategies(),
            options: RunOptions::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.configs.len() * self.bandwidths.len() * self.models.len() * self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Work items: one per (model, config, mapping); each covers all bandwidths and modes.
    fn jobs(&self) -> Vec<(usize, usize, MappingKind)> {
        let mut mappings: Vec<MappingKind> = Vec::new();
        for (m, _) in &self.strategies {
            if !mappings.contains(m) {
                mappings.push(*m);
            }
        }
        let mut jobs = Vec::new();
        for mi in 0..self.models.len() {
            for ci in 0..self.configs.len() {
                for &m in &mappings {
                    jobs.push((mi, ci, m));
                }
            }
        }
        jobs
    }

    fn run_job(&self, (mi, ci, kind): (usize, usize, MappingKind)) -> Result<Vec<SweepPoint>> {
        let spec = &self.models[mi];
        let cfg = &self.configs[ci];
        validate(cfg, spec)?;
        let plan = build_mapping(spec, cfg, kind)?;
        let mut out = Vec::new();
        for &bw in &self.bandwidths {
            let cfg = cfg.clone().with_bandwidth(bw);
            for &(m, mode) in self.strategies.iter().filter(|(m, _)| *m == kind) {
                let report = simulate(spec, &cfg, &plan, mode, &self.options)?;
                out.push(SweepPoint::new(report, m));
            }
        }
        Ok(out)
    }

    pub fn run_sequential(&self) -> Result<Vec<SweepPoint>> {
        let mut out = Vec::with_capacity(self.len());
        for job in self.jobs() {
            out.extend(self.run_job(job)?);
        }
        Ok(out)
    }

    #[cfg(feature = "parallel")]
    pub fn run_parallel(&self) -> Result<Vec<SweepPoint>> {
        use rayon::prelude::*;
        let chunks: Vec<Vec<SweepPoint>> = self
            .jobs()
            .into_par_iter()
            .map(|job| self.run_job(job))
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Parallel when built with `parallel`, on `jobs` threads if given.
    pub fn run(&self, jobs: Option<usize>) -> Result<Vec<SweepPoint>> {
        #[cfg(feature = "parallel")]
        {
            if jobs == Some(1) {
                return self.run_sequential();
            }
            match jobs {
                Some(n) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build()
                        .map_err(|e| crate::error::Error::Invariant(e.to_string()))?;
                    pool.install(|| self.run_parallel())
                }
                None => self.run_parallel(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = jobs;
            self.run_sequential()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> SweepGrid {
        let base = SystemConfig::reference();
        SweepGrid {
            configs: vec![base.clone().with_chiplet_sizes(18, 9), base.with_chiplet_sizes(32, 16)],
            bandwidths: vec![8.0, 32.0],
            models: vec![ViTModelSpec::new("mini", 128, 512, 2, 2, 20)],
            strategies: all_strategies(),
            options: RunOptions::default(),
        }
    }

    #[test]
    fn grid_order_and_size() {
        let g = small_grid();
        let pts = g.run_sequential().unwrap();
        assert_eq!(pts.len(), g.len());
        assert_eq!(pts[0].config, "A18D9");
        assert_eq!(pts[0].bw_gbps, 8.0);
        assert_eq!(SweepGrid::standard(&SystemConfig::reference()).len(), 3 * 3 * 3 * 6);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        use crate::metrics::to_csv;
        let g = small_grid();
        let a = to_csv(&g.run_sequential().unwrap());
        let b = to_csv(&g.run_parallel().unwrap());
        let c = to_csv(&g.run(Some(2)).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
