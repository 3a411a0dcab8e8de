//! Timed operator sweeps over block sizes and layouts.

use std::time::Instant;

use serde::Serialize;

use mrhs_core::dirac::WilsonDirac;
use mrhs_core::field::{BlockField, Layout, LayoutPolicy, SPINOR};
use mrhs_core::perf::PerfRecord;

use crate::config::RunConfig;
use crate::error::Result;
use crate::halo::{apply_decomposed, DecomposedProblem, RankExecution, DEFAULT_TIMEOUT};
use crate::snapshot::checksum;
use crate::threads::Threaded;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub warmup: usize,
    pub repetitions: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            warmup: 2,
            repetitions: 10,
        }
    }
}

/// Best configuration with `b >= 4` relative to `(b = 1, layout 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Speedup {
    pub baseline_gflops: f64,
    pub best_b: usize,
    pub best_layout: u8,
    pub best_gflops: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiRankTiming {
    pub ranks: usize,
    pub wait_seconds: f64,
    pub compute_seconds: f64,
    pub wait_compute_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub records: Vec<PerfRecord>,
    pub gauge_checksum: String,
    pub clover_checksum: String,
    pub multi_rank: Option<MultiRankTiming>,
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median-of-`repetitions` timing of one operator application for every
/// `(b, layout)` pair of the config.
pub fn bench_dirac(cfg: &RunConfig, opts: BenchOptions) -> Result<BenchReport> {
    let geom = cfg.geometry()?;
    let gauge = cfg.gauge(&geom);
    let clover = cfg.clover(&geom);
    let dirac = WilsonDirac::new(cfg.params(), &gauge, &clover)?;
    let exec = Threaded::new(cfg.threads);
    let mut records = Vec::new();
    for &b in &cfg.b {
        for &layout in &cfg.layouts {
            let pol = LayoutPolicy::new(layout, b)?;
            let psi = BlockField::random(geom.n_sites(), SPINOR, pol, cfg.rhs_seed());
            let mut eta = BlockField::zeros(geom.n_sites(), SPINOR, pol);
            let mut ws = dirac.workspace(pol);
            for _ in 0..opts.warmup {
                dirac.apply_with(&psi, &mut eta, &mut ws, &exec)?;
            }
            let mut times = Vec::with_capacity(opts.repetitions);
            for _ in 0..opts.repetitions.max(1) {
                let t = Instant::now();
                dirac.apply_with(&psi, &mut eta, &mut ws, &exec)?;
                times.push(t.elapsed().as_secs_f64());
            }
            records.push(PerfRecord::from_timing(b, layout, geom.n_sites(), median(times)));
        }
    }
    let multi_rank = if cfg.ranks.iter().product::<usize>() > 1 {
        let problem = DecomposedProblem::new(&gauge, &clover, cfg.ranks)?;
        let pol = cfg.policy()?;
        let psi = BlockField::random(geom.n_sites(), SPINOR, pol, cfg.rhs_seed());
        let run = apply_decomposed(cfg.params(), &problem, &psi, RankExecution::Concurrent, DEFAULT_TIMEOUT)?;
        let wait: f64 = run.stats.iter().map(|s| s.wait_seconds).sum();
        let compute: f64 = run.stats.iter().map(|s| s.compute_seconds).sum();
        Some(MultiRankTiming {
            ranks: problem.n_ranks(),
            wait_seconds: wait,
            compute_seconds: compute,
            wait_compute_ratio: if compute > 0.0 { wait / compute } else { 0.0 },
        })
    } else {
        None
    };
    Ok(BenchReport {
        records,
        gauge_checksum: checksum(gauge.data()),
        clover_checksum: checksum(clover.data()),
        multi_rank,
    })
}

pub fn mrhs_speedup(records: &[PerfRecord]) -> Option<Speedup> {
    let base = records
        .iter()
        .find(|r| r.b == 1 && r.layout == Layout::ColumnMajor)?;
    let best = records
        .iter()
        .filter(|r| r.b >= 4)
        .max_by(|a, b| a.gflops.total_cmp(&b.gflops))?;
    Some(Speedup {
        baseline_gflops: base.gflops,
        best_b: best.b,
        best_layout: best.layout.number(),
        best_gflops: best.gflops,
        speedup: best.gflops / base.gflops,
    })
}
