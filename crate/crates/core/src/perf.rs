//! Roofline bookkeeping: arithmetic intensity, bandwidth ceilings,
//! counter-derived bandwidth and the read-to-write traffic model.

use alloc::vec::Vec;

use crate::dirac::{account_traffic, COMPLEX_BYTES, COMPLEX_PER_SITE_RHS, FLOPS_PER_SITE_RHS};
use crate::error::{invalid, Result};
use crate::field::Layout;

/// Exact non-negative fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Compares `self` and `other` exactly.
    pub fn cmp_exact(self, other: Fraction) -> core::cmp::Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

/// Flops per byte of one operator evaluation with `b` right-hand sides.
pub fn arithmetic_intensity_exact(b: usize) -> Fraction {
    let t = account_traffic(b);
    Fraction {
        num: t.flops_per_site,
        den: t.bytes_per_site,
    }
}

pub fn arithmetic_intensity(b: usize) -> f64 {
    arithmetic_intensity_exact(b).value()
}

/// Limit of the arithmetic intensity for unbounded `b`.
pub fn arithmetic_intensity_limit() -> f64 {
    FLOPS_PER_SITE_RHS as f64 / (COMPLEX_PER_SITE_RHS * COMPLEX_BYTES) as f64
}

/// Bandwidth-bound ceiling in flop/s.
pub fn theoretical_perf(bandwidth: f64, b: usize) -> f64 {
    bandwidth * arithmetic_intensity(b)
}

pub fn arch_efficiency(measured: f64, theoretical: f64) -> f64 {
    measured / theoretical
}

/// Read traffic over write traffic, `(204 b + 330) : 204 b`.
pub fn read_write_ratio_exact(b: usize) -> Fraction {
    let b = b as u64;
    Fraction {
        num: 204 * b + 330,
        den: 204 * b,
    }
}

pub fn read_write_ratio(b: usize) -> f64 {
    read_write_ratio_exact(b).value()
}

/// Hardware counter totals from one measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterSample {
    pub l2_refill: f64,
    pub l2_writeback: f64,
    pub cycles: f64,
    pub frequency: f64,
    pub cache_line: f64,
    /// Multiplier for per-rank counters.
    pub ranks: f64,
}

impl CounterSample {
    pub fn new(l2_refill: f64, l2_writeback: f64, cycles: f64, frequency: f64) -> Self {
        Self {
            l2_refill,
            l2_writeback,
            cycles,
            frequency,
            cache_line: 256.0,
            ranks: 1.0,
        }
    }

    pub fn with_ranks(self, ranks: f64) -> Self {
        Self { ranks, ..self }
    }
}

/// `(refill + writeback) * line * f / cycles * ranks`, in bytes per second.
pub fn effective_bandwidth(s: &CounterSample) -> Result<f64> {
    let fields = [s.l2_refill, s.l2_writeback, s.cycles, s.frequency, s.cache_line, s.ranks];
    if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid!("counter sample has negative or non-finite fields"));
    }
    if s.cycles == 0.0 {
        return Err(invalid!("cycle count must be positive"));
    }
    Ok((s.l2_refill + s.l2_writeback) * s.cache_line * s.frequency / s.cycles * s.ranks)
}

/// Timing of one operator benchmark configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfRecord {
    pub b: usize,
    pub layout: Layout,
    pub sites: usize,
    pub seconds: f64,
    pub flops: f64,
    pub bytes: f64,
    pub gflops: f64,
    pub ai: f64,
}

impl PerfRecord {
    /// Record for one operator evaluation over `sites` sites taking `seconds`.
    pub fn from_timing(b: usize, layout: Layout, sites: usize, seconds: f64) -> Self {
        let t = account_traffic(b);
        let flops = (t.flops_per_site * sites as u64) as f64;
        let bytes = (t.bytes_per_site * sites as u64) as f64;
        Self {
            b,
            layout,
            sites,
            seconds,
            flops,
            bytes,
            gflops: if seconds > 0.0 { flops / seconds * 1e-9 } else { 0.0 },
            ai: arithmetic_intensity(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RooflineInputs {
    pub stream_triad_bw: f64,
    pub stream_copy_bw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RooflineRow {
    pub b: usize,
    pub layout: Layout,
    pub ai: f64,
    pub gflops: f64,
    pub theor_gflops: f64,
    pub arch_eff: f64,
}

impl RooflineRow {
    /// Efficiencies above one exceed the bandwidth ceiling.
    pub fn violates_model(&self) -> bool {
        self.arch_eff > 1.0
    }
}

pub const ROOFLINE_COLUMNS: [&str; 6] = ["b", "layout", "ai", "gflops", "theor_gflops", "arch_eff"];

pub fn roofline_rows(runs: &[PerfRecord], inputs: &RooflineInputs) -> Vec<RooflineRow> {
    runs.iter()
        .map(|r| {
            let theor = theoretical_perf(inputs.stream_triad_bw, r.b) * 1e-9;
            RooflineRow {
                b: r.b,
                layout: r.layout,
                ai: arithmetic_intensity(r.b),
                gflops: r.gflops,
                theor_gflops: theor,
                arch_eff: arch_efficiency(r.gflops, theor),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intensity_values() {
        assert_eq!(arithmetic_intensity_exact(1), Fraction { num: 2574, den: 4512 });
        assert_eq!(arithmetic_intensity_exact(16), Fraction { num: 41184, den: 44832 });
        assert!((arithmetic_intensity(1) - 0.570478723).abs() < 1e-8);
        assert!((arithmetic_intensity(16) - 0.918629550).abs() < 1e-8);
        assert!((arithmetic_intensity_limit() - 0.957589286).abs() < 1e-8);
        for b in 1..64 {
            let (a, n) = (arithmetic_intensity_exact(b), arithmetic_intensity_exact(b + 1));
            assert_eq!(a.cmp_exact(n), core::cmp::Ordering::Less);
            assert!(a.value() < arithmetic_intensity_limit());
        }
    }

    #[test]
    fn theoretical_and_efficiency() {
        let t = theoretical_perf(155e9, 1);
        assert!((t * 1e-9 - 88.42).abs() < 0.01);
        assert_eq!(arch_efficiency(t, t), 1.0);
        assert_eq!(arch_efficiency(0.0, t), 0.0);
    }

    #[test]
    fn read_write_values() {
        assert_eq!(read_write_ratio_exact(1), Fraction { num: 534, den: 204 });
        assert!((read_write_ratio(1) - 2.6176).abs() < 1e-4);
        for b in 1..64 {
            assert_eq!(
                read_write_ratio_exact(b + 1).cmp_exact(read_write_ratio_exact(b)),
                core::cmp::Ordering::Less
            );
        }
        assert!((read_write_ratio(1_000_000) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn counter_bandwidth() {
        let s = CounterSample::new(392270.0, 165508.0, 32e6, 1.8e9).with_ranks(16.0);
        let bw = effective_bandwidth(&s).unwrap();
        assert!((bw * 1e-9 - 128.5).abs() < 0.1, "{bw}");
        let slow = CounterSample { cycles: 64e6, ..s };
        assert!((effective_bandwidth(&slow).unwrap() - bw / 2.0).abs() < 1e-3);
        let zero = CounterSample::new(0.0, 0.0, 1.0, 1.8e9);
        assert_eq!(effective_bandwidth(&zero).unwrap(), 0.0);
        assert!(effective_bandwidth(&CounterSample { cycles: 0.0, ..s }).is_err());
    }

    #[test]
    fn roofline_rows_basic() {
        let inputs = RooflineInputs {
            stream_triad_bw: 100e9,
            stream_copy_bw: 90e9,
        };
        assert!(roofline_rows(&[], &inputs).is_empty());
        let theor = theoretical_perf(100e9, 1) * 1e-9;
        let mut rec = PerfRecord::from_timing(1, Layout::ColumnMajor, 256, 1.0);
        rec.gflops = theor / 2.0;
        let rows = roofline_rows(&[rec], &inputs);
        assert!((rows[0].arch_eff - 0.5).abs() < 1e-15);
        assert!(!rows[0].violates_model());
    }

    #[test]
    fn record_accounting() {
        let r = PerfRecord::from_timing(4, Layout::RowMajor, 100, 0.5);
        assert_eq!(r.flops, (2574 * 4 * 100) as f64);
        assert_eq!(r.bytes, ((168 * 4 + 114) * 16 * 100) as f64);
        assert!((r.gflops - r.flops / 0.5 * 1e-9).abs() < 1e-12);
    }
}
