//! Copy, scale, add and triad bandwidth kernels over `f64` arrays.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};

pub const SCALAR: f64 = 3.0;
pub const DEFAULT_REPETITIONS: usize = 10;
/// Per-array size as a multiple of the last-level cache.
pub const LLC_MULTIPLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Copy,
    Scale,
    Add,
    Triad,
}

impl StreamKind {
    pub const ALL: [StreamKind; 4] = [StreamKind::Copy, StreamKind::Scale, StreamKind::Add, StreamKind::Triad];

    /// Arrays moved per element: copy and scale touch two, add and triad three.
    pub fn arrays_moved(self) -> usize {
        match self {
            StreamKind::Copy | StreamKind::Scale => 2,
            StreamKind::Add | StreamKind::Triad => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Copy => "copy",
            StreamKind::Scale => "scale",
            StreamKind::Add => "add",
            StreamKind::Triad => "triad",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stream kind {s:?}")))
    }

    fn expected(self, b: f64, c: f64) -> f64 {
        match self {
            StreamKind::Copy => b,
            StreamKind::Scale => SCALAR * b,
            StreamKind::Add => b + c,
            StreamKind::Triad => b + SCALAR * c,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamResult {
    pub kind: StreamKind,
    pub array_bytes: usize,
    pub repetitions: usize,
    pub threads: usize,
    pub best_seconds: f64,
    pub total_seconds: f64,
    /// Bytes moved by one repetition over its best time.
    pub best_bytes_per_second: f64,
    /// Bytes moved by all repetitions over their total time.
    pub mean_bytes_per_second: f64,
}

fn alloc(n: usize, fill: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(n)
        .map_err(|e| Error::Config(format!("cannot allocate {} bytes: {e}", n * 8)))?;
    v.extend((0..n).map(fill));
    Ok(v)
}

fn kernel(kind: StreamKind, a: &mut [f64], b: &[f64], c: &[f64]) {
    match kind {
        StreamKind::Copy => a.copy_from_slice(b),
        StreamKind::Scale => a.iter_mut().zip(b).for_each(|(a, b)| *a = SCALAR * b),
        StreamKind::Add => a.iter_mut().zip(b).zip(c).for_each(|((a, b), c)| *a = b + c),
        StreamKind::Triad => a.iter_mut().zip(b).zip(c).for_each(|((a, b), c)| *a = b + SCALAR * c),
    }
}

fn run_once(kind: StreamKind, a: &mut [f64], b: &[f64], c: &[f64], threads: usize) {
    if threads <= 1 {
        kernel(kind, a, b, c);
        return;
    }
    let chunk = a.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        for ((a, b), c) in a.chunks_mut(chunk).zip(b.chunks(chunk)).zip(c.chunks(chunk)) {
            s.spawn(move || kernel(kind, a, b, c));
        }
    });
}

/// Runs `kind` over arrays of `array_bytes` bytes each, `repetitions` times,
/// and checks every output element afterwards.
pub fn stream_bench(kind: StreamKind, array_bytes: usize, repetitions: usize, threads: usize) -> Result<StreamResult> {
    let n = array_bytes / 8;
    if n == 0 {
        return Err(Error::Config("stream arrays must hold at least one f64".into()));
    }
    if repetitions == 0 || threads == 0 {
        return Err(Error::Config("repetitions and threads must be positive".into()));
    }
    let mut a = alloc(n, |_| 0.0)?;
    let b = alloc(n, |i| 1.0 + (i % 7) as f64)?;
    let c = alloc(n, |i| 0.5 * (i % 5) as f64)?;
    let mut best = f64::INFINITY;
    let mut total = 0.0;
    for _ in 0..repetitions {
        let t = Instant::now();
        run_once(kind, &mut a, &b, &c, threads);
        let dt = t.elapsed().as_secs_f64();
        best = best.min(dt);
        total += dt;
    }
    if let Some(i) = (0..n).find(|&i| a[i] != kind.expected(b[i], c[i])) {
        return Err(Error::Numerical(format!(
            "{} produced {} at element {i}, expected {}",
            kind.name(),
            a[i],
            kind.expected(b[i], c[i])
        )));
    }
    let bytes = (kind.arrays_moved() * n * 8) as f64;
    let best = best.max(f64::MIN_POSITIVE);
    let total = total.max(f64::MIN_POSITIVE);
    Ok(StreamResult {
        kind,
        array_bytes: n * 8,
        repetitions,
        threads,
        best_seconds: best,
        total_seconds: total,
        best_bytes_per_second: bytes / best,
        mean_bytes_per_second: bytes * repetitions as f64 / total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_validates() {
        for kind in StreamKind::ALL {
            for threads in [1, 3] {
                let r = stream_bench(kind, 8 * 1000 + 4, 2, threads).unwrap();
                assert_eq!(r.array_bytes, 8000);
                assert!(r.best_bytes_per_second > 0.0);
                assert!(r.best_bytes_per_second >= r.mean_bytes_per_second * 0.999_999);
            }
        }
    }

    #[test]
    fn byte_accounting() {
        let r = stream_bench(StreamKind::Triad, 8 * 4096, 3, 1).unwrap();
        let expect = 3.0 * r.array_bytes as f64 * 3.0 / r.total_seconds;
        assert!((r.mean_bytes_per_second - expect).abs() <= 1e-9 * expect);
        assert_eq!(StreamKind::Copy.arrays_moved(), 2);
        assert_eq!(StreamKind::Scale.arrays_moved(), 2);
        assert_eq!(StreamKind::Add.arrays_moved(), 3);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(stream_bench(StreamKind::Copy, 4, 1, 1).is_err());
        assert!(stream_bench(StreamKind::Copy, 64, 0, 1).is_err());
        assert!(StreamKind::from_name("fma").is_err());
        assert_eq!(StreamKind::from_name("triad").unwrap(), StreamKind::Triad);
    }
}
