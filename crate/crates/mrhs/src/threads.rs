use std::num::NonZeroUsize;

use mrhs_core::exec::Executor;
use mrhs_core::C64;

/// Splits the output into contiguous block ranges, one per worker thread.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    workers: usize,
}

impl Threaded {
    pub fn new(workers: usize) -> Self {
        Self {
            workers: workers.max(1),
        }
    }

    /// One worker per available core.
    pub fn available() -> Self {
        Self::new(std::thread::available_parallelism().map_or(1, NonZeroUsize::get))
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl Executor for Threaded {
    fn for_each_block(&self, out: &mut [C64], block_len: usize, f: &(dyn Fn(usize, &mut [C64]) + Sync)) {
        let n_blocks = if block_len == 0 { 0 } else { out.len() / block_len };
        if self.workers == 1 || n_blocks < 2 {
            f(0, out);
            return;
        }
        let per = n_blocks.div_ceil(self.workers);
        std::thread::scope(|s| {
            for (w, chunk) in out.chunks_mut(per * block_len).enumerate() {
                s.spawn(move || f(w * per, chunk));
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_every_block_once() {
        for workers in [1, 2, 3, 7] {
            let mut data = vec![C64::new(0.0, 0.0); 10 * 4];
            Threaded::new(workers).for_each_block(&mut data, 4, &|first, chunk| {
                for (j, blk) in chunk.chunks_exact_mut(4).enumerate() {
                    for v in blk {
                        *v += C64::new((first + j) as f64, 1.0);
                    }
                }
            });
            for (k, v) in data.iter().enumerate() {
                assert_eq!(*v, C64::new((k / 4) as f64, 1.0));
            }
        }
    }
}
