use num_complex::Complex64 as C64;

/// Runs a per-block kernel over disjoint chunks of an output buffer.
///
/// `f(first_block, chunk)` receives a run of whole blocks starting at block
/// index `first_block`. Implementations may call `f` concurrently on disjoint
/// chunks; kernels must produce the same values for any partition.
pub trait Executor: Sync {
    fn for_each_block(
        &self,
        out: &mut [C64],
        block_len: usize,
        f: &(dyn Fn(usize, &mut [C64]) + Sync),
    );
}

/// Runs everything on the calling thread as a single chunk.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn for_each_block(
        &self,
        out: &mut [C64],
        _block_len: usize,
        f: &(dyn Fn(usize, &mut [C64]) + Sync),
    ) {
        f(0, out)
    }
}
