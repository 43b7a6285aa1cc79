//! Row- and batch-level data parallelism.
//!
//! With the `parallel` feature the helpers fan out over rayon's global pool;
//! without it they run the same closures sequentially. Each output element
//! is computed by one closure call, so results are bit-identical between
//! the two builds and across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Grids smaller than this many pixels are processed on the calling thread.
pub const PAR_MIN_PIXELS: usize = 1 << 14;

/// Fills `out` row by row. `f(row, out_row)`.
pub fn for_each_row<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if out.len() >= PAR_MIN_PIXELS {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
        return;
    }
    out.chunks_mut(width).enumerate().for_each(|(r, row)| f(r, row));
}

/// Maps `f` over independent work items (images, seeds, random instances).
pub fn map_batch<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Number of worker threads the batch helpers will use.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
