//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction here has a fixed shape that depends only on the input
//! length, never on how work is scheduled, so the `parallel` feature changes
//! wall time but not a single bit of output.

/// How to execute a data-parallel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

/// Records per leaf of the reduction tree.
pub const CHUNK: usize = 256;

/// Maps `f` over `0..n` preserving order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
    }
}

/// Sums `leaf(start, end)` over consecutive `CHUNK`-sized ranges of `0..n`
/// and combines the partial sums with [`tree_sum`].
pub fn chunked_sum<F>(exec: Execution, n: usize, leaf: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = map_indexed(exec, chunks, |c| {
        let start = c * CHUNK;
        leaf(start, (start + CHUNK).min(n))
    });
    tree_sum(&partial)
}

/// Pairwise summation, splitting at the midpoint.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            tree_sum(&values[..mid]) + tree_sum(&values[mid..])
        }
    }
}
