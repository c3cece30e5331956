//! Switch between rayon and plain iteration for the data-parallel loops.
//!
//! `Execution::Parallel` only has an effect when the crate is built with the
//! `parallel` feature; without it every loop runs sequentially. Results never
//! depend on the choice: parallel loops write into disjoint, ordered slots and
//! every reduction is either a `max` or is finished sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Ordered `(0..len).map(f).collect()`.
    pub fn map_collect<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Calls `f(chunk_index, chunk)` on consecutive `chunk_len`-sized pieces of
    /// `data` and returns the largest value any call produced (0 when empty).
    pub fn chunks_max<T, F>(self, data: &mut [T], chunk_len: usize, f: F) -> f64
    where
        T: Send,
        F: Fn(usize, &mut [T]) -> f64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return data
                .par_chunks_mut(chunk_len)
                .enumerate()
                .map(|(i, c)| f(i, c))
                .reduce(|| 0.0, f64::max);
        }
        data.chunks_mut(chunk_len)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .fold(0.0, f64::max)
    }
}
