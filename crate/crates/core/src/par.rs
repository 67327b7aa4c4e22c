//! Execution policy for the data-parallel loops (block coding, sweeps,
//! replicated sampling, two-row joint accumulation).
//!
//! With the `parallel` feature (default) work is spread over the rayon
//! pool; without it every policy runs sequentially.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    /// Order-preserving map.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn map_range<R, F>(self, range: std::ops::Range<usize>, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                range.into_par_iter().map(f).collect()
            }
            _ => range.map(f).collect(),
        }
    }

    /// Sum of `f(i)` over a range. The parallel reduction order differs
    /// from the sequential one, so results may differ in the last bits.
    pub fn sum_range<F>(self, range: std::ops::Range<usize>, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                // fixed chunking keeps the result independent of thread count
                let chunk = 64;
                let chunks = range.len().div_ceil(chunk);
                let start = range.start;
                let end = range.end;
                let partial: Vec<f64> = (0..chunks)
                    .into_par_iter()
                    .map(|c| {
                        let lo = start + c * chunk;
                        (lo..(lo + chunk).min(end)).map(&f).sum::<f64>()
                    })
                    .collect();
                partial.into_iter().sum()
            }
            _ => {
                let chunk = 64;
                let mut total = 0.0;
                let mut lo = range.start;
                while lo < range.end {
                    total += (lo..(lo + chunk).min(range.end)).map(&f).sum::<f64>();
                    lo += chunk;
                }
                total
            }
        }
    }
}
