//! Deterministic pixel reductions.
//!
//! Pixels are split into consecutive chunks of [`CHUNK`] indices. Each chunk
//! is summed left to right, then the chunk partials are merged left to right
//! with compensated (Neumaier) summation. The chunking does not depend on the
//! thread count, so results are bit-identical for any number of threads.

use std::ops::Range;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHUNK: usize = 4096;

/// Runs per-chunk work either inline or on a private thread pool.
pub struct Executor {
    pool: Option<ThreadPool>,
}

impl Executor {
    pub fn single() -> Self {
        Executor { pool: None }
    }

    /// `threads <= 1` runs inline.
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Self::single());
        }
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(Executor { pool: Some(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// Sums `N` lanes over `0..n`. `chunk` fills the lanes for one index range.
    pub fn sum_lanes<T, const N: usize, F>(&self, n: usize, chunk: F) -> [T; N]
    where
        T: Real,
        F: Fn(Range<usize>, &mut [T; N]) + Sync,
    {
        let ranges: Vec<Range<usize>> = (0..n)
            .step_by(CHUNK)
            .map(|s| s..(s + CHUNK).min(n))
            .collect();
        let partial = |r: &Range<usize>| {
            let mut acc = [T::zero(); N];
            chunk(r.clone(), &mut acc);
            acc
        };
        let partials: Vec<[T; N]> = match &self.pool {
            None => ranges.iter().map(partial).collect(),
            Some(pool) => pool.install(|| ranges.par_iter().map(partial).collect()),
        };
        let mut total = CompensatedLanes::<T, N>::default();
        for p in &partials {
            total.add(p);
        }
        total.value()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::single()
    }
}

/// Neumaier summation, one accumulator per lane.
#[derive(Clone, Copy, Debug)]
pub struct CompensatedLanes<T, const N: usize> {
    sum: [T; N],
    comp: [T; N],
}

impl<T: Real, const N: usize> Default for CompensatedLanes<T, N> {
    fn default() -> Self {
        CompensatedLanes {
            sum: [T::zero(); N],
            comp: [T::zero(); N],
        }
    }
}

impl<T: Real, const N: usize> CompensatedLanes<T, N> {
    pub fn add(&mut self, x: &[T; N]) {
        for ((sum, comp), &x) in self.sum.iter_mut().zip(&mut self.comp).zip(x) {
            let s = *sum;
            let t = s + x;
            if s.abs() >= x.abs() {
                *comp = *comp + ((s - t) + x);
            } else {
                *comp = *comp + ((x - t) + s);
            }
            *sum = t;
        }
    }

    pub fn value(&self) -> [T; N] {
        std::array::from_fn(|i| self.sum[i] + self.comp[i])
    }
}
