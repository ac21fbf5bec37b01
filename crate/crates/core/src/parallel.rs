//! Chunked data parallelism with a deterministic reduction order.
//!
//! Work is always split into the same fixed-size chunks and reduced pairwise
//! in chunk order, so results are bitwise independent of the thread count and
//! of whether the `parallel` feature is enabled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    /// Rayon worker pool. Without the `parallel` feature this runs sequentially.
    #[default]
    Rayon,
}

pub struct Executor {
    mode: Parallelism,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("mode", &self.mode).finish()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self {
            mode: Parallelism::Sequential,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// `threads = None` uses the global pool.
    pub fn new(mode: Parallelism, threads: Option<usize>) -> Result<Self> {
        if threads == Some(0) {
            return Err(Error::Config("thread count must be positive".into()));
        }
        #[cfg(feature = "parallel")]
        {
            let pool = match (mode, threads) {
                (Parallelism::Rayon, Some(n)) => Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build()
                        .map_err(|e| Error::Config(e.to_string()))?,
                ),
                _ => None,
            };
            Ok(Self { mode, pool })
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Ok(Self { mode })
        }
    }

    pub fn mode(&self) -> Parallelism {
        self.mode
    }

    /// `f` over every item; output order follows input order.
    pub fn map<I, R, F>(&self, items: &[I], f: F) -> Vec<R>
    where
        I: Sync,
        R: Send,
        F: Fn(&I) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.mode == Parallelism::Rayon && items.len() > 1 {
            use rayon::prelude::*;
            let run = || items.par_iter().map(&f).collect();
            return match &self.pool {
                Some(pool) => pool.install(run),
                None => run(),
            };
        }
        items.iter().map(f).collect()
    }
}

/// Splits `0..n` into consecutive ranges of at most `chunk` elements.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<std::ops::Range<usize>> {
    let chunk = chunk.max(1);
    (0..n).step_by(chunk).map(|s| s..(s + chunk).min(n)).collect()
}

/// Balanced binary reduction in input order.
pub fn pairwise_reduce<T>(mut items: Vec<T>, f: &impl Fn(T, T) -> T) -> Option<T> {
    match items.len() {
        0 => None,
        1 => items.pop(),
        n => {
            let right = items.split_off(n / 2);
            let l = pairwise_reduce(items, f)?;
            let r = pairwise_reduce(right, f)?;
            Some(f(l, r))
        }
    }
}

/// Elementwise `a += b`.
pub fn add_into(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}
