//! Solving many instances at once.
//!
//! With the `parallel` feature the map runs on the rayon pool; without it,
//! or through the `_seq` variants, it runs on the calling thread. Results are
//! returned in input order either way.

use crate::error::Result;
use crate::problem::ProblemInstance;
use crate::recovery::{solve, SolveConfig, SolveReport};

/// Order-preserving map over `items`, parallel when the feature is enabled.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_seq(items, f)
    }
}

pub fn map_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Runs `f` on a pool with at most `threads` workers. Without the `parallel`
/// feature it simply calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

pub fn solve_many(instances: &[ProblemInstance], config: &SolveConfig) -> Vec<Result<SolveReport>> {
    map(instances, |inst| solve(inst, config))
}

pub fn solve_many_seq(instances: &[ProblemInstance], config: &SolveConfig) -> Vec<Result<SolveReport>> {
    map_seq(instances, |inst| solve(inst, config))
}
