//! Execution policy for the data-parallel scans (grid infima, brute-force
//! oracles, batches of independent games).
//!
//! With the `parallel` feature disabled every policy runs sequentially, so
//! results never depend on the feature set: reductions break ties on the
//! lowest index and are therefore order independent.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this policy actually fans out to the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub(crate) fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Fallible map; returns the error of the lowest failing index.
pub(crate) fn try_map<T, R, F>(exec: Execution, items: &[T], f: F) -> crate::Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> crate::Result<R> + Sync + Send,
{
    map(exec, items, f).into_iter().collect()
}

fn pick_min(a: (usize, f64), b: (usize, f64)) -> (usize, f64) {
    match a.1.total_cmp(&b.1) {
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Equal => {
            if a.0 <= b.0 {
                a
            } else {
                b
            }
        }
    }
}

/// `(index, value)` of the smallest `f(item)`, lowest index on ties.
pub(crate) fn argmin<T, F>(exec: Execution, items: &[T], f: F) -> Option<(usize, f64)>
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items
            .par_iter()
            .enumerate()
            .map(|(i, x)| (i, f(x)))
            .reduce_with(pick_min);
    }
    let _ = exec;
    items
        .iter()
        .enumerate()
        .map(|(i, x)| (i, f(x)))
        .reduce(pick_min)
}
