//! Data-parallel helpers.
//!
//! Every batch loop in the crate (validation sweeps, trials, bootstrap
//! resamples, dataset instances) goes through [`map_indexed`]. Results are
//! always returned in index order, so output never depends on the thread
//! count. Without the `parallel` feature, [`Execution::Parallel`] runs on the
//! calling thread.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run work on a thread pool.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Maps `f` over `0..len`, returning results in index order.
pub fn map_indexed<T, F>(exec: Execution, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}

/// Like [`map_indexed`] but fallible; the reported error is the one with
/// the lowest index, independent of scheduling.
pub fn try_map_indexed<T, E, F>(exec: Execution, len: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(exec, len, f).into_iter().collect()
}
