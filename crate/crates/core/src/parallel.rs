//! Particle-level parallelism.
//!
//! With the `parallel` feature (default) the maps below run on the rayon
//! global pool; without it, or when the caller asks for [`Execution::Sequential`],
//! they fall back to a plain iterator. Results are identical either way because
//! every closure derives its own random stream from its index.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// Whether this build can actually run in parallel.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; the first error (by index) wins.
pub fn try_map_indexed<T, E, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Send + Sync,
{
    map_indexed(exec, n, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i as f64).sqrt() * 3.0;
        let a = map_indexed(Execution::Parallel, 1000, f);
        let b = map_indexed(Execution::Sequential, 1000, f);
        assert_eq!(a, b);
    }

    #[test]
    fn first_error_is_reported() {
        let r: Result<Vec<usize>, usize> =
            try_map_indexed(Execution::Parallel, 10, |i| if i >= 4 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(4));
    }
}
