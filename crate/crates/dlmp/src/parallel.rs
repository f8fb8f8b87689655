//! Thread pool and the order-preserving parallel map handed to the trainer
//! and evaluator.

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// `threads == 0` lets rayon pick the core count.
pub fn pool(threads: usize) -> anyhow::Result<ThreadPool> {
    Ok(ThreadPoolBuilder::new().num_threads(threads).build()?)
}

/// `[f(0), …, f(n-1)]`, evaluated on the current pool. The result order is
/// fixed, so reductions over it do not depend on scheduling.
pub fn ordered_map<T: Send>(n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order() {
        let p = pool(4).unwrap();
        let out = p.install(|| ordered_map(100, &|i| i * i));
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
