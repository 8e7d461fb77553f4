use pdmv_core::sampler::WalkerExecutor;
use rayon::prelude::*;

/// Runs walker jobs on the rayon pool. Results keep input order, so output is bitwise
/// identical to [`pdmv_core::sampler::Sequential`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallel;

impl WalkerExecutor for Parallel {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        items.into_par_iter().map(f).collect()
    }
}
