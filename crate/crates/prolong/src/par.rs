//! Data-parallel mapping with a runtime-selectable sequential path, so the
//! same binary can compare both strategies (and `--jobs 1` forces
//! deterministic sequential execution even when the `parallel` feature is
//! compiled in).

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Enables or disables the rayon path at runtime. No-op without the
/// `parallel` feature.
pub fn set_parallel(on: bool) {
    PARALLEL.store(on && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Maps `f` over `items`, in parallel when enabled. Output order matches
/// input order in both modes.
pub fn map_vec<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            // The term budget is thread-local; propagate the caller's value
            // into the worker pool.
            let budget = crate::symcore::current_budget();
            return items
                .into_par_iter()
                .map(|it| {
                    crate::symcore::set_budget(budget);
                    f(it)
                })
                .collect();
        }
    }
    items.into_iter().map(f).collect()
}
