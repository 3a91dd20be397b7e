//! Data-parallel helpers.
//!
//! Every parallel map here collects results in index order, and every
//! reduction is done sequentially over that ordered buffer. Parallel and
//! sequential execution therefore produce bit-identical floating point
//! results. With the `parallel` feature disabled the helpers run on the
//! calling thread; with it enabled they can still be forced sequential at
//! runtime through [`set_parallel`].

use std::sync::atomic::{AtomicBool, Ordering};

static ENABLED: AtomicBool = AtomicBool::new(true);

/// Toggle the parallel path at runtime. A no-op without the `parallel`
/// feature.
pub fn set_parallel(on: bool) {
    ENABLED.store(on, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::Relaxed)
}

/// `(0..n).map(f).collect()`, possibly on the rayon pool.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly on the rayon pool.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() && items.len() > 1 {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Sum equal-length vectors in order.
pub fn ordered_sum(parts: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// Configure the global rayon pool size. Returns `false` if the pool was
/// already initialised or the feature is off.
pub fn init_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        return rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_ok();
    }
    #[allow(unreachable_code)]
    {
        let _ = threads;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let out = map_range(1000, |i| i * 2);
        assert!(out.iter().enumerate().all(|(i, &v)| v == 2 * i));
    }

    #[test]
    fn ordered_sum_matches_sequential() {
        let parts: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![0.1 * i as f64, 1.0 / (i as f64 + 1.0)])
            .collect();
        let mut seq = vec![0.0; 2];
        for p in &parts {
            seq[0] += p[0];
            seq[1] += p[1];
        }
        assert_eq!(ordered_sum(&parts, 2), seq);
    }
}
