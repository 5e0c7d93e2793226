//! Index-ordered parallel map with a sequential fallback.

/// Evaluate `f(i)` for `i in 0..n` and collect the results in index order.
/// Stops at the first error (in index order for the sequential build).
#[cfg(feature = "parallel")]
pub fn try_map_indexed<T, E, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    use rayon::prelude::*;
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn try_map_indexed<T, E, F>(n: usize, _workers: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let v: Result<Vec<usize>, ()> = try_map_indexed(1000, 4, |i| Ok(i * i));
        assert_eq!(v.unwrap(), (0..1000).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn propagates_errors() {
        let v: Result<Vec<usize>, String> =
            try_map_indexed(100, 2, |i| if i == 57 { Err("boom".into()) } else { Ok(i) });
        assert_eq!(v.unwrap_err(), "boom");
    }
}
