//! Order-preserving map that runs on rayon when the `parallel` feature is
//! compiled in and the caller asks for it, and sequentially otherwise.

/// Whether parallel execution is available in this build.
pub const PARALLEL_AVAILABLE: bool = cfg!(feature = "parallel");

/// Map `f` over `items`, keeping input order in the output.
pub fn map<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel && items.len() > 1 {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Map `f` over `0..n`, keeping index order.
pub fn map_range<R, F>(n: usize, parallel: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map(&idx, parallel, |i| f(*i))
}

/// Like [`map`], with at most `workers` threads. `workers <= 1` runs
/// sequentially.
pub fn map_bounded<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers > 1 && items.len() > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return pool.install(|| map(items, true, f));
            }
        }
    }
    let _ = workers;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_both_ways() {
        let v: Vec<u64> = (0..1000).collect();
        let seq = map(&v, false, |x| x * x);
        let par = map(&v, true, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(map_range(5, true, |i| i + 1), vec![1, 2, 3, 4, 5]);
        assert_eq!(map_bounded(&v, 3, |x| x * x), seq);
        assert_eq!(map_bounded(&v, 1, |x| x * x), seq);
    }
}
