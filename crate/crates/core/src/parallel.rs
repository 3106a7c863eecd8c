//! Order-preserving parallel map over a bounded number of scoped threads.

/// Applies `f` to every item with at most `workers` threads. Results come back
/// in input order, so output never depends on the worker count.
pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let items: Vec<u64> = (0..37).collect();
        let one = par_map(&items, 1, |v| v * v);
        for w in [2, 3, 8, 64] {
            assert_eq!(par_map(&items, w, |v| v * v), one);
        }
        assert!(par_map::<u64, u64, _>(&[], 4, |v| *v).is_empty());
    }
}
