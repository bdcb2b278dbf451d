//! Small shared helpers: deterministic parallel maps and hashing.

/// Number of worker threads used for data-parallel loops.
pub fn thread_count() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
}

/// Maps `f` over `0..n` in parallel, preserving index order in the output.
///
/// Each index is computed by exactly one thread, so the result is identical
/// to the sequential map regardless of thread count.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = thread_count().min(n.max(1));
    if threads <= 1 || n < 2 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let mut parts: Vec<Vec<T>> = Vec::with_capacity(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                let lo = t * chunk;
                let hi = ((t + 1) * chunk).min(n);
                s.spawn(move || (lo..hi).map(f).collect::<Vec<T>>())
            })
            .collect();
        for h in handles {
            parts.push(h.join().expect("worker thread panicked"));
        }
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p);
    }
    out
}

/// Runs `f` over contiguous row chunks of `data` in parallel.
///
/// `f(first_row, rows)` receives the index of its first row and a mutable
/// slice covering whole rows. Rows are partitioned, never shared, so the
/// result does not depend on the thread count.
pub fn par_rows<F>(data: &mut [f32], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    assert!(row_len > 0 && data.len() % row_len == 0);
    let n_rows = data.len() / row_len;
    let threads = thread_count().min(n_rows.max(1));
    if threads <= 1 || n_rows < 2 {
        f(0, data);
        return;
    }
    let rows_per = n_rows.div_ceil(threads);
    std::thread::scope(|s| {
        let mut rest = data;
        let mut row = 0usize;
        while row < n_rows {
            let take = rows_per.min(n_rows - row);
            let (head, tail) = rest.split_at_mut(take * row_len);
            let first = row;
            let f = &f;
            s.spawn(move || f(first, head));
            rest = tail;
            row += take;
        }
    });
}

/// FNV-1a 64-bit hash, used for config/dataset fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
