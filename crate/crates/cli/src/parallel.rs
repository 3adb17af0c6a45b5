//! Bounded fan-out for per-scene work.
//!
//! Every job is a pure function of its index, and results are returned in
//! index order, so the output is identical whether the work runs on one
//! thread or many. `COHER_PVAD_THREADS` caps the worker count; 1 runs the
//! whole batch serially on the calling thread.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub const THREADS_ENV: &str = "COHER_PVAD_THREADS";

/// Worker count: `COHER_PVAD_THREADS` when set to a positive integer,
/// otherwise the machine's available parallelism.
pub fn thread_budget() -> usize {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs `job(0..count)` across at most `threads` workers and returns the
/// results in index order. Panics in jobs propagate to the caller.
pub fn run_indexed<T, F>(count: usize, threads: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if count == 0 {
        return Vec::new();
    }
    if threads <= 1 || count == 1 {
        return (0..count).map(&job).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..count).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(count) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let value = job(i);
                *slots[i].lock().expect("slot poisoned") = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot poisoned").expect("worker filled every slot"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_come_back_in_index_order() {
        for threads in [1, 2, 5] {
            let got = run_indexed(23, threads, |i| i * i);
            let want: Vec<usize> = (0..23).map(|i| i * i).collect();
            assert_eq!(got, want, "threads = {threads}");
        }
        assert!(run_indexed(0, 4, |i| i).is_empty());
    }

    #[test]
    fn errors_pass_through_as_values() {
        let got: Vec<Result<usize, String>> =
            run_indexed(6, 3, |i| if i == 4 { Err(format!("job {i}")) } else { Ok(i) });
        assert!(got[4].is_err());
        assert_eq!(got.iter().filter(|r| r.is_ok()).count(), 5);
    }
}
