//! Order-stable parallel map over a slice with per-worker state (usually an
//! oracle handle). Results come back in input order whatever the schedule.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Number of workers to use when the caller does not say.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Applies `f` to every item using up to `threads` workers. Each worker
/// builds its state once with `init`; if `init` fails, that error is
/// returned for every item the worker would have processed.
pub fn map_ordered<T, S, R, E, I, F>(items: &[T], threads: usize, init: I, f: F) -> Vec<Result<R, E>>
where
    T: Sync,
    R: Send,
    E: Send + Clone,
    I: Fn() -> Result<S, E> + Sync,
    F: Fn(&mut S, usize, &T) -> Result<R, E> + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return match init() {
            Ok(mut s) => items.iter().enumerate().map(|(i, t)| f(&mut s, i, t)).collect(),
            Err(e) => items.iter().map(|_| Err(e.clone())).collect(),
        };
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R, E>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| {
                let mut state = init();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let r = match &mut state {
                        Ok(s) => f(s, i, &items[i]),
                        Err(e) => Err(e.clone()),
                    };
                    slots.lock().unwrap()[i] = Some(r);
                }
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every index is processed"))
        .collect()
}
