use std::num::NonZeroUsize;
use std::thread;

pub const THREADS_VAR: &str = "FEEDER_ENVELOPE_THREADS";

/// Worker cap from `FEEDER_ENVELOPE_THREADS`, else the available
/// parallelism.
pub fn thread_cap() -> usize {
    let fallback = || thread::available_parallelism().map_or(1, NonZeroUsize::get);
    match std::env::var(THREADS_VAR) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                log::warn!("ignoring {THREADS_VAR}={s:?}; expected a positive integer");
                fallback()
            }
        },
        Err(_) => fallback(),
    }
}

/// Runs independent jobs with at most `cap` in flight. Results keep the
/// input order.
pub fn run<T, F>(jobs: Vec<F>, cap: usize) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let mut out = Vec::with_capacity(jobs.len());
    let mut jobs = jobs.into_iter().peekable();
    while jobs.peek().is_some() {
        let chunk: Vec<F> = jobs.by_ref().take(cap.max(1)).collect();
        if chunk.len() == 1 {
            out.extend(chunk.into_iter().map(|f| f()));
            continue;
        }
        thread::scope(|s| {
            let handles: Vec<_> = chunk.into_iter().map(|f| s.spawn(f)).collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("batch worker panicked")));
        });
    }
    out
}
