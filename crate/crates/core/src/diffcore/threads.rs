//! Intra-op parallelism capped by the UNLEARN_THREADS environment variable
//! (default 1). Partial results are reduced in fixed chunk order, so a given
//! thread count always produces the same bits; single-threaded runs are
//! bitwise deterministic.

use std::ops::Range;

use crate::diffcore::params::ParamVector;
use crate::error::Result;

pub const THREADS_ENV: &str = "UNLEARN_THREADS";

pub fn thread_budget() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Split `n` items into at most `threads` contiguous chunks, evaluate
/// `(loss_sum, grad_sum)` per chunk, and reduce in chunk order.
pub fn chunked_loss_grad<F>(n: usize, threads: usize, eval: F) -> Result<(f64, ParamVector)>
where
    F: Fn(Range<usize>) -> Result<(f64, ParamVector)> + Sync,
{
    assert!(n > 0, "empty reduction");
    let threads = threads.max(1).min(n);
    if threads == 1 {
        return eval(0..n);
    }

    let chunk = n.div_ceil(threads);
    let ranges: Vec<Range<usize>> = (0..threads)
        .map(|t| (t * chunk).min(n)..((t + 1) * chunk).min(n))
        .filter(|r| !r.is_empty())
        .collect();

    let results: Vec<Result<(f64, ParamVector)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .iter()
            .map(|r| {
                let r = r.clone();
                let eval = &eval;
                scope.spawn(move || eval(r))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    let mut total_loss = 0.0;
    let mut total_grad: Option<ParamVector> = None;
    for res in results {
        let (loss, grad) = res?;
        total_loss += loss;
        match &mut total_grad {
            Some(acc) => acc.axpy(1.0, &grad),
            None => total_grad = Some(grad),
        }
    }
    Ok((total_loss, total_grad.expect("at least one chunk")))
}
