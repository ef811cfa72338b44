//! Scoped-thread helpers. Work is split into deterministic chunks so results
//! are bit-identical regardless of how many workers run them.

use std::ops::Range;
use std::sync::OnceLock;

/// Keep freed activation pages resident: the training loop allocates and
/// frees hundreds of megabytes per step, and eager decommit turns every step
/// into a page-fault storm. Called once before any heavy allocation.
pub fn tune_allocator() {
    static DONE: OnceLock<()> = OnceLock::new();
    DONE.get_or_init(|| {
        // mi_option_purge_delay (index 15 in the vendored mimalloc option
        // enum, not yet named by the sys crate): ~1000s, i.e. never during
        // a run.
        const MI_OPTION_PURGE_DELAY: libmimalloc_sys::mi_option_t = 15;
        unsafe {
            libmimalloc_sys::mi_option_set(MI_OPTION_PURGE_DELAY, 1_000_000);
        }
    });
}

/// Worker-thread cap: `EASWIN_THREADS` if set, otherwise the machine's
/// available parallelism.
pub fn max_threads() -> usize {
    static CAP: OnceLock<usize> = OnceLock::new();
    *CAP.get_or_init(|| {
        if let Ok(v) = std::env::var("EASWIN_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                return n.max(1);
            }
        }
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

/// Split `0..total` into at most `max_threads()` contiguous ranges, each at
/// least `min_per_chunk` long (except possibly the last).
pub fn chunk_ranges(total: usize, min_per_chunk: usize) -> Vec<Range<usize>> {
    if total == 0 {
        return Vec::new();
    }
    let workers = max_threads()
        .min(total / min_per_chunk.max(1))
        .max(1);
    let per = total.div_ceil(workers);
    (0..workers)
        .map(|i| (i * per).min(total)..((i + 1) * per).min(total))
        .filter(|r| !r.is_empty())
        .collect()
}

/// Run `f` over disjoint mutable chunks of `data`, in parallel when the
/// buffer is large enough to pay for the threads. `f` receives each chunk and
/// the element offset where it starts.
pub fn par_apply_mut<T: Send, F>(data: &mut [T], min_per_chunk: usize, f: F)
where
    F: Fn(&mut [T], usize) + Sync,
{
    let total = data.len();
    let ranges = chunk_ranges(total, min_per_chunk);
    if ranges.len() <= 1 {
        f(data, 0);
        return;
    }
    std::thread::scope(|scope| {
        let mut rest = data;
        let mut consumed = 0usize;
        for r in &ranges {
            let (head, tail) = rest.split_at_mut(r.len());
            rest = tail;
            let start = consumed;
            consumed += r.len();
            let f = &f;
            scope.spawn(move || f(head, start));
        }
    });
}

/// Run `f` on each range in parallel. Ranges must describe disjoint work.
pub fn par_ranges<F>(ranges: Vec<Range<usize>>, f: F)
where
    F: Fn(Range<usize>) + Sync,
{
    if ranges.len() <= 1 {
        for r in ranges {
            f(r);
        }
        return;
    }
    std::thread::scope(|scope| {
        for r in ranges {
            let f = &f;
            scope.spawn(move || f(r));
        }
    });
}


/// Like [`alloc_filled`], additionally reducing each freshly written chunk
/// to a sum while it is still cache-hot, so callers can verify finiteness
/// without a second cold pass.
pub fn alloc_filled_summed<T, F>(n: usize, min_per_chunk: usize, f: F) -> (Vec<T>, T)
where
    T: Send + Copy + std::iter::Sum<T>,
    F: Fn(&mut [T], usize) + Sync,
{
    let ranges = chunk_ranges(n, min_per_chunk);
    let mut out: Vec<std::mem::MaybeUninit<T>> = Vec::with_capacity(n);
    // SAFETY: MaybeUninit<T> needs no initialization; length equals capacity.
    unsafe { out.set_len(n) };
    let run = |chunk: &mut [std::mem::MaybeUninit<T>], off: usize| -> T {
        // SAFETY: MaybeUninit<T> and T share layout; the worker writes every
        // element before the sum reads them.
        let typed: &mut [T] =
            unsafe { std::slice::from_raw_parts_mut(chunk.as_mut_ptr() as *mut T, chunk.len()) };
        f(typed, off);
        typed.iter().copied().sum()
    };
    let total: T = if ranges.len() <= 1 {
        run(&mut out, 0)
    } else {
        let partials: Vec<T> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            let mut rest: &mut [std::mem::MaybeUninit<T>] = &mut out;
            let mut off = 0usize;
            for r in ranges {
                let (head, tail) = rest.split_at_mut(r.len());
                rest = tail;
                let start = off;
                off += r.len();
                let run = &run;
                handles.push(scope.spawn(move || run(head, start)));
            }
            handles.into_iter().map(|h| h.join().expect("fill worker")).collect()
        });
        partials.into_iter().sum()
    };
    // SAFETY: every element was written by exactly one worker.
    (unsafe { std::mem::transmute::<Vec<std::mem::MaybeUninit<T>>, Vec<T>>(out) }, total)
}

/// Allocate a buffer of `n` elements and fill it by chunked workers without
/// the redundant zero-initialization pass. Safety relies on `f` writing every
/// element of each chunk, which all callers guarantee (they produce one
/// output per element).
pub fn alloc_filled<T: Send + Copy, F>(n: usize, min_per_chunk: usize, f: F) -> Vec<T>
where
    F: Fn(&mut [T], usize) + Sync,
{
    let mut out: Vec<std::mem::MaybeUninit<T>> = Vec::with_capacity(n);
    // SAFETY: MaybeUninit<T> needs no initialization; length equals capacity.
    unsafe { out.set_len(n) };
    {
        let ranges = chunk_ranges(n, min_per_chunk);
        let run = |chunk: &mut [std::mem::MaybeUninit<T>], off: usize| {
            // SAFETY: MaybeUninit<T> and T share layout; the worker writes
            // every element of the chunk before anyone reads it.
            let typed: &mut [T] =
                unsafe { std::slice::from_raw_parts_mut(chunk.as_mut_ptr() as *mut T, chunk.len()) };
            f(typed, off);
        };
        if ranges.len() <= 1 {
            run(&mut out, 0);
        } else {
            std::thread::scope(|scope| {
                let mut rest: &mut [std::mem::MaybeUninit<T>] = &mut out;
                let mut off = 0usize;
                for r in ranges {
                    let (head, tail) = rest.split_at_mut(r.len());
                    rest = tail;
                    let start = off;
                    off += r.len();
                    let run = &run;
                    scope.spawn(move || run(head, start));
                }
            });
        }
    }
    // SAFETY: every element was written by exactly one worker.
    unsafe { std::mem::transmute::<Vec<std::mem::MaybeUninit<T>>, Vec<T>>(out) }
}
