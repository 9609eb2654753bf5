//! Shared helpers for integration tests: brute-force metric oracles and
//! hand-derived expected values, written against plain tuples so they stay
//! independent of the library implementation they cross-check.

pub mod expected;

/// Busy core-seconds computed by discretizing the timeline at every interval
/// boundary and summing (active cores) x (segment length) per segment.
///
/// Intervals are half-open [start, end). This is the slow reference for the
/// closed-form per-task accumulation used by the library.
pub fn busy_core_seconds_oracle(tasks: &[(f64, f64, u32)]) -> f64 {
    let mut cuts: Vec<f64> = Vec::with_capacity(tasks.len() * 2);
    for &(s, e, _) in tasks {
        cuts.push(s);
        cuts.push(e);
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut busy = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = 0.5 * (lo + hi);
        let active: f64 = tasks
            .iter()
            .filter(|&&(s, e, _)| s <= mid && mid < e)
            .map(|&(_, _, c)| c as f64)
            .sum();
        busy += active * (hi - lo);
    }
    busy
}

/// Maximum number of simultaneously active intervals, probing just after
/// every start point (half-open semantics: an interval ending at t does not
/// overlap one starting at t).
pub fn max_concurrency_oracle(intervals: &[(f64, f64)]) -> usize {
    let mut max = 0usize;
    for &(probe, _) in intervals {
        let n = intervals
            .iter()
            .filter(|&&(s, e)| s <= probe && probe < e)
            .count();
        max = max.max(n);
    }
    max
}

/// Relative difference |a - b| / max(|a|, |b|, 1).
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
