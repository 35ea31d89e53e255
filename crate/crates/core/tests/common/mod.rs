//! Shared helpers for integration tests: independent oracles and corpus
//! generators. Everything here is deliberately brute-force so it cannot
//! share a bug with the swept implementations it checks.

use dsapack::metrics::{PlacedJob, Placement};

/// Dense-grid fragmentation oracle: walks every unit time step and every
/// address cell. A job is live during step `t` iff `start <= t < end`
/// (the open interval contains `t + 1/2`); per page, free cells below the
/// highest occupied cell count as gaps.
pub fn dense_grid_gap_area(placement: &Placement, page_size: u64) -> u64 {
    let Some(t_max) = placement.jobs.iter().map(|j| j.end).max() else {
        return 0;
    };
    let Some(a_max) = placement.jobs.iter().map(PlacedJob::top).max() else {
        return 0;
    };
    let mut total = 0u64;
    for t in 0..t_max {
        let live: Vec<&PlacedJob> = placement
            .jobs
            .iter()
            .filter(|j| j.start <= t && t + 1 <= j.end)
            .collect();
        if live.is_empty() {
            continue;
        }
        let mut occupied = vec![false; a_max as usize];
        for job in &live {
            for a in job.addr..job.top() {
                occupied[a as usize] = true;
            }
        }
        let last_page = (a_max - 1) / page_size;
        for page in 0..=last_page {
            let base = page * page_size;
            let end = (base + page_size).min(a_max);
            let top = (base..end).rev().find(|&a| occupied[a as usize]);
            if let Some(top) = top {
                total += (base..top).filter(|&a| !occupied[a as usize]).count() as u64;
            }
        }
    }
    total
}

/// Brute-force maximum simultaneous overlap of open intervals: probes the
/// midpoint of every pair of consecutive distinct endpoints against every
/// interval.
pub fn brute_force_max_overlap(spans: &[(u64, u64)]) -> usize {
    let mut points: Vec<u64> = spans.iter().flat_map(|&(s, e)| [s * 2, e * 2]).collect();
    points.sort_unstable();
    points.dedup();
    let mut best = 0;
    for pair in points.windows(2) {
        let probe = pair[0] + 1; // strictly inside the open segment
        let count = spans
            .iter()
            .filter(|&&(s, e)| s * 2 < probe && probe < e * 2)
            .count();
        best = best.max(count);
    }
    best
}
