//! Interval-graph coloring: optimal packing of equal-height items.
//!
//! A greedy sweep over interval endpoints, releasing before acquiring at
//! equal times to honor the strict open-interval liveness used everywhere
//! else, colors an interval graph with exactly as many colors as the
//! maximum number of simultaneously live items. Stacking items of one
//! common height at `color * height` therefore yields a placement of
//! provably minimal makespan.

use std::collections::{BTreeMap, BinaryHeap};

/// An interval to be colored, identified by caller-chosen key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntervalItem {
    pub key: u64,
    pub start: u64,
    pub end: u64,
}

impl IntervalItem {
    pub fn new(key: u64, start: u64, end: u64) -> Self {
        debug_assert!(start < end, "interval must be non-degenerate");
        IntervalItem { key, start, end }
    }
}

/// A proper coloring of open intervals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Coloring {
    pub colors: BTreeMap<u64, usize>,
    pub n_colors: usize,
}

/// Colors open intervals greedily along the time axis.
///
/// Items whose open intervals overlap receive distinct colors; an item
/// ending exactly where another starts may share its color. Free colors
/// are reused lowest-first, so identical input order yields identical
/// colors, and the color count equals the maximum overlap.
pub fn igc_color(items: &[IntervalItem]) -> Coloring {
    // Events sorted by (time, kind, input index); kind 0 releases, kind 1
    // acquires, so releases win ties.
    let mut events: Vec<(u64, u8, usize)> = Vec::with_capacity(items.len() * 2);
    for (idx, item) in items.iter().enumerate() {
        events.push((item.start, 1, idx));
        events.push((item.end, 0, idx));
    }
    events.sort_unstable();

    let mut colors = BTreeMap::new();
    let mut assigned: Vec<usize> = vec![usize::MAX; items.len()];
    let mut free: BinaryHeap<std::cmp::Reverse<usize>> = BinaryHeap::new();
    let mut next_fresh = 0usize;
    for (_, kind, idx) in events {
        if kind == 0 {
            free.push(std::cmp::Reverse(assigned[idx]));
        } else {
            let color = match free.pop() {
                Some(std::cmp::Reverse(c)) => c,
                None => {
                    let c = next_fresh;
                    next_fresh += 1;
                    c
                }
            };
            assigned[idx] = color;
            colors.insert(items[idx].key, color);
        }
    }
    Coloring { colors, n_colors: next_fresh }
}

/// Places items of one uniform height at `color * height`.
///
/// The resulting stack of rectangles is conflict-free and spans exactly
/// `n_colors * height` addresses.
pub fn igc_place_uniform(items: &[IntervalItem], height: u64) -> BTreeMap<u64, u64> {
    debug_assert!(height >= 1);
    let coloring = igc_color(items);
    coloring
        .colors
        .into_iter()
        .map(|(key, color)| (key, color as u64 * height))
        .collect()
}
