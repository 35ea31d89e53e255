//! The recursive boxing stages and their shared context.
//!
//! Items move through three stages. The height splitter partitions mixed
//! heights around a threshold, boxes the small side and recurses on the
//! merge until one uniform height remains. The bucketer sorts small items
//! into geometric height classes, rounds each class up and packs it as
//! unit jobs. The critical-time stage recursively boxes unit jobs that are
//! live at distinguished instants, coloring the leftovers.
//!
//! Critical times use half-unit resolution ([`Moment`]): interval
//! endpoints sit on even values, injected instants on odd ones, so a
//! moment strictly inside any non-degenerate open interval always exists
//! even for one-byte lifetimes.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BoxChild, BoxNode, BoxSignal};
use crate::igc::{igc_color, IntervalItem};

/// An instant on the byte-time axis in half units: `Moment(2t)` is the
/// integer time `t`, odd values fall strictly between integer times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Moment(pub u64);

impl Moment {
    /// The moment sitting exactly on integer byte-time `t`.
    pub fn endpoint(t: u64) -> Moment {
        Moment(t * 2)
    }

    /// Position in byte-time units (possibly half-integral).
    pub fn as_time(self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// True iff this moment lies strictly inside the open interval
    /// `(start, end)`.
    pub fn inside(self, start: u64, end: u64) -> bool {
        start * 2 < self.0 && self.0 < end * 2
    }
}

/// A sorted set of critical times.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CriticalTimes {
    times: std::collections::BTreeSet<Moment>,
}

impl CriticalTimes {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_endpoints(endpoints: impl IntoIterator<Item = u64>) -> Self {
        let mut s = Self::new();
        for t in endpoints {
            s.insert(Moment::endpoint(t));
        }
        s
    }

    /// Inserts a moment; returns true if it was new.
    pub fn insert(&mut self, m: Moment) -> bool {
        self.times.insert(m)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Moment> + '_ {
        self.times.iter().copied()
    }

    /// Earliest critical time strictly inside `(start, end)`, if any.
    pub fn earliest_live(&self, start: u64, end: u64) -> Option<Moment> {
        use std::ops::Bound::{Excluded, Unbounded};
        self.times
            .range((Excluded(Moment(start * 2)), Unbounded))
            .next()
            .copied()
            .filter(|m| m.0 < end * 2)
    }
}

/// Per-attempt state threaded through the pipeline: the seeded random
/// source, the set of already-boxed job ids and noteworthy events.
#[derive(Debug)]
pub struct PackCtx {
    pub log_base: f64,
    pub depth_limit: u32,
    rng: ChaCha8Rng,
    boxed: HashSet<u64>,
    events: Vec<String>,
}

impl PackCtx {
    pub fn new(seed: u64, log_base: f64, depth_limit: u32) -> Self {
        PackCtx {
            log_base,
            depth_limit,
            rng: ChaCha8Rng::seed_from_u64(seed),
            boxed: HashSet::new(),
            events: Vec::new(),
        }
    }

    /// Distinct original jobs boxed so far in this attempt.
    pub fn boxed_count(&self) -> usize {
        self.boxed.len()
    }

    pub fn take_events(&mut self) -> Vec<String> {
        std::mem::take(&mut self.events)
    }

    fn note_boxed(&mut self, node: &BoxNode) {
        let boxed = &mut self.boxed;
        node.visit_jobs(&mut |job| {
            boxed.insert(job.id);
        });
    }

    fn event(&mut self, what: &str) {
        self.events.push(what.to_string());
    }
}

/// Parameters steering one height split: the height ratio `r`, the derived
/// `mu = epsilon / log^2 r`, the box height `ceil(mu^5 h_max / log^2 r)`
/// and the small/large threshold `mu * H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub ratio: f64,
    pub mu: f64,
    pub box_height: u64,
    pub threshold: f64,
}

impl SplitParams {
    /// Computes the split parameters, or `None` for degenerate uniform
    /// heights (`h_min == h_max`), where the ratio logarithm vanishes.
    pub fn compute(h_min: u64, h_max: u64, epsilon: f64, log_base: f64) -> Option<SplitParams> {
        debug_assert!(h_min >= 1 && h_max >= h_min && epsilon > 0.0);
        if h_min == h_max {
            return None;
        }
        let ratio = h_max as f64 / h_min as f64;
        let log_r = ratio.ln() / log_base.ln();
        let log_sq = log_r * log_r;
        let mu = epsilon / log_sq;
        let raw_height = (mu.powi(5) * h_max as f64 / log_sq).ceil().max(1.0);
        let box_height = if raw_height >= u64::MAX as f64 {
            u64::MAX
        } else {
            raw_height as u64
        };
        Some(SplitParams {
            ratio,
            mu,
            box_height,
            threshold: mu * raw_height,
        })
    }
}

/// Reduces a mixed-height forest to boxes of one uniform height.
///
/// Splits around the threshold, boxes the small side via
/// [`bucket_and_box`], merges the produced boxes with the large side and
/// either recurses (while the height ratio stays wide) or runs one final
/// bucketing pass over the merge. Uniform input short-circuits: it is
/// already what the caller needs.
pub fn box_to_uniform(
    items: Vec<BoxNode>,
    epsilon: f64,
    ctx: &mut PackCtx,
) -> Result<Vec<BoxNode>, BoxSignal> {
    box_to_uniform_level(items, epsilon, ctx, 0)
}

/// Geometric box heights are capped so that address arithmetic stays well
/// inside u64 range even when the derived parameters explode for height
/// ratios close to 1.
const HEIGHT_CAP: u64 = 1 << 48;

fn box_to_uniform_level(
    items: Vec<BoxNode>,
    epsilon: f64,
    ctx: &mut PackCtx,
    level: u32,
) -> Result<Vec<BoxNode>, BoxSignal> {
    debug_assert!(!items.is_empty() && epsilon > 0.0);
    let h_min = items.iter().map(|b| b.height).min().unwrap();
    let h_max = items.iter().map(|b| b.height).max().unwrap();
    if h_min == h_max {
        return Ok(items);
    }
    if level >= ctx.depth_limit {
        return Err(BoxSignal::DepthExceeded);
    }
    let params = SplitParams::compute(h_min, h_max, epsilon, ctx.log_base)
        .expect("non-uniform heights");
    let (small, large): (Vec<BoxNode>, Vec<BoxNode>) = items
        .into_iter()
        .partition(|b| (b.height as f64) <= params.threshold);
    if small.is_empty() {
        return Err(BoxSignal::EmptySmallSet);
    }
    let box_height = params.box_height.min(HEIGHT_CAP);
    let boxes = bucket_and_box(small, params.mu, box_height, ctx)?;
    let mut merged = boxes;
    merged.extend(large);

    let h_min2 = merged.iter().map(|b| b.height).min().unwrap();
    let h_max2 = merged.iter().map(|b| b.height).max().unwrap();
    if h_min2 == h_max2 {
        return Ok(merged);
    }
    let log_r = (h_max2 as f64 / h_min2 as f64).ln() / ctx.log_base.ln();
    if log_r * log_r >= 1.0 / epsilon {
        return box_to_uniform_level(merged, epsilon, ctx, level + 1);
    }
    let final_params = SplitParams::compute(h_min2, h_max2, epsilon, ctx.log_base)
        .expect("non-uniform heights");
    if final_params.box_height > HEIGHT_CAP {
        // Near-uniform heights blow the parameter formulas up; rounding
        // everything to the tallest height is what the bucketing would do
        // here anyway, minus the waste.
        ctx.event("uniform_rounding_fallback");
        let mut wrapped = Vec::with_capacity(merged.len());
        for item in merged {
            let node = BoxNode {
                start: item.start,
                end: item.end,
                height: h_max2,
                row_unit: h_max2,
                children: vec![(0, BoxChild::Node(item))],
            };
            ctx.note_boxed(&node);
            wrapped.push(node);
        }
        return Ok(wrapped);
    }
    bucket_and_box(merged, final_params.mu, final_params.box_height, ctx)
}

/// Sorts items into geometric height buckets, rounds each bucket up and
/// packs it into boxes of exactly `box_height` bytes.
///
/// Bucket `i` holds heights in `((1+e)^(i-1), (1+e)^i]`; its items are
/// treated as unit jobs and packed with `box_height / floor((1+e)^i)`
/// content rows per box. Every input height must be at most
/// `epsilon * box_height`; violations and zero-row buckets surface as
/// [`BoxSignal::CapacityZero`].
pub fn bucket_and_box(
    items: Vec<BoxNode>,
    epsilon: f64,
    box_height: u64,
    ctx: &mut PackCtx,
) -> Result<Vec<BoxNode>, BoxSignal> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    debug_assert!(epsilon > 0.0 && box_height >= 1);
    let limit = epsilon * box_height as f64;
    let mut buckets: BTreeMap<u32, Vec<BoxNode>> = BTreeMap::new();
    for item in items {
        if item.height as f64 > limit * (1.0 + 1e-9) {
            return Err(BoxSignal::CapacityZero {
                detail: format!(
                    "height {} exceeds epsilon * H = {:.3} (epsilon {:.4}, H {})",
                    item.height, limit, epsilon, box_height
                ),
            });
        }
        buckets
            .entry(bucket_index(item.height, epsilon))
            .or_default()
            .push(item);
    }
    let mut out = Vec::new();
    for (index, bucket) in buckets {
        let tallest = bucket.iter().map(|b| b.height).max().unwrap();
        let rounded = rounded_height(index, epsilon, tallest);
        let rows = box_height / rounded;
        if rows == 0 {
            return Err(BoxSignal::CapacityZero {
                detail: format!(
                    "bucket {index} rounds to height {rounded}, above box height {box_height}"
                ),
            });
        }
        let mut bounds = initial_bounds(&bucket, ctx);
        if !bucket
            .iter()
            .any(|b| bounds.earliest_live(b.start, b.end).is_some())
        {
            // First empty-live detection: retry once with a live moment
            // injected before entering the recursion.
            ctx.event("empty_live_set_retry");
            bounds.insert(densest_moment(&bucket));
        }
        let unit_boxes = box_by_critical_times(
            bucket,
            &bounds,
            rows,
            0,
            ctx,
            EmptyLivePolicy::InjectInline,
        )?;
        for mut unit_box in unit_boxes {
            unit_box.height = box_height;
            unit_box.row_unit = rounded;
            ctx.note_boxed(&unit_box);
            out.push(unit_box);
        }
    }
    Ok(out)
}

/// Smallest `i >= 0` with `h <= (1+epsilon)^i`, computed by logarithm and
/// adjusted by direct comparison against float error.
pub(crate) fn bucket_index(height: u64, epsilon: f64) -> u32 {
    debug_assert!(height >= 1);
    let base = 1.0 + epsilon;
    let guess = ((height as f64).ln() / base.ln()).ceil();
    let mut i = if guess.is_finite() && guess > 0.0 { guess as i64 } else { 0 };
    while power(base, i) < height as f64 {
        i += 1;
    }
    while i > 0 && power(base, i - 1) >= height as f64 {
        i -= 1;
    }
    i as u32
}

/// `floor((1+epsilon)^i)`, never below the tallest item it must cover.
pub(crate) fn rounded_height(index: u32, epsilon: f64, tallest: u64) -> u64 {
    let value = power(1.0 + epsilon, index as i64).floor();
    let rounded = if value >= u64::MAX as f64 { u64::MAX } else { value as u64 };
    rounded.max(tallest)
}

fn power(base: f64, exponent: i64) -> f64 {
    base.powi(exponent.clamp(i32::MIN as i64, i32::MAX as i64) as i32)
}

/// What to do when no item is live at any critical time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyLivePolicy {
    /// Report [`BoxSignal::EmptyLiveSet`] with a suggested moment.
    Signal,
    /// Inject the suggested moment and keep going.
    InjectInline,
}

/// Recursively boxes unit items around critical times.
///
/// Items live at a critical time are grouped by their earliest such time
/// and boxed by [`box_live_at`]; per-time leftovers are colored and packed
/// `capacity` colors at a time. The endpoints of those leftover boxes join
/// the critical times for a recursive call on the items not live anywhere.
/// Hitting the depth limit boxes the remainder directly by coloring.
///
/// Returned boxes have `capacity` unit rows each; the caller rescales
/// them.
pub fn box_by_critical_times(
    items: Vec<BoxNode>,
    bounds: &CriticalTimes,
    capacity: u64,
    depth: u32,
    ctx: &mut PackCtx,
    on_empty: EmptyLivePolicy,
) -> Result<Vec<BoxNode>, BoxSignal> {
    debug_assert!(capacity >= 1);
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let mut bounds = bounds.clone();
    let assignment: Vec<Option<Moment>> = loop {
        let assignment: Vec<Option<Moment>> = items
            .iter()
            .map(|b| bounds.earliest_live(b.start, b.end))
            .collect();
        if assignment.iter().any(Option::is_some) {
            break assignment;
        }
        let suggested = densest_moment(&items);
        match on_empty {
            EmptyLivePolicy::Signal => return Err(BoxSignal::EmptyLiveSet { suggested }),
            EmptyLivePolicy::InjectInline => {
                ctx.event("empty_live_moment_injected");
                bounds.insert(suggested);
            }
        }
    };

    let mut live_groups: BTreeMap<Moment, Vec<BoxNode>> = BTreeMap::new();
    let mut rest: Vec<BoxNode> = Vec::new();
    for (item, at) in items.into_iter().zip(assignment) {
        match at {
            Some(moment) => live_groups.entry(moment).or_default().push(item),
            None => rest.push(item),
        }
    }

    let mut boxes = Vec::new();
    let mut unresolved: Vec<BoxNode> = Vec::new();
    for (moment, group) in live_groups {
        let (full, mut leftover) = box_live_at(group, moment, capacity);
        boxes.extend(full);
        unresolved.append(&mut leftover);
    }

    let leftover_boxes = group_by_coloring(unresolved, capacity);
    let mut next_bounds = bounds;
    let mut grew = false;
    for b in &leftover_boxes {
        grew |= next_bounds.insert(Moment::endpoint(b.start));
        grew |= next_bounds.insert(Moment::endpoint(b.end));
    }
    boxes.extend(leftover_boxes);

    if !rest.is_empty() {
        if depth + 1 >= ctx.depth_limit {
            ctx.event("depth_limit_fallback");
            boxes.extend(group_by_coloring(rest, capacity));
        } else {
            if !grew {
                // No new critical times while items remain: force progress
                // with the densest remaining instant.
                ctx.event("no_progress_moment_injected");
                next_bounds.insert(densest_moment(&rest));
            }
            boxes.extend(box_by_critical_times(
                rest,
                &next_bounds,
                capacity,
                depth + 1,
                ctx,
                EmptyLivePolicy::InjectInline,
            )?);
        }
    }
    Ok(boxes)
}

/// Boxes items that are all live at `at` into groups of exactly
/// `capacity`, one item per row.
///
/// Items are sorted by start ascending (ties: end descending, then
/// smallest contained job id); consecutive full groups become boxes
/// spanning their members' interval hull, and the final partial group is
/// returned unresolved, so at most `capacity - 1` items stay unboxed.
pub fn box_live_at(
    group: Vec<BoxNode>,
    at: Moment,
    capacity: u64,
) -> (Vec<BoxNode>, Vec<BoxNode>) {
    debug_assert!(capacity >= 1);
    debug_assert!(group.iter().all(|b| at.inside(b.start, b.end)));
    let mut group = group;
    group.sort_by_cached_key(|b| (b.start, std::cmp::Reverse(b.end), b.min_job_id()));
    let cap = usize::try_from(capacity).unwrap_or(usize::MAX);
    let full = group.len() / cap;
    let mut iter = group.into_iter();
    let mut boxes = Vec::with_capacity(full);
    for _ in 0..full {
        let members: Vec<BoxNode> = iter.by_ref().take(cap).collect();
        let start = members[0].start;
        let end = members.iter().map(|b| b.end).max().unwrap();
        boxes.push(BoxNode {
            start,
            end,
            height: capacity,
            row_unit: 1,
            children: members
                .into_iter()
                .enumerate()
                .map(|(row, b)| (row as u64, BoxChild::Node(b)))
                .collect(),
        });
    }
    (boxes, iter.collect())
}

/// Colors items and packs `capacity` colors per box; items sharing a color
/// share a row (their lifetimes are disjoint by construction).
fn group_by_coloring(items: Vec<BoxNode>, capacity: u64) -> Vec<BoxNode> {
    if items.is_empty() {
        return Vec::new();
    }
    let intervals: Vec<IntervalItem> = items
        .iter()
        .enumerate()
        .map(|(i, b)| IntervalItem::new(i as u64, b.start, b.end))
        .collect();
    let coloring = igc_color(&intervals);
    let mut groups: BTreeMap<u64, Vec<(u64, BoxNode)>> = BTreeMap::new();
    for (i, item) in items.into_iter().enumerate() {
        let color = coloring.colors[&(i as u64)] as u64;
        groups
            .entry(color / capacity)
            .or_default()
            .push((color % capacity, item));
    }
    groups
        .into_values()
        .map(|members| {
            let start = members.iter().map(|(_, b)| b.start).min().unwrap();
            let end = members.iter().map(|(_, b)| b.end).max().unwrap();
            BoxNode {
                start,
                end,
                height: capacity,
                row_unit: 1,
                children: members
                    .into_iter()
                    .map(|(row, b)| (row, BoxChild::Node(b)))
                    .collect(),
            }
        })
        .collect()
}

/// The instant of maximum live-item count, strictly inside the busiest
/// open segment. Deterministic.
pub fn densest_moment(items: &[BoxNode]) -> Moment {
    debug_assert!(!items.is_empty());
    let mut deltas: BTreeMap<u64, (u64, u64)> = BTreeMap::new(); // doubled t -> (ends, starts)
    for b in items {
        deltas.entry(b.start * 2).or_default().1 += 1;
        deltas.entry(b.end * 2).or_default().0 += 1;
    }
    let mut current = 0u64;
    let mut best = (0u64, 0u64);
    for (&t, &(ends, starts)) in &deltas {
        current = current - ends + starts;
        if current > best.0 {
            best = (current, t);
        }
    }
    Moment(best.1 + 1)
}

/// Initial critical times for a fresh recursion: the global start, the
/// global end, and one seeded-random moment with positive load (falling
/// back to the densest instant if sampling keeps missing).
pub fn initial_bounds(items: &[BoxNode], ctx: &mut PackCtx) -> CriticalTimes {
    debug_assert!(!items.is_empty());
    let lo = items.iter().map(|b| b.start).min().unwrap();
    let hi = items.iter().map(|b| b.end).max().unwrap();
    let mut bounds = CriticalTimes::new();
    bounds.insert(Moment::endpoint(lo));
    bounds.insert(Moment::endpoint(hi));
    let span = hi - lo;
    let mut picked = None;
    for _ in 0..64 {
        let candidate = Moment(2 * lo + 1 + 2 * ctx.rng.gen_range(0..span));
        if items.iter().any(|b| candidate.inside(b.start, b.end)) {
            picked = Some(candidate);
            break;
        }
    }
    bounds.insert(picked.unwrap_or_else(|| densest_moment(items)));
    bounds
}
