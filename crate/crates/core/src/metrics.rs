//! Measurement surface: liveness, load, makespan, placement validity,
//! page-local fragmentation and the two theoretical bounds.
//!
//! All geometry (times, addresses, areas) is exact 64-bit unsigned
//! arithmetic; only the bounds go through floating point, and they are
//! rounded to whole bytes at the end.
//!
//! Fragmentation follows the gaps-to-total-load definition: at every
//! instant, a free byte counts as a gap iff it lies strictly below the
//! highest live occupied byte of its own page. Space above the top-most
//! live job of a page is not fragmentation, and jobs spanning page
//! boundaries are clipped per page.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::Job;

/// Default page size for fragmentation accounting (x86-64 Linux).
pub const DEFAULT_PAGE_SIZE: u64 = 4096;

/// A job with an assigned base address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacedJob {
    pub id: u64,
    pub start: u64,
    pub end: u64,
    pub height: u64,
    pub addr: u64,
}

impl PlacedJob {
    pub fn new(id: u64, start: u64, end: u64, height: u64, addr: u64) -> Self {
        PlacedJob { id, start, end, height, addr }
    }

    /// Strict open-interval liveness: true iff `start < t < end`.
    pub fn live_at(&self, t: u64) -> bool {
        self.start < t && t < self.end
    }

    /// The unplaced job this placement decorates.
    pub fn job(&self) -> Job {
        Job::new(self.id, self.start, self.end, self.height)
    }

    /// One past the highest address occupied by this job.
    pub fn top(&self) -> u64 {
        self.addr + self.height
    }
}

/// A labeled set of placed jobs, e.g. one allocator's answer to a trace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Placement {
    pub label: String,
    pub jobs: Vec<PlacedJob>,
}

impl Placement {
    pub fn new(label: impl Into<String>, jobs: Vec<PlacedJob>) -> Self {
        Placement { label: label.into(), jobs }
    }

    /// The underlying unplaced jobs.
    pub fn to_jobs(&self) -> Vec<Job> {
        self.jobs.iter().map(PlacedJob::job).collect()
    }
}

/// Load statistics of a job set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadProfile {
    /// Maximum load over all instants.
    pub max_load: u64,
    /// Left endpoint of the first open segment on which the maximum is
    /// attained.
    pub max_load_time: u64,
    /// Sum of height-times-lifetime areas.
    pub total_load: u64,
    pub h_max: u64,
    pub h_min: u64,
}

/// Result of checking a placement for address conflicts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlacementValidity {
    Valid,
    /// Pairs of job ids that are simultaneously live (open intervals) and
    /// overlap in `[addr, addr + height)`.
    Conflicts(Vec<(u64, u64)>),
}

impl PlacementValidity {
    pub fn is_valid(&self) -> bool {
        matches!(self, PlacementValidity::Valid)
    }
}

/// Page-local fragmentation of a placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentationReport {
    /// Gap bytes integrated over time.
    pub gap_area: u64,
    /// Sum of job areas.
    pub total_load: u64,
    /// `gap_area / total_load` (0 when the placement is empty).
    pub fragmentation: f64,
    pub page_size: u64,
    /// Number of maximal rectangular gap regions.
    pub gap_count: u64,
}

/// The two theoretical yardsticks next to the quantities they derive from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundsReport {
    pub robson: u64,
    pub ba_upper: u64,
    pub max_load: u64,
    pub h_max: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("placement is not valid: {0} conflicting pair(s)")]
    InvalidPlacement(usize),
    #[error("page size must be >= 1")]
    ZeroPageSize,
    #[error("robson bound needs h_max >= 2, got {0}")]
    HmaxTooSmall(u64),
    #[error("placement csv line {line}: {message}")]
    PlacementCsv { line: usize, message: String },
}

/// Strict open-interval liveness of a job at an instant.
pub fn liveness(job: &Job, t: u64) -> bool {
    job.live_at(t)
}

/// Computes load statistics by an event sweep.
///
/// The load is piecewise constant between consecutive distinct interval
/// endpoints; the sweep evaluates each open segment once (conceptually at
/// its midpoint). An empty job set yields the all-zero profile.
pub fn load_profile(jobs: &[Job]) -> LoadProfile {
    if jobs.is_empty() {
        return LoadProfile::default();
    }
    // At each distinct endpoint, ends are applied before starts; the
    // running sum after both is the load on the open segment to the right.
    let mut deltas: BTreeMap<u64, (u64, u64)> = BTreeMap::new(); // t -> (sub, add)
    let mut total_load = 0u64;
    let mut h_max = 0u64;
    let mut h_min = u64::MAX;
    for job in jobs {
        deltas.entry(job.start).or_default().1 += job.height;
        deltas.entry(job.end).or_default().0 += job.height;
        total_load += job.area();
        h_max = h_max.max(job.height);
        h_min = h_min.min(job.height);
    }
    let mut current = 0u64;
    let mut max_load = 0u64;
    let mut max_load_time = 0u64;
    for (&t, &(sub, add)) in &deltas {
        current = current - sub + add;
        if current > max_load {
            max_load = current;
            max_load_time = t;
        }
    }
    LoadProfile { max_load, max_load_time, total_load, h_max, h_min }
}

/// Makespan: the largest used address minus the smallest used address.
/// Empty placements have makespan 0.
pub fn makespan(placement: &Placement) -> u64 {
    let top = placement.jobs.iter().map(PlacedJob::top).max();
    let base = placement.jobs.iter().map(|j| j.addr).min();
    match (top, base) {
        (Some(top), Some(base)) => top - base,
        _ => 0,
    }
}

/// Checks that simultaneously live jobs occupy disjoint address ranges.
///
/// Liveness is strict, so a job ending at `t` and one starting at `t` may
/// share addresses. Conflicting pairs are reported lower id first, sorted.
pub fn validate_placement(placement: &Placement) -> PlacementValidity {
    // Sweep over time events; on each insertion, check the candidate
    // against live jobs whose address range can still intersect it.
    let n = placement.jobs.len();
    let mut events: Vec<(u64, u8, usize)> = Vec::with_capacity(n * 2);
    for (idx, job) in placement.jobs.iter().enumerate() {
        events.push((job.start, 1, idx));
        events.push((job.end, 0, idx));
    }
    events.sort_unstable();

    let mut live: BTreeSet<(u64, usize)> = BTreeSet::new(); // (addr, idx)
    let mut conflicts = Vec::new();
    for (_, kind, idx) in events {
        let job = &placement.jobs[idx];
        if kind == 0 {
            live.remove(&(job.addr, idx));
            continue;
        }
        for &(addr, other_idx) in live.range(..(job.top(), 0)) {
            let other = &placement.jobs[other_idx];
            debug_assert!(addr < job.top());
            if other.top() > job.addr {
                let (a, b) = (job.id.min(other.id), job.id.max(other.id));
                conflicts.push((a, b));
            }
        }
        live.insert((job.addr, idx));
    }
    if conflicts.is_empty() {
        PlacementValidity::Valid
    } else {
        conflicts.sort_unstable();
        conflicts.dedup();
        PlacementValidity::Conflicts(conflicts)
    }
}

/// Measures page-local fragmentation of a valid placement.
///
/// Time is swept over maximal segments between consecutive job endpoints.
/// Within each segment and each page, gap bytes are the free bytes lying
/// strictly below the page's highest live occupied byte; their count times
/// the segment width accumulates into the gap area. A gap region spanning
/// several consecutive segments with an identical byte range is counted
/// once.
pub fn fragmentation(
    placement: &Placement,
    page_size: u64,
) -> Result<FragmentationReport, MetricsError> {
    if page_size == 0 {
        return Err(MetricsError::ZeroPageSize);
    }
    if let PlacementValidity::Conflicts(pairs) = validate_placement(placement) {
        return Err(MetricsError::InvalidPlacement(pairs.len()));
    }
    let total_load: u64 = placement.jobs.iter().map(|j| j.job().area()).sum();

    // Event sweep: maintain the live set across segments.
    let n = placement.jobs.len();
    let mut events: Vec<(u64, u8, usize)> = Vec::with_capacity(n * 2);
    for (idx, job) in placement.jobs.iter().enumerate() {
        events.push((job.start, 1, idx));
        events.push((job.end, 0, idx));
    }
    events.sort_unstable();

    let mut gap_area = 0u64;
    let mut gap_count = 0u64;
    // Gap byte ranges still open from the previous segment.
    let mut open_gaps: BTreeSet<(u64, u64)> = BTreeSet::new();
    let mut live: BTreeSet<usize> = BTreeSet::new();
    let mut cursor = 0usize;
    while cursor < events.len() {
        let t = events[cursor].0;
        while cursor < events.len() && events[cursor].0 == t {
            let (_, kind, idx) = events[cursor];
            if kind == 0 {
                live.remove(&idx);
            } else {
                live.insert(idx);
            }
            cursor += 1;
        }
        let Some(&(next_t, _, _)) = events.get(cursor) else {
            break;
        };
        let width = next_t - t;
        debug_assert!(width > 0);
        let gaps = segment_gaps(placement, &live, page_size);
        for &(lo, hi) in &gaps {
            gap_area += (hi - lo) * width;
        }
        // Identical byte ranges in consecutive segments continue the same
        // rectangular region; everything else opens a new one.
        let mut next_open = BTreeSet::new();
        for &(lo, hi) in &gaps {
            if !open_gaps.contains(&(lo, hi)) {
                gap_count += 1;
            }
            next_open.insert((lo, hi));
        }
        open_gaps = next_open;
    }

    let fragmentation = if total_load == 0 {
        0.0
    } else {
        gap_area as f64 / total_load as f64
    };
    Ok(FragmentationReport {
        gap_area,
        total_load,
        fragmentation,
        page_size,
        gap_count,
    })
}

/// Gap byte-intervals of one time segment, in ascending address order.
fn segment_gaps(
    placement: &Placement,
    live: &BTreeSet<usize>,
    page_size: u64,
) -> Vec<(u64, u64)> {
    // Clip live jobs to pages.
    let mut per_page: BTreeMap<u64, Vec<(u64, u64)>> = BTreeMap::new();
    for &idx in live {
        let job = &placement.jobs[idx];
        let mut lo = job.addr;
        let top = job.top();
        while lo < top {
            let page = lo / page_size;
            let page_end = (page + 1) * page_size;
            let hi = top.min(page_end);
            per_page.entry(page).or_default().push((lo, hi));
            lo = hi;
        }
    }
    let mut gaps = Vec::new();
    for (page, mut spans) in per_page {
        spans.sort_unstable();
        // Walk upward from the page base; holes between covered spans lie
        // below the page's top live byte by construction.
        let mut at = page * page_size;
        for &(lo, hi) in &spans {
            if lo > at {
                gaps.push((at, lo));
            }
            at = at.max(hi);
        }
    }
    gaps
}

/// Worst-case lower bound on the memory any general allocation policy may
/// need: `(L / 2) * log2(h_max)`, rounded to the nearest byte.
pub fn robson_bound(max_load: u64, h_max: u64) -> Result<u64, MetricsError> {
    if h_max < 2 {
        return Err(MetricsError::HmaxTooSmall(h_max));
    }
    let value = max_load as f64 / 2.0 * (h_max as f64).log2();
    Ok(value.round() as u64)
}

/// Makespan guarantee of the offline boxing pipeline:
/// `[1 + 2 * (h_max / L)^(1/7)] * L`, rounded to the nearest byte.
///
/// Ratios above 1 are outside the bound's regime; the value is still
/// computed, with a warning.
pub fn ba_upper_bound(max_load: u64, h_max: u64) -> u64 {
    ba_upper_bound_with_divisor(max_load, h_max, 1.0)
}

/// Same bound with the height-to-load ratio divided by `divisor` first.
///
/// The divisor defaults to 1; other values exist purely to reproduce
/// published tables whose column is consistent with a scaled ratio.
pub fn ba_upper_bound_with_divisor(max_load: u64, h_max: u64, divisor: f64) -> u64 {
    debug_assert!(divisor > 0.0);
    if h_max > max_load {
        log::warn!("h_max {h_max} exceeds max load {max_load}; bound regime violated");
    }
    let l = max_load as f64;
    let ratio = h_max as f64 / (divisor * l);
    let value = (1.0 + 2.0 * ratio.powf(1.0 / 7.0)) * l;
    value.round() as u64
}

/// Robson and packing bounds for a load profile.
pub fn bounds_report(profile: &LoadProfile) -> Result<BoundsReport, MetricsError> {
    Ok(BoundsReport {
        robson: robson_bound(profile.max_load, profile.h_max)?,
        ba_upper: ba_upper_bound(profile.max_load, profile.h_max),
        max_load: profile.max_load,
        h_max: profile.h_max,
    })
}

/// The fixed-name JSON object consumed by the comparison tooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub label: String,
    #[serde(rename = "L")]
    pub max_load: u64,
    pub h_max: u64,
    pub total_load: u64,
    pub makespan: u64,
    /// Fragmentation ratio, rounded to 4 decimal places.
    pub fragmentation: f64,
    pub gap_area: u64,
    /// Absent for placements with `h_max < 2`.
    pub robson_bound: Option<u64>,
    /// Absent for empty placements.
    pub ba_upper_bound: Option<u64>,
    pub page_size: u64,
}

/// Rounds a ratio to 4 decimal places, the precision used in emitted
/// tables.
pub fn round_ratio(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

/// Assembles the metrics JSON object for a placement.
pub fn metrics_json(placement: &Placement, page_size: u64) -> Result<MetricsJson, MetricsError> {
    let frag = fragmentation(placement, page_size)?;
    let profile = load_profile(&placement.to_jobs());
    Ok(MetricsJson {
        label: placement.label.clone(),
        max_load: profile.max_load,
        h_max: profile.h_max,
        total_load: profile.total_load,
        makespan: makespan(placement),
        fragmentation: round_ratio(frag.fragmentation),
        gap_area: frag.gap_area,
        robson_bound: robson_bound(profile.max_load, profile.h_max).ok(),
        ba_upper_bound: if placement.jobs.is_empty() {
            None
        } else {
            Some(ba_upper_bound(profile.max_load, profile.h_max))
        },
        page_size,
    })
}

/// Writes a placement in CSV form: header `id,start,end,height,address`.
pub fn placement_to_csv(placement: &Placement) -> String {
    let mut out = String::from("id,start,end,height,address\n");
    for job in &placement.jobs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            job.id, job.start, job.end, job.height, job.addr
        ));
    }
    out
}

#[derive(Debug, Deserialize)]
struct PlacementRow {
    id: u64,
    start: u64,
    end: u64,
    height: u64,
    address: u64,
}

/// Parses the placement CSV format; the label is supplied by the caller
/// (typically the file stem).
pub fn placement_from_csv(text: &str, label: &str) -> Result<Placement, MetricsError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut jobs = Vec::new();
    for (idx, record) in reader.deserialize::<PlacementRow>().enumerate() {
        let row = record.map_err(|e| MetricsError::PlacementCsv {
            line: idx + 2,
            message: e.to_string(),
        })?;
        jobs.push(PlacedJob::new(row.id, row.start, row.end, row.height, row.address));
    }
    Ok(Placement::new(label, jobs))
}
