//! Allocation traces and their conversion to job sets.
//!
//! A trace is an ordered list of allocate/free requests. Time is measured
//! in allocated bytes: the clock starts at zero, advances by the (sized)
//! height of every allocation and is left untouched by frees. Converting a
//! well-formed trace under that clock yields one rectangular job per
//! allocation: `(start, end, height)`.
//!
//! The on-disk format is line-oriented UTF-8: `a <id> <size>` allocates,
//! `f <id>` frees, `#` starts a comment and blank lines are skipped. A
//! `# name: <label>` comment, when present, sets the trace label so that
//! serialization round-trips.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::BufRead;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single request in a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Request {
    /// Allocate `size` bytes under allocation identifier `id`.
    Alloc { id: u64, size: u64 },
    /// Free the block previously allocated under `id`.
    Free { id: u64 },
}

/// An ordered allocation trace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub name: String,
    pub requests: Vec<Request>,
}

impl Trace {
    pub fn new(name: impl Into<String>, requests: Vec<Request>) -> Self {
        Trace { name: name.into(), requests }
    }

    /// Number of allocation requests in the trace.
    pub fn alloc_count(&self) -> usize {
        self.requests
            .iter()
            .filter(|r| matches!(r, Request::Alloc { .. }))
            .count()
    }
}

/// How request sizes map to job heights.
///
/// Real allocators spawn different-sized blocks for same-sized requests;
/// the policy models that as a pure function of the requested size. The
/// sized height also drives the clock, so a rounding policy changes both
/// heights and times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizingPolicy {
    /// Heights equal requested sizes.
    Identity,
    /// Heights are rounded up to the next multiple of `q` (`q >= 1`).
    RoundUpToMultiple(u64),
}

impl SizingPolicy {
    /// Applies the policy to a requested size.
    pub fn sized(&self, request: u64) -> u64 {
        match *self {
            SizingPolicy::Identity => request,
            SizingPolicy::RoundUpToMultiple(q) => {
                debug_assert!(q >= 1, "rounding quantum must be >= 1");
                request.div_ceil(q).max(1) * q
            }
        }
    }
}

impl Default for SizingPolicy {
    fn default() -> Self {
        SizingPolicy::Identity
    }
}

/// An unplaced rectangular job: lifetime interval on the byte-time axis,
/// height in bytes on the address axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub start: u64,
    pub end: u64,
    pub height: u64,
}

impl Job {
    pub fn new(id: u64, start: u64, end: u64, height: u64) -> Self {
        Job { id, start, end, height }
    }

    /// Strict open-interval liveness: true iff `start < t < end`.
    pub fn live_at(&self, t: u64) -> bool {
        self.start < t && t < self.end
    }

    /// Lifetime-times-height area contributed by this job.
    pub fn area(&self) -> u64 {
        (self.end - self.start) * self.height
    }
}

/// A set of jobs together with the final clock value of the trace that
/// produced it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JobSet {
    pub jobs: Vec<Job>,
    pub clock_end: u64,
}

/// Outcome of validating a trace.
///
/// Double frees and frees of unknown ids are hard errors. Allocations that
/// are never freed are leaks: by default they also make the trace
/// ill-formed, but with leak closing enabled a synthetic free at the final
/// clock value is appended for each of them and the repaired trace is
/// returned alongside the report.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub well_formed: bool,
    pub leaked_ids: Vec<u64>,
    pub synthesized_frees: usize,
    pub double_free_ids: Vec<u64>,
    pub unknown_free_ids: Vec<u64>,
    /// The leak-closed trace, present iff leaks were closed and no hard
    /// error was found.
    pub repaired: Option<Trace>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate allocation id {id}")]
    DuplicateAllocId { line: usize, id: u64 },
    #[error("line {line}: free of unknown id {id}")]
    FreeOfUnknownId { line: usize, id: u64 },
    #[error("trace is not well-formed: {0}")]
    NotWellFormed(String),
    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),
    #[error("jobset csv line {line}: {message}")]
    JobSetCsv { line: usize, message: String },
}

/// Parses the line format into a trace.
///
/// Duplicate allocation ids and frees of ids with no prior allocation are
/// rejected here; semantic problems that still leave every request
/// resolvable (double frees, leaks) are left for [`validate_trace`].
pub fn parse_trace(input: impl BufRead) -> Result<Trace, TraceError> {
    let mut requests = Vec::new();
    let mut name = String::new();
    let mut seen_allocs = BTreeSet::new();
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| TraceError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(label) = comment.trim().strip_prefix("name:") {
                name = label.trim().to_string();
            }
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let op = fields.next().unwrap();
        match op {
            "a" => {
                let id = parse_u64(fields.next(), lineno, "allocation id")?;
                let size = parse_u64(fields.next(), lineno, "allocation size")?;
                if fields.next().is_some() {
                    return Err(TraceError::Malformed {
                        line: lineno,
                        message: "trailing fields after `a <id> <size>`".into(),
                    });
                }
                if size == 0 {
                    return Err(TraceError::Malformed {
                        line: lineno,
                        message: "allocation size must be >= 1".into(),
                    });
                }
                if !seen_allocs.insert(id) {
                    return Err(TraceError::DuplicateAllocId { line: lineno, id });
                }
                requests.push(Request::Alloc { id, size });
            }
            "f" => {
                let id = parse_u64(fields.next(), lineno, "free id")?;
                if fields.next().is_some() {
                    return Err(TraceError::Malformed {
                        line: lineno,
                        message: "trailing fields after `f <id>`".into(),
                    });
                }
                if !seen_allocs.contains(&id) {
                    return Err(TraceError::FreeOfUnknownId { line: lineno, id });
                }
                requests.push(Request::Free { id });
            }
            other => {
                return Err(TraceError::Malformed {
                    line: lineno,
                    message: format!("unknown request kind `{other}`"),
                })
            }
        }
    }
    Ok(Trace { name, requests })
}

fn parse_u64(field: Option<&str>, line: usize, what: &str) -> Result<u64, TraceError> {
    let text = field.ok_or_else(|| TraceError::Malformed {
        line,
        message: format!("missing {what}"),
    })?;
    text.parse().map_err(|_| TraceError::Malformed {
        line,
        message: format!("{what} `{text}` is not a decimal u64"),
    })
}

/// Serializes a trace to the line format. `parse_trace` inverts this.
pub fn serialize_trace(trace: &Trace) -> String {
    let mut out = String::new();
    if !trace.name.is_empty() {
        out.push_str(&format!("# name: {}\n", trace.name));
    }
    for req in &trace.requests {
        match req {
            Request::Alloc { id, size } => out.push_str(&format!("a {id} {size}\n")),
            Request::Free { id } => out.push_str(&format!("f {id}\n")),
        }
    }
    out
}

/// Checks a trace for double frees, unknown frees and leaks.
///
/// With `close_leaks` set, leaks are not errors: a free per leaked id is
/// appended at the end of the trace (the clock is frozen there, so each
/// synthesized free lands on the final clock value) and the repaired trace
/// is attached to the report.
pub fn validate_trace(trace: &Trace, close_leaks: bool) -> ValidationReport {
    let mut live: BTreeSet<u64> = BTreeSet::new();
    let mut allocated: BTreeSet<u64> = BTreeSet::new();
    let mut double_free_ids = Vec::new();
    let mut unknown_free_ids = Vec::new();
    for req in &trace.requests {
        match *req {
            Request::Alloc { id, .. } => {
                // Duplicate alloc ids surface as "unknown" state corruption
                // below; parse_trace already rejects them in file input.
                allocated.insert(id);
                live.insert(id);
            }
            Request::Free { id } => {
                if live.remove(&id) {
                    continue;
                }
                if allocated.contains(&id) {
                    double_free_ids.push(id);
                } else {
                    unknown_free_ids.push(id);
                }
            }
        }
    }
    let leaked_ids: Vec<u64> = live.into_iter().collect();
    let hard_errors = !double_free_ids.is_empty() || !unknown_free_ids.is_empty();
    let mut report = ValidationReport {
        well_formed: !hard_errors && (leaked_ids.is_empty() || close_leaks),
        synthesized_frees: 0,
        leaked_ids,
        double_free_ids,
        unknown_free_ids,
        repaired: None,
    };
    if close_leaks && !hard_errors && !report.leaked_ids.is_empty() {
        let mut repaired = trace.clone();
        for &id in &report.leaked_ids {
            repaired.requests.push(Request::Free { id });
        }
        report.synthesized_frees = report.leaked_ids.len();
        report.repaired = Some(repaired);
    }
    report
}

/// Converts a well-formed trace into a job set under the byte-time clock.
///
/// Each allocation records the clock value *before* its own increment as
/// the job start, then advances the clock by the sized height; each free
/// records the current clock as the job end and leaves the clock alone.
/// Consequently `end - start >= height` for every job.
pub fn jobs_from_trace(trace: &Trace, sizing: SizingPolicy) -> Result<JobSet, TraceError> {
    let report = validate_trace(trace, false);
    if !report.well_formed {
        return Err(TraceError::NotWellFormed(describe_report(&report)));
    }
    let mut clock: u64 = 0;
    let mut open: BTreeMap<u64, (usize, u64, u64)> = BTreeMap::new(); // id -> (slot, start, height)
    let mut jobs: Vec<Job> = Vec::with_capacity(trace.alloc_count());
    for req in &trace.requests {
        match *req {
            Request::Alloc { id, size } => {
                let height = sizing.sized(size);
                open.insert(id, (jobs.len(), clock, height));
                jobs.push(Job::new(id, clock, 0, height));
                clock += height;
            }
            Request::Free { id } => {
                let (slot, _, _) = open.remove(&id).expect("validated trace");
                jobs[slot].end = clock;
            }
        }
    }
    Ok(JobSet { jobs, clock_end: clock })
}

fn describe_report(report: &ValidationReport) -> String {
    let mut parts = Vec::new();
    if !report.double_free_ids.is_empty() {
        parts.push(format!("double frees: {:?}", report.double_free_ids));
    }
    if !report.unknown_free_ids.is_empty() {
        parts.push(format!("unknown frees: {:?}", report.unknown_free_ids));
    }
    if !report.leaked_ids.is_empty() {
        parts.push(format!("leaked ids: {:?}", report.leaked_ids));
    }
    if parts.is_empty() {
        parts.push("ok".into());
    }
    parts.join("; ")
}

/// Block-size distribution for the trace generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SizeDist {
    /// Uniform integer sizes in `[lo, hi]`.
    Uniform { lo: u64, hi: u64 },
    /// Pareto-distributed sizes with the given scale (minimum) and shape,
    /// rounded to whole bytes and clamped to `[1, 2^32]`.
    Pareto { scale: f64, shape: f64 },
}

/// Job lifetime distribution, in interleaved allocation steps: a job drawn
/// with lifetime `k` is freed after `k` further allocations (or at the end
/// of the trace, whichever comes first).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LifetimeDist {
    pub lo: u64,
    pub hi: u64,
}

impl Default for LifetimeDist {
    fn default() -> Self {
        LifetimeDist { lo: 1, hi: 64 }
    }
}

/// Generates a well-formed, leak-free trace of `n_jobs` allocations with
/// frees interleaved per the lifetime distribution. Deterministic for a
/// fixed seed.
pub fn generate_trace(
    n_jobs: usize,
    size: &SizeDist,
    lifetime: &LifetimeDist,
    seed: u64,
) -> Result<Trace, TraceError> {
    match *size {
        SizeDist::Uniform { lo, hi } => {
            if lo < 1 || hi < lo {
                return Err(TraceError::InvalidDistribution(format!(
                    "uniform size bounds must satisfy 1 <= lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        SizeDist::Pareto { scale, shape } => {
            if !(scale >= 1.0) || !(shape > 0.0) {
                return Err(TraceError::InvalidDistribution(format!(
                    "pareto parameters must satisfy scale >= 1 and shape > 0, got ({scale}, {shape})"
                )));
            }
        }
    }
    if lifetime.lo < 1 || lifetime.hi < lifetime.lo {
        return Err(TraceError::InvalidDistribution(format!(
            "lifetime bounds must satisfy 1 <= lo <= hi, got [{}, {}]",
            lifetime.lo, lifetime.hi
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut requests = Vec::with_capacity(n_jobs * 2);
    // Min-heap of (death step, id); a job dies once the allocation counter
    // passes its death step.
    let mut pending: BinaryHeap<std::cmp::Reverse<(u64, u64)>> = BinaryHeap::new();
    for step in 0..n_jobs as u64 {
        let size = draw_size(size, &mut rng);
        let life = rng.gen_range(lifetime.lo..=lifetime.hi);
        requests.push(Request::Alloc { id: step, size });
        pending.push(std::cmp::Reverse((step + life, step)));
        while let Some(&std::cmp::Reverse((death, id))) = pending.peek() {
            if death > step {
                break;
            }
            pending.pop();
            requests.push(Request::Free { id });
        }
    }
    // Free survivors in death order so late allocations tend to die last.
    while let Some(std::cmp::Reverse((_, id))) = pending.pop() {
        requests.push(Request::Free { id });
    }
    Ok(Trace::new(format!("gen-{seed}"), requests))
}

fn draw_size(dist: &SizeDist, rng: &mut ChaCha8Rng) -> u64 {
    match *dist {
        SizeDist::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        SizeDist::Pareto { scale, shape } => {
            let pareto = rand_distr::Pareto::new(scale, shape).expect("validated parameters");
            let v: f64 = rng.sample(pareto);
            (v.round() as u64).clamp(1, 1 << 32)
        }
    }
}

/// Writes a job set in CSV form: header `id,start,end,height`, one row per
/// job.
pub fn jobset_to_csv(set: &JobSet) -> String {
    let mut out = String::from("id,start,end,height\n");
    for job in &set.jobs {
        out.push_str(&format!("{},{},{},{}\n", job.id, job.start, job.end, job.height));
    }
    out
}

/// Parses the job-set CSV format. The clock end is recovered as the sum of
/// heights, which is exactly the final clock of any trace-derived set.
pub fn jobset_from_csv(text: &str) -> Result<JobSet, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut jobs = Vec::new();
    for (idx, record) in reader.deserialize::<Job>().enumerate() {
        let job = record.map_err(|e| TraceError::JobSetCsv {
            line: idx + 2,
            message: e.to_string(),
        })?;
        jobs.push(job);
    }
    let clock_end = jobs.iter().map(|j| j.height).sum();
    Ok(JobSet { jobs, clock_end })
}
