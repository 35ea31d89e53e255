//! The offline packer: boxes jobs into uniform-height containers, places
//! the containers optimally, then unboxes and tightens.
//!
//! Everything flowing through the pipeline is a box. Bare jobs enter as
//! singleton boxes; each stage wraps groups of boxes into bigger ones
//! until a single uniform height remains, at which point interval-graph
//! coloring places the outer boxes optimally. Unboxing recovers per-job
//! addresses; a final tightening pass compacts the notoriously sparse
//! unboxed placement.
//!
//! The pipeline is fragile by nature: several stages fail outright for
//! unlucky values of the error parameter epsilon. Failures propagate as
//! [`BoxSignal`]s back to the entry point, where an
//! [`EpsilonController`] picks the next epsilon and the whole flow
//! retries, up to a configurable budget.

mod pipeline;

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::igc::{igc_place_uniform, IntervalItem};
use crate::metrics::{load_profile, validate_placement, LoadProfile, PlacedJob, Placement};
use crate::trace::{Job, JobSet};

pub use pipeline::{
    box_by_critical_times, box_live_at, box_to_uniform, bucket_and_box, densest_moment,
    initial_bounds, CriticalTimes, EmptyLivePolicy, Moment, PackCtx, SplitParams,
};

/// A node of the box forest: a rectangle that contains jobs and/or other
/// boxes.
///
/// Children sit on rows of `row_unit` bytes each; a child at row `r` is
/// placed `r * row_unit` bytes above its parent's base address. Children
/// sharing a row never overlap in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxNode {
    pub start: u64,
    pub end: u64,
    pub height: u64,
    /// Height of one content row in bytes.
    pub row_unit: u64,
    /// `(row index, content)` pairs.
    pub children: Vec<(u64, BoxChild)>,
}

/// A box holds either an original job or a nested box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoxChild {
    Job(Job),
    Node(BoxNode),
}

impl BoxNode {
    /// Wraps a bare job as a singleton box of the job's own geometry.
    pub fn leaf(job: Job) -> BoxNode {
        BoxNode {
            start: job.start,
            end: job.end,
            height: job.height,
            row_unit: job.height,
            children: vec![(0, BoxChild::Job(job))],
        }
    }

    /// Number of original jobs under this box.
    pub fn leaf_count(&self) -> usize {
        let mut count = 0;
        self.visit_jobs(&mut |_| count += 1);
        count
    }

    /// Smallest original job id under this box; used as a deterministic
    /// tie-breaker when ordering boxes.
    pub fn min_job_id(&self) -> u64 {
        let mut min = u64::MAX;
        self.visit_jobs(&mut |job| min = min.min(job.id));
        min
    }

    /// Calls `f` for every original job under this box.
    pub fn visit_jobs(&self, f: &mut impl FnMut(&Job)) {
        for (_, child) in &self.children {
            match child {
                BoxChild::Job(job) => f(job),
                BoxChild::Node(node) => node.visit_jobs(f),
            }
        }
    }
}

/// Failure signals propagated from the pipeline stages back to the entry
/// point.
#[derive(Debug, Clone, PartialEq)]
pub enum BoxSignal {
    /// The small-height side of a split came out empty; recursing would
    /// loop forever.
    EmptySmallSet,
    /// No job is live at any critical time. Carries a moment at which the
    /// problematic input does have live jobs; the caller retries once with
    /// that moment injected.
    EmptyLiveSet { suggested: Moment },
    /// A bucket's rounded height exceeds the box height, leaving zero
    /// content rows (also reported for height-precondition violations).
    CapacityZero { detail: String },
    /// The recursion guard tripped.
    DepthExceeded,
}

impl BoxSignal {
    pub fn name(&self) -> &'static str {
        match self {
            BoxSignal::EmptySmallSet => "empty_small_set",
            BoxSignal::EmptyLiveSet { .. } => "empty_live_set",
            BoxSignal::CapacityZero { .. } => "capacity_zero",
            BoxSignal::DepthExceeded => "depth_exceeded",
        }
    }
}

/// Configuration of a packing run. All randomness flows from `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PackConfig {
    pub seed: u64,
    /// Epsilon retry budget.
    pub max_iterations: u32,
    /// Recursion guard for the critical-time and height-split recursions.
    pub depth_limit: u32,
    /// Base of the logarithm in the split-parameter formulas.
    pub log_base: f64,
}

impl Default for PackConfig {
    fn default() -> Self {
        PackConfig {
            seed: 0,
            max_iterations: 100,
            depth_limit: 64,
            log_base: 10.0,
        }
    }
}

/// The epsilon retry heuristics.
///
/// On every failure the controller bumps epsilon by 10%; an attempt that
/// boxed more jobs than any previous one pins the current value as a
/// bottom limit, and any value drifting past twice the bottom limit snaps
/// back to it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonController {
    current: f64,
    bottom_limit: Option<f64>,
    best_boxed_count: usize,
    iteration: u32,
    max_iterations: u32,
}

/// Marker error: the retry budget ran out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("epsilon retry budget exhausted")]
pub struct RetriesExhausted;

impl EpsilonController {
    pub fn new(initial_epsilon: f64, max_iterations: u32) -> Self {
        EpsilonController {
            current: initial_epsilon,
            bottom_limit: None,
            best_boxed_count: 0,
            iteration: 0,
            max_iterations,
        }
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn bottom_limit(&self) -> Option<f64> {
        self.bottom_limit
    }

    /// Completed (failed) attempts so far.
    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    /// Registers a failed attempt and derives the next epsilon.
    pub fn next_epsilon(&mut self, last_boxed: usize) -> Result<f64, RetriesExhausted> {
        if last_boxed > self.best_boxed_count {
            self.best_boxed_count = last_boxed;
            self.bottom_limit = Some(self.current);
        }
        self.current *= 1.1;
        if let Some(bottom) = self.bottom_limit {
            if self.current > 2.0 * bottom {
                self.current = bottom;
            }
        }
        self.iteration += 1;
        if self.iteration >= self.max_iterations {
            return Err(RetriesExhausted);
        }
        Ok(self.current)
    }

    pub fn best_boxed_count(&self) -> usize {
        self.best_boxed_count
    }
}

/// One recorded signal, failed attempt or noteworthy in-flight event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalEvent {
    pub iteration: u32,
    pub signal: String,
    pub boxed_count: u64,
}

/// What a packing run did: attempts used, the epsilon trajectory and every
/// signal seen along the way.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunDiagnostics {
    pub iterations: u32,
    pub final_epsilon: f64,
    pub bottom_limit: Option<f64>,
    pub signals: Vec<SignalEvent>,
    pub boxed_count_history: Vec<u64>,
}

#[derive(Debug, Error)]
pub enum BoxingError {
    #[error("epsilon retry budget exhausted after {} attempts (best boxed count {})",
            .0.iterations, .0.boxed_count_history.iter().max().copied().unwrap_or(0))]
    RetriesExhausted(Box<RunDiagnostics>),
    #[error("box forest contains job id {0} more than once")]
    DuplicateJobId(u64),
    #[error("input placement is invalid: {0} conflicting pair(s)")]
    InvalidInput(usize),
    #[error("internal geometry violation: {0}")]
    Internal(String),
}

/// The error parameter the pipeline starts from: `(h_max / L)^(1/7)`.
pub fn initial_epsilon(profile: &LoadProfile) -> f64 {
    debug_assert!(profile.max_load >= profile.h_max && profile.h_max >= 1);
    (profile.h_max as f64 / profile.max_load as f64).powf(1.0 / 7.0)
}

/// Result of a successful packing run.
#[derive(Debug, Clone)]
pub struct PackOutcome {
    pub placement: Placement,
    pub diagnostics: RunDiagnostics,
}

/// Packs a job set into an approximately makespan-optimal placement.
///
/// Runs the boxing pipeline under the epsilon retry controller, places the
/// resulting uniform boxes by interval-graph coloring, unboxes and
/// tightens. The output contains exactly the input jobs, with their
/// original heights, sorted by id, and passes validation.
pub fn pack(jobs: &JobSet, config: &PackConfig) -> Result<PackOutcome, BoxingError> {
    let mut diagnostics = RunDiagnostics::default();
    if jobs.jobs.is_empty() {
        return Ok(PackOutcome {
            placement: Placement::new("idealloc", Vec::new()),
            diagnostics,
        });
    }
    let profile = load_profile(&jobs.jobs);
    let mut controller = EpsilonController::new(initial_epsilon(&profile), config.max_iterations);
    loop {
        let iteration = controller.iteration();
        let attempt_seed = config
            .seed
            .wrapping_add((iteration as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut ctx = PackCtx::new(attempt_seed, config.log_base, config.depth_limit);
        let items: Vec<BoxNode> = jobs.jobs.iter().copied().map(BoxNode::leaf).collect();
        match box_to_uniform(items, controller.current(), &mut ctx) {
            Ok(boxes) => {
                let boxed = ctx.boxed_count() as u64;
                for note in ctx.take_events() {
                    diagnostics.signals.push(SignalEvent {
                        iteration,
                        signal: note,
                        boxed_count: boxed,
                    });
                }
                diagnostics.boxed_count_history.push(boxed);
                diagnostics.iterations = iteration + 1;
                diagnostics.final_epsilon = controller.current();
                diagnostics.bottom_limit = controller.bottom_limit();
                let placement = place_uniform_boxes(jobs, boxes)?;
                return Ok(PackOutcome { placement, diagnostics });
            }
            Err(signal) => {
                let boxed = ctx.boxed_count() as u64;
                for note in ctx.take_events() {
                    diagnostics.signals.push(SignalEvent {
                        iteration,
                        signal: note,
                        boxed_count: boxed,
                    });
                }
                diagnostics.signals.push(SignalEvent {
                    iteration,
                    signal: signal.name().to_string(),
                    boxed_count: boxed,
                });
                diagnostics.boxed_count_history.push(boxed);
                log::debug!(
                    "attempt {iteration} failed with {} (boxed {boxed}), epsilon was {}",
                    signal.name(),
                    controller.current()
                );
                match controller.next_epsilon(boxed as usize) {
                    Ok(_) => continue,
                    Err(RetriesExhausted) => {
                        diagnostics.iterations = controller.iteration();
                        diagnostics.final_epsilon = controller.current();
                        diagnostics.bottom_limit = controller.bottom_limit();
                        diagnostics.signals.push(SignalEvent {
                            iteration: controller.iteration(),
                            signal: "retries_exhausted".to_string(),
                            boxed_count: controller.best_boxed_count() as u64,
                        });
                        return Err(BoxingError::RetriesExhausted(Box::new(diagnostics)));
                    }
                }
            }
        }
    }
}

/// Places uniform-height boxes by coloring, then unboxes and tightens.
fn place_uniform_boxes(jobs: &JobSet, boxes: Vec<BoxNode>) -> Result<Placement, BoxingError> {
    debug_assert!(!boxes.is_empty());
    let height = boxes[0].height;
    if boxes.iter().any(|b| b.height != height) {
        return Err(BoxingError::Internal("non-uniform box heights".into()));
    }
    let intervals: Vec<IntervalItem> = boxes
        .iter()
        .enumerate()
        .map(|(idx, b)| IntervalItem::new(idx as u64, b.start, b.end))
        .collect();
    let addresses = igc_place_uniform(&intervals, height.max(1));
    let placed: Vec<(BoxNode, u64)> = boxes
        .into_iter()
        .enumerate()
        .map(|(idx, b)| {
            let addr = addresses[&(idx as u64)];
            (b, addr)
        })
        .collect();
    let raw = unbox(placed)?;
    let mut tightened = tighten(&raw)?;
    tightened.label = "idealloc".to_string();
    tightened.jobs.sort_unstable_by_key(|j| j.id);

    // Output contract: exactly the input jobs, original heights, no
    // conflicts.
    let mut expected: Vec<(u64, u64)> = jobs.jobs.iter().map(|j| (j.id, j.height)).collect();
    expected.sort_unstable();
    let got: Vec<(u64, u64)> = tightened.jobs.iter().map(|j| (j.id, j.height)).collect();
    if expected != got {
        return Err(BoxingError::Internal(
            "output jobs do not match input jobs".into(),
        ));
    }
    if !validate_placement(&tightened).is_valid() {
        return Err(BoxingError::Internal("output placement has conflicts".into()));
    }
    Ok(tightened)
}

/// Recursively converts placed boxes into placed jobs.
///
/// A child at row `r` of a box placed at `addr` lands at
/// `addr + r * row_unit`; leaves emit their original heights, so rounding
/// waste stays inside the enclosing box envelope.
pub fn unbox(placed: Vec<(BoxNode, u64)>) -> Result<Placement, BoxingError> {
    let mut jobs = Vec::new();
    let mut seen = HashSet::new();
    let mut stack: Vec<(BoxNode, u64)> = placed;
    while let Some((node, addr)) = stack.pop() {
        for (row, child) in node.children {
            let child_addr = addr + row * node.row_unit;
            match child {
                BoxChild::Job(job) => {
                    if !seen.insert(job.id) {
                        return Err(BoxingError::DuplicateJobId(job.id));
                    }
                    jobs.push(PlacedJob::new(job.id, job.start, job.end, job.height, child_addr));
                }
                BoxChild::Node(inner) => stack.push((inner, child_addr)),
            }
        }
    }
    jobs.sort_unstable_by_key(|j| j.id);
    Ok(Placement::new("unboxed", jobs))
}

/// Compacts a valid placement by re-stacking jobs in address order.
///
/// Jobs are visited by increasing original address (ties: start time, then
/// id); each lands on top of the tallest already-visited job whose open
/// lifetime overlaps its own, or at address zero. No address ever
/// increases, so the makespan cannot grow, and the result is again valid.
pub fn tighten(placement: &Placement) -> Result<Placement, BoxingError> {
    if let crate::metrics::PlacementValidity::Conflicts(pairs) = validate_placement(placement) {
        return Err(BoxingError::InvalidInput(pairs.len()));
    }
    let mut order: Vec<usize> = (0..placement.jobs.len()).collect();
    order.sort_unstable_by_key(|&i| {
        let j = &placement.jobs[i];
        (j.addr, j.start, j.id)
    });
    let mut new_addr = vec![0u64; placement.jobs.len()];
    let mut done: Vec<usize> = Vec::with_capacity(order.len());
    for &i in &order {
        let job = &placement.jobs[i];
        let mut base = 0u64;
        for &k in &done {
            let other = &placement.jobs[k];
            if other.start < job.end && job.start < other.end {
                base = base.max(new_addr[k] + other.height);
            }
        }
        debug_assert!(base <= job.addr);
        new_addr[i] = base;
        done.push(i);
    }
    let jobs = placement
        .jobs
        .iter()
        .enumerate()
        .map(|(i, j)| PlacedJob { addr: new_addr[i], ..*j })
        .collect();
    Ok(Placement::new(placement.label.clone(), jobs))
}
