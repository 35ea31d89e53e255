//! Allocation traces viewed as two-dimensional bin-packing instances.
//!
//! The crate turns `malloc`/`free` request traces into sets of rectangular
//! *jobs* (lifetime on the time axis, block size on the address axis),
//! computes approximately makespan-optimal offline placements through a
//! recursive boxing pipeline, simulates classic online allocator policies
//! over the same traces, and measures both sides with a common set of
//! metrics: maximum load, makespan, page-local fragmentation and two
//! theoretical bounds.
//!
//! Modules follow the data flow:
//!
//! * [`trace`] — parse, validate, generate and convert traces into job sets
//!   using the allocated-bytes clock.
//! * [`igc`] — optimal interval-graph coloring of equal-height items, the
//!   exact subroutine the boxing pipeline bottoms out in.
//! * [`metrics`] — liveness, load, makespan, placement validity,
//!   fragmentation and the Robson / offline-packing bounds.
//! * [`boxing`] — the offline packer: height-class splitting, bucketing,
//!   critical-time recursion, unboxing and placement tightening, driven by
//!   an epsilon retry controller.
//! * [`baseline`] — first-fit and best-fit free-list simulators over a
//!   single contiguous arena.
//! * [`report`] — comparison tables and SVG placement rendering.
//!
//! All operations are deterministic: randomness only enters through
//! explicit seeds.

pub mod baseline;
pub mod boxing;
pub mod igc;
pub mod metrics;
pub mod report;
pub mod trace;

pub use metrics::{Placement, PlacedJob};
pub use trace::{Job, JobSet, Request, SizingPolicy, Trace};
