//! Decoupled look-ahead simulator.
//!
//! * [`uisa`]: micro-ISA, interpreter, traces and workload generators.
//! * [`skeleton`]: profiling, seed selection, backward-dependence closure and
//!   skeleton versions.
//! * [`memsys`]: three-level cache hierarchy with DRAM and prefetch tracking.
//! * [`engine`]: baseline and dual-core (look-ahead + main thread) timing model.
//! * [`t1`]: strided-prefetch offload state machine.
//! * [`vreuse`]: slow-instruction filter, value reuse and validation skipping.
//! * [`recycle`]: loop detection and per-loop skeleton-version selection.
//! * [`fetchq`]: analytical fetch-buffer queueing model.

pub mod engine;
pub mod fetchq;
pub mod memsys;
pub mod recycle;
pub mod skeleton;
pub mod t1;
pub mod uisa;
pub mod vreuse;
