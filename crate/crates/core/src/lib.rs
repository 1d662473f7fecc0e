//! tunnelsim: a deterministic, seedable slotted-time simulator for dynamic
//! routing over network overlays, together with the tools needed to study it.
//!
//! An overlay is a set of *routers* (a subset of the nodes of a physical
//! network) connected by *tunnels*: fixed acyclic physical paths whose
//! interior nodes are plain forwarders with no routing brain of their own.
//! Routers hold per-session queues and decide, once per slot, how many
//! packets to push into each tunnel; forwarders drain their stage queues at
//! link speed. The crate provides:
//!
//! * [`netmodel`] — physical networks, overlay construction and validation,
//!   and the per-overlay threshold constants used by the gated policies;
//! * [`schedulers`] — the per-link service disciplines (FIFO, HLPPS, LQF,
//!   strict priority) that split a stage's service budget among sessions;
//! * [`engine`] — the slot-stepped simulator itself, in overlay mode
//!   (router queues + tunnel stage queues) and physical mode (per-node
//!   queues, every link a decision point);
//! * [`policies`] — the routing policies: threshold-gated backpressure in
//!   two variants, ungated overlay backpressure, per-link physical
//!   backpressure with and without a shortest-path bias, static
//!   shortest-path routing, and a randomized fixed-flow policy driven by a
//!   flow decomposition;
//! * [`region`] — an LP characterization of the overlay throughput region
//!   (self-contained dense simplex, no external solver), boundary search
//!   along rays, and flow decompositions with explicit slack;
//! * [`harness`] — scenario files, built-in example scenarios, stability
//!   classification, load sweeps and delay tables, and the CSV/summary
//!   output formats used by the `tunnelsim` binary.
//!
//! Everything is deterministic given a scenario seed: arrival processes and
//! randomized policies draw from independent named substreams, so changing
//! the policy never perturbs the arrival sample paths of a paired run.

pub mod engine;
pub mod harness;
pub mod netmodel;
pub mod policies;
pub mod region;
pub mod schedulers;

pub use engine::{run, RunConfig, RunResult, RunSummary};
pub use harness::{built_in_scenarios, Scenario, StabilityVerdict};
pub use netmodel::{
    build_overlay, thresholds, validate_non_overlapping, OverlaySpec, PhysicalNetwork,
    ThresholdSet, Tunnel,
};
pub use region::{boundary, decomposition_for_oracle, feasibility, FlowDecomposition};
pub use schedulers::{allocate, Discipline};
