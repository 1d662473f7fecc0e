//! Deterministic slotted-time simulation engine.
//!
//! Each slot runs in five sub-steps, all against the slot-start snapshot:
//!
//! 1. the policy observes router queues and per-tunnel in-flight backlogs;
//! 2. injections pop packets from router queues onto each tunnel's input
//!    link (sequentially, in tunnel order, so two tunnels at one router
//!    never pop the same packet twice); crossing the input link takes the
//!    slot, so the packets reach the first forwarder queue at slot end —
//!    except on forwarder-free tunnels, where crossing it already delivers;
//! 3. every forwarder link transmits from its slot-start queue, budget
//!    `min(capacity, queued)`, split across sessions by the configured
//!    discipline; packets leaving their tunnel's last link exit (padding
//!    packets are discarded, packets at their session's destination are
//!    delivered, everything else joins the next router's queue);
//! 4. handed-off and injected packets merge into their target queues, tunnel
//!    exits ahead of exogenous arrivals;
//! 5. exogenous arrivals are appended.
//!
//! Determinism: the policy and every per-session arrival process draw from
//! separate, fixed RNG streams of one seeded generator, so switching policy
//! or discipline never perturbs the arrival sample paths.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{LinkId, NodeId, OverlaySpec, SessionId, ThresholdSet};
use crate::policies::{self, Policy, PolicyError};
use crate::region::SessionDemand;
use crate::schedulers::{allocate, Discipline, QueueView};

// ----------------------------------------------------------------------------
// Configuration and results
// ----------------------------------------------------------------------------

/// Per-slot exogenous arrival model. All models match the configured rate in
/// expectation and are capped at `arrival_cap` packets per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalKind {
    /// With probability `rate/ceil(rate)`, a batch of `ceil(rate)` packets.
    BatchBernoulli,
    /// A credit accumulator; no randomness at all.
    DeterministicFractional,
    /// `arrival_cap` independent coin flips of bias `rate/arrival_cap`
    /// (burstier than the batch model at the same mean).
    Binomial,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub slots: u64,
    /// Slots excluded from delay and backlog statistics.
    pub warmup: u64,
    pub policy: Policy,
    pub discipline: Discipline,
    pub thresholds: ThresholdSet,
    pub arrival_kind: ArrivalKind,
    /// Hard per-slot cap on one session's arrivals.
    pub arrival_cap: u64,
    /// Pad short injections with discardable packets so the input link
    /// always carries exactly what the policy asked for.
    pub dummy_packets: bool,
    pub record_trace: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionStats {
    pub session: SessionId,
    pub arrivals: u64,
    pub delivered: u64,
    /// Delivered packets that arrived after warm-up (the delay sample).
    pub measured: u64,
    pub mean_delay: f64,
    /// Deliveries per slot after warm-up.
    pub delivery_rate: f64,
}

/// Counts of observed violations of properties the system is expected to
/// uphold; all zero on a healthy run. The first two are only checked when
/// the overlay satisfies the non-overlap condition, the third only under
/// backlog-gated policies, absorption only under the randomized policy.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvariantCounters {
    /// A tunnel exited more than its bottleneck capacity in one slot.
    pub exit_rate: u64,
    /// A tunnel above its loaded threshold failed to exit exactly its
    /// bottleneck capacity.
    pub loaded_drain: u64,
    /// A tunnel's slot-start backlog exceeded the hard bound.
    pub backlog_bound: u64,
    /// A tunnel's backlog returned above the gate after dropping below it.
    pub absorption: u64,
    /// Packets created, queued and delivered stopped adding up.
    pub conservation: u64,
}

impl InvariantCounters {
    pub fn total(&self) -> u64 {
        self.exit_rate + self.loaded_drain + self.backlog_bound + self.absorption
            + self.conservation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub policy: String,
    pub discipline: String,
    pub seed: u64,
    pub slots: u64,
    pub warmup: u64,
    pub total_arrivals: u64,
    pub total_delivered: u64,
    /// Mean delay over all measured deliveries, pooled across sessions.
    pub mean_delay: f64,
    /// Mean end-of-slot total backlog after warm-up.
    pub mean_backlog: f64,
    pub final_backlog: u64,
    pub dummy_injected: u64,
    pub per_session: Vec<SessionStats>,
    pub invariants: InvariantCounters,
}

/// One end-of-slot trace sample. Physical-policy runs have no tunnels, so
/// the per-tunnel columns are empty there.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub slot: u64,
    pub router_backlog: u64,
    pub tunnel_backlog: Vec<u64>,
    pub tunnel_exits: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub summary: RunSummary,
    /// End-of-slot total backlog (router queues plus in-flight), per slot.
    pub backlog_series: Vec<u64>,
    pub trace: Option<Vec<TraceRow>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("a run needs at least one session")]
    NoSessions,
    #[error("session {0} listed more than once")]
    DuplicateSession(SessionId),
    #[error("session {session} endpoint {node:?} is not a router")]
    NotARouter { session: SessionId, node: String },
    #[error("session {0} has identical source and destination")]
    SelfSession(SessionId),
    #[error("session {session} rate {rate} is not a finite nonnegative number")]
    InvalidRate { session: SessionId, rate: f64 },
    #[error("session {session} rate {rate} exceeds the arrival cap {cap}")]
    RateAboveCap { session: SessionId, rate: f64, cap: u64 },
    #[error("horizon must be positive")]
    ZeroSlots,
    #[error("warm-up {warmup} must be shorter than the horizon {slots}")]
    WarmupTooLong { warmup: u64, slots: u64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

// ----------------------------------------------------------------------------
// System index
// ----------------------------------------------------------------------------

/// Dense slot numbering for a run: sessions sorted by id, routers in the
/// overlay's sorted order.
#[derive(Debug, Clone)]
pub struct SystemIndex {
    pub sessions: Vec<SessionDemand>,
    router_slots: Vec<Option<usize>>,
}

impl SystemIndex {
    pub fn new(ov: &OverlaySpec, sessions: &[SessionDemand]) -> Result<Self, EngineError> {
        if sessions.is_empty() {
            return Err(EngineError::NoSessions);
        }
        let mut sorted = sessions.to_vec();
        sorted.sort_by_key(|s| s.session);
        for pair in sorted.windows(2) {
            if pair[0].session == pair[1].session {
                return Err(EngineError::DuplicateSession(pair[0].session));
            }
        }
        for s in &sorted {
            for node in [s.source, s.dest] {
                if !ov.is_router(node) {
                    return Err(EngineError::NotARouter {
                        session: s.session,
                        node: ov.net.name_of(node).to_string(),
                    });
                }
            }
            if s.source == s.dest {
                return Err(EngineError::SelfSession(s.session));
            }
            if !s.rate.is_finite() || s.rate < 0.0 {
                return Err(EngineError::InvalidRate { session: s.session, rate: s.rate });
            }
        }
        let mut router_slots = vec![None; ov.net.node_count()];
        for (i, &r) in ov.routers.iter().enumerate() {
            router_slots[r.0 as usize] = Some(i);
        }
        Ok(SystemIndex { sessions: sorted, router_slots })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// Dense router slot; panics on non-routers (callers validate first).
    pub fn router_slot(&self, node: NodeId) -> usize {
        self.router_slots[node.0 as usize].expect("node is a router")
    }

    pub fn session_slot(&self, id: SessionId) -> Option<usize> {
        self.sessions.binary_search_by_key(&id, |s| s.session).ok()
    }
}

// ----------------------------------------------------------------------------
// Arrival processes
// ----------------------------------------------------------------------------

struct ArrivalState {
    rng: ChaCha8Rng,
    credit: f64,
}

fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    rng
}

/// One arrival state per session slot. Streams are assigned in sorted
/// (source node, session id) order so the sample paths depend only on the
/// seed and the session layout, never on the policy under test.
fn arrival_states(idx: &SystemIndex, seed: u64) -> Vec<ArrivalState> {
    let mut order: Vec<usize> = (0..idx.session_count()).collect();
    order.sort_by_key(|&k| (idx.sessions[k].source, idx.sessions[k].session));
    let mut states: Vec<Option<ArrivalState>> = (0..idx.session_count()).map(|_| None).collect();
    for (k, &slot) in order.iter().enumerate() {
        states[slot] = Some(ArrivalState { rng: stream(seed, 2 + k as u64), credit: 0.0 });
    }
    states.into_iter().map(Option::unwrap).collect()
}

fn draw_arrivals(kind: ArrivalKind, rate: f64, cap: u64, st: &mut ArrivalState) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    match kind {
        ArrivalKind::BatchBernoulli => {
            let batch = rate.ceil() as u64;
            if st.rng.gen::<f64>() < rate / batch as f64 {
                batch
            } else {
                0
            }
        }
        ArrivalKind::DeterministicFractional => {
            st.credit += rate;
            let n = st.credit.floor();
            st.credit -= n;
            n as u64
        }
        ArrivalKind::Binomial => {
            let p = rate / cap as f64;
            (0..cap).filter(|_| st.rng.gen::<f64>() < p).count() as u64
        }
    }
}

// ----------------------------------------------------------------------------
// Shared metrics
// ----------------------------------------------------------------------------

struct Metrics {
    warmup: u64,
    arrivals: Vec<u64>,
    delivered: Vec<u64>,
    measured: Vec<u64>,
    delay_sum: Vec<u64>,
    delivered_post: Vec<u64>,
    total_arrivals: u64,
    total_delivered: u64,
    dummy_injected: u64,
}

impl Metrics {
    fn new(n: usize, warmup: u64) -> Self {
        Metrics {
            warmup,
            arrivals: vec![0; n],
            delivered: vec![0; n],
            measured: vec![0; n],
            delay_sum: vec![0; n],
            delivered_post: vec![0; n],
            total_arrivals: 0,
            total_delivered: 0,
            dummy_injected: 0,
        }
    }

    fn arrive(&mut self, session: usize, n: u64) {
        self.arrivals[session] += n;
        self.total_arrivals += n;
    }

    fn deliver(&mut self, session: usize, now: u64, arrival: u64) {
        self.delivered[session] += 1;
        self.total_delivered += 1;
        if arrival >= self.warmup {
            self.measured[session] += 1;
            self.delay_sum[session] += now - arrival;
        }
        if now >= self.warmup {
            self.delivered_post[session] += 1;
        }
    }

    fn summarize(
        &self,
        idx: &SystemIndex,
        cfg: &RunConfig,
        series: &[u64],
        invariants: InvariantCounters,
    ) -> RunSummary {
        let measure_slots = (cfg.slots - cfg.warmup) as f64;
        let per_session = idx
            .sessions
            .iter()
            .enumerate()
            .map(|(s, sess)| SessionStats {
                session: sess.session,
                arrivals: self.arrivals[s],
                delivered: self.delivered[s],
                measured: self.measured[s],
                mean_delay: if self.measured[s] > 0 {
                    self.delay_sum[s] as f64 / self.measured[s] as f64
                } else {
                    0.0
                },
                delivery_rate: self.delivered_post[s] as f64 / measure_slots,
            })
            .collect();
        let measured: u64 = self.measured.iter().sum();
        let delay: u64 = self.delay_sum.iter().sum();
        let tail = &series[cfg.warmup as usize..];
        RunSummary {
            policy: cfg.policy.name().to_string(),
            discipline: cfg.discipline.name().to_string(),
            seed: cfg.seed,
            slots: cfg.slots,
            warmup: cfg.warmup,
            total_arrivals: self.total_arrivals,
            total_delivered: self.total_delivered,
            mean_delay: if measured > 0 { delay as f64 / measured as f64 } else { 0.0 },
            mean_backlog: tail.iter().sum::<u64>() as f64 / tail.len() as f64,
            final_backlog: *series.last().unwrap_or(&0),
            dummy_injected: self.dummy_injected,
            per_session,
            invariants,
        }
    }
}

// ----------------------------------------------------------------------------
// Entry point
// ----------------------------------------------------------------------------

/// Runs one simulation to completion.
pub fn run(
    ov: &OverlaySpec,
    sessions: &[SessionDemand],
    cfg: &RunConfig,
) -> Result<RunResult, EngineError> {
    if cfg.slots == 0 {
        return Err(EngineError::ZeroSlots);
    }
    if cfg.warmup >= cfg.slots {
        return Err(EngineError::WarmupTooLong { warmup: cfg.warmup, slots: cfg.slots });
    }
    let idx = SystemIndex::new(ov, sessions)?;
    for s in &idx.sessions {
        let too_fast = match cfg.arrival_kind {
            ArrivalKind::Binomial => s.rate > cfg.arrival_cap as f64,
            _ => s.rate.ceil() as u64 > cfg.arrival_cap,
        };
        if too_fast {
            return Err(EngineError::RateAboveCap {
                session: s.session,
                rate: s.rate,
                cap: cfg.arrival_cap,
            });
        }
    }
    if cfg.policy.is_physical() {
        run_physical(ov, &idx, cfg)
    } else {
        run_overlay(ov, &idx, cfg)
    }
}

// ----------------------------------------------------------------------------
// Overlay engine
// ----------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Packet {
    session: usize,
    tunnel: u32,
    arrival: u64,
    dummy: bool,
}

/// Where a packet goes after crossing a given link of a given tunnel.
#[derive(Debug, Clone, Copy)]
enum Step {
    Forward(LinkId),
    Exit,
}

/// Packets waiting to cross one physical link, split per session with a
/// shared sequence counter so the interleaved arrival order is recoverable.
struct StageQueue {
    subs: Vec<VecDeque<(u64, Packet)>>,
    next_seq: u64,
    total: u64,
}

impl StageQueue {
    fn new(sessions: usize) -> Self {
        StageQueue { subs: vec![VecDeque::new(); sessions], next_seq: 0, total: 0 }
    }

    fn push(&mut self, pkt: Packet) {
        self.subs[pkt.session].push_back((self.next_seq, pkt));
        self.next_seq += 1;
        self.total += 1;
    }

    /// Session slots of the oldest `budget` packets across sub-queues.
    fn order_prefix(&self, budget: u64) -> Vec<usize> {
        let mut cursors = vec![0usize; self.subs.len()];
        let mut out = Vec::with_capacity(budget as usize);
        for _ in 0..budget {
            let mut best: Option<(u64, usize)> = None;
            for (s, sub) in self.subs.iter().enumerate() {
                if let Some(&(seq, _)) = sub.get(cursors[s]) {
                    if best.map_or(true, |(b, _)| seq < b) {
                        best = Some((seq, s));
                    }
                }
            }
            let Some((_, s)) = best else { break };
            cursors[s] += 1;
            out.push(s);
        }
        out
    }
}

fn run_overlay(
    ov: &OverlaySpec,
    idx: &SystemIndex,
    cfg: &RunConfig,
) -> Result<RunResult, EngineError> {
    let n_sessions = idx.session_count();
    let n_routers = ov.routers.len();
    let n_tunnels = ov.tunnels.len();
    let ts = cfg.thresholds;
    let resolved = policies::resolve_overlay(&cfg.policy, ov, idx)?;
    let gated = cfg.policy.is_gated();
    let randomized = matches!(cfg.policy, Policy::RandomizedFlow(_));
    let non_overlapping = crate::netmodel::validate_non_overlapping(ov).is_ok();

    let mut policy_rng = stream(cfg.seed, 1);
    let mut arrivals = arrival_states(idx, cfg.seed);

    // Forwarder links and the per-(tunnel, link) routing table.
    let mut steps: BTreeMap<(u32, LinkId), Step> = BTreeMap::new();
    let mut service_links: Vec<LinkId> = Vec::new();
    for t in &ov.tunnels {
        for k in 1..t.links.len() {
            let next =
                if k + 1 < t.links.len() { Step::Forward(t.links[k + 1]) } else { Step::Exit };
            steps.insert((t.id.0, t.links[k]), next);
            service_links.push(t.links[k]);
        }
    }
    service_links.sort();
    service_links.dedup();

    // State.
    let mut router_q: Vec<Vec<VecDeque<u64>>> =
        vec![vec![VecDeque::new(); n_sessions]; n_routers];
    let mut stage: Vec<Option<StageQueue>> = Vec::new();
    stage.resize_with(ov.net.links().len(), || None);
    for &l in &service_links {
        stage[l.0 as usize] = Some(StageQueue::new(n_sessions));
    }
    let mut tunnel_backlog = vec![0u64; n_tunnels];
    let mut inflight_real = 0u64;
    let mut below_gate = vec![false; n_tunnels];

    let mut metrics = Metrics::new(n_sessions, cfg.warmup);
    let mut invariants = InvariantCounters::default();
    let mut series = Vec::with_capacity(cfg.slots as usize);
    let mut trace =
        cfg.record_trace.then(|| Vec::with_capacity(cfg.slots as usize));

    // Reused per-slot buffers.
    let mut stage_inbox: Vec<Vec<Packet>> = vec![Vec::new(); ov.net.links().len()];
    let mut router_inbox: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); n_sessions]; n_routers];

    for now in 0..cfg.slots {
        // 1. Slot-start snapshot.
        let snapshot: Vec<Vec<u64>> = router_q
            .iter()
            .map(|row| row.iter().map(|q| q.len() as u64).collect())
            .collect();
        let f_start = tunnel_backlog.clone();

        // Invariants evaluated on the snapshot.
        for t in &ov.tunnels {
            let f = f_start[t.id.0 as usize];
            if gated && f > ts.backlog_bound {
                invariants.backlog_bound += 1;
            }
            if randomized {
                let below = &mut below_gate[t.id.0 as usize];
                if f < ts.gate {
                    *below = true;
                } else if *below {
                    invariants.absorption += 1;
                }
            }
        }

        // 2. Policy decisions and injections.
        let decisions =
            policies::decide_overlay(&resolved, ov, idx, &ts, &snapshot, &f_start, &mut policy_rng);
        let mut exits = vec![0u64; n_tunnels];
        for t in &ov.tunnels {
            let tid = t.id.0 as usize;
            let src = idx.router_slot(t.src);
            debug_assert!(
                decisions[tid].iter().map(|&(_, n)| n).sum::<u64>() <= t.input_capacity
            );
            for &(s, want) in &decisions[tid] {
                let mut batch: Vec<Packet> = Vec::with_capacity(want as usize);
                for _ in 0..want {
                    let Some(arrival) = router_q[src][s].pop_front() else { break };
                    batch.push(Packet { session: s, tunnel: t.id.0, arrival, dummy: false });
                }
                if cfg.dummy_packets {
                    let pad = want - batch.len() as u64;
                    metrics.dummy_injected += pad;
                    for _ in 0..pad {
                        batch.push(Packet { session: s, tunnel: t.id.0, arrival: now, dummy: true });
                    }
                }
                if t.forwarder_count == 0 {
                    // The input link is the whole path: crossing it exits.
                    for pkt in batch {
                        exits[tid] += 1;
                        if !pkt.dummy {
                            exit_packet(idx, t.dst, pkt, now, &mut metrics, &mut router_inbox);
                        }
                    }
                } else {
                    tunnel_backlog[tid] += batch.len() as u64;
                    inflight_real += batch.iter().filter(|p| !p.dummy).count() as u64;
                    stage_inbox[t.links[1].0 as usize].extend(batch);
                }
            }
        }

        // 3. Forwarder-link transmissions from the slot-start queues
        //    (injected packets are still in `stage_inbox`, not the queues).
        for &l in &service_links {
            let cap = ov.net.link(l).capacity;
            let sq = stage[l.0 as usize].as_mut().unwrap();
            let budget = cap.min(sq.total);
            if budget == 0 {
                continue;
            }
            let slots: Vec<usize> =
                (0..n_sessions).filter(|&s| !sq.subs[s].is_empty()).collect();
            // Every discipline grants the same split when the whole queue
            // fits the budget, or when only one session is waiting; skip the
            // allocator on those (overwhelmingly common) slots.
            let grants: Vec<u64> = if sq.total <= cap {
                slots.iter().map(|&s| sq.subs[s].len() as u64).collect()
            } else if slots.len() == 1 {
                vec![budget]
            } else {
                let view = QueueView {
                    counts: slots
                        .iter()
                        .map(|&s| (idx.sessions[s].session, sq.subs[s].len() as u64))
                        .collect(),
                    arrival_order: sq
                        .order_prefix(budget)
                        .into_iter()
                        .map(|s| idx.sessions[s].session)
                        .collect(),
                };
                allocate(&cfg.discipline, &view, budget).into_iter().map(|(_, g)| g).collect()
            };
            for (&s, &g) in slots.iter().zip(grants.iter()) {
                for _ in 0..g {
                    let (_, pkt) = sq.subs[s].pop_front().expect("grant within queue");
                    sq.total -= 1;
                    match steps[&(pkt.tunnel, l)] {
                        Step::Forward(next) => stage_inbox[next.0 as usize].push(pkt),
                        Step::Exit => {
                            let tid = pkt.tunnel as usize;
                            exits[tid] += 1;
                            tunnel_backlog[tid] -= 1;
                            if !pkt.dummy {
                                inflight_real -= 1;
                                let dst = ov.tunnels[tid].dst;
                                exit_packet(idx, dst, pkt, now, &mut metrics, &mut router_inbox);
                            }
                        }
                    }
                }
            }
        }

        // 4. Merge: stage hand-offs, then router inboxes (tunnel exits land
        //    ahead of this slot's exogenous arrivals).
        for &l in &service_links {
            let li = l.0 as usize;
            if stage_inbox[li].is_empty() {
                continue;
            }
            let sq = stage[li].as_mut().unwrap();
            for pkt in stage_inbox[li].drain(..) {
                sq.push(pkt);
            }
        }
        for (r, row) in router_inbox.iter_mut().enumerate() {
            for (s, incoming) in row.iter_mut().enumerate() {
                router_q[r][s].extend(incoming.drain(..));
            }
        }

        // 5. Exogenous arrivals.
        for (s, sess) in idx.sessions.iter().enumerate() {
            let n = draw_arrivals(cfg.arrival_kind, sess.rate, cfg.arrival_cap, &mut arrivals[s]);
            if n > 0 {
                metrics.arrive(s, n);
                let r = idx.router_slot(sess.source);
                for _ in 0..n {
                    router_q[r][s].push_back(now);
                }
            }
        }

        // End-of-slot bookkeeping and drain/conservation checks.
        if non_overlapping {
            for t in &ov.tunnels {
                let tid = t.id.0 as usize;
                if exits[tid] > t.bottleneck_capacity {
                    invariants.exit_rate += 1;
                }
                if f_start[tid] > t.loaded_threshold && exits[tid] != t.bottleneck_capacity {
                    invariants.loaded_drain += 1;
                }
            }
        }
        let router_total: u64 =
            router_q.iter().flatten().map(|q| q.len() as u64).sum();
        if metrics.total_arrivals != metrics.total_delivered + router_total + inflight_real {
            invariants.conservation += 1;
            debug_assert!(false, "packet conservation broken at slot {now}");
        }
        let backlog = router_total + tunnel_backlog.iter().sum::<u64>();
        series.push(backlog);
        if let Some(rows) = trace.as_mut() {
            rows.push(TraceRow {
                slot: now,
                router_backlog: router_total,
                tunnel_backlog: tunnel_backlog.clone(),
                tunnel_exits: exits,
            });
        }
    }

    let summary = metrics.summarize(idx, cfg, &series, invariants);
    Ok(RunResult { summary, backlog_series: series, trace })
}

fn exit_packet(
    idx: &SystemIndex,
    at: NodeId,
    pkt: Packet,
    now: u64,
    metrics: &mut Metrics,
    router_inbox: &mut [Vec<Vec<u64>>],
) {
    if idx.sessions[pkt.session].dest == at {
        metrics.deliver(pkt.session, now, pkt.arrival);
    } else {
        router_inbox[idx.router_slot(at)][pkt.session].push(pkt.arrival);
    }
}

// ----------------------------------------------------------------------------
// Physical engine
// ----------------------------------------------------------------------------

fn run_physical(
    ov: &OverlaySpec,
    idx: &SystemIndex,
    cfg: &RunConfig,
) -> Result<RunResult, EngineError> {
    let n_sessions = idx.session_count();
    let n_nodes = ov.net.node_count();
    let resolved = policies::resolve_physical(&cfg.policy, ov, idx);
    let mut arrivals = arrival_states(idx, cfg.seed);

    let mut node_q: Vec<Vec<VecDeque<u64>>> = vec![vec![VecDeque::new(); n_sessions]; n_nodes];
    let mut inbox: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); n_sessions]; n_nodes];

    let mut metrics = Metrics::new(n_sessions, cfg.warmup);
    let mut invariants = InvariantCounters::default();
    let mut series = Vec::with_capacity(cfg.slots as usize);
    let mut trace = cfg.record_trace.then(|| Vec::with_capacity(cfg.slots as usize));

    for now in 0..cfg.slots {
        let snapshot: Vec<Vec<u64>> = node_q
            .iter()
            .map(|row| row.iter().map(|q| q.len() as u64).collect())
            .collect();

        // Per-link transmissions: scores from the snapshot, pops from the
        // live queues so parallel links never send one packet twice.
        for link in ov.net.links() {
            let (tail, head) = (link.tail, link.head);
            let choice = policies::decide_link(
                &resolved,
                tail,
                head,
                &snapshot[tail.0 as usize],
                &snapshot[head.0 as usize],
            );
            let Some(s) = choice else { continue };
            let amount = link.capacity.min(node_q[tail.0 as usize][s].len() as u64);
            for _ in 0..amount {
                let arrival = node_q[tail.0 as usize][s].pop_front().unwrap();
                if idx.sessions[s].dest == head {
                    metrics.deliver(s, now, arrival);
                } else {
                    inbox[head.0 as usize][s].push(arrival);
                }
            }
        }

        for (n, row) in inbox.iter_mut().enumerate() {
            for (s, incoming) in row.iter_mut().enumerate() {
                node_q[n][s].extend(incoming.drain(..));
            }
        }

        for (s, sess) in idx.sessions.iter().enumerate() {
            let n = draw_arrivals(cfg.arrival_kind, sess.rate, cfg.arrival_cap, &mut arrivals[s]);
            if n > 0 {
                metrics.arrive(s, n);
                for _ in 0..n {
                    node_q[sess.source.0 as usize][s].push_back(now);
                }
            }
        }

        let backlog: u64 = node_q.iter().flatten().map(|q| q.len() as u64).sum();
        if metrics.total_arrivals != metrics.total_delivered + backlog {
            invariants.conservation += 1;
            debug_assert!(false, "packet conservation broken at slot {now}");
        }
        series.push(backlog);
        if let Some(rows) = trace.as_mut() {
            rows.push(TraceRow {
                slot: now,
                router_backlog: backlog,
                tunnel_backlog: Vec::new(),
                tunnel_exits: Vec::new(),
            });
        }
    }

    let summary = metrics.summarize(idx, cfg, &series, invariants);
    Ok(RunResult { summary, backlog_series: series, trace })
}

// ----------------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------------
