//! Per-link service disciplines.
//!
//! Every slot each link gets an integer budget (its capacity, clamped by
//! what is actually queued) and must split it across the sessions with
//! packets waiting. [`allocate`] is the single entry point; it is a pure
//! function of the queue snapshot so the same inputs always produce the
//! same split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::netmodel::SessionId;

/// How a link divides its per-slot budget among competing sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Discipline {
    /// Serve packets strictly in arrival order across sessions.
    Fifo,
    /// Longest queue first; ties favor the lowest session id.
    Lqf,
    /// Fixed priority order; must list every session exactly once.
    StrictPriority(Vec<SessionId>),
    /// Head-of-line proportional split: largest-remainder shares sized by
    /// queue lengths, recomputed among unfinished sessions until the budget
    /// or the queues run out.
    Hlpps,
}

impl Discipline {
    /// Name used by the CLI and output files.
    pub fn name(&self) -> &'static str {
        match self {
            Discipline::Fifo => "fifo",
            Discipline::Lqf => "lqf",
            Discipline::StrictPriority(_) => "strict",
            Discipline::Hlpps => "hlpps",
        }
    }
}

/// Queue snapshot a discipline allocates against: how many packets each
/// session has waiting, and for FIFO the interleaved arrival order.
#[derive(Debug, Clone)]
pub struct QueueView {
    /// `(session, count)` pairs, ascending by session id, zero counts
    /// omitted.
    pub counts: Vec<(SessionId, u64)>,
    /// Session owning each queued packet, oldest first. Only consulted by
    /// FIFO; its per-session totals must match `counts`.
    pub arrival_order: Vec<SessionId>,
}

/// Splits `budget` packets across the sessions in `view`. The result lists
/// `(session, packets)` for every session in `view.counts` (possibly zero),
/// in the same order. The split never exceeds a session's queue and always
/// sums to `min(budget, total queued)`.
pub fn allocate(discipline: &Discipline, view: &QueueView, budget: u64) -> Vec<(SessionId, u64)> {
    let total: u64 = view.counts.iter().map(|&(_, n)| n).sum();
    let budget = budget.min(total);
    let mut grant: Vec<(SessionId, u64)> = view.counts.iter().map(|&(s, _)| (s, 0)).collect();
    if budget == 0 {
        return grant;
    }
    // `grant` mirrors `view.counts` index-for-index, as do the `remaining`
    // clones below, so positions translate directly.
    let index: BTreeMap<SessionId, usize> =
        view.counts.iter().enumerate().map(|(i, &(s, _))| (s, i)).collect();
    match discipline {
        Discipline::Fifo => {
            for &s in view.arrival_order.iter().take(budget as usize) {
                grant[index[&s]].1 += 1;
            }
        }
        Discipline::Lqf => {
            let mut remaining: Vec<(SessionId, u64)> = view.counts.clone();
            let mut left = budget;
            while left > 0 {
                let (pos, _) = remaining
                    .iter()
                    .enumerate()
                    .filter(|(_, &(_, n))| n > 0)
                    .max_by_key(|(_, &(s, n))| (n, std::cmp::Reverse(s)))
                    .expect("budget clamped to total");
                let take = remaining[pos].1.min(left);
                grant[pos].1 += take;
                remaining[pos].1 -= take;
                left -= take;
            }
        }
        Discipline::StrictPriority(order) => {
            let mut left = budget;
            for &s in order {
                if left == 0 {
                    break;
                }
                if let Some(&i) = index.get(&s) {
                    let take = (view.counts[i].1 - grant[i].1).min(left);
                    grant[i].1 += take;
                    left -= take;
                }
            }
            debug_assert_eq!(left, 0, "priority order must cover every session");
        }
        Discipline::Hlpps => {
            // Exact integer largest-remainder rounds; no floats so the
            // split is identical on every platform.
            let mut remaining: Vec<(SessionId, u64)> = view.counts.clone();
            let mut left = budget;
            while left > 0 {
                let live: Vec<usize> = (0..remaining.len())
                    .filter(|&i| remaining[i].1 > 0)
                    .collect();
                let weight: u64 = live.iter().map(|&i| remaining[i].1).sum();
                debug_assert!(weight > 0);
                let mut shares: Vec<(usize, u64, u64)> = live
                    .iter()
                    .map(|&i| {
                        let n = remaining[i].1;
                        (i, (left * n) / weight, (left * n) % weight)
                    })
                    .collect();
                // Hand out the floor shares, clamped to the queues.
                let mut given = 0u64;
                for &mut (i, ref mut g, _) in &mut shares {
                    *g = (*g).min(remaining[i].1);
                    given += *g;
                }
                // Distribute what is left one packet at a time by largest
                // remainder, lowest session id first on ties.
                let mut extra = left - given;
                shares.sort_by_key(|&(i, _, rem)| (std::cmp::Reverse(rem), remaining[i].0));
                for &mut (i, ref mut g, _) in &mut shares {
                    if extra == 0 {
                        break;
                    }
                    if *g < remaining[i].1 {
                        let take = extra.min(remaining[i].1 - *g);
                        // One unit per remainder rank keeps the split
                        // proportional; the clamp above already absorbed
                        // whole-queue grants.
                        let take = take.min(1);
                        *g += take;
                        extra -= take;
                    }
                }
                let mut granted_this_round = 0;
                for &(i, g, _) in &shares {
                    grant[i].1 += g;
                    remaining[i].1 -= g;
                    granted_this_round += g;
                }
                left -= granted_this_round;
                // Progress is guaranteed: with budget clamped to the total
                // queue, each round grants at least one packet.
                debug_assert!(granted_this_round > 0 || left == 0);
            }
        }
    }
    debug_assert_eq!(grant.iter().map(|&(_, g)| g).sum::<u64>(), budget);
    for (g, c) in grant.iter().zip(view.counts.iter()) {
        debug_assert!(g.1 <= c.1, "grant exceeds queue");
    }
    grant
}
