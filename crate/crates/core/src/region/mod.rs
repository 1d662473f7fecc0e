//! Throughput region of an overlay, characterized by a linear program.
//!
//! A demand vector (per-session arrival rates at the session sources) is
//! *interior* to the region when packets can be carried as a fractional
//! multicommodity flow over the tunnels with slack to spare. The LP
//! maximizes that slack, `epsilon`:
//!
//! - one flow variable per (tunnel, session) pair, restricted to tunnels
//!   whose endpoints can still reach the session's destination through the
//!   overlay (flow toward a dead end can never drain and is excluded);
//! - at every router that can reach the destination, other than the
//!   destination itself: arrivals + tunnel inflow + epsilon <= tunnel
//!   outflow;
//! - per tunnel: total flow + epsilon <= the tunnel's bottleneck capacity;
//! - flows nonnegative, epsilon free.
//!
//! `epsilon >= 0` means the demand is supportable; [`boundary`] scales a
//! demand direction until the sign flips, and [`decomposition_for_oracle`]
//! extracts an explicit strictly-slack flow for use by the randomized
//! flow-splitting policy.

mod simplex;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::netmodel::{NodeId, OverlaySpec, SessionId, TunnelId};

use simplex::{Constraint, Problem, Rel, SimplexError};

/// One session's demand: `rate` packets per slot entering at `source`,
/// bound for `dest`. Both endpoints must be routers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionDemand {
    pub session: SessionId,
    pub source: NodeId,
    pub dest: NodeId,
    pub rate: f64,
}

/// Result of [`feasibility`]: the maximal uniform slack and a flow
/// attaining it. `epsilon >= 0` iff the demand lies in the region.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub epsilon: f64,
    pub flows: BTreeMap<(TunnelId, SessionId), f64>,
}

/// An explicit flow with strictly positive slack `epsilon` on every
/// constraint, suitable for driving randomized flow-splitting injection.
/// Every tunnel's total flow is strictly below its bottleneck capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDecomposition {
    pub epsilon: f64,
    pub flows: BTreeMap<(TunnelId, SessionId), f64>,
}

impl FlowDecomposition {
    pub fn flow(&self, tunnel: TunnelId, session: SessionId) -> f64 {
        self.flows.get(&(tunnel, session)).copied().unwrap_or(0.0)
    }

    pub fn tunnel_total(&self, tunnel: TunnelId) -> f64 {
        self.flows.iter().filter(|((t, _), _)| *t == tunnel).map(|(_, &f)| f).sum()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RegionError {
    #[error("session {session} endpoint {node:?} is not a router")]
    NotARouter { session: SessionId, node: String },
    #[error("session {0} listed more than once")]
    DuplicateSession(SessionId),
    #[error("session {session} has source equal to destination {node:?}")]
    SelfDemand { session: SessionId, node: String },
    #[error("session {session} rate {rate} is not a finite nonnegative number")]
    InvalidRate { session: SessionId, rate: f64 },
    #[error(
        "session {session} demands {rate} at {router:?} but no tunnel path reaches its destination"
    )]
    UnreachableDemand { session: SessionId, router: String, rate: f64 },
    #[error("demand direction is all zero")]
    EmptyDirection,
    #[error("demand is not interior to the region (slack {epsilon})")]
    NotInterior { epsilon: f64 },
    #[error("solver failed: {0}")]
    Numerical(String),
}

// ----------------------------------------------------------------------------
// LP assembly
// ----------------------------------------------------------------------------

struct Assembled {
    /// Variable index -> (tunnel, session); the two epsilon halves follow.
    vars: Vec<(TunnelId, SessionId)>,
    eps_pos: usize,
    eps_neg: usize,
    /// (session, router) pairs carrying a flow-conservation row, with the
    /// arrival rate on the right-hand side.
    node_rows: Vec<(SessionId, NodeId, f64)>,
    /// Per-tunnel capacity rows: (tunnel, member variable indices, cap).
    cap_rows: Vec<(TunnelId, Vec<usize>, f64)>,
    /// Outgoing/incoming variable indices per node row.
    node_terms: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Routers that can reach `dest` through tunnels, plus `dest` itself.
fn reachable_to(ov: &OverlaySpec, dest: NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([dest]);
    let mut stack = vec![dest];
    while let Some(u) = stack.pop() {
        for t in &ov.tunnels {
            if t.dst == u && seen.insert(t.src) {
                stack.push(t.src);
            }
        }
    }
    seen
}

fn assemble(ov: &OverlaySpec, demands: &[SessionDemand]) -> Result<Assembled, RegionError> {
    let mut seen = BTreeSet::new();
    for d in demands {
        if !seen.insert(d.session) {
            return Err(RegionError::DuplicateSession(d.session));
        }
        for node in [d.source, d.dest] {
            if !ov.is_router(node) {
                return Err(RegionError::NotARouter {
                    session: d.session,
                    node: ov.net.name_of(node).to_string(),
                });
            }
        }
        if d.source == d.dest {
            return Err(RegionError::SelfDemand {
                session: d.session,
                node: ov.net.name_of(d.source).to_string(),
            });
        }
        if !d.rate.is_finite() || d.rate < 0.0 {
            return Err(RegionError::InvalidRate { session: d.session, rate: d.rate });
        }
    }

    let mut vars = Vec::new();
    let mut var_index: BTreeMap<(TunnelId, SessionId), usize> = BTreeMap::new();
    let mut node_rows = Vec::new();
    let mut node_terms = Vec::new();

    for d in demands {
        // A zero-rate session is validated but adds no variables or rows:
        // it demands nothing, so it should not consume any of the slack.
        if d.rate == 0.0 {
            continue;
        }
        let keep = reachable_to(ov, d.dest);
        if !keep.contains(&d.source) {
            return Err(RegionError::UnreachableDemand {
                session: d.session,
                router: ov.net.name_of(d.source).to_string(),
                rate: d.rate,
            });
        }
        for t in &ov.tunnels {
            if t.src != d.dest && keep.contains(&t.src) && keep.contains(&t.dst) {
                var_index.insert((t.id, d.session), vars.len());
                vars.push((t.id, d.session));
            }
        }
        for &i in &keep {
            if i == d.dest {
                continue;
            }
            let rate = if i == d.source { d.rate } else { 0.0 };
            let out: Vec<usize> = ov
                .tunnels
                .iter()
                .filter(|t| t.src == i)
                .filter_map(|t| var_index.get(&(t.id, d.session)).copied())
                .collect();
            let inn: Vec<usize> = ov
                .tunnels
                .iter()
                .filter(|t| t.dst == i)
                .filter_map(|t| var_index.get(&(t.id, d.session)).copied())
                .collect();
            node_rows.push((d.session, i, rate));
            node_terms.push((out, inn));
        }
    }

    let eps_pos = vars.len();
    let eps_neg = vars.len() + 1;
    let cap_rows = ov
        .tunnels
        .iter()
        .map(|t| {
            let members: Vec<usize> = demands
                .iter()
                .filter_map(|d| var_index.get(&(t.id, d.session)).copied())
                .collect();
            (t.id, members, t.bottleneck_capacity as f64)
        })
        .collect();

    Ok(Assembled { vars, eps_pos, eps_neg, node_rows, cap_rows, node_terms })
}

impl Assembled {
    /// Constraints with epsilon as a decision variable (split into the two
    /// nonnegative halves) when `fixed_eps` is `None`, or with epsilon
    /// pinned to the given value otherwise.
    fn constraints(&self, fixed_eps: Option<f64>) -> Vec<Constraint> {
        let mut out = Vec::new();
        for ((_, _, rate), (outs, inns)) in self.node_rows.iter().zip(&self.node_terms) {
            // rate + inflow + eps <= outflow.
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            for &j in outs {
                coeffs.push((j, 1.0));
            }
            for &j in inns {
                coeffs.push((j, -1.0));
            }
            let mut rhs = *rate;
            match fixed_eps {
                Some(e) => rhs += e,
                None => {
                    coeffs.push((self.eps_pos, -1.0));
                    coeffs.push((self.eps_neg, 1.0));
                }
            }
            out.push(Constraint { coeffs, rel: Rel::Ge, rhs });
        }
        for (_, members, cap) in &self.cap_rows {
            let mut coeffs: Vec<(usize, f64)> = members.iter().map(|&j| (j, 1.0)).collect();
            let mut rhs = *cap;
            match fixed_eps {
                Some(e) => rhs -= e,
                None => {
                    coeffs.push((self.eps_pos, 1.0));
                    coeffs.push((self.eps_neg, -1.0));
                }
            }
            out.push(Constraint { coeffs, rel: Rel::Le, rhs });
        }
        out
    }

    /// Defensive residual check of a solution against the original rows.
    fn verify(&self, x: &[f64], eps: f64) -> Result<(), RegionError> {
        const TOL: f64 = 1e-7;
        for ((s, n, rate), (outs, inns)) in self.node_rows.iter().zip(&self.node_terms) {
            let lhs: f64 = rate + inns.iter().map(|&j| x[j]).sum::<f64>() + eps;
            let rhs: f64 = outs.iter().map(|&j| x[j]).sum();
            if lhs > rhs + TOL {
                return Err(RegionError::Numerical(format!(
                    "conservation violated at session {s} node {n:?}: {lhs} > {rhs}"
                )));
            }
        }
        for (t, members, cap) in &self.cap_rows {
            let lhs: f64 = members.iter().map(|&j| x[j]).sum::<f64>() + eps;
            if lhs > cap + TOL {
                return Err(RegionError::Numerical(format!(
                    "capacity violated on tunnel {t:?}: {lhs} > {cap}"
                )));
            }
        }
        Ok(())
    }

    fn collect_flows(&self, x: &[f64]) -> BTreeMap<(TunnelId, SessionId), f64> {
        self.vars
            .iter()
            .enumerate()
            .filter(|&(j, _)| x[j] > 1e-12)
            .map(|(j, &key)| (key, x[j]))
            .collect()
    }
}

// ----------------------------------------------------------------------------
// Public entry points
// ----------------------------------------------------------------------------

/// Maximizes the uniform slack for the given demand. A nonnegative
/// `epsilon` certifies the demand is supportable; a negative one measures
/// how far outside the region it sits.
pub fn feasibility(
    ov: &OverlaySpec,
    demands: &[SessionDemand],
) -> Result<FeasibilityReport, RegionError> {
    let asm = assemble(ov, demands)?;
    let problem = Problem {
        num_vars: asm.eps_neg + 1,
        objective: vec![(asm.eps_pos, 1.0), (asm.eps_neg, -1.0)],
        constraints: asm.constraints(None),
    };
    let (epsilon, x) = simplex::maximize(&problem).map_err(|e| match e {
        // With flows zero and epsilon arbitrarily negative every row can be
        // met, so phase 1 cannot fail; and epsilon is bounded above by any
        // capacity row. Either error would be a solver defect.
        SimplexError::Infeasible => RegionError::Numerical("slack LP reported infeasible".into()),
        SimplexError::Unbounded => RegionError::Numerical("slack LP reported unbounded".into()),
    })?;
    asm.verify(&x, epsilon)?;
    Ok(FeasibilityReport { epsilon, flows: asm.collect_flows(&x) })
}

/// Largest multiple of `direction` that stays supportable, located by
/// doubling then bisection on the slack's sign. An all-zero direction is an
/// error; a direction with demand at a router that cannot reach its
/// destination returns 0 (no positive multiple is supportable).
pub fn boundary(ov: &OverlaySpec, direction: &[SessionDemand]) -> Result<f64, RegionError> {
    if direction.iter().all(|d| d.rate == 0.0) {
        // Validate the endpoints anyway, then refuse: every multiple of a
        // zero vector is the same point.
        assemble(ov, direction)?;
        return Err(RegionError::EmptyDirection);
    }
    let eps_at = |rho: f64| -> Result<f64, RegionError> {
        let scaled: Vec<SessionDemand> = direction
            .iter()
            .map(|d| SessionDemand { rate: d.rate * rho, ..*d })
            .collect();
        Ok(feasibility(ov, &scaled)?.epsilon)
    };
    match eps_at(1.0) {
        Err(RegionError::UnreachableDemand { .. }) => return Ok(0.0),
        Err(e) => return Err(e),
        Ok(_) => {}
    }

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while eps_at(hi)? >= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(RegionError::Numerical(
                "no boundary below 1e12 times the direction".into(),
            ));
        }
    }
    while hi - lo > 1e-6 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Builds a flow with strictly positive slack for a demand interior to the
/// region: solves for the maximal slack `e*`, then re-solves with the slack
/// pinned at `e*/2`, minimizing total flow so the decomposition stays
/// sparse. Errors with [`RegionError::NotInterior`] when `e* <= 0`.
pub fn decomposition_for_oracle(
    ov: &OverlaySpec,
    demands: &[SessionDemand],
) -> Result<FlowDecomposition, RegionError> {
    let report = feasibility(ov, demands)?;
    if report.epsilon <= 1e-9 {
        return Err(RegionError::NotInterior { epsilon: report.epsilon });
    }
    let asm = assemble(ov, demands)?;
    let half = report.epsilon / 2.0;
    let problem = Problem {
        num_vars: asm.eps_neg + 1,
        objective: (0..asm.vars.len()).map(|j| (j, -1.0)).collect(),
        constraints: asm.constraints(Some(half)),
    };
    let (_, x) = simplex::maximize(&problem).map_err(|e| {
        RegionError::Numerical(format!("flow extraction failed: {e:?}"))
    })?;
    asm.verify(&x, half)?;
    Ok(FlowDecomposition { epsilon: half, flows: asm.collect_flows(&x) })
}

// ----------------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_overlay, PhysicalNetwork};
    use proptest::prelude::*;

    fn single_tunnel(cap: u64) -> OverlaySpec {
        let net = PhysicalNetwork::new(&["a", "b"], &[("a", "b", cap)]).unwrap();
        build_overlay(&net, &["a", "b"], &[vec!["a", "b"]]).unwrap()
    }

    fn demand(ov: &OverlaySpec, sid: u32, src: &str, dst: &str, rate: f64) -> SessionDemand {
        SessionDemand {
            session: SessionId(sid),
            source: ov.net.node(src).unwrap(),
            dest: ov.net.node(dst).unwrap(),
            rate,
        }
    }

    /// Three routers in a line joined by two direct unit-capacity tunnels.
    fn series() -> OverlaySpec {
        let net =
            PhysicalNetwork::new(&["a", "b", "c"], &[("a", "b", 1), ("b", "c", 1)]).unwrap();
        build_overlay(&net, &["a", "b", "c"], &[vec!["a", "b"], vec!["b", "c"]]).unwrap()
    }

    /// The five-node example used across the crate: routers a, c, e with
    /// tunnels a->c (via b), a->e (via d) and the direct c->e link.
    fn star() -> OverlaySpec {
        let net = PhysicalNetwork::new(
            &["a", "b", "c", "d", "e"],
            &[("a", "b", 2), ("b", "c", 1), ("a", "d", 1), ("d", "e", 1), ("c", "e", 1)],
        )
        .unwrap();
        build_overlay(
            &net,
            &["a", "c", "e"],
            &[vec!["a", "b", "c"], vec!["a", "d", "e"], vec!["c", "e"]],
        )
        .unwrap()
    }

    #[test]
    fn single_tunnel_slack() {
        let ov = single_tunnel(1);
        let r = feasibility(&ov, &[demand(&ov, 1, "a", "b", 0.4)]).unwrap();
        assert!((r.epsilon - 0.3).abs() < 1e-9, "epsilon {}", r.epsilon);
        // No demand at all: only the capacity rows bound the slack.
        let r = feasibility(&ov, &[demand(&ov, 1, "a", "b", 0.0)]).unwrap();
        assert!((r.epsilon - 1.0).abs() < 1e-9, "epsilon {}", r.epsilon);
        // Overload: slack goes negative.
        let r = feasibility(&ov, &[demand(&ov, 1, "a", "b", 1.4)]).unwrap();
        assert!(r.epsilon < 0.0);
    }

    #[test]
    fn series_slack_matches_hand_value() {
        // rate + eps <= f1, f1 + eps <= f2, f_i + eps <= 1 gives
        // eps* = (1 - rate) / 3.
        let ov = series();
        let r = feasibility(&ov, &[demand(&ov, 1, "a", "c", 0.3)]).unwrap();
        assert!((r.epsilon - 0.7 / 3.0).abs() < 1e-9, "epsilon {}", r.epsilon);
    }

    #[test]
    fn series_slack_matches_brute_force_grid() {
        // eps*(f1, f2) = min(f1 - rate, f2 - f1, 1 - f1, 1 - f2); scan a
        // 1e-3 grid as an independent check of the LP.
        let rate = 0.3;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let f1 = i as f64 / 1000.0;
            for j in 0..=1000 {
                let f2 = j as f64 / 1000.0;
                let e = (f1 - rate).min(f2 - f1).min(1.0 - f1).min(1.0 - f2);
                best = best.max(e);
            }
        }
        let ov = series();
        let lp = feasibility(&ov, &[demand(&ov, 1, "a", "c", rate)]).unwrap().epsilon;
        assert!((lp - best).abs() <= 2e-3, "lp {lp} grid {best}");
    }

    #[test]
    fn star_slack_and_rays() {
        let ov = star();
        let dirs = |r1: f64, r2: f64| {
            vec![demand(&ov, 1, "a", "e", r1), demand(&ov, 2, "a", "c", r2)]
        };
        let r = feasibility(&ov, &dirs(0.5, 0.5)).unwrap();
        assert!((r.epsilon - 0.25).abs() < 1e-9, "epsilon {}", r.epsilon);

        assert!((boundary(&ov, &dirs(1.0, 0.0)).unwrap() - 2.0).abs() < 1e-4);
        assert!((boundary(&ov, &dirs(0.0, 1.0)).unwrap() - 1.0).abs() < 1e-4);
        assert!((boundary(&ov, &dirs(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn unreachable_demand_is_flagged() {
        let ov = star();
        // Router e has no outgoing tunnels, so e -> c is unreachable.
        let bad = vec![demand(&ov, 1, "e", "c", 0.1)];
        assert!(matches!(
            feasibility(&ov, &bad),
            Err(RegionError::UnreachableDemand { .. })
        ));
        assert_eq!(boundary(&ov, &bad).unwrap(), 0.0);
        // At rate zero the same endpoints are fine and contribute nothing.
        let ok = vec![demand(&ov, 1, "e", "c", 0.0), demand(&ov, 2, "a", "c", 0.5)];
        let r = feasibility(&ov, &ok).unwrap();
        assert!((r.epsilon - 0.25).abs() < 1e-9);
    }

    #[test]
    fn zero_direction_is_an_error() {
        let ov = star();
        let dir = vec![demand(&ov, 1, "a", "e", 0.0)];
        assert_eq!(boundary(&ov, &dir).unwrap_err(), RegionError::EmptyDirection);
    }

    #[test]
    fn decomposition_is_sparse_and_strictly_slack() {
        let ov = star();
        let demands =
            vec![demand(&ov, 1, "a", "e", 0.97), demand(&ov, 2, "a", "c", 0.97)];
        let d = decomposition_for_oracle(&ov, &demands).unwrap();
        assert!((d.epsilon - 0.0075).abs() < 1e-6, "epsilon {}", d.epsilon);

        let t_ac = ov.tunnel_between(ov.net.node("a").unwrap(), ov.net.node("c").unwrap()).unwrap();
        let t_ae = ov.tunnel_between(ov.net.node("a").unwrap(), ov.net.node("e").unwrap()).unwrap();
        let t_ce = ov.tunnel_between(ov.net.node("c").unwrap(), ov.net.node("e").unwrap()).unwrap();
        assert!((d.flow(t_ac, SessionId(2)) - 0.9775).abs() < 1e-6);
        assert!((d.flow(t_ae, SessionId(1)) - 0.9775).abs() < 1e-6);
        assert!((d.flow(t_ce, SessionId(1)) - 0.0075).abs() < 1e-6);
        assert!(d.flow(t_ac, SessionId(1)).abs() < 1e-9);

        // Strict slack on every tunnel.
        for t in &ov.tunnels {
            assert!(d.tunnel_total(t.id) < t.bottleneck_capacity as f64 - 1e-9);
        }

        // On the boundary there is nothing to hand out.
        let hot = vec![demand(&ov, 1, "a", "e", 1.0), demand(&ov, 2, "a", "c", 1.0)];
        assert!(matches!(
            decomposition_for_oracle(&ov, &hot),
            Err(RegionError::NotInterior { .. })
        ));
    }

    proptest! {
        // Single tunnel: slack is exactly (cap - rate) / 2 for any rate.
        // For any positive demand on a lone tunnel the slack splits the
        // spare capacity in half (node row and capacity row bind equally).
        #[test]
        fn single_tunnel_slack_closed_form(cap in 1u64..6, rate in 0.01f64..8.0) {
            let ov = single_tunnel(cap);
            let r = feasibility(&ov, &[demand(&ov, 1, "a", "b", rate)]).unwrap();
            prop_assert!((r.epsilon - (cap as f64 - rate) / 2.0).abs() < 1e-7);
        }

        // Slack never increases when the demand grows.
        #[test]
        fn slack_is_monotone_in_load(r1 in 0.0f64..1.5, r2 in 0.0f64..1.5, bump in 0.0f64..0.5) {
            let ov = star();
            let base = vec![demand(&ov, 1, "a", "e", r1), demand(&ov, 2, "a", "c", r2)];
            let more = vec![demand(&ov, 1, "a", "e", r1 + bump), demand(&ov, 2, "a", "c", r2)];
            let e0 = feasibility(&ov, &base).unwrap().epsilon;
            let e1 = feasibility(&ov, &more).unwrap().epsilon;
            prop_assert!(e1 <= e0 + 1e-7);
        }
    }
}
