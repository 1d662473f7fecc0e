//! Experiment orchestration: scenario execution, policy/load sweeps, the
//! delay table, and the plain-text output formats.
//!
//! Output rendering lives here as string builders rather than writers so
//! that identical runs produce byte-identical files — everything numeric is
//! printed with a fixed precision.

pub mod scenario;
pub mod stability;

use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::{self, ArrivalKind, EngineError, RunResult, RunSummary, TraceRow};
use crate::netmodel::{NetModelError, OverlaySpec};
use crate::policies::Policy;
use crate::region::{self, RegionError, SessionDemand};

pub use scenario::{built_in, built_in_scenarios, ResolvedScenario, Scenario};
pub use stability::{assess, StabilityReport, StabilityVerdict};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("scenario encode error: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error(transparent)]
    Net(#[from] NetModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("unknown policy `{0}` (expected bpt, bpt2, bpo, sp, rand-flow, bp, or bpsp)")]
    UnknownPolicy(String),
    #[error("unknown discipline `{0}` (expected fifo, lqf, strict, or hlpps)")]
    UnknownDiscipline(String),
    #[error("{0}")]
    BadPriority(String),
    #[error("warmup-fraction {0} outside [0, 0.1]")]
    BadWarmupFraction(f64),
    #[error("no built-in scenario named `{0}`")]
    UnknownBuiltin(String),
    #[error("`tunnels` and `auto-tunnels` are mutually exclusive")]
    TunnelsAndAuto,
}

/// Everything one scenario run produces.
#[derive(Debug)]
pub struct ScenarioOutcome {
    pub name: String,
    /// `src->dst` per tunnel, in tunnel-id order (used by trace columns).
    pub tunnel_labels: Vec<String>,
    pub result: RunResult,
    pub stability: StabilityReport,
}

/// The randomized-flow policy needs a strictly supportable flow; when the
/// scenario left it blank, solve for one.
pub fn prepare_policy(
    policy: &mut Policy,
    ov: &OverlaySpec,
    sessions: &[SessionDemand],
) -> Result<(), HarnessError> {
    if let Policy::RandomizedFlow(slot @ None) = policy {
        *slot = Some(region::decomposition_for_oracle(ov, sessions)?);
    }
    Ok(())
}

/// Resolves and runs one scenario, then classifies its backlog series.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioOutcome, HarnessError> {
    run_resolved(&sc.name, sc.resolve()?)
}

pub fn run_resolved(name: &str, rs: ResolvedScenario) -> Result<ScenarioOutcome, HarnessError> {
    let ResolvedScenario { overlay, sessions, mut config } = rs;
    prepare_policy(&mut config.policy, &overlay, &sessions)?;
    let result = engine::run(&overlay, &sessions, &config)?;
    let stability = stability::assess(&result.backlog_series, config.warmup as usize);
    let tunnel_labels =
        overlay.tunnels.iter().map(|t| overlay.tunnel_label(t.id)).collect();
    Ok(ScenarioOutcome { name: name.to_string(), tunnel_labels, result, stability })
}

// ----------------------------------------------------------------------------
// Sweeps
// ----------------------------------------------------------------------------

/// One cell of a load/policy sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub multiplier: f64,
    pub policy: String,
    pub seed: u64,
    pub mean_backlog: f64,
    pub final_backlog: u64,
    pub mean_delay: f64,
    pub verdict: StabilityVerdict,
    pub drift: f64,
}

/// Runs `base` with every session rate scaled by each multiplier, across
/// policies and seeds. Rows come out ordered by (multiplier, policy, seed),
/// and every cell at a given multiplier sees the same arrival realization —
/// arrival randomness is independent of the policy stream.
pub fn sweep(
    base: &Scenario,
    policies: &[Policy],
    multipliers: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows = Vec::new();
    for &m in multipliers {
        let mut sc = base.clone();
        for s in &mut sc.sessions {
            s.rate *= m;
        }
        let resolved = sc.resolve()?;
        for pol in policies {
            for &seed in seeds {
                let mut cfg = resolved.config.clone();
                cfg.policy = pol.clone();
                cfg.seed = seed;
                prepare_policy(&mut cfg.policy, &resolved.overlay, &resolved.sessions)?;
                let result = engine::run(&resolved.overlay, &resolved.sessions, &cfg)?;
                let st = stability::assess(&result.backlog_series, cfg.warmup as usize);
                rows.push(SweepRow {
                    multiplier: m,
                    policy: pol.name().to_string(),
                    seed,
                    mean_backlog: result.summary.mean_backlog,
                    final_backlog: result.summary.final_backlog,
                    mean_delay: result.summary.mean_delay,
                    verdict: st.verdict,
                    drift: st.drift,
                });
            }
        }
    }
    Ok(rows)
}

// ----------------------------------------------------------------------------
// Delay table
// ----------------------------------------------------------------------------

/// One row of the per-discipline delay table on the two-commodity example.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTableRow {
    pub load: f64,
    pub discipline: String,
    /// Mean delay with both sessions at the full load value.
    pub mean_delay: f64,
    /// Mean delay with both sessions at half the load value.
    pub mean_delay_half: f64,
}

pub const DELAY_TABLE_LOADS: [f64; 5] = [0.8, 0.85, 0.9, 0.95, 0.99];

/// Mean delivery delay on the two-commodity example under the gated
/// backpressure policy, for each load level and forwarder discipline. Both
/// load interpretations run on the same seed so columns stay comparable.
/// Arrivals are binomial: without slot-to-slot variance the queues never
/// build and the near-saturation delay blow-up disappears.
pub fn delay_table(seed: u64, slots: u64) -> Result<Vec<DelayTableRow>, HarnessError> {
    let disciplines: [(&str, Vec<u32>); 4] =
        [("fifo", vec![]), ("lqf", vec![]), ("strict", vec![1, 2]), ("hlpps", vec![])];
    let mut rows = Vec::new();
    for &load in &DELAY_TABLE_LOADS {
        for (name, prio) in &disciplines {
            let mut delays = [0.0f64; 2];
            for (k, scale) in [1.0f64, 0.5].into_iter().enumerate() {
                let mut sc = built_in("star-light").expect("catalog has star_light");
                sc.seed = seed;
                sc.slots = slots;
                sc.discipline = name.to_string();
                sc.priority = prio.clone();
                sc.arrival_kind = ArrivalKind::Binomial;
                sc.arrival_cap = 8;
                for s in &mut sc.sessions {
                    s.rate = load * scale;
                }
                delays[k] = run_scenario(&sc)?.result.summary.mean_delay;
            }
            rows.push(DelayTableRow {
                load,
                discipline: name.to_string(),
                mean_delay: delays[0],
                mean_delay_half: delays[1],
            });
        }
    }
    Ok(rows)
}

// ----------------------------------------------------------------------------
// Output formats
// ----------------------------------------------------------------------------

/// Flat `key value` lines; floats at fixed precision so reruns are
/// byte-identical.
pub fn render_summary(summary: &RunSummary, stability: Option<&StabilityReport>) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "policy {}", summary.policy).unwrap();
    writeln!(w, "discipline {}", summary.discipline).unwrap();
    writeln!(w, "seed {}", summary.seed).unwrap();
    writeln!(w, "slots {}", summary.slots).unwrap();
    writeln!(w, "warmup {}", summary.warmup).unwrap();
    writeln!(w, "total-arrivals {}", summary.total_arrivals).unwrap();
    writeln!(w, "total-delivered {}", summary.total_delivered).unwrap();
    writeln!(w, "mean-delay {:.6}", summary.mean_delay).unwrap();
    writeln!(w, "mean-backlog {:.6}", summary.mean_backlog).unwrap();
    writeln!(w, "final-backlog {}", summary.final_backlog).unwrap();
    writeln!(w, "dummy-injected {}", summary.dummy_injected).unwrap();
    for s in &summary.per_session {
        let id = s.session;
        writeln!(w, "session-{id}-arrivals {}", s.arrivals).unwrap();
        writeln!(w, "session-{id}-delivered {}", s.delivered).unwrap();
        writeln!(w, "session-{id}-measured {}", s.measured).unwrap();
        writeln!(w, "session-{id}-mean-delay {:.6}", s.mean_delay).unwrap();
        writeln!(w, "session-{id}-delivery-rate {:.6}", s.delivery_rate).unwrap();
    }
    let inv = &summary.invariants;
    writeln!(w, "invariant-exit-rate {}", inv.exit_rate).unwrap();
    writeln!(w, "invariant-loaded-drain {}", inv.loaded_drain).unwrap();
    writeln!(w, "invariant-backlog-bound {}", inv.backlog_bound).unwrap();
    writeln!(w, "invariant-absorption {}", inv.absorption).unwrap();
    writeln!(w, "invariant-conservation {}", inv.conservation).unwrap();
    if let Some(st) = stability {
        writeln!(w, "stability {}", st.verdict).unwrap();
        writeln!(w, "drift {:.6}", st.drift).unwrap();
        writeln!(w, "early-mean {:.6}", st.early_mean).unwrap();
    }
    out
}

/// Per-slot trace as CSV: router backlog, then one in-flight column and one
/// exit-count column per tunnel.
pub fn render_trace_csv(rows: &[TraceRow], tunnel_labels: &[String]) -> String {
    let mut out = String::from("slot,router_backlog");
    for l in tunnel_labels {
        write!(out, ",f_{l}").unwrap();
    }
    for l in tunnel_labels {
        write!(out, ",phi_{l}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{}", r.slot, r.router_backlog).unwrap();
        for v in &r.tunnel_backlog {
            write!(out, ",{v}").unwrap();
        }
        for v in &r.tunnel_exits {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn render_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("multiplier,policy,seed,mean_backlog,final_backlog,mean_delay,verdict,drift\n");
    for r in rows {
        writeln!(
            out,
            "{:.6},{},{},{:.6},{},{:.6},{},{:.6}",
            r.multiplier,
            r.policy,
            r.seed,
            r.mean_backlog,
            r.final_backlog,
            r.mean_delay,
            r.verdict,
            r.drift
        )
        .unwrap();
    }
    out
}

pub fn render_delay_table_csv(rows: &[DelayTableRow]) -> String {
    let mut out = String::from("load,discipline,mean_delay,mean_delay_half_load\n");
    for r in rows {
        writeln!(
            out,
            "{:.2},{},{:.6},{:.6}",
            r.load, r.discipline, r.mean_delay, r.mean_delay_half
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> Scenario {
        let mut sc = built_in(name).unwrap();
        sc.slots = 4_000;
        sc
    }

    #[test]
    fn star_light_run_is_stable_and_delivers() {
        let out = run_scenario(&small("star-light")).unwrap();
        assert_eq!(out.stability.verdict, StabilityVerdict::Stable);
        let s = &out.result.summary;
        assert!(s.total_delivered > 0);
        assert!(s.total_arrivals - s.total_delivered <= s.final_backlog + 64);
        assert_eq!(out.tunnel_labels, vec!["a->c", "a->e", "c->e"]);
    }

    #[test]
    fn randomized_flow_gets_a_decomposition_automatically() {
        let mut sc = small("star-light");
        sc.policy = "rand-flow".into();
        sc.dummy_packets = true;
        let out = run_scenario(&sc).unwrap();
        assert_eq!(out.result.summary.policy, "rand-flow");
        assert!(out.result.summary.total_delivered > 0);
    }

    #[test]
    fn sweep_orders_rows_by_multiplier_policy_seed() {
        let base = small("star-light");
        let rows = sweep(
            &base,
            &[Policy::BpThreshold, Policy::BpUngated],
            &[0.5, 1.5],
            &[1, 2],
        )
        .unwrap();
        assert_eq!(rows.len(), 8);
        // Multiplier-major, then input policy order, then seed.
        let key: Vec<(f64, usize, u64)> = rows
            .iter()
            .map(|r| {
                let p = ["bpt", "bpo"].iter().position(|n| *n == r.policy).unwrap();
                (r.multiplier, p, r.seed)
            })
            .collect();
        let mut sorted = key.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(key, sorted);
        // Rates 0.25/0.25 are deep inside the region: every policy stable.
        for r in rows.iter().filter(|r| r.multiplier == 0.5) {
            assert_eq!(r.verdict, StabilityVerdict::Stable);
        }
    }

    #[test]
    fn summary_rendering_is_deterministic() {
        let a = run_scenario(&small("star-light")).unwrap();
        let b = run_scenario(&small("star-light")).unwrap();
        let ra = render_summary(&a.result.summary, Some(&a.stability));
        let rb = render_summary(&b.result.summary, Some(&b.stability));
        assert_eq!(ra, rb);
        assert!(ra.contains("policy bpt\n"));
        assert!(ra.contains("session-1-mean-delay "));
        assert!(ra.contains("stability stable\n"));
    }

    #[test]
    fn trace_csv_has_one_column_pair_per_tunnel() {
        let mut sc = small("star-light");
        sc.slots = 50;
        let resolved = sc.resolve().unwrap();
        let mut cfg = resolved.config.clone();
        cfg.record_trace = true;
        let result = engine::run(&resolved.overlay, &resolved.sessions, &cfg).unwrap();
        let labels: Vec<String> = resolved
            .overlay
            .tunnels
            .iter()
            .map(|t| resolved.overlay.tunnel_label(t.id))
            .collect();
        let text = render_trace_csv(result.trace.as_deref().unwrap(), &labels);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "slot,router_backlog,f_a->c,f_a->e,f_c->e,phi_a->c,phi_a->e,phi_c->e"
        );
        assert_eq!(lines.count(), 50);
    }

    #[test]
    fn delay_table_covers_the_grid() {
        let rows = delay_table(7, 2_000).unwrap();
        assert_eq!(rows.len(), 20);
        for chunk in rows.chunks(4) {
            let names: Vec<&str> = chunk.iter().map(|r| r.discipline.as_str()).collect();
            assert_eq!(names, ["fifo", "lqf", "strict", "hlpps"]);
        }
        for r in &rows {
            assert!(r.mean_delay > 0.0, "{r:?}");
            assert!(r.mean_delay_half > 0.0, "{r:?}");
        }
    }
}
