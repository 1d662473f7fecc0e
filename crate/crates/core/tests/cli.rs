//! End-to-end checks of the command-line binary: every subcommand runs,
//! file outputs land where asked, and identical invocations produce
//! identical bytes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tunnelsim"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary spawns");
    assert!(
        out.status.success(),
        "`tunnelsim {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(args: &[&str]) -> String {
    String::from_utf8(run_ok(args).stdout).expect("utf-8 output")
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|rest| rest.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("no `{key}` line in:\n{text}"))
        .to_string()
}

#[test]
fn scenarios_lists_the_catalog() {
    let listing = stdout(&["scenarios"]);
    for name in ["star-light", "star-heavy", "star-unit", "tandem", "shared-link"] {
        assert!(listing.contains(name), "catalog listing missing {name}:\n{listing}");
    }
}

#[test]
fn run_writes_summary_and_trace_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n).to_string_lossy().into_owned();

    let mut outputs = Vec::new();
    for attempt in ["a", "b"] {
        let summary = path(&format!("summary-{attempt}.txt"));
        let trace = path(&format!("trace-{attempt}.csv"));
        run_ok(&[
            "run",
            "star-light",
            "--slots",
            "5000",
            "--summary",
            &summary,
            "--trace",
            &trace,
        ]);
        outputs.push((fs::read(summary).unwrap(), fs::read(trace).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1], "identical invocations must write identical bytes");

    let summary = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(field(&summary, "policy"), "bpt");
    assert_eq!(field(&summary, "slots"), "5000");
    assert!(field(&summary, "mean-delay").parse::<f64>().unwrap() > 0.0);
    for counter in ["exit-rate", "loaded-drain", "backlog-bound", "conservation"] {
        assert_eq!(field(&summary, &format!("invariant-{counter}")), "0");
    }

    let trace = String::from_utf8(outputs[0].1.clone()).unwrap();
    let header = trace.lines().next().unwrap();
    assert!(header.starts_with("slot,router_backlog,"), "unexpected header {header}");
    assert_eq!(trace.lines().count(), 5001, "one row per slot plus the header");
}

#[test]
fn run_accepts_overrides() {
    let text = stdout(&[
        "run",
        "star-light",
        "--slots",
        "4000",
        "--seed",
        "7",
        "--policy",
        "sp",
        "--discipline",
        "lqf",
    ]);
    assert_eq!(field(&text, "policy"), "sp");
    assert_eq!(field(&text, "discipline"), "lqf");
    assert_eq!(field(&text, "seed"), "7");
}

#[test]
fn region_reports_the_star_boundary() {
    let text = stdout(&["region", "star-light"]);
    assert_eq!(field(&text, "interior"), "true");
    // The built-in direction is (0.5, 0.5); the per-session boundary along
    // the diagonal is 1.0, so the multiplier along the half-rate direction
    // is 2.0.
    let rho: f64 = field(&text, "rho-star").parse().unwrap();
    assert!((rho - 2.0).abs() < 2e-3, "rho-star {rho}");
    let slack: f64 = field(&text, "decomposition-slack").parse().unwrap();
    assert!(slack > 0.0);
}

#[test]
fn validate_flags_shared_links() {
    let text = stdout(&["validate", "shared-link"]);
    assert_eq!(field(&text, "non-overlapping"), "false");
    assert_eq!(field(&text, "tunnels"), "6");

    let text = stdout(&["validate", "star-light"]);
    assert_eq!(field(&text, "non-overlapping"), "true");
    assert_eq!(field(&text, "gate"), "6");
}

#[test]
fn export_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("tandem.toml");
    run_ok(&["export", "tandem", "--out", &file.to_string_lossy()]);
    assert!(Path::new(&file).exists());

    let text = stdout(&["run", &file.to_string_lossy(), "--slots", "3000"]);
    assert_eq!(field(&text, "policy"), "bpt");
    assert_eq!(field(&text, "slots"), "3000");
}

#[test]
fn sweep_and_table_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    run_ok(&[
        "sweep",
        "star-unit",
        "--policies",
        "bpt,bp",
        "--multipliers",
        "0.3,0.6",
        "--seeds",
        "1",
        "--out",
        &out.to_string_lossy(),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("multiplier,policy,seed,"));
    assert_eq!(text.lines().count(), 5, "header plus 2 multipliers x 2 policies");

    let table = dir.path().join("delays.csv");
    run_ok(&["delay-table", "--slots", "2000", "--out", &table.to_string_lossy()]);
    let text = fs::read_to_string(&table).unwrap();
    assert!(text.starts_with("load,discipline,"));
    assert_eq!(text.lines().count(), 21, "header plus 5 loads x 4 disciplines");
}

#[test]
fn unknown_inputs_fail_cleanly() {
    let out = bin().args(["run", "no-such-scenario"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no-such-scenario"), "stderr was: {err}");

    let out = bin().args(["run", "star-light", "--policy", "bogus"]).output().unwrap();
    assert!(!out.status.success());
}
