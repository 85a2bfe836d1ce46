use std::path::Path;
use std::process::{Command, Output};

fn calrig(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calrig"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn plan_sweep_pair_calibrate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = calrig(&["plan", "--i-max-ua", "490", "--out-dir", "p"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("plan_steps = 3"), "{}", stdout(&o));
    assert!(d.join("p/plan.csv").is_file() && d.join("p/range.txt").is_file());

    let o = calrig(
        &["sweep", "--plan", "p/plan.csv", "--dut-preset", "ina219-current", "--dmm-preset", "dmm7510-current", "--out-dir", "s"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for line in ["steps = 3", "pairs = 3", "skipped = 0", "dut_samples = 15", "ref_samples = 15000"] {
        assert!(out.contains(line), "{out}");
    }

    let o = calrig(
        &["pair", "--settling", "s/settling.csv", "--dut-trace", "s/dut_trace.csv", "--ref-trace", "s/ref_trace.csv", "--out", "again.csv"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(d.join("again.csv")).unwrap(), std::fs::read(d.join("s/pairs.csv")).unwrap());

    // Three pairs cannot carry a cubic with a holdout.
    let o = calrig(&["calibrate", "--pairs", "s/pairs.csv", "--method", "poly:3", "--out-dir", "c"], d);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn full_plan_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = calrig(&["plan", "--out-dir", "."], dir.path());
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("plan_steps = 16705"), "{out}");
    assert!(out.contains("finest_step = 1.854"), "{out}");
    assert!(out.contains("plan_truncated = false"), "{out}");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = calrig(&["demo", "bogus"], d);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    for case in ["ina219-current", "mcp3208-current", "mcp3208-voltage", "atmega2560-voltage", "all"] {
        assert!(err.contains(case), "{err}");
    }
    assert!(stdout(&o).is_empty());

    assert_eq!(code(&calrig(&["frobnicate"], d)), 1);
    assert_eq!(code(&calrig(&["plan", "--mode", "voltage", "--i-max-ua", "10"], d)), 1);
    assert_eq!(code(&calrig(&["plan", "--i-max-ua", "ten"], d)), 1);
    assert_eq!(code(&calrig(&["calibrate", "--pairs", "x.csv", "--method", "spline"], d)), 1);
    assert_eq!(code(&calrig(&["--help"], d)), 0);
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = calrig(&["plan", "--period-us", "4999", "--out-dir", "."], d);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let board = calrig::config::REFERENCE_BOARD.replace("r_protect_ohm = 220", "r_protect_ohm = lots");
    std::fs::write(d.join("bad.cfg"), board).unwrap();
    let o = calrig(&["plan", "--config", "bad.cfg", "--out-dir", "."], d);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("r_protect_ohm"), "{}", stderr(&o));

    assert_eq!(code(&calrig(&["plan", "--i-max-ua", "490", "--out-dir", "p"], d)), 0);
    let o = calrig(
        &["sweep", "--plan", "p/plan.csv", "--dut-preset", "ina219-current", "--dmm-preset", "dmm7510-current", "--period-us", "1000", "--out-dir", "s"],
        d,
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("T > 1/r_min"), "{}", stderr(&o));
}

#[test]
fn demo_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = calrig(&["demo", "ina219-current", "--out-dir", "run"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert!(lines.next().unwrap().starts_with("case"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("ina219-current"), "{row}");
    assert!(d.join("run/manifest.cfg").is_file());

    let o = calrig(&["replay", "--manifest", "run/manifest.cfg", "--out-dir", "again"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("report: identical"), "{out}");
    assert!(!out.contains("DIFFERS"), "{out}");

    // An edited input no longer reproduces the recorded outputs.
    let preset = d.join("run/dut.cfg");
    let text = std::fs::read_to_string(&preset).unwrap();
    std::fs::write(&preset, text.replace("adc.noise_sigma_uv = 3", "adc.noise_sigma_uv = 4")).unwrap();
    let o = calrig(&["replay", "--manifest", "run/manifest.cfg", "--out-dir", "again2"], d);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("dut_trace: DIFFERS"), "{}", stdout(&o));
}
