use std::path::Path;

use calrig::calibration::Method;
use calrig::circuit::Quantity;
use calrig::config::REFERENCE_BOARD;
use calrig::pipeline::{
    cmd_calibrate, cmd_demo, cmd_pair, cmd_plan, cmd_replay, cmd_sweep, files, sha256_hex, RunManifest,
};
use calrig::sweep::{SweepParams, Threshold};
use calrig::units::Current;

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

fn toy_params() -> SweepParams {
    SweepParams {
        period_us: 5_000,
        quantity: Quantity::Current,
        threshold: Threshold::MaxCurrent(Current::from_nanoamps(490_000)),
    }
}

#[test]
fn plan_reports_the_reference_range() {
    let dir = tempfile::tempdir().unwrap();
    let params = SweepParams {
        threshold: Threshold::Unbounded,
        ..toy_params()
    };
    let out = cmd_plan(REFERENCE_BOARD, &params, dir.path()).unwrap();
    assert_eq!(out.plan.len(), 16_705);
    let report = String::from_utf8(read(dir.path(), files::RANGE)).unwrap();
    assert!(report.contains("min = 486.287"), "{report}");
    assert!(report.contains("finest_step = 1.854"), "{report}");
    // Within 3% of the 0.476 mA reference floor.
    let min_ma = out.range.min as f64 / 1e6;
    assert!((min_ma - 0.476).abs() / 0.476 <= 0.03, "{min_ma}");
    assert!(out.range.max >= 900_000_000);
}

#[test]
fn zero_cap_gives_one_step_plan() {
    let dir = tempfile::tempdir().unwrap();
    let params = SweepParams {
        threshold: Threshold::MaxCurrent(Current::ZERO),
        ..toy_params()
    };
    assert_eq!(cmd_plan(REFERENCE_BOARD, &params, dir.path()).unwrap().plan.len(), 1);
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = REFERENCE_BOARD.replace("r_protect_ohm = 220", "r_protect_ohm = lots");
    let err = cmd_plan(&text, &toy_params(), dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("r_protect_ohm"), "{err}");
    let text = REFERENCE_BOARD.replace("v_in_v = 5", "");
    let err = cmd_plan(&text, &toy_params(), dir.path()).unwrap_err();
    assert!(err.to_string().contains("v_in_v"), "{err}");
}

#[test]
fn toy_sweep_files_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    cmd_plan(REFERENCE_BOARD, &toy_params(), dir.path()).unwrap();
    let plan = dir.path().join(files::PLAN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = cmd_sweep(&plan, "ina219-current", "dmm7510-current", 7, None, &a).unwrap();
    cmd_sweep(&plan, "ina219-current", "dmm7510-current", 7, None, &b).unwrap();
    assert_eq!(out.dut_trace.samples.len(), 15);
    assert_eq!(out.ref_trace.samples.len(), 15_000);
    assert_eq!(out.pairs.pairs.len(), 3);
    for name in [files::EVENTS, files::SETTLING, files::DUT_TRACE, files::REF_TRACE, files::PAIRS] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    let c = dir.path().join("c");
    cmd_sweep(&plan, "ina219-current", "dmm7510-current", 8, None, &c).unwrap();
    assert_ne!(read(&a, files::DUT_TRACE), read(&c, files::DUT_TRACE));

    // Re-pairing the saved files reproduces the pairs file.
    let repaired = dir.path().join("repaired.csv");
    cmd_pair(
        &a.join(files::SETTLING),
        &a.join(files::DUT_TRACE),
        &a.join(files::REF_TRACE),
        &repaired,
    )
    .unwrap();
    assert_eq!(std::fs::read(&repaired).unwrap(), read(&a, files::PAIRS));
}

#[test]
fn sweep_rejects_slow_instrument_and_wrong_quantity() {
    let dir = tempfile::tempdir().unwrap();
    cmd_plan(REFERENCE_BOARD, &toy_params(), dir.path()).unwrap();
    let plan = dir.path().join(files::PLAN);
    let err = cmd_sweep(&plan, "ina219-current", "dmm7510-current", 0, Some(1_000), dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("T > 1/r_min"), "{err}");
    let err = cmd_sweep(&plan, "mcp3208-voltage", "dmm7510-voltage", 0, None, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = cmd_sweep(&plan, "hx711", "dmm7510-current", 0, None, dir.path()).unwrap_err();
    assert!(err.to_string().contains("ina219-current"), "{err}");
}

#[test]
fn calibrate_fails_when_nothing_improves() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from(
        "# quantity = voltage\n# unit = uV\n# period_us = 5000\n# full_scale = 1000\nstep,dut_value,ref_value,dut_t_us,ref_t_us\n",
    );
    for k in 0..20 {
        text.push_str(&format!("{k},{v},{v},{t},{t}\n", v = 10 * k, t = 2_502 + 5_000 * k));
    }
    text.push_str("# skipped_dut = 0\n# skipped_ref = 0\n# skipped_total = 0\n");
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(&pairs, text).unwrap();
    let err = cmd_calibrate(&pairs, Method::Poly(1), true, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    // The model and report are still written.
    assert!(dir.path().join(files::MODEL).is_file());
    assert!(dir.path().join(files::REPORT).is_file());
}

#[test]
fn demo_is_byte_identical_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let first = cmd_demo("ina219-current", 0, &a).unwrap();
    cmd_demo("ina219-current", 0, &b).unwrap();
    for (_, name, hash) in &first.manifest.files {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
        assert_eq!(&sha256_hex(&read(&a, name)), hash, "{name}");
    }
    assert_eq!(read(&a, files::MANIFEST), read(&b, files::MANIFEST));

    // Every output is listed in the manifest.
    let mut listed: Vec<String> = first.manifest.files.iter().map(|(_, n, _)| n.clone()).collect();
    listed.push(files::MANIFEST.to_string());
    listed.sort();
    let mut present: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    present.sort();
    assert_eq!(listed, present);

    let replay = cmd_replay(&a.join(files::MANIFEST), &dir.path().join("r")).unwrap();
    assert!(replay.differing.is_empty(), "{:?}", replay.differing);
    assert_eq!(replay.identical.len(), first.manifest.files.len());

    // A changed input is caught.
    let dut = a.join(files::DUT_PRESET);
    let text = std::fs::read_to_string(&dut).unwrap();
    std::fs::write(&dut, text.replace("adc.noise_sigma_uv = 3", "adc.noise_sigma_uv = 4")).unwrap();
    let replay = cmd_replay(&a.join(files::MANIFEST), &dir.path().join("r2")).unwrap();
    assert!(replay.differing.contains(&"dut_trace".to_string()));
}

#[test]
fn replay_requires_every_listed_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    cmd_demo("mcp3208-current", 3, &a).unwrap();
    let manifest = RunManifest::parse(&std::fs::read_to_string(a.join(files::MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest.seed, 3);
    assert_eq!(manifest.case.as_deref(), Some("mcp3208-current"));
    std::fs::remove_file(a.join(files::RESIDUALS)).unwrap();
    let err = cmd_replay(&a.join(files::MANIFEST), &dir.path().join("r")).unwrap_err();
    assert!(err.to_string().contains(files::RESIDUALS), "{err}");
}

#[test]
fn unknown_case_lists_valid_cases() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_demo("ads1115", 0, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    for case in calrig::presets::DEMO_CASES {
        assert!(err.to_string().contains(case), "{err}");
    }
}
