//! Scales each demo preset's error terms so that its uncalibrated error at
//! seed 0 lands on `case.target_before_pct`.
//!
//! The offset, gain and INL entries form a fixed shape; one factor multiplies
//! all of them and is found by bisection. DNL spread and noise are left alone.
//!
//!     cargo run --release --example tune_presets            # report only
//!     cargo run --release --example tune_presets -- --write # update files

use std::path::PathBuf;

use calrig::calibration::calibrate;
use calrig::config::KvFile;
use calrig::pipeline::{parse_board, simulate_sweep, RunInputs};
use calrig::presets::{parse_preset, DEMO_CASES};
use calrig::sweep::{build_plan, SweepParams};

const SEED: u64 = 0;

fn is_shape_key(key: &str) -> bool {
    key == "adc.offset_uv" || key == "adc.gain_error_ppm" || key.starts_with("adc.inl[")
}

/// Preset text with every shape value multiplied by `s`, rounded to 0.1.
fn scaled(text: &str, s: f64) -> String {
    let mut out = String::new();
    for line in text.lines() {
        match line.split_once(" = ") {
            Some((k, v)) if is_shape_key(k) => {
                let x: f64 = v.parse().expect("numeric shape value");
                let y = (x * s * 10.0).round() / 10.0;
                out.push_str(&format!("{k} = {y}\n"));
            }
            _ => {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    out
}

/// (before, after, reduction) of one case with the given preset text.
fn evaluate(inputs: &RunInputs, dut_text: &str) -> (f64, f64, f64) {
    let board = parse_board(&inputs.board_cfg).unwrap();
    let dut = parse_preset(dut_text).unwrap();
    let dmm = parse_preset(&inputs.dmm_preset).unwrap();
    let params = SweepParams {
        period_us: inputs.period_us,
        quantity: inputs.quantity,
        threshold: inputs.threshold,
    };
    let plan = build_plan(&params, &board).unwrap();
    let (sweep, _) = simulate_sweep(&plan, &dut, &dmm, inputs.seed).unwrap();
    let cal = calibrate(&sweep.pairs, inputs.method, inputs.holdout).unwrap();
    let r = &cal.report;
    (r.pre.mean_pct_fs, r.post.mean_pct_fs, r.reduction())
}

fn main() {
    let write = std::env::args().any(|a| a == "--write");
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("presets");
    for case in DEMO_CASES {
        let path = dir.join(format!("{case}.cfg"));
        let text = std::fs::read_to_string(&path).unwrap();
        let target: f64 = KvFile::parse(&text).unwrap().f64("case.target_before_pct").unwrap();
        let inputs = RunInputs::demo(case, SEED).unwrap();
        let before = |s: f64| evaluate(&inputs, &scaled(&text, s)).0;

        let (mut lo, mut hi) = (0.0, 1.0);
        while before(hi) < target {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if before(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        let tuned = scaled(&text, s);
        let (b, a, red) = evaluate(&inputs, &tuned);
        println!(
            "{case:<20} scale {s:.6}  before {b:.4}% (target {target})  after {a:.4}%  reduction {red:.1}x"
        );
        if write {
            std::fs::write(&path, tuned).unwrap();
        }
    }
}
