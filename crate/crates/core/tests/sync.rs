use std::sync::OnceLock;

use calrig::circuit::{Board, Quantity};
use calrig::hal::MockTransport;
use calrig::instruments::{AdcSpec, Converter, Sample, SampleTrace, SimulatedTrace, StimulusTimeline};
use calrig::sweep::{build_plan, execute, SettlingLog, SweepParams, Threshold, VirtualClock};
use calrig::sync::{check_rate, match_trace, pair, PairedObservations, StepMatch, SyncError};
use calrig::units::{Resistance, Voltage};
use proptest::prelude::*;

const T: u64 = 5_000;

struct FullSweep {
    log: SettlingLog,
    timeline: StimulusTimeline,
}

fn full_sweep() -> &'static FullSweep {
    static SWEEP: OnceLock<FullSweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let board = Board::reference();
        let params = SweepParams {
            period_us: T,
            quantity: Quantity::Current,
            threshold: Threshold::Unbounded,
        };
        let plan = build_plan(&params, &board).unwrap();
        let run = execute(&plan, MockTransport::new(board.clone(), board.current_mode()), &mut VirtualClock::new())
            .unwrap();
        let end = plan.schedule().capture_end(plan.len());
        let timeline = StimulusTimeline::from_events(&board, board.current_mode(), &run.events, end).unwrap();
        FullSweep { log: run.log, timeline }
    })
}

/// Current sensing converter: 16 bits over 2.048 A through 1 Ω.
fn meter(rate_hz: u64, phase_us: u64, noise: f64) -> Converter {
    let mut s = AdcSpec::ideal(16, Voltage::from_microvolts(2_048_000), rate_hz);
    s.shunt = Some(Resistance::from_ohms(1));
    s.phase_us = phase_us;
    s.noise_sigma_uv = noise;
    Converter::new(s).unwrap()
}

/// Every pair's samples lie in their own step's hold interval and see that
/// step's level on the stimulus timeline.
fn assert_no_cross_step(sweep: &FullSweep, obs: &PairedObservations) {
    for p in &obs.pairs {
        let e = &sweep.log.entries[p.step];
        let start = e.t_settle_us - T / 2;
        for t in [p.dut_t_us, p.ref_t_us] {
            assert!(t >= start && t < start + T, "step {} sample at {t}", p.step);
            assert_eq!(sweep.timeline.level_at(t), Some(e.expected_current.nanoamps()), "step {}", p.step);
        }
    }
}

#[test]
fn rate_rule_is_strict() {
    assert!(check_rate(5_000, 1_000));
    assert!(!check_rate(1_000, 1_000));
    assert!(check_rate(1_001, 1_000));
    assert!(!check_rate(999, 1_000));
}

#[test]
fn slow_instrument_is_rejected() {
    let sweep = full_sweep();
    let slow = meter(100, 0, 0.0);
    let fast = meter(1_000_000, 0, 0.0);
    let dut = SimulatedTrace::new(&slow, &sweep.timeline, 0);
    let reference = SimulatedTrace::new(&fast, &sweep.timeline, 0);
    let err = pair(&sweep.log, &dut, &reference).unwrap_err();
    assert!(matches!(err, SyncError::RateTooLow { .. }));
    assert!(err.to_string().contains("T > 1/r_min"), "{err}");
}

#[test]
fn phase_shift_leaves_pairing_unchanged() {
    let sweep = full_sweep();
    let fast = meter(1_000_000, 0, 0.0);
    let reference = SimulatedTrace::new(&fast, &sweep.timeline, 0);
    let base_conv = meter(1_000, 0, 0.0);
    let shifted_conv = meter(1_000, 700, 0.0);
    let base = pair(&sweep.log, &SimulatedTrace::new(&base_conv, &sweep.timeline, 0), &reference).unwrap();
    let shifted = pair(&sweep.log, &SimulatedTrace::new(&shifted_conv, &sweep.timeline, 0), &reference).unwrap();
    let key = |o: &PairedObservations| -> Vec<(usize, f64, f64)> {
        o.pairs.iter().map(|p| (p.step, p.dut_value, p.ref_value)).collect()
    };
    assert_eq!(key(&base), key(&shifted));
    assert_eq!(base.pairs.len(), 16_705);
}

#[test]
fn burst_reference_pairs_like_full_reference() {
    let sweep = full_sweep();
    let fast = meter(1_000_000, 0, 40.0);
    let sim = SimulatedTrace::new(&fast, &sweep.timeline, 5);
    let instants: Vec<u64> = sweep.log.entries.iter().map(|e| e.t_settle_us).collect();
    let bursts = sim.bursts(&instants, 4);
    let dut_conv = meter(1_000, 321, 40.0);
    let dut = SimulatedTrace::new(&dut_conv, &sweep.timeline, 6);
    let lazy = pair(&sweep.log, &dut, &sim).unwrap();
    let burst = pair(&sweep.log, &dut, &bursts).unwrap();
    assert_eq!(lazy, burst);
}

fn trace(times: &[u64]) -> SampleTrace {
    SampleTrace {
        quantity: Quantity::Voltage,
        sample_rate_hz: 1_000_000,
        full_scale: 1.0,
        samples: times
            .iter()
            .map(|&t| Sample {
                t_us: t,
                code: t as u32,
                value: t as f64,
            })
            .collect(),
    }
}

fn one_entry_log(t_settle: u64) -> SettlingLog {
    let sweep = full_sweep();
    let mut e = sweep.log.entries[0];
    e.t_settle_us = t_settle;
    SettlingLog {
        period_us: T,
        entries: vec![e],
        complete: true,
    }
}

#[test]
fn equal_distance_goes_to_the_earlier_sample() {
    let log = one_entry_log(10_000);
    let m = match_trace(&log, &trace(&[9_990, 10_010])).unwrap();
    assert_eq!(m, [StepMatch::Matched { index: 0, t_us: 9_990, value: 9_990.0 }]);
}

#[test]
fn window_is_half_open() {
    let log = one_entry_log(10_000);
    assert!(matches!(match_trace(&log, &trace(&[7_500])).unwrap()[0], StepMatch::Matched { .. }));
    assert_eq!(match_trace(&log, &trace(&[7_499])).unwrap()[0], StepMatch::Skipped);
    assert!(matches!(match_trace(&log, &trace(&[12_499])).unwrap()[0], StepMatch::Matched { .. }));
    assert_eq!(match_trace(&log, &trace(&[12_500])).unwrap()[0], StepMatch::Skipped);
}

#[test]
fn missing_reference_steps_are_skipped_not_invented() {
    let sweep = full_sweep();
    let fast = meter(1_000_000, 0, 0.0);
    let sim = SimulatedTrace::new(&fast, &sweep.timeline, 0);
    // Capture only around every other settling instant.
    let instants: Vec<u64> = sweep.log.entries.iter().step_by(2).map(|e| e.t_settle_us).collect();
    let sparse = sim.bursts(&instants, 4);
    let dut_conv = meter(1_000, 0, 0.0);
    let dut = SimulatedTrace::new(&dut_conv, &sweep.timeline, 0);
    let obs = pair(&sweep.log, &dut, &sparse).unwrap();
    assert_eq!(obs.pairs.len(), instants.len());
    assert_eq!(obs.skipped_ref, sweep.log.entries.len() - instants.len());
    assert_eq!(obs.skipped_dut, 0);
    assert_eq!(obs.skipped_total, obs.skipped_ref);
    assert!(obs.pairs.iter().all(|p| p.step % 2 == 0));
    assert_no_cross_step(sweep, &obs);
    assert_eq!(PairedObservations::parse(&obs.to_text()).unwrap(), obs);
}

#[test]
fn mismatched_quantities_are_rejected() {
    let sweep = full_sweep();
    let fast = meter(1_000_000, 0, 0.0);
    let sim = SimulatedTrace::new(&fast, &sweep.timeline, 0);
    let err = pair(&sweep.log, &sim, &trace(&[1, 2, 3])).unwrap_err();
    assert!(matches!(err, SyncError::QuantityMismatch));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn any_phase_pairs_every_step_without_contamination(phase in 0u64..1_000, seed in any::<u64>()) {
        let sweep = full_sweep();
        let dut_conv = meter(1_000, phase, 25.0);
        let ref_conv = meter(1_000_000, 0, 0.0);
        let dut = SimulatedTrace::new(&dut_conv, &sweep.timeline, seed);
        let reference = SimulatedTrace::new(&ref_conv, &sweep.timeline, 0);
        let obs = pair(&sweep.log, &dut, &reference).unwrap();
        prop_assert_eq!(obs.skipped_total, 0);
        prop_assert_eq!(obs.pairs.len(), 16_705);
        prop_assert!(obs.pairs.iter().enumerate().all(|(k, p)| p.step == k));
        assert_no_cross_step(sweep, &obs);
        // The device sample nearest the settling instant is within half a
        // sample period of it.
        let near = obs
            .pairs
            .iter()
            .all(|p| p.dut_t_us.abs_diff(sweep.log.entries[p.step].t_settle_us) <= 500);
        prop_assert!(near);
    }
}
