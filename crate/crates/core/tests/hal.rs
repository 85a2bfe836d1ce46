use calrig::circuit::Board;
use calrig::hal::{
    decode_pot, decode_switches, encode_pot, encode_switches, EventKind, EventLog, HalError, MockTransport,
    NullTransport, PotWriteFrame, Recorder, Replayer, Session, SwitchWord,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Pot(u32),
    Switch(u16),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![(0u32..=256).prop_map(Op::Pot), any::<u16>().prop_map(Op::Switch)]
}

#[test]
fn top_code_uses_the_two_byte_frame() {
    assert_eq!(encode_pot(256).unwrap().bytes(), [0x01, 0xFF]);
    assert_eq!(encode_pot(255).unwrap().bytes(), [0xFF]);
    assert!(matches!(encode_pot(257), Err(HalError::CodeOutOfRange(257))));
    assert!(PotWriteFrame::from_bytes(&[0x02, 0xFF]).is_err());
    assert!(PotWriteFrame::from_bytes(&[]).is_err());
}

#[test]
fn switch_word_selects_slots() {
    let b = Board::reference();
    let fine: Vec<usize> = b.bank.enabled(0x000F).collect();
    assert_eq!(fine, [0, 1, 2, 3]);
    assert!(fine.iter().all(|&k| b.bank.slots()[k].r_nominal.ohms() == 250.0));
    assert_eq!(b.bank.enabled(0x0000).count(), 0);
    assert_eq!(b.bank.enabled(0xFFFF).count(), 16);
    assert_eq!(encode_switches(0x1234).bytes(), [0x12, 0x34]);
}

#[test]
fn session_enforces_bracketing_and_order() {
    let mut s = Session::new(NullTransport);
    assert!(s.write_pot(1, 5).is_err(), "write before start");
    s.start(0, true).unwrap();
    s.write_pot(3, 5).unwrap();
    assert!(s.write_pot(3, 6).is_err(), "equal timestamp");
    assert!(s.write_switches(2, 1).is_err(), "earlier timestamp");
    s.stop(10).unwrap();
    assert!(s.write_pot(11, 5).is_err(), "write after stop");
    assert!(s.start(12, true).is_err(), "restart");
    s.log().validate().unwrap();
}

#[test]
fn failed_send_is_not_logged() {
    let b = Board::reference();
    let mut s = Session::new(MockTransport::new(b.clone(), b.current_mode()).failing_after(2));
    s.start(0, true).unwrap();
    s.write_pot(1, 10).unwrap();
    assert!(matches!(s.write_pot(2, 11), Err(HalError::Transport(_))));
    assert_eq!(s.log().events.len(), 2);
    assert_eq!(s.transport().pot_code(), Some(10));
}

#[test]
fn replay_rejects_unterminated_log() {
    let mut s = Session::new(NullTransport);
    s.start(0, true).unwrap();
    s.write_pot(1, 1).unwrap();
    let log = s.log().clone();
    assert!(Replayer::new(log).run(NullTransport, |_, _| {}).is_err());
}

proptest! {
    #[test]
    fn pot_round_trip(code in 0u32..=256) {
        let frame = encode_pot(code).unwrap();
        prop_assert_eq!(decode_pot(frame), code);
        prop_assert_eq!(PotWriteFrame::from_bytes(&frame.bytes()).unwrap(), frame);
    }

    #[test]
    fn switch_round_trip(mask in any::<u16>()) {
        let word = encode_switches(mask);
        prop_assert_eq!(decode_switches(word), mask);
        prop_assert_eq!(SwitchWord::from_bytes(&word.bytes()).unwrap(), word);
    }

    #[test]
    fn mock_state_follows_last_writes(ops in prop::collection::vec(op(), 0..40), voltage in any::<bool>()) {
        let b = Board::reference();
        let mode = if voltage { b.voltage_mode() } else { b.current_mode() };
        let mut s = Session::new(MockTransport::new(b.clone(), mode));
        s.start(0, true).unwrap();
        let (mut pot, mut mask) = (None, 0u16);
        for (k, o) in ops.iter().enumerate() {
            let t = k as u64 + 1;
            match *o {
                Op::Pot(c) => { s.write_pot(t, c).unwrap(); pot = Some(c); }
                Op::Switch(m) => { s.write_switches(t, m).unwrap(); mask = m; }
            }
            let mock = s.transport();
            prop_assert_eq!(mock.pot_code(), pot);
            prop_assert_eq!(mock.switch_mask(), mask);
            match pot {
                Some(c) => prop_assert_eq!(mock.output().unwrap().unwrap(), b.output(c, mask, mode).unwrap()),
                None => prop_assert!(mock.output().is_none()),
            }
        }
        s.stop(ops.len() as u64 + 1).unwrap();
        let log = s.log();
        log.validate().unwrap();
        prop_assert_eq!(log.events.first().unwrap().kind, EventKind::TriggerStart);
        prop_assert_eq!(log.events.last().unwrap().kind, EventKind::TriggerStop);
        prop_assert!(log.events[1..log.events.len() - 1].iter().all(|e| e.kind.is_write()));
        prop_assert!(log.events.windows(2).all(|w| w[0].t_us < w[1].t_us));
    }

    #[test]
    fn recorded_session_replays_identically(ops in prop::collection::vec(op(), 1..30)) {
        let b = Board::reference();
        let mode = b.current_mode();
        let mut s = Session::new(Recorder::new(MockTransport::new(b.clone(), mode)));
        s.start(5, true).unwrap();
        for (k, o) in ops.iter().enumerate() {
            let t = 10 * (k as u64 + 1);
            match *o {
                Op::Pot(c) => s.write_pot(t, c).unwrap(),
                Op::Switch(m) => s.write_switches(t, m).unwrap(),
            }
        }
        s.stop(10 * (ops.len() as u64 + 1)).unwrap();
        let (recorder, log) = s.into_parts();
        let (live, recorded) = recorder.into_parts();
        prop_assert_eq!(&recorded, &log);

        let text = log.to_text();
        let parsed = EventLog::parse(&text).unwrap();
        prop_assert_eq!(&parsed, &log);

        let mut states = Vec::new();
        let (replayed, reissued) = Replayer::new(parsed)
            .run(MockTransport::new(b.clone(), mode), |_, m| states.push((m.pot_code(), m.switch_mask())))
            .unwrap();
        prop_assert_eq!(reissued, log);
        prop_assert_eq!(replayed.pot_code(), live.pot_code());
        prop_assert_eq!(replayed.switch_mask(), live.switch_mask());
        prop_assert_eq!(states.len(), ops.len() + 2);
    }
}
