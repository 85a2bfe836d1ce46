//! Command encoding for the potentiometer and switch banks, an ordered
//! session protocol over an abstract transport, and mock, recording and
//! replay backends.
//!
//! Pot codes travel as one byte. Code 256, the inclusive top of an 8-bit
//! part, is sent as `0xFF` with the frame's `top` flag set; the session's
//! start trigger announces whether such frames may appear.

use std::fmt::{self, Write as _};
use std::path::Path;

use thiserror::Error;

use crate::circuit::{Board, CircuitError, ElectricalOutput, OutputMode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HalError {
    #[error("pot code {0} outside valid interval [0, 256]")]
    CodeOutOfRange(u32),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("event log line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error("{0}")]
    Io(String),
}

/// One potentiometer write on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PotWriteFrame {
    pub word: u8,
    /// Set only for code 256, in which case `word` is `0xFF`.
    pub top: bool,
}

impl PotWriteFrame {
    pub fn bytes(&self) -> Vec<u8> {
        if self.top {
            vec![0x01, self.word]
        } else {
            vec![self.word]
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HalError> {
        match *bytes {
            [word] => Ok(PotWriteFrame { word, top: false }),
            [0x01, 0xFF] => Ok(PotWriteFrame {
                word: 0xFF,
                top: true,
            }),
            _ => Err(HalError::Protocol(format!(
                "malformed pot frame {}",
                hex(bytes)
            ))),
        }
    }
}

pub fn encode_pot(code: u32) -> Result<PotWriteFrame, HalError> {
    match code {
        0..=255 => Ok(PotWriteFrame {
            word: code as u8,
            top: false,
        }),
        256 => Ok(PotWriteFrame {
            word: 0xFF,
            top: true,
        }),
        _ => Err(HalError::CodeOutOfRange(code)),
    }
}

pub fn decode_pot(frame: PotWriteFrame) -> u32 {
    if frame.top {
        256
    } else {
        frame.word as u32
    }
}

/// Switch bank drive word; bit `b` closes the switch of slot `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SwitchWord {
    pub mask: u16,
}

impl SwitchWord {
    pub fn bytes(&self) -> Vec<u8> {
        self.mask.to_be_bytes().to_vec()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HalError> {
        let arr: [u8; 2] = bytes
            .try_into()
            .map_err(|_| HalError::Protocol(format!("malformed switch frame {}", hex(bytes))))?;
        Ok(SwitchWord {
            mask: u16::from_be_bytes(arr),
        })
    }
}

pub fn encode_switches(mask: u16) -> SwitchWord {
    SwitchWord { mask }
}

pub fn decode_switches(word: SwitchWord) -> u16 {
    word.mask
}

/// Flags byte carried by the start trigger.
pub const START_FLAG_INCLUSIVE_TOP: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    PotWrite,
    SwitchWrite,
    TriggerStart,
    TriggerStop,
}

impl EventKind {
    pub fn tag(&self) -> &'static str {
        match self {
            EventKind::PotWrite => "POT",
            EventKind::SwitchWrite => "SW",
            EventKind::TriggerStart => "START",
            EventKind::TriggerStop => "STOP",
        }
    }

    pub fn from_tag(tag: &str) -> Option<EventKind> {
        match tag {
            "POT" => Some(EventKind::PotWrite),
            "SW" => Some(EventKind::SwitchWrite),
            "START" => Some(EventKind::TriggerStart),
            "STOP" => Some(EventKind::TriggerStop),
            _ => None,
        }
    }

    pub fn is_write(&self) -> bool {
        matches!(self, EventKind::PotWrite | EventKind::SwitchWrite)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TransportEvent {
    /// Microseconds since sweep start.
    pub t_us: u64,
    pub kind: EventKind,
    pub payload: Vec<u8>,
}

impl fmt::Display for TransportEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.t_us, self.kind.tag(), hex(&self.payload))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02X}");
        s
    })
}

fn unhex(text: &str) -> Option<Vec<u8>> {
    if !text.len().is_multiple_of(2) || !text.is_ascii() {
        return None;
    }
    (0..text.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&text[i..i + 2], 16).ok())
        .collect()
}

/// An ordered, immutable record of one session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub events: Vec<TransportEvent>,
}

impl EventLog {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 16);
        for e in &self.events {
            let _ = writeln!(out, "{e}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, HalError> {
        let mut events = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| HalError::Parse {
                line: n + 1,
                reason: reason.to_string(),
            };
            let mut fields = line.split(',');
            let (Some(t), Some(kind), Some(payload), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(err("expected `t_us,kind,payload_hex`"));
            };
            let t_us = t.parse().map_err(|_| err("bad timestamp"))?;
            let kind = EventKind::from_tag(kind).ok_or_else(|| err("unknown event kind"))?;
            let payload = unhex(payload).ok_or_else(|| err("bad hex payload"))?;
            events.push(TransportEvent {
                t_us,
                kind,
                payload,
            });
        }
        Ok(EventLog { events })
    }

    pub fn save(&self, path: &Path) -> Result<(), HalError> {
        std::fs::write(path, self.to_text()).map_err(|e| HalError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, HalError> {
        let text = std::fs::read_to_string(path).map_err(|e| HalError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Check the `Start (Write)* Stop` shape, strictly increasing time and
    /// well-formed payloads.
    pub fn validate(&self) -> Result<(), HalError> {
        let mut session = Session::new(NullTransport);
        for e in &self.events {
            session.issue(e.clone())?;
        }
        if session.state != SessionState::Stopped {
            return Err(HalError::Protocol("log does not end with a stop trigger".into()));
        }
        Ok(())
    }

    /// Payload bytes of every event, in order.
    pub fn payloads(&self) -> Vec<&[u8]> {
        self.events.iter().map(|e| e.payload.as_slice()).collect()
    }
}

/// Synchronous request/acknowledge link to the hardware. Writes take no
/// simulated time.
pub trait Transport {
    fn send(&mut self, event: &TransportEvent) -> Result<(), HalError>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send(&mut self, event: &TransportEvent) -> Result<(), HalError> {
        (**self).send(event)
    }
}

/// Accepts everything; used to validate logs.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullTransport;

impl Transport for NullTransport {
    fn send(&mut self, _event: &TransportEvent) -> Result<(), HalError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SessionState {
    Idle,
    Running { inclusive_top: bool },
    Stopped,
}

/// Single-owner controller enforcing trigger bracketing and time order.
pub struct Session<T: Transport> {
    transport: T,
    state: SessionState,
    last_t: Option<u64>,
    log: EventLog,
}

impl<T: Transport> Session<T> {
    pub fn new(transport: T) -> Self {
        Session {
            transport,
            state: SessionState::Idle,
            last_t: None,
            log: EventLog::default(),
        }
    }

    pub fn start(&mut self, t_us: u64, inclusive_top: bool) -> Result<(), HalError> {
        let flags = if inclusive_top { START_FLAG_INCLUSIVE_TOP } else { 0 };
        self.issue(TransportEvent {
            t_us,
            kind: EventKind::TriggerStart,
            payload: vec![flags],
        })
    }

    pub fn write_pot(&mut self, t_us: u64, code: u32) -> Result<(), HalError> {
        let frame = encode_pot(code)?;
        self.issue(TransportEvent {
            t_us,
            kind: EventKind::PotWrite,
            payload: frame.bytes(),
        })
    }

    pub fn write_switches(&mut self, t_us: u64, mask: u16) -> Result<(), HalError> {
        self.issue(TransportEvent {
            t_us,
            kind: EventKind::SwitchWrite,
            payload: encode_switches(mask).bytes(),
        })
    }

    pub fn stop(&mut self, t_us: u64) -> Result<(), HalError> {
        self.issue(TransportEvent {
            t_us,
            kind: EventKind::TriggerStop,
            payload: vec![0],
        })
    }

    /// Validate and send one event. The event is logged only once the
    /// transport acknowledges it.
    pub fn issue(&mut self, event: TransportEvent) -> Result<(), HalError> {
        if let Some(last) = self.last_t {
            if event.t_us <= last {
                return Err(HalError::Protocol(format!(
                    "event at t={} not after previous event at t={last}",
                    event.t_us
                )));
            }
        }
        let next = match (self.state, event.kind) {
            (SessionState::Idle, EventKind::TriggerStart) => {
                let [flags] = event.payload[..] else {
                    return Err(HalError::Protocol("start trigger carries one flags byte".into()));
                };
                SessionState::Running {
                    inclusive_top: flags & START_FLAG_INCLUSIVE_TOP != 0,
                }
            }
            (SessionState::Running { inclusive_top }, EventKind::PotWrite) => {
                let frame = PotWriteFrame::from_bytes(&event.payload)?;
                if frame.top && !inclusive_top {
                    return Err(HalError::Protocol(
                        "code 256 sent in a session without the inclusive-top flag".into(),
                    ));
                }
                self.state
            }
            (SessionState::Running { .. }, EventKind::SwitchWrite) => {
                SwitchWord::from_bytes(&event.payload)?;
                self.state
            }
            (SessionState::Running { .. }, EventKind::TriggerStop) => SessionState::Stopped,
            (state, kind) => {
                let when = match state {
                    SessionState::Idle => "before the start trigger",
                    SessionState::Running { .. } => "while running",
                    SessionState::Stopped => "after the stop trigger",
                };
                return Err(HalError::Protocol(format!("{} {when}", kind.tag())));
            }
        };
        self.transport.send(&event)?;
        self.state = next;
        self.last_t = Some(event.t_us);
        self.log.events.push(event);
        Ok(())
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn is_running(&self) -> bool {
        matches!(self.state, SessionState::Running { .. })
    }

    pub fn into_parts(self) -> (T, EventLog) {
        (self.transport, self.log)
    }
}

/// Drives the circuit model from received frames.
#[derive(Debug, Clone)]
pub struct MockTransport {
    board: Board,
    mode: OutputMode,
    pot_code: Option<u32>,
    switch_mask: u16,
    sent: usize,
    fail_after: Option<usize>,
}

impl MockTransport {
    pub fn new(board: Board, mode: OutputMode) -> Self {
        MockTransport {
            board,
            mode,
            pot_code: None,
            switch_mask: 0,
            sent: 0,
            fail_after: None,
        }
    }

    /// Acknowledge the first `n` events, then fail every later one.
    pub fn failing_after(mut self, n: usize) -> Self {
        self.fail_after = Some(n);
        self
    }

    pub fn pot_code(&self) -> Option<u32> {
        self.pot_code
    }

    pub fn switch_mask(&self) -> u16 {
        self.switch_mask
    }

    /// Output of the current state, or `None` before the first pot write.
    pub fn output(&self) -> Option<Result<ElectricalOutput, CircuitError>> {
        self.pot_code
            .map(|code| self.board.output(code, self.switch_mask, self.mode))
    }
}

impl Transport for MockTransport {
    fn send(&mut self, event: &TransportEvent) -> Result<(), HalError> {
        if self.fail_after.is_some_and(|n| self.sent >= n) {
            return Err(HalError::Transport(format!(
                "link dropped at event {} (t={})",
                self.sent, event.t_us
            )));
        }
        match event.kind {
            EventKind::PotWrite => {
                let code = decode_pot(PotWriteFrame::from_bytes(&event.payload)?);
                self.board.pot.check_code(code)?;
                self.pot_code = Some(code);
            }
            EventKind::SwitchWrite => {
                let mask = decode_switches(SwitchWord::from_bytes(&event.payload)?);
                if mask & !self.board.bank.full_mask() != 0 {
                    return Err(HalError::Protocol(format!(
                        "switch word {mask:#06x} drives missing slots"
                    )));
                }
                self.switch_mask = mask;
            }
            EventKind::TriggerStart => {
                self.pot_code = None;
                self.switch_mask = 0;
            }
            EventKind::TriggerStop => {}
        }
        self.sent += 1;
        Ok(())
    }
}

/// Forwards to an inner transport and keeps every acknowledged event.
#[derive(Debug, Clone)]
pub struct Recorder<T: Transport> {
    inner: T,
    recorded: EventLog,
}

impl<T: Transport> Recorder<T> {
    pub fn new(inner: T) -> Self {
        Recorder {
            inner,
            recorded: EventLog::default(),
        }
    }

    pub fn recorded(&self) -> &EventLog {
        &self.recorded
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }

    pub fn into_parts(self) -> (T, EventLog) {
        (self.inner, self.recorded)
    }
}

impl<T: Transport> Transport for Recorder<T> {
    fn send(&mut self, event: &TransportEvent) -> Result<(), HalError> {
        self.inner.send(event)?;
        self.recorded.events.push(event.clone());
        Ok(())
    }
}

/// Re-issues a recorded log, event by event, through a fresh session.
pub struct Replayer {
    log: EventLog,
}

impl Replayer {
    pub fn new(log: EventLog) -> Self {
        Replayer { log }
    }

    /// Replay into `transport`, calling `observe` after each acknowledged
    /// event. Returns the log as re-issued.
    pub fn run<T: Transport>(
        &self,
        transport: T,
        mut observe: impl FnMut(&TransportEvent, &T),
    ) -> Result<(T, EventLog), HalError> {
        let mut session = Session::new(transport);
        for event in &self.log.events {
            session.issue(event.clone())?;
            observe(event, session.transport());
        }
        if session.state != SessionState::Stopped {
            return Err(HalError::Protocol("recorded log has no stop trigger".into()));
        }
        Ok(session.into_parts())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pot_encoding_examples() {
        assert_eq!(encode_pot(0).unwrap().word, 0x00);
        assert_eq!(encode_pot(255).unwrap().word, 0xFF);
        assert_eq!(encode_pot(170).unwrap().word, 0xAA);
        let top = encode_pot(256).unwrap();
        assert_eq!((top.word, top.top), (0xFF, true));
        assert_eq!(decode_pot(top), 256);
        assert_eq!(encode_pot(257), Err(HalError::CodeOutOfRange(257)));
    }

    #[test]
    fn switch_word_is_identity() {
        for mask in [0x0000, 0xFFFF, 0x000F, 0x1234] {
            let w = encode_switches(mask);
            assert_eq!(decode_switches(SwitchWord::from_bytes(&w.bytes()).unwrap()), mask);
        }
        assert_eq!(encode_switches(0x000F).bytes(), vec![0x00, 0x0F]);
    }

    #[test]
    fn empty_session_is_two_triggers() {
        let mut s = Session::new(NullTransport);
        s.start(0, true).unwrap();
        s.stop(1).unwrap();
        let kinds: Vec<EventKind> = s.log().events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::TriggerStart, EventKind::TriggerStop]);
        assert_eq!(s.log().to_text(), "0,START,01\n1,STOP,00\n");
    }

    #[test]
    fn writes_outside_window_are_rejected() {
        let mut s = Session::new(NullTransport);
        assert!(matches!(s.write_pot(0, 3), Err(HalError::Protocol(_))));
        s.start(0, false).unwrap();
        assert!(matches!(s.write_pot(0, 3), Err(HalError::Protocol(_))));
        assert!(matches!(s.write_pot(5, 256), Err(HalError::Protocol(_))));
        s.write_pot(5, 255).unwrap();
        s.stop(6).unwrap();
        assert!(matches!(s.write_switches(7, 1), Err(HalError::Protocol(_))));
        assert!(matches!(s.start(8, false), Err(HalError::Protocol(_))));
        assert_eq!(s.log().events.len(), 3);
    }

    #[test]
    fn log_text_round_trips() {
        let mut s = Session::new(NullTransport);
        s.start(0, true).unwrap();
        s.write_switches(1, 0x00F3).unwrap();
        s.write_pot(2, 256).unwrap();
        s.write_pot(5002, 7).unwrap();
        s.stop(10_002).unwrap();
        let text = s.log().to_text();
        assert_eq!(
            text,
            "0,START,01\n1,SW,00F3\n2,POT,01FF\n5002,POT,07\n10002,STOP,00\n"
        );
        let back = EventLog::parse(&text).unwrap();
        assert_eq!(&back, s.log());
        back.validate().unwrap();
    }

    #[test]
    fn malformed_logs_are_rejected() {
        assert!(EventLog::parse("0,START").is_err());
        assert!(EventLog::parse("0,BOOT,00").is_err());
        assert!(EventLog::parse("x,POT,00").is_err());
        assert!(EventLog::parse("0,POT,0").is_err());
        let unbracketed = EventLog::parse("0,START,00\n1,POT,02\n").unwrap();
        assert!(unbracketed.validate().is_err());
        let backwards = EventLog::parse("5,START,00\n5,STOP,00\n").unwrap();
        assert!(backwards.validate().is_err());
    }

    #[test]
    fn mock_tracks_state_and_fails_on_demand() {
        let board = Board::reference();
        let mode = board.current_mode();
        let mut s = Session::new(MockTransport::new(board.clone(), mode).failing_after(3));
        s.start(0, true).unwrap();
        s.write_switches(1, 0x0001).unwrap();
        assert!(s.transport().output().is_none());
        s.write_pot(2, 100).unwrap();
        let out = s.transport().output().unwrap().unwrap();
        assert_eq!(out, board.output(100, 0x0001, mode).unwrap());
        assert!(matches!(s.write_pot(3, 99), Err(HalError::Transport(_))));
        // The failed write is not logged and does not change state.
        assert_eq!(s.log().events.len(), 3);
        assert_eq!(s.transport().pot_code(), Some(100));
    }

    #[test]
    fn recorder_then_replayer_reproduces_outputs() {
        let board = Board::reference();
        let mode = board.voltage_mode();
        let mut s = Session::new(Recorder::new(MockTransport::new(board.clone(), mode)));
        s.start(0, true).unwrap();
        let mut live = Vec::new();
        for (k, (code, mask)) in [(256, 0u16), (128, 0), (0, 0x0010)].into_iter().enumerate() {
            let t = 10 * k as u64 + 1;
            s.write_switches(t, mask).unwrap();
            s.write_pot(t + 1, code).unwrap();
            live.push(s.transport().inner().output().unwrap().unwrap());
        }
        s.stop(100).unwrap();
        let (recorder, session_log) = s.into_parts();
        let (_, recorded) = recorder.into_parts();
        assert_eq!(recorded, session_log);

        let mut replayed = Vec::new();
        let (_, reissued) = Replayer::new(recorded.clone())
            .run(MockTransport::new(board, mode), |e, t| {
                if e.kind == EventKind::PotWrite {
                    replayed.push(t.output().unwrap().unwrap());
                }
            })
            .unwrap();
        assert_eq!(replayed, live);
        assert_eq!(reissued.payloads(), recorded.payloads());
    }
}
