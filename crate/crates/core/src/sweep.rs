//! Sweep ladder construction, timed execution against a transport, and the
//! settling-time log.
//!
//! The ladder walks coarse slot counts in the outer loop and fine slot counts
//! in the inner loop; within each block the pot code runs from its top code
//! down to 0, so the output rises monotonically. Each step is held for one
//! period `T` and logged at its settling instant, `T/2` after configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::circuit::{Board, CircuitError, ElectricalOutput, OutputMode, Quantity};
use crate::config::{board_from_kv, board_to_kv, ConfigError, KvFile};
use crate::hal::{EventLog, HalError, Session, Transport};
use crate::units::{current_through, Current, Voltage};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{file} line {line}: {reason}")]
    Parse {
        file: &'static str,
        line: usize,
        reason: String,
    },
    #[error("{0}")]
    Io(String),
}

/// Stop condition of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threshold {
    Unbounded,
    /// Current mode: stop at the first step drawing at least this current.
    MaxCurrent(Current),
    /// Voltage mode: stop at the first step whose output is at most this.
    MinVoltage(Voltage),
}

impl Threshold {
    pub fn to_text(self) -> String {
        match self {
            Threshold::Unbounded => "none".into(),
            Threshold::MaxCurrent(i) => format!("i_max_ua:{}", i.to_microamp_string()),
            Threshold::MinVoltage(v) => format!("v_min_uv:{}", v.microvolts()),
        }
    }

    pub fn parse(text: &str) -> Option<Threshold> {
        if text == "none" {
            return Some(Threshold::Unbounded);
        }
        let (tag, value) = text.split_once(':')?;
        match tag {
            "i_max_ua" => Current::parse_microamps(value).map(Threshold::MaxCurrent),
            "v_min_uv" => value
                .parse()
                .ok()
                .map(|uv| Threshold::MinVoltage(Voltage::from_microvolts(uv))),
            _ => None,
        }
    }

    fn reached(self, out: &ElectricalOutput) -> bool {
        match self {
            Threshold::Unbounded => false,
            Threshold::MaxCurrent(i_max) => out.current >= i_max,
            Threshold::MinVoltage(v_min) => out.voltage <= v_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepParams {
    /// Hold time of each step in microseconds. Must be even so the settling
    /// instant `T/2` is a whole microsecond.
    pub period_us: u64,
    pub quantity: Quantity,
    pub threshold: Threshold,
}

impl SweepParams {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.period_us == 0 || !self.period_us.is_multiple_of(2) {
            return Err(SweepError::InvalidParams(format!(
                "period must be a positive even number of microseconds, got {}",
                self.period_us
            )));
        }
        match (self.quantity, self.threshold) {
            (_, Threshold::Unbounded)
            | (Quantity::Current, Threshold::MaxCurrent(_))
            | (Quantity::Voltage, Threshold::MinVoltage(_)) => Ok(()),
            (q, _) => Err(SweepError::InvalidParams(format!(
                "threshold does not apply in {} mode",
                q.as_str()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanStep {
    pub index: usize,
    pub coarse_count: usize,
    pub fine_count: usize,
    pub pot_code: u32,
    pub switch_mask: u16,
    pub expected: ElectricalOutput,
    /// Textbook estimate from nominal parts only: supply over pot resistance
    /// plus supply over each connected slot's nominal resistance.
    pub nominal_current: Current,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepPlan {
    pub board: Board,
    pub params: SweepParams,
    pub steps: Vec<PlanStep>,
    /// The threshold cut the ladder short.
    pub truncated: bool,
}

impl SweepPlan {
    pub fn mode(&self) -> OutputMode {
        self.board.mode_for(self.params.quantity)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            period_us: self.params.period_us,
        }
    }
}

fn nominal_current(board: &Board, pot_code: u32, mask: u16) -> Result<Current, CircuitError> {
    let r_pot = crate::circuit::pot_resistance(&board.pot, pot_code)?;
    let mut total = current_through(board.v_in, r_pot);
    for b in board.bank.enabled(mask) {
        total += current_through(board.v_in, board.bank.slots()[b].r_nominal);
    }
    Ok(total)
}

/// Build the ladder. The step at which the threshold is first reached is
/// kept as the last step of the plan, so a threshold met by the very first
/// configuration still yields a one-step plan.
pub fn build_plan(params: &SweepParams, board: &Board) -> Result<SweepPlan, SweepError> {
    params.validate()?;
    let mode = board.mode_for(params.quantity);
    let mut steps = Vec::new();
    let mut truncated = false;
    'ladder: for block in board.layout().ladder() {
        for pot_code in (0..=board.pot.max_code()).rev() {
            let expected = board.output(pot_code, block.mask, mode)?;
            steps.push(PlanStep {
                index: steps.len(),
                coarse_count: block.coarse_count,
                fine_count: block.fine_count,
                pot_code,
                switch_mask: block.mask,
                expected,
                nominal_current: nominal_current(board, pot_code, block.mask)?,
            });
            if params.threshold.reached(&expected) {
                truncated = true;
                break 'ladder;
            }
        }
    }
    Ok(SweepPlan {
        board: board.clone(),
        params: *params,
        steps,
        truncated,
    })
}

const PLAN_HEADER: &str = "step,coarse,fine,pot_code,switch_mask_hex,exp_i_ua,exp_v_uv,nominal_i_ua";

impl SweepPlan {
    pub fn to_text(&self) -> String {
        let mut meta = KvFile::new();
        meta.set("quantity", self.params.quantity.as_str());
        meta.set("period_us", self.params.period_us);
        meta.set("threshold", self.params.threshold.to_text());
        meta.set("truncated", self.truncated);
        for (k, v) in board_to_kv(&self.board).entries() {
            meta.set(format!("board.{k}"), v);
        }
        let mut out = String::with_capacity(64 * (self.steps.len() + 24));
        for line in meta.to_text().lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str(PLAN_HEADER);
        out.push('\n');
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{:04X},{},{},{}",
                s.index,
                s.coarse_count,
                s.fine_count,
                s.pot_code,
                s.switch_mask,
                s.expected.current.to_microamp_string(),
                s.expected.voltage.microvolts(),
                s.nominal_current.to_microamp_string()
            );
        }
        out
    }

    /// Parse a plan file. Every row's expected values are recomputed from
    /// the embedded board and must match.
    pub fn parse(text: &str) -> Result<SweepPlan, SweepError> {
        let perr = |line: usize, reason: String| SweepError::Parse {
            file: "plan",
            line,
            reason,
        };
        let mut meta_text = String::new();
        let mut rows = Vec::new();
        let mut saw_header = false;
        for (n, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                meta_text.push_str(rest.trim());
                meta_text.push('\n');
            } else if !saw_header {
                if line.trim() != PLAN_HEADER {
                    return Err(perr(n + 1, format!("expected header `{PLAN_HEADER}`")));
                }
                saw_header = true;
            } else if !line.trim().is_empty() {
                rows.push((n + 1, line));
            }
        }
        if !saw_header {
            return Err(perr(1, "missing header".into()));
        }
        let meta = KvFile::parse(&meta_text)?;
        let quantity = Quantity::parse(meta.require("quantity")?)
            .ok_or_else(|| ConfigError::invalid("quantity", "expected current or voltage"))?;
        let threshold = Threshold::parse(meta.require("threshold")?)
            .ok_or_else(|| ConfigError::invalid("threshold", "unrecognised threshold"))?;
        let params = SweepParams {
            period_us: meta.parse_value("period_us")?,
            quantity,
            threshold,
        };
        params.validate()?;
        let truncated = meta.parse_value("truncated")?;
        let mut board_kv = KvFile::new();
        for (k, v) in meta.entries() {
            if let Some(key) = k.strip_prefix("board.") {
                board_kv.set(key, v);
            }
        }
        let board = board_from_kv(&board_kv)?;
        let mode = board.mode_for(quantity);

        let mut steps = Vec::with_capacity(rows.len());
        for (line, row) in rows {
            let f: Vec<&str> = row.split(',').map(str::trim).collect();
            if f.len() != 8 {
                return Err(perr(line, format!("expected 8 fields, got {}", f.len())));
            }
            let int = |i: usize, name: &str| -> Result<u64, SweepError> {
                f[i].parse().map_err(|_| perr(line, format!("bad {name}")))
            };
            let index = int(0, "step")? as usize;
            if index != steps.len() {
                return Err(perr(line, format!("step {index} out of order")));
            }
            let pot_code = u32::try_from(int(3, "pot_code")?).map_err(|_| perr(line, "bad pot_code".into()))?;
            let switch_mask =
                u16::from_str_radix(f[4], 16).map_err(|_| perr(line, "bad switch_mask_hex".into()))?;
            let expected = board
                .output(pot_code, switch_mask, mode)
                .map_err(|e| perr(line, e.to_string()))?;
            let nominal = nominal_current(&board, pot_code, switch_mask)?;
            let file_i = Current::parse_microamps(f[5]).ok_or_else(|| perr(line, "bad exp_i_ua".into()))?;
            let file_v: i64 = f[6].parse().map_err(|_| perr(line, "bad exp_v_uv".into()))?;
            if file_i != expected.current || file_v != expected.voltage.microvolts() {
                return Err(perr(line, "expected values disagree with the circuit model".into()));
            }
            steps.push(PlanStep {
                index,
                coarse_count: int(1, "coarse")? as usize,
                fine_count: int(2, "fine")? as usize,
                pot_code,
                switch_mask,
                expected,
                nominal_current: nominal,
            });
        }
        Ok(SweepPlan {
            board,
            params,
            steps,
            truncated,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SweepError> {
        std::fs::write(path, self.to_text()).map_err(|e| SweepError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<SweepPlan, SweepError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SweepError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Fixed-period timing of a sweep, in microseconds since the start trigger.
///
/// Step `k` is configured by its pot write at `k·T + LEAD_US`; a switch
/// write, when the mask changes, goes out one microsecond earlier. The stop
/// trigger follows at `n·T + LEAD_US`. Instruments capture over `[0, n·T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub period_us: u64,
}

impl Schedule {
    pub const LEAD_US: u64 = 2;

    pub fn configure_time(&self, step: usize) -> u64 {
        step as u64 * self.period_us + Self::LEAD_US
    }

    pub fn switch_time(&self, step: usize) -> u64 {
        self.configure_time(step) - 1
    }

    pub fn settle_time(&self, configured_at: u64) -> u64 {
        configured_at + self.period_us / 2
    }

    pub fn stop_time(&self, n_steps: usize) -> u64 {
        n_steps as u64 * self.period_us + Self::LEAD_US
    }

    pub fn capture_end(&self, n_steps: usize) -> u64 {
        n_steps as u64 * self.period_us
    }
}

/// Source of sweep time.
pub trait Clock {
    fn now_us(&self) -> u64;
    /// Block until `t_us`; returns immediately if it has passed.
    fn wait_until(&mut self, t_us: u64);
}

/// Simulated time that jumps straight to each deadline.
#[derive(Debug, Default, Clone)]
pub struct VirtualClock {
    now: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for VirtualClock {
    fn now_us(&self) -> u64 {
        self.now
    }

    fn wait_until(&mut self, t_us: u64) {
        self.now = self.now.max(t_us);
    }
}

/// Wall-clock time for driving real hardware.
#[derive(Debug, Clone)]
pub struct RealtimeClock {
    origin: Instant,
}

impl RealtimeClock {
    pub fn new() -> Self {
        RealtimeClock {
            origin: Instant::now(),
        }
    }
}

impl Default for RealtimeClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealtimeClock {
    fn now_us(&self) -> u64 {
        self.origin.elapsed().as_micros() as u64
    }

    fn wait_until(&mut self, t_us: u64) {
        let target = self.origin + Duration::from_micros(t_us);
        let now = Instant::now();
        if target > now {
            std::thread::sleep(target - now);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SettlingEntry {
    pub t_settle_us: u64,
    pub step: usize,
    pub pot_code: u32,
    pub switch_mask: u16,
    pub expected_current: Current,
    pub expected_voltage: Voltage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SettlingLog {
    pub period_us: u64,
    pub entries: Vec<SettlingEntry>,
    /// False when the sweep aborted before its stop trigger.
    pub complete: bool,
}

const LOG_HEADER: &str = "t_settle_us,step,pot_code,switch_mask_hex,exp_i_ua,exp_v_uv";

impl SettlingLog {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(48 * (self.entries.len() + 4));
        let _ = writeln!(out, "# period_us = {}", self.period_us);
        let _ = writeln!(out, "# complete = {}", self.complete);
        out.push_str(LOG_HEADER);
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{:04X},{},{}",
                e.t_settle_us,
                e.step,
                e.pot_code,
                e.switch_mask,
                e.expected_current.to_microamp_string(),
                e.expected_voltage.microvolts()
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<SettlingLog, SweepError> {
        let perr = |line: usize, reason: &str| SweepError::Parse {
            file: "settling log",
            line,
            reason: reason.to_string(),
        };
        let mut meta_text = String::new();
        let mut entries = Vec::new();
        let mut saw_header = false;
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if let Some(rest) = line.strip_prefix('#') {
                meta_text.push_str(rest.trim());
                meta_text.push('\n');
                continue;
            }
            if !saw_header {
                if line.trim() != LOG_HEADER {
                    return Err(perr(line_no, "missing header"));
                }
                saw_header = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(perr(line_no, "expected 6 fields"));
            }
            entries.push(SettlingEntry {
                t_settle_us: f[0].parse().map_err(|_| perr(line_no, "bad t_settle_us"))?,
                step: f[1].parse().map_err(|_| perr(line_no, "bad step"))?,
                pot_code: f[2].parse().map_err(|_| perr(line_no, "bad pot_code"))?,
                switch_mask: u16::from_str_radix(f[3], 16).map_err(|_| perr(line_no, "bad switch_mask_hex"))?,
                expected_current: Current::parse_microamps(f[4]).ok_or_else(|| perr(line_no, "bad exp_i_ua"))?,
                expected_voltage: Voltage::from_microvolts(f[5].parse().map_err(|_| perr(line_no, "bad exp_v_uv"))?),
            });
        }
        if !saw_header {
            return Err(perr(1, "missing header"));
        }
        let meta = KvFile::parse(&meta_text)?;
        let log = SettlingLog {
            period_us: meta.parse_value("period_us")?,
            complete: meta.parse_value("complete")?,
            entries,
        };
        log.validate()?;
        Ok(log)
    }

    /// Settling instants strictly increase in steps of exactly one period.
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.period_us == 0 {
            return Err(SweepError::InvalidParams("log period must be positive".into()));
        }
        for w in self.entries.windows(2) {
            if w[1].t_settle_us != w[0].t_settle_us + self.period_us {
                return Err(SweepError::InvalidParams(format!(
                    "settling instants {} and {} are not one period apart",
                    w[0].t_settle_us, w[1].t_settle_us
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), SweepError> {
        std::fs::write(path, self.to_text()).map_err(|e| SweepError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<SettlingLog, SweepError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SweepError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// A sweep that ran to its stop trigger.
#[derive(Debug)]
pub struct SweepRun<T> {
    pub log: SettlingLog,
    pub events: EventLog,
    pub transport: T,
}

/// A sweep cut short by a transport or protocol failure. The log holds
/// every step that settled before the failure and is marked incomplete.
#[derive(Debug, Error)]
#[error("sweep aborted after {} logged steps: {error}", log.entries.len())]
pub struct SweepAbort {
    pub error: HalError,
    pub log: SettlingLog,
    pub events: EventLog,
}

/// Run the plan: start trigger, then for each step an optional switch write,
/// a pot write, a log entry at the settling instant, and finally the stop
/// trigger.
pub fn execute<T: Transport>(
    plan: &SweepPlan,
    transport: T,
    clock: &mut dyn Clock,
) -> Result<SweepRun<T>, Box<SweepAbort>> {
    let sched = plan.schedule();
    let mut session = Session::new(transport);
    let mut log = SettlingLog {
        period_us: sched.period_us,
        entries: Vec::with_capacity(plan.len()),
        complete: false,
    };

    let result = (|| -> Result<(), HalError> {
        clock.wait_until(0);
        session.start(0, plan.board.pot.inclusive_top_code)?;
        let mut mask = None;
        for (k, step) in plan.steps.iter().enumerate() {
            if mask != Some(step.switch_mask) {
                clock.wait_until(sched.switch_time(k));
                session.write_switches(sched.switch_time(k), step.switch_mask)?;
                mask = Some(step.switch_mask);
            }
            let t_k = sched.configure_time(k);
            clock.wait_until(t_k);
            session.write_pot(t_k, step.pot_code)?;
            let t_settle = sched.settle_time(t_k);
            clock.wait_until(t_settle);
            log.entries.push(SettlingEntry {
                t_settle_us: t_settle,
                step: step.index,
                pot_code: step.pot_code,
                switch_mask: step.switch_mask,
                expected_current: step.expected.current,
                expected_voltage: step.expected.voltage,
            });
        }
        let t_stop = sched.stop_time(plan.len());
        clock.wait_until(t_stop);
        session.stop(t_stop)
    })();

    let (transport, events) = session.into_parts();
    match result {
        Ok(()) => {
            log.complete = true;
            Ok(SweepRun {
                log,
                events,
                transport,
            })
        }
        Err(error) => Err(Box::new(SweepAbort { error, log, events })),
    }
}
