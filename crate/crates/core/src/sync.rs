//! Matching instrument samples to settling instants and joining the device
//! and reference readings into calibration pairs.
//!
//! No clock synchronisation between instruments is assumed: each reading is
//! taken from the sample nearest its step's settling instant, and only when
//! that sample lies inside the step's own hold window.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::circuit::Quantity;
use crate::config::{ConfigError, KvFile};
use crate::instruments::TraceSource;
use crate::sweep::{SettlingEntry, SettlingLog};

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("{name} trace is empty")]
    EmptyTrace { name: &'static str },
    #[error(
        "{name} sampling at {rate_hz} Hz is too slow for a {period_us} µs period: \
         the step period must exceed one sample period (T > 1/r_min)"
    )]
    RateTooLow {
        name: &'static str,
        period_us: u64,
        rate_hz: u64,
    },
    #[error("no step was matched in both traces")]
    NoOverlap,
    #[error("traces disagree on the measured quantity")]
    QuantityMismatch,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("pairs line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{0}")]
    Io(String),
}

/// True iff the period strictly exceeds one sample period.
pub fn check_rate(period_us: u64, rate_hz: u64) -> bool {
    period_us as u128 * rate_hz as u128 > 1_000_000
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMatch {
    Matched { index: usize, t_us: u64, value: f64 },
    Skipped,
}

/// Nearest sample to `t`, ties to the earlier one.
fn nearest<S: TraceSource + ?Sized>(trace: &S, t: u64) -> usize {
    let n = trace.len();
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if trace.time_us(mid) < t {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    // `lo` is the first sample at or after `t`.
    if lo == n {
        return n - 1;
    }
    if lo == 0 {
        return 0;
    }
    let before = t - trace.time_us(lo - 1);
    let after = trace.time_us(lo) - t;
    if before <= after {
        lo - 1
    } else {
        lo
    }
}

fn match_entry<S: TraceSource + ?Sized>(trace: &S, entry: &SettlingEntry, period_us: u64) -> StepMatch {
    let t = entry.t_settle_us;
    let i = nearest(trace, t);
    let ts = trace.time_us(i);
    let half = period_us / 2;
    // Half-open window: the step's own hold interval [t_k, t_k + T).
    if ts + half >= t && ts < t + half {
        StepMatch::Matched {
            index: i,
            t_us: ts,
            value: trace.sample(i).value,
        }
    } else {
        StepMatch::Skipped
    }
}

/// Per-entry match against one trace.
pub fn match_trace<S: TraceSource + ?Sized>(log: &SettlingLog, trace: &S) -> Result<Vec<StepMatch>, SyncError> {
    if trace.is_empty() {
        return Err(SyncError::EmptyTrace { name: "instrument" });
    }
    Ok(log
        .entries
        .iter()
        .map(|e| match_entry(trace, e, log.period_us))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub step: usize,
    pub dut_value: f64,
    pub ref_value: f64,
    pub dut_t_us: u64,
    pub ref_t_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedObservations {
    pub quantity: Quantity,
    pub period_us: u64,
    /// Device full scale in engineering units, for error percentages.
    pub full_scale: f64,
    pub pairs: Vec<Pair>,
    pub skipped_dut: usize,
    pub skipped_ref: usize,
    /// Steps missing from the join (skipped by either instrument).
    pub skipped_total: usize,
}

/// Inner join of per-step matches in log order.
pub fn pair<D: TraceSource + ?Sized, R: TraceSource + ?Sized>(
    log: &SettlingLog,
    dut: &D,
    reference: &R,
) -> Result<PairedObservations, SyncError> {
    if dut.quantity() != reference.quantity() {
        return Err(SyncError::QuantityMismatch);
    }
    for (name, len, rate) in [
        ("device", dut.len(), dut.sample_rate_hz()),
        ("reference", reference.len(), reference.sample_rate_hz()),
    ] {
        if len == 0 {
            return Err(SyncError::EmptyTrace { name });
        }
        if !check_rate(log.period_us, rate) {
            return Err(SyncError::RateTooLow {
                name,
                period_us: log.period_us,
                rate_hz: rate,
            });
        }
    }
    let dm = match_trace(log, dut)?;
    let rm = match_trace(log, reference)?;
    let mut pairs = Vec::with_capacity(log.entries.len());
    let mut skipped_total = 0;
    for ((entry, d), r) in log.entries.iter().zip(&dm).zip(&rm) {
        match (d, r) {
            (
                StepMatch::Matched {
                    t_us: dut_t_us,
                    value: dut_value,
                    ..
                },
                StepMatch::Matched {
                    t_us: ref_t_us,
                    value: ref_value,
                    ..
                },
            ) => pairs.push(Pair {
                step: entry.step,
                dut_value: *dut_value,
                ref_value: *ref_value,
                dut_t_us: *dut_t_us,
                ref_t_us: *ref_t_us,
            }),
            _ => skipped_total += 1,
        }
    }
    if pairs.is_empty() {
        return Err(SyncError::NoOverlap);
    }
    let skipped = |m: &[StepMatch]| m.iter().filter(|x| **x == StepMatch::Skipped).count();
    Ok(PairedObservations {
        quantity: dut.quantity(),
        period_us: log.period_us,
        full_scale: dut.full_scale(),
        pairs,
        skipped_dut: skipped(&dm),
        skipped_ref: skipped(&rm),
        skipped_total,
    })
}

const PAIRS_HEADER: &str = "step,dut_value,ref_value,dut_t_us,ref_t_us";

impl PairedObservations {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(48 * (self.pairs.len() + 8));
        let _ = writeln!(out, "# quantity = {}", self.quantity.as_str());
        let _ = writeln!(out, "# unit = {}", self.quantity.unit());
        let _ = writeln!(out, "# period_us = {}", self.period_us);
        let _ = writeln!(out, "# full_scale = {}", self.full_scale);
        out.push_str(PAIRS_HEADER);
        out.push('\n');
        for p in &self.pairs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.step, p.dut_value, p.ref_value, p.dut_t_us, p.ref_t_us
            );
        }
        let _ = writeln!(out, "# skipped_dut = {}", self.skipped_dut);
        let _ = writeln!(out, "# skipped_ref = {}", self.skipped_ref);
        let _ = writeln!(out, "# skipped_total = {}", self.skipped_total);
        out
    }

    pub fn parse(text: &str) -> Result<PairedObservations, SyncError> {
        let perr = |line: usize, reason: &str| SyncError::Parse {
            line,
            reason: reason.to_string(),
        };
        let mut meta = String::new();
        let mut pairs = Vec::new();
        let mut saw_header = false;
        for (n, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                meta.push_str(rest.trim());
                meta.push('\n');
                continue;
            }
            if !saw_header {
                if line.trim() != PAIRS_HEADER {
                    return Err(perr(n + 1, "missing header"));
                }
                saw_header = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(perr(n + 1, "expected 5 fields"));
            }
            let num = |i: usize| -> Result<f64, SyncError> {
                let v: f64 = f[i].parse().map_err(|_| perr(n + 1, "bad number"))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(perr(n + 1, "non-finite value"))
                }
            };
            pairs.push(Pair {
                step: f[0].parse().map_err(|_| perr(n + 1, "bad step"))?,
                dut_value: num(1)?,
                ref_value: num(2)?,
                dut_t_us: f[3].parse().map_err(|_| perr(n + 1, "bad dut_t_us"))?,
                ref_t_us: f[4].parse().map_err(|_| perr(n + 1, "bad ref_t_us"))?,
            });
        }
        if !saw_header {
            return Err(perr(1, "missing header"));
        }
        let meta = KvFile::parse(&meta)?;
        let quantity = Quantity::parse(meta.require("quantity")?)
            .ok_or_else(|| ConfigError::invalid("quantity", "expected current or voltage"))?;
        let full_scale = meta.f64("full_scale")?;
        if full_scale <= 0.0 {
            return Err(ConfigError::invalid("full_scale", "must be positive").into());
        }
        Ok(PairedObservations {
            quantity,
            period_us: meta.parse_value("period_us")?,
            full_scale,
            pairs,
            skipped_dut: meta.parse_value("skipped_dut")?,
            skipped_ref: meta.parse_value("skipped_ref")?,
            skipped_total: meta.parse_value("skipped_total")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SyncError> {
        std::fs::write(path, self.to_text()).map_err(|e| SyncError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<PairedObservations, SyncError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SyncError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruments::{Sample, SampleTrace};
    use crate::units::{Current, Voltage};

    fn trace(times: &[u64]) -> SampleTrace {
        SampleTrace {
            quantity: Quantity::Current,
            sample_rate_hz: 1_000,
            full_scale: 409_600.0,
            samples: times
                .iter()
                .map(|&t| Sample {
                    t_us: t,
                    code: 0,
                    value: t as f64,
                })
                .collect(),
        }
    }

    fn log(settles: &[u64]) -> SettlingLog {
        SettlingLog {
            period_us: 5_000,
            complete: true,
            entries: settles
                .iter()
                .enumerate()
                .map(|(k, &t)| SettlingEntry {
                    t_settle_us: t,
                    step: k,
                    pot_code: 0,
                    switch_mask: 0,
                    expected_current: Current::ZERO,
                    expected_voltage: Voltage::ZERO,
                })
                .collect(),
        }
    }

    #[test]
    fn rate_rule_is_strict() {
        assert!(check_rate(5_000, 1_000));
        assert!(!check_rate(1_000, 1_000));
        assert!(!check_rate(2_000, 400));
    }

    #[test]
    fn equal_distance_goes_to_earlier_sample() {
        let m = match_trace(&log(&[102_500]), &trace(&[101_000, 102_000, 103_000])).unwrap();
        assert_eq!(
            m[0],
            StepMatch::Matched {
                index: 1,
                t_us: 102_000,
                value: 102_000.0
            }
        );
    }

    #[test]
    fn dropout_skips_steps() {
        let times: Vec<u64> = (0..30_000u64)
            .step_by(1_000)
            .filter(|t| !(10_000..20_000).contains(t))
            .collect();
        let l = log(&[2_500, 7_500, 12_500, 17_500, 22_500, 27_500]);
        let m = match_trace(&l, &trace(&times)).unwrap();
        let skipped: Vec<bool> = m.iter().map(|x| *x == StepMatch::Skipped).collect();
        assert_eq!(skipped, vec![false, false, true, true, false, false]);
    }

    #[test]
    fn window_is_half_open() {
        // Window for settle 7_500 is [5_000, 10_000).
        let l = log(&[7_500]);
        assert!(matches!(match_trace(&l, &trace(&[5_000])).unwrap()[0], StepMatch::Matched { .. }));
        assert_eq!(match_trace(&l, &trace(&[10_000])).unwrap()[0], StepMatch::Skipped);
        assert_eq!(match_trace(&l, &trace(&[4_999])).unwrap()[0], StepMatch::Skipped);
    }

    #[test]
    fn empty_and_slow_traces_are_errors() {
        let l = log(&[2_500]);
        assert!(match_trace(&l, &trace(&[])).is_err());
        let mut slow = trace(&[0, 5_000]);
        slow.sample_rate_hz = 200;
        let err = pair(&l, &slow, &trace(&[2_000])).unwrap_err();
        assert!(err.to_string().contains("T > 1/r_min"), "{err}");
    }

    #[test]
    fn pairs_join_and_round_trip() {
        let l = log(&[2_500, 7_500, 12_500]);
        let dut = trace(&(0..15_000).step_by(1_000).collect::<Vec<_>>());
        let reference = trace(&[2_500, 12_500]);
        let p = pair(&l, &dut, &reference).unwrap();
        assert_eq!(p.pairs.iter().map(|x| x.step).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!((p.skipped_dut, p.skipped_ref, p.skipped_total), (0, 1, 1));
        let text = p.to_text();
        assert!(text.ends_with("# skipped_dut = 0\n# skipped_ref = 1\n# skipped_total = 1\n"));
        assert_eq!(PairedObservations::parse(&text).unwrap(), p);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let l = log(&[2_500]);
        assert!(matches!(
            pair(&l, &trace(&[2_000]), &trace(&[50_000])),
            Err(SyncError::NoOverlap)
        ));
    }
}
