//! Fixed-point electrical quantities.
//!
//! Resistances are held in micro-ohms, currents in nanoamps and voltages in
//! microvolts. Every conversion between them rounds exactly once, half away
//! from zero, using 128-bit intermediates.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// Divide with rounding half away from zero. `den` must be non-zero.
pub(crate) fn div_round(num: i128, den: i128) -> i128 {
    debug_assert!(den != 0);
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    if num >= 0 {
        (num + den / 2) / den
    } else {
        -((-num + den / 2) / den)
    }
}

/// Resistance in micro-ohms, i.e. fixed-point milliohms with three extra
/// fractional digits. A 10 kΩ / 256 potentiometer step (39.0625 Ω) is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Resistance(i64);

impl Resistance {
    pub const ZERO: Resistance = Resistance(0);

    pub const fn from_micro_ohms(uohm: i64) -> Self {
        Resistance(uohm)
    }

    pub const fn from_milliohms(mohm: i64) -> Self {
        Resistance(mohm * 1_000)
    }

    pub const fn from_ohms(ohm: i64) -> Self {
        Resistance(ohm * 1_000_000)
    }

    /// Nearest micro-ohm to a floating-point value in ohms.
    pub fn from_ohms_f64(ohm: f64) -> Self {
        Resistance((ohm * 1e6).round() as i64)
    }

    pub const fn micro_ohms(self) -> i64 {
        self.0
    }

    /// Value rounded to the nearest milliohm.
    pub fn milliohms(self) -> i64 {
        div_round(self.0 as i128, 1_000) as i64
    }

    pub fn ohms(self) -> f64 {
        self.0 as f64 / 1e6
    }
}

impl Add for Resistance {
    type Output = Resistance;
    fn add(self, rhs: Resistance) -> Resistance {
        Resistance(self.0 + rhs.0)
    }
}

impl Sub for Resistance {
    type Output = Resistance;
    fn sub(self, rhs: Resistance) -> Resistance {
        Resistance(self.0 - rhs.0)
    }
}

impl fmt::Display for Resistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} Ω", self.ohms())
    }
}

/// Current in nanoamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Current(i64);

impl Current {
    pub const ZERO: Current = Current(0);

    pub const fn from_nanoamps(na: i64) -> Self {
        Current(na)
    }

    pub const fn from_microamps(ua: i64) -> Self {
        Current(ua * 1_000)
    }

    pub const fn from_milliamps(ma: i64) -> Self {
        Current(ma * 1_000_000)
    }

    pub fn from_microamps_f64(ua: f64) -> Self {
        Current((ua * 1e3).round() as i64)
    }

    pub const fn nanoamps(self) -> i64 {
        self.0
    }

    pub fn microamps(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn milliamps(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Exact decimal rendering in microamps with three fractional digits.
    pub fn to_microamp_string(self) -> String {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        format!("{sign}{}.{:03}", abs / 1_000, abs % 1_000)
    }

    /// Parse the rendering produced by [`Current::to_microamp_string`].
    pub fn parse_microamps(text: &str) -> Option<Current> {
        let text = text.trim();
        let (neg, body) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text),
        };
        let (int, frac) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if frac.len() > 3 || int.is_empty() {
            return None;
        }
        let int: i64 = int.parse().ok()?;
        let mut frac_val: i64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
        for _ in frac.len()..3 {
            frac_val *= 10;
        }
        let na = int.checked_mul(1_000)?.checked_add(frac_val)?;
        Some(Current(if neg { -na } else { na }))
    }
}

impl Add for Current {
    type Output = Current;
    fn add(self, rhs: Current) -> Current {
        Current(self.0 + rhs.0)
    }
}

impl AddAssign for Current {
    fn add_assign(&mut self, rhs: Current) {
        self.0 += rhs.0;
    }
}

impl Sub for Current {
    type Output = Current;
    fn sub(self, rhs: Current) -> Current {
        Current(self.0 - rhs.0)
    }
}

impl fmt::Display for Current {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} µA", self.to_microamp_string())
    }
}

/// Voltage in microvolts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Voltage(i64);

impl Voltage {
    pub const ZERO: Voltage = Voltage(0);

    pub const fn from_microvolts(uv: i64) -> Self {
        Voltage(uv)
    }

    pub const fn from_millivolts(mv: i64) -> Self {
        Voltage(mv * 1_000)
    }

    pub const fn from_volts(v: i64) -> Self {
        Voltage(v * 1_000_000)
    }

    pub fn from_volts_f64(v: f64) -> Self {
        Voltage((v * 1e6).round() as i64)
    }

    pub const fn microvolts(self) -> i64 {
        self.0
    }

    pub fn volts(self) -> f64 {
        self.0 as f64 / 1e6
    }
}

impl Sub for Voltage {
    type Output = Voltage;
    fn sub(self, rhs: Voltage) -> Voltage {
        Voltage(self.0 - rhs.0)
    }
}

impl fmt::Display for Voltage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} µV", self.0)
    }
}

/// Ohm's law, I = V / R, rounded to the nearest nanoamp.
///
/// Panics if `r` is zero.
pub fn current_through(v: Voltage, r: Resistance) -> Current {
    // µV / µΩ = A, so scale by 1e9 for nanoamps.
    let na = div_round(v.0 as i128 * 1_000_000_000, r.0 as i128);
    Current(na as i64)
}

/// Ohm's law, V = I · R, rounded to the nearest microvolt.
pub fn voltage_across(i: Current, r: Resistance) -> Voltage {
    // nA · µΩ = 1e-15 V = 1e-9 µV.
    let uv = div_round(i.0 as i128 * r.0 as i128, 1_000_000_000);
    Voltage(uv as i64)
}
