//! Flat `key = value` text files used for board configurations, instrument
//! presets, calibration models, reports and run manifests.
//!
//! Lines starting with `#` are comments. Keys may carry an index suffix such
//! as `bank[3].r_ohm`. Key order is preserved on output.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::circuit::{Board, PotentiometerSpec, ResistorBank, Slot, MAX_SLOTS};
use crate::units::{Current, Resistance, Voltage};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut file = KvFile::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    text: raw.to_string(),
                });
            }
            if file.get(key).is_some() {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
            file.entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| ConfigError::invalid(key, format!("cannot parse {raw:?}")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            Some(_) => self.parse_value(key),
            None => Ok(default),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let v: f64 = self.parse_value(key)?;
        if !v.is_finite() {
            return Err(ConfigError::invalid(key, "value must be finite"));
        }
        Ok(v)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            Some(_) => self.f64(key),
            None => Ok(default),
        }
    }

    /// Values of `prefix[0]`, `prefix[1]`, ... up to the first gap.
    pub fn indexed_f64(&self, prefix: &str) -> Result<Vec<f64>, ConfigError> {
        let mut out = Vec::new();
        loop {
            let key = format!("{prefix}[{}]", out.len());
            if self.get(&key).is_none() {
                return Ok(out);
            }
            out.push(self.f64(&key)?);
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn positive_ohms(file: &KvFile, key: &str) -> Result<Resistance, ConfigError> {
    let ohm = file.f64(key)?;
    if ohm <= 0.0 {
        return Err(ConfigError::invalid(key, "resistance must be positive"));
    }
    Ok(Resistance::from_ohms_f64(ohm))
}

fn non_negative_ohms(file: &KvFile, key: &str, default: Option<f64>) -> Result<Resistance, ConfigError> {
    let ohm = match default {
        Some(d) => file.f64_or(key, d)?,
        None => file.f64(key)?,
    };
    if ohm < 0.0 {
        return Err(ConfigError::invalid(key, "resistance must be non-negative"));
    }
    Ok(Resistance::from_ohms_f64(ohm))
}

/// Read a board from its configuration keys. Every key is required except
/// `pot.inclusive_top_code` and the per-slot switch resistance.
pub fn board_from_kv(file: &KvFile) -> Result<Board, ConfigError> {
    let n_bits: u32 = file.parse_value("pot.n_bits")?;
    if !(1..=16).contains(&n_bits) {
        return Err(ConfigError::invalid("pot.n_bits", "must be in [1, 16]"));
    }
    let pot = PotentiometerSpec {
        n_bits,
        r_max: positive_ohms(file, "pot.r_max_ohm")?,
        r_wiper: non_negative_ohms(file, "pot.r_wiper_ohm", None)?,
        i_rated: {
            let ma = file.f64("pot.i_rated_ma")?;
            if ma <= 0.0 {
                return Err(ConfigError::invalid("pot.i_rated_ma", "rating must be positive"));
            }
            Current::from_microamps_f64(ma * 1e3)
        },
        inclusive_top_code: file.parse_or("pot.inclusive_top_code", true)?,
    };

    let mut slots = Vec::new();
    while file.get(&format!("bank[{}].r_ohm", slots.len())).is_some() {
        let i = slots.len();
        if i == MAX_SLOTS {
            return Err(ConfigError::invalid(
                &format!("bank[{i}].r_ohm"),
                format!("at most {MAX_SLOTS} slots"),
            ));
        }
        slots.push(Slot::new(
            positive_ohms(file, &format!("bank[{i}].r_ohm"))?,
            non_negative_ohms(file, &format!("bank[{i}].r_switch_ohm"), Some(0.0))?,
        ));
    }
    let bank = ResistorBank::new(slots).map_err(|e| ConfigError::invalid("bank", e.to_string()))?;

    let v_in = file.f64("v_in_v")?;
    if v_in <= 0.0 {
        return Err(ConfigError::invalid("v_in_v", "supply must be positive"));
    }

    Ok(Board {
        pot,
        bank,
        r_protect: non_negative_ohms(file, "r_protect_ohm", None)?,
        r_c: positive_ohms(file, "r_c_ohm")?,
        v_in: Voltage::from_volts_f64(v_in),
    })
}

pub fn board_to_kv(board: &Board) -> KvFile {
    let mut file = KvFile::new();
    file.set("pot.n_bits", board.pot.n_bits);
    file.set("pot.r_max_ohm", board.pot.r_max.ohms());
    file.set("pot.r_wiper_ohm", board.pot.r_wiper.ohms());
    file.set("pot.i_rated_ma", board.pot.i_rated.milliamps());
    file.set("pot.inclusive_top_code", board.pot.inclusive_top_code);
    file.set("r_protect_ohm", board.r_protect.ohms());
    file.set("r_c_ohm", board.r_c.ohms());
    for (i, slot) in board.bank.slots().iter().enumerate() {
        file.set(format!("bank[{i}].r_ohm"), slot.r_nominal.ohms());
        file.set(format!("bank[{i}].r_switch_ohm"), slot.r_switch_on.ohms());
    }
    file.set("v_in_v", board.v_in.volts());
    file
}

pub fn load_board(path: &Path) -> Result<Board, ConfigError> {
    board_from_kv(&KvFile::load(path)?)
}

/// The reference board as configuration text.
pub const REFERENCE_BOARD: &str = include_str!("../presets/reference_board.cfg");
