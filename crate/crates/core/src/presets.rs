//! Named instrument presets: synthetic stand-ins for four low-cost
//! converters and a bench reference meter, stored as `key = value` files.
//!
//! Device presets also carry the sweep and fit settings of their demo case.
//! Their error terms are synthetic shapes scaled so the uncalibrated error
//! of the demo sweep lands on a published figure; see each file's header.

use std::path::Path;

use thiserror::Error;

use crate::calibration::{CalibrationError, Method};
use crate::circuit::Quantity;
use crate::config::{ConfigError, KvFile};
use crate::instruments::{AdcSpec, InstrumentError, NoiseStream};
use crate::sweep::Threshold;
use crate::units::{Resistance, Voltage};

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset {name:?}; valid presets: {valid}")]
    Unknown { name: String, valid: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("preset {name}: {reason}")]
    Invalid { name: String, reason: String },
}

/// Demo cases, one per device preset.
pub const DEMO_CASES: [&str; 4] = [
    "ina219-current",
    "mcp3208-current",
    "mcp3208-voltage",
    "atmega2560-voltage",
];

pub const REFERENCE_PRESETS: [&str; 2] = ["dmm7510-voltage", "dmm7510-current"];

const BUILTIN: [(&str, &str); 6] = [
    ("ina219-current", include_str!("../presets/ina219-current.cfg")),
    ("mcp3208-current", include_str!("../presets/mcp3208-current.cfg")),
    ("mcp3208-voltage", include_str!("../presets/mcp3208-voltage.cfg")),
    ("atmega2560-voltage", include_str!("../presets/atmega2560-voltage.cfg")),
    ("dmm7510-voltage", include_str!("../presets/dmm7510-voltage.cfg")),
    ("dmm7510-current", include_str!("../presets/dmm7510-current.cfg")),
];

/// Text of a built-in preset.
pub fn builtin_text(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

/// Sweep and fit settings for running a device preset as a demo.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSettings {
    pub quantity: Quantity,
    pub threshold: Threshold,
    pub period_us: u64,
    pub method: Method,
    /// Name of the reference meter preset.
    pub reference: String,
    /// Uncalibrated error the preset was scaled to, percent of full scale.
    pub target_before_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub adc: AdcSpec,
    pub case: Option<CaseSettings>,
}

/// DNL width multipliers `1 + sigma·z_j`, floored at 0.05, with `z_j` drawn
/// from the noise stream of `seed`.
pub fn generated_dnl(n_codes: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let noise = NoiseStream::new(seed);
    (0..n_codes)
        .map(|j| (1.0 + sigma * noise.normal(j as u64)).max(0.05))
        .collect()
}

fn adc_from_kv(f: &KvFile) -> Result<AdcSpec, PresetError> {
    let n_bits: u32 = f.parse_value("adc.n_bits")?;
    let v_fs_uv: i64 = f.parse_value("adc.v_fs_uv")?;
    let shunt = match f.get("adc.shunt_ohm") {
        Some(_) => {
            let ohm = f.f64("adc.shunt_ohm")?;
            if ohm <= 0.0 {
                return Err(ConfigError::invalid("adc.shunt_ohm", "must be positive").into());
            }
            Some(Resistance::from_ohms_f64(ohm))
        }
        None => None,
    };
    let mut dnl = f.indexed_f64("adc.dnl")?;
    if f.get("adc.dnl_sigma").is_some() {
        if !dnl.is_empty() {
            return Err(ConfigError::invalid("adc.dnl_sigma", "conflicts with explicit adc.dnl[] widths").into());
        }
        let codes = 1usize
            .checked_shl(n_bits)
            .ok_or_else(|| ConfigError::invalid("adc.n_bits", "too wide"))?;
        dnl = generated_dnl(codes, f.f64("adc.dnl_sigma")?, f.parse_or("adc.dnl_seed", 0u64)?);
    }
    let spec = AdcSpec {
        n_bits,
        v_fs: Voltage::from_microvolts(v_fs_uv),
        offset_uv: f.f64_or("adc.offset_uv", 0.0)?,
        gain_error_ppm: f.f64_or("adc.gain_error_ppm", 0.0)?,
        inl_coeffs: f.indexed_f64("adc.inl")?,
        dnl_widths: if dnl.is_empty() { None } else { Some(dnl) },
        noise_sigma_uv: f.f64_or("adc.noise_sigma_uv", 0.0)?,
        sample_rate_hz: f.parse_value("adc.sample_rate_hz")?,
        phase_us: f.parse_or("adc.phase_us", 0u64)?,
        shunt,
    };
    spec.validate()?;
    Ok(spec)
}

fn case_from_kv(f: &KvFile, adc: &AdcSpec) -> Result<Option<CaseSettings>, PresetError> {
    if f.get("case.quantity").is_none() {
        return Ok(None);
    }
    let quantity = Quantity::parse(f.require("case.quantity")?)
        .ok_or_else(|| ConfigError::invalid("case.quantity", "expected current or voltage"))?;
    if quantity != adc.quantity() {
        return Err(ConfigError::invalid(
            "case.quantity",
            "must match the converter (a shunt means current)",
        )
        .into());
    }
    let threshold = Threshold::parse(f.require("case.threshold")?)
        .ok_or_else(|| ConfigError::invalid("case.threshold", "expected none, i_max_ua:N or v_min_uv:N"))?;
    Ok(Some(CaseSettings {
        quantity,
        threshold,
        period_us: f.parse_value("case.period_us")?,
        method: Method::parse(f.require("case.method")?)?,
        reference: f.require("case.reference")?.to_string(),
        target_before_pct: f.f64("case.target_before_pct")?,
    }))
}

pub fn parse_preset(text: &str) -> Result<Preset, PresetError> {
    let f = KvFile::parse(text)?;
    let name = f.require("name")?.to_string();
    let adc = adc_from_kv(&f)?;
    let case = case_from_kv(&f, &adc)?;
    Ok(Preset { name, adc, case })
}

/// A built-in preset by name, or a preset file by path.
pub fn load_preset(name_or_path: &str) -> Result<(Preset, String), PresetError> {
    let text = match builtin_text(name_or_path) {
        Some(t) => t.to_string(),
        None if Path::new(name_or_path).is_file() => std::fs::read_to_string(name_or_path)
            .map_err(|e| ConfigError::Io {
                path: name_or_path.to_string(),
                source: e,
            })?,
        None => {
            return Err(PresetError::Unknown {
                name: name_or_path.to_string(),
                valid: builtin_names().collect::<Vec<_>>().join(", "),
            })
        }
    };
    Ok((parse_preset(&text)?, text))
}
