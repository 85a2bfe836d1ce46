//! Simulated converters: an ideal floor quantizer, a nonideal transfer with
//! offset, gain, INL, DNL and noise, the stimulus timeline they sample, and
//! timestamped sample traces.
//!
//! Noise is counter based: the draw for sample `i` depends only on the seed
//! and `i`, so a trace captured in bursts holds exactly the samples a full
//! capture would have produced at the same instants.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::circuit::{Board, OutputMode, Quantity};
use crate::config::{ConfigError, KvFile};
use crate::hal::{EventLog, HalError, MockTransport, Transport};
use crate::units::{Resistance, Voltage};

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error("invalid converter: {0}")]
    InvalidSpec(String),
    #[error("negative input {0} µV")]
    NegativeInput(f64),
    #[error(transparent)]
    Hal(#[from] HalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{0}")]
    Io(String),
}

/// Converter description. Voltages are in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcSpec {
    pub n_bits: u32,
    pub v_fs: Voltage,
    pub offset_uv: f64,
    pub gain_error_ppm: f64,
    /// `Σ c_k·u^k` added to the input, with `u` the input normalised to
    /// `[0, 1]` of full scale.
    pub inl_coeffs: Vec<f64>,
    /// Relative width of every code; normalised to sum to `2^n` on use.
    pub dnl_widths: Option<Vec<f64>>,
    pub noise_sigma_uv: f64,
    pub sample_rate_hz: u64,
    /// Time of the first sample.
    pub phase_us: u64,
    /// Current sensing: the input current develops `i · shunt` across it.
    pub shunt: Option<Resistance>,
}

impl AdcSpec {
    /// A noiseless, perfectly linear converter.
    pub fn ideal(n_bits: u32, v_fs: Voltage, sample_rate_hz: u64) -> Self {
        AdcSpec {
            n_bits,
            v_fs,
            offset_uv: 0.0,
            gain_error_ppm: 0.0,
            inl_coeffs: Vec::new(),
            dnl_widths: None,
            noise_sigma_uv: 0.0,
            sample_rate_hz,
            phase_us: 0,
            shunt: None,
        }
    }

    pub fn codes(&self) -> u64 {
        1u64 << self.n_bits
    }

    pub fn quantity(&self) -> Quantity {
        if self.shunt.is_some() {
            Quantity::Current
        } else {
            Quantity::Voltage
        }
    }

    pub fn sample_period_us(&self) -> u64 {
        1_000_000 / self.sample_rate_hz
    }

    pub fn validate(&self) -> Result<(), InstrumentError> {
        let bad = |m: String| Err(InstrumentError::InvalidSpec(m));
        if !(1..=24).contains(&self.n_bits) {
            return bad(format!("n_bits must be in [1, 24], got {}", self.n_bits));
        }
        if self.v_fs <= Voltage::ZERO {
            return bad("full scale must be positive".into());
        }
        if self.sample_rate_hz == 0 || 1_000_000 % self.sample_rate_hz != 0 {
            return bad(format!(
                "sample rate {} Hz does not give a whole-microsecond period",
                self.sample_rate_hz
            ));
        }
        if self.phase_us >= self.sample_period_us() {
            return bad(format!(
                "phase {} µs must be below the sample period {} µs",
                self.phase_us,
                self.sample_period_us()
            ));
        }
        let finite = [self.offset_uv, self.gain_error_ppm, self.noise_sigma_uv]
            .iter()
            .chain(&self.inl_coeffs)
            .all(|v| v.is_finite());
        if !finite {
            return bad("error terms must be finite".into());
        }
        if self.noise_sigma_uv < 0.0 {
            return bad("noise sigma must be non-negative".into());
        }
        if self.gain_error_ppm <= -1e6 {
            return bad("gain error must keep the gain positive".into());
        }
        // Bounding the INL slope keeps the transfer strictly increasing.
        let slope: f64 = self
            .inl_coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| k as f64 * c.abs())
            .sum();
        if slope >= self.v_fs.microvolts() as f64 {
            return bad("INL polynomial is steep enough to fold the transfer".into());
        }
        if let Some(w) = &self.dnl_widths {
            if w.len() as u64 != self.codes() {
                return bad(format!("expected {} DNL widths, got {}", self.codes(), w.len()));
            }
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return bad("every DNL width must be positive".into());
            }
        }
        if let Some(s) = self.shunt {
            if s <= Resistance::ZERO {
                return bad("shunt must be positive".into());
            }
        }
        Ok(())
    }
}

/// Ideal code width `V_FS / 2^n` in microvolts. Exact: the divisor is a
/// power of two.
pub fn lsb_uv(spec: &AdcSpec) -> f64 {
    spec.v_fs.microvolts() as f64 / spec.codes() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conversion {
    pub code: u32,
    /// The input fell outside the code range and was clamped.
    pub saturated: bool,
}

/// `⌊2^n · v / V_FS⌋` in integer arithmetic, clamped to the top code.
pub fn quantize_ideal(v_uv: i64, spec: &AdcSpec) -> Result<Conversion, InstrumentError> {
    if v_uv < 0 {
        return Err(InstrumentError::NegativeInput(v_uv as f64));
    }
    let code = ((v_uv as u128) << spec.n_bits) / spec.v_fs.microvolts() as u128;
    let top = spec.codes() as u128 - 1;
    Ok(Conversion {
        code: code.min(top) as u32,
        saturated: code > top,
    })
}

/// Floor quantization of a real-valued level, exact at code edges.
fn floor_quantize(x_uv: f64, n_bits: u32, v_fs_uv: i64) -> Conversion {
    let top = (1u64 << n_bits) - 1;
    if x_uv.is_nan() || x_uv < 0.0 {
        return Conversion {
            code: 0,
            saturated: true,
        };
    }
    let scaled = x_uv * (1u64 << n_bits) as f64;
    let fs = v_fs_uv as f64;
    let mut code = (scaled / fs).floor();
    // Division may round onto an edge; compare exact products instead.
    if (code + 1.0) * fs <= scaled {
        code += 1.0;
    } else if code * fs > scaled {
        code -= 1.0;
    }
    if code > top as f64 {
        Conversion {
            code: top as u32,
            saturated: true,
        }
    } else {
        Conversion {
            code: code as u32,
            saturated: false,
        }
    }
}

/// Standard normal draws indexed by sample number.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    key: [u8; 32],
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream {
            key: ChaCha8Rng::seed_from_u64(seed).get_seed(),
        }
    }

    pub fn normal(&self, index: u64) -> f64 {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_word_pos(index as u128 * 4);
        let u1 = 1.0 - rng.random::<f64>();
        let u2 = rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// A validated spec with its DNL code edges precomputed.
#[derive(Debug, Clone)]
pub struct Converter {
    spec: AdcSpec,
    lsb: f64,
    /// `edges[j]` is the warped lower edge of code `j`; `2^n + 1` entries.
    edges: Option<Vec<f64>>,
}

impl Converter {
    pub fn new(spec: AdcSpec) -> Result<Self, InstrumentError> {
        spec.validate()?;
        let lsb = lsb_uv(&spec);
        let edges = spec.dnl_widths.as_ref().map(|w| {
            let scale = spec.codes() as f64 / w.iter().sum::<f64>();
            let mut edges = Vec::with_capacity(w.len() + 1);
            let mut acc = 0.0;
            edges.push(0.0);
            for &width in w {
                acc += width * scale * lsb;
                edges.push(acc);
            }
            // Pin the last edge to full scale against rounding drift.
            *edges.last_mut().expect("non-empty") = spec.v_fs.microvolts() as f64;
            edges
        });
        Ok(Converter { spec, lsb, edges })
    }

    pub fn spec(&self) -> &AdcSpec {
        &self.spec
    }

    pub fn lsb_uv(&self) -> f64 {
        self.lsb
    }

    /// Input voltage in µV presented to the converter for a stimulus level
    /// (nA through the shunt for current sensing, µV otherwise).
    pub fn input_uv(&self, level: i64) -> f64 {
        match self.spec.shunt {
            // nA · µΩ = 1e-9 µV
            Some(shunt) => level as f64 * shunt.micro_ohms() as f64 / 1e9,
            None => level as f64,
        }
    }

    /// Deterministic part of the transfer: offset, gain, INL, then DNL warp.
    pub fn transfer(&self, v_uv: f64) -> f64 {
        let fs = self.spec.v_fs.microvolts() as f64;
        let mut x = v_uv + self.spec.offset_uv;
        if self.spec.gain_error_ppm != 0.0 {
            x *= 1.0 + self.spec.gain_error_ppm * 1e-6;
        }
        if !self.spec.inl_coeffs.is_empty() {
            let u = (x / fs).clamp(0.0, 1.0);
            x += self.spec.inl_coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c);
        }
        if let Some(edges) = &self.edges {
            x = warp(edges, x, self.lsb);
        }
        x
    }

    /// Convert one input with a given standard normal draw.
    pub fn convert(&self, v_uv: f64, z: f64) -> Result<Conversion, InstrumentError> {
        if v_uv < 0.0 {
            return Err(InstrumentError::NegativeInput(v_uv));
        }
        let mut x = self.transfer(v_uv);
        if self.spec.noise_sigma_uv > 0.0 {
            x += self.spec.noise_sigma_uv * z;
        }
        Ok(floor_quantize(x, self.spec.n_bits, self.spec.v_fs.microvolts()))
    }

    /// Midpoint of a code's ideal interval, in engineering units: µV, or µA
    /// for current sensing.
    pub fn reconstruct(&self, code: u32) -> f64 {
        let uv = (code as f64 + 0.5) * self.lsb;
        match self.spec.shunt {
            // µV / Ω = µA
            Some(shunt) => uv * 1e6 / shunt.micro_ohms() as f64,
            None => uv,
        }
    }

    /// Full-scale input in engineering units.
    pub fn full_scale(&self) -> f64 {
        let uv = self.spec.v_fs.microvolts() as f64;
        match self.spec.shunt {
            Some(shunt) => uv * 1e6 / shunt.micro_ohms() as f64,
            None => uv,
        }
    }
}

/// Map `x` so that ideal quantization of the result lands in the code whose
/// warped interval contains `x`.
fn warp(edges: &[f64], x: f64, lsb: f64) -> f64 {
    let n = edges.len() - 1;
    if x < 0.0 {
        return x;
    }
    if x >= edges[n] {
        return n as f64 * lsb + (x - edges[n]);
    }
    let j = edges.partition_point(|&e| e <= x) - 1;
    (j as f64 + (x - edges[j]) / (edges[j + 1] - edges[j])) * lsb
}

/// One-shot nonideal conversion: builds the converter and draws the noise
/// for `index` from `noise`.
pub fn quantize_nonideal(
    v_uv: f64,
    spec: &AdcSpec,
    noise: &NoiseStream,
    index: u64,
) -> Result<Conversion, InstrumentError> {
    let conv = Converter::new(spec.clone())?;
    let z = if spec.noise_sigma_uv > 0.0 { noise.normal(index) } else { 0.0 };
    conv.convert(v_uv, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub t_start: u64,
    pub t_end: u64,
    /// nA in current mode, µV in voltage mode.
    pub level: i64,
}

/// Piecewise-constant output of the board over a sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusTimeline {
    pub quantity: Quantity,
    pub segments: Vec<Segment>,
}

impl StimulusTimeline {
    pub fn new(quantity: Quantity, segments: Vec<Segment>) -> Result<Self, InstrumentError> {
        for s in &segments {
            if s.t_end <= s.t_start {
                return Err(InstrumentError::InvalidSpec("empty stimulus segment".into()));
            }
        }
        if segments.windows(2).any(|w| w[0].t_end != w[1].t_start) {
            return Err(InstrumentError::InvalidSpec(
                "stimulus segments must be contiguous".into(),
            ));
        }
        Ok(StimulusTimeline { quantity, segments })
    }

    /// Replay an event log through the circuit model and record the output
    /// between events, up to `end_us`. The output is zero until the first
    /// pot write.
    pub fn from_events(
        board: &Board,
        mode: OutputMode,
        events: &EventLog,
        end_us: u64,
    ) -> Result<Self, InstrumentError> {
        let quantity = mode.quantity();
        let mut mock = MockTransport::new(board.clone(), mode);
        let mut segments: Vec<Segment> = Vec::new();
        let mut t = 0u64;
        let mut level = 0i64;
        for event in &events.events {
            if event.t_us >= end_us {
                break;
            }
            if event.t_us > t {
                segments.push(Segment {
                    t_start: t,
                    t_end: event.t_us,
                    level,
                });
                t = event.t_us;
            }
            mock.send(event)?;
            level = match mock.output() {
                Some(out) => out.map_err(HalError::from)?.value(quantity),
                None => 0,
            };
        }
        if end_us > t {
            segments.push(Segment {
                t_start: t,
                t_end: end_us,
                level,
            });
        }
        Self::new(quantity, segments)
    }

    pub fn start(&self) -> u64 {
        self.segments.first().map_or(0, |s| s.t_start)
    }

    pub fn end(&self) -> u64 {
        self.segments.last().map_or(0, |s| s.t_end)
    }

    pub fn level_at(&self, t_us: u64) -> Option<i64> {
        let i = self.segments.partition_point(|s| s.t_end <= t_us);
        self.segments
            .get(i)
            .filter(|s| s.t_start <= t_us)
            .map(|s| s.level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t_us: u64,
    pub code: u32,
    /// Reconstructed reading in µV or µA.
    pub value: f64,
}

/// Read access to a timestamped sample sequence.
pub trait TraceSource {
    fn len(&self) -> usize;
    fn time_us(&self, i: usize) -> u64;
    fn sample(&self, i: usize) -> Sample;
    fn sample_rate_hz(&self) -> u64;
    fn quantity(&self) -> Quantity;
    /// Instrument full scale in the trace's engineering unit.
    fn full_scale(&self) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A materialised trace. Burst captures leave gaps between groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub quantity: Quantity,
    pub sample_rate_hz: u64,
    pub full_scale: f64,
    pub samples: Vec<Sample>,
}

impl TraceSource for SampleTrace {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn time_us(&self, i: usize) -> u64 {
        self.samples[i].t_us
    }

    fn sample(&self, i: usize) -> Sample {
        self.samples[i]
    }

    fn sample_rate_hz(&self) -> u64 {
        self.sample_rate_hz
    }

    fn quantity(&self) -> Quantity {
        self.quantity
    }

    fn full_scale(&self) -> f64 {
        self.full_scale
    }
}

const TRACE_HEADER: &str = "t_us,code,value";

impl SampleTrace {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(24 * (self.samples.len() + 4));
        let _ = writeln!(out, "# quantity = {}", self.quantity.as_str());
        let _ = writeln!(out, "# unit = {}", self.quantity.unit());
        let _ = writeln!(out, "# sample_rate_hz = {}", self.sample_rate_hz);
        let _ = writeln!(out, "# full_scale = {}", self.full_scale);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{}", s.t_us, s.code, s.value);
        }
        out
    }

    pub fn parse(text: &str) -> Result<SampleTrace, InstrumentError> {
        let perr = |line: usize, reason: &str| InstrumentError::Parse {
            line,
            reason: reason.to_string(),
        };
        let mut meta = String::new();
        let mut samples = Vec::new();
        let mut saw_header = false;
        for (n, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                meta.push_str(rest.trim());
                meta.push('\n');
                continue;
            }
            if !saw_header {
                if line.trim() != TRACE_HEADER {
                    return Err(perr(n + 1, "missing header"));
                }
                saw_header = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split(',');
            let (Some(t), Some(code), Some(value), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(perr(n + 1, "expected `t_us,code,value`"));
            };
            let sample = Sample {
                t_us: t.trim().parse().map_err(|_| perr(n + 1, "bad t_us"))?,
                code: code.trim().parse().map_err(|_| perr(n + 1, "bad code"))?,
                value: value.trim().parse().map_err(|_| perr(n + 1, "bad value"))?,
            };
            if samples.last().is_some_and(|p: &Sample| p.t_us >= sample.t_us) {
                return Err(perr(n + 1, "timestamps must strictly increase"));
            }
            samples.push(sample);
        }
        if !saw_header {
            return Err(perr(1, "missing header"));
        }
        let meta = KvFile::parse(&meta)?;
        let quantity = Quantity::parse(meta.require("quantity")?)
            .ok_or_else(|| ConfigError::invalid("quantity", "expected current or voltage"))?;
        Ok(SampleTrace {
            quantity,
            sample_rate_hz: meta.parse_value("sample_rate_hz")?,
            full_scale: meta.f64("full_scale")?,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), InstrumentError> {
        std::fs::write(path, self.to_text()).map_err(|e| InstrumentError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<SampleTrace, InstrumentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InstrumentError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Samples computed on demand from the stimulus, one per sample period from
/// the converter's phase up to the end of the timeline.
#[derive(Debug, Clone)]
pub struct SimulatedTrace<'a> {
    converter: &'a Converter,
    timeline: &'a StimulusTimeline,
    noise: NoiseStream,
    period: u64,
    count: usize,
}

impl<'a> SimulatedTrace<'a> {
    pub fn new(converter: &'a Converter, timeline: &'a StimulusTimeline, seed: u64) -> Self {
        let period = converter.spec().sample_period_us();
        let phase = converter.spec().phase_us + timeline.start();
        let end = timeline.end();
        let count = if end > phase {
            (end - phase).div_ceil(period) as usize
        } else {
            0
        };
        SimulatedTrace {
            converter,
            timeline,
            noise: NoiseStream::new(seed),
            period,
            count,
        }
    }

    /// Every sample.
    pub fn materialize(&self) -> SampleTrace {
        self.collect((0..self.count).collect::<Vec<_>>())
    }

    /// Only the samples within `half_width_us` of each instant, in time
    /// order without repeats.
    pub fn bursts(&self, instants: &[u64], half_width_us: u64) -> SampleTrace {
        let mut indices = Vec::with_capacity(instants.len() * (2 * (half_width_us / self.period) as usize + 2));
        for &c in instants {
            let lo = self.index_at_or_after(c.saturating_sub(half_width_us));
            let hi = self.index_at_or_after(c + half_width_us + 1);
            for i in lo..hi {
                if indices.last().is_none_or(|&l| l < i) {
                    indices.push(i);
                }
            }
        }
        indices.sort_unstable();
        indices.dedup();
        self.collect(indices)
    }

    fn index_at_or_after(&self, t: u64) -> usize {
        let first = self.time_us(0);
        if t <= first {
            return 0;
        }
        (((t - first).div_ceil(self.period)) as usize).min(self.count)
    }

    fn collect(&self, indices: Vec<usize>) -> SampleTrace {
        SampleTrace {
            quantity: self.quantity(),
            sample_rate_hz: self.sample_rate_hz(),
            full_scale: self.full_scale(),
            samples: indices.into_iter().map(|i| self.sample(i)).collect(),
        }
    }
}

impl TraceSource for SimulatedTrace<'_> {
    fn len(&self) -> usize {
        self.count
    }

    fn time_us(&self, i: usize) -> u64 {
        self.timeline.start() + self.converter.spec().phase_us + i as u64 * self.period
    }

    fn sample(&self, i: usize) -> Sample {
        let t_us = self.time_us(i);
        let level = self.timeline.level_at(t_us).unwrap_or(0);
        let v = self.converter.input_uv(level).max(0.0);
        let z = if self.converter.spec().noise_sigma_uv > 0.0 {
            self.noise.normal(i as u64)
        } else {
            0.0
        };
        let conv = self.converter.convert(v, z).expect("input clamped non-negative");
        Sample {
            t_us,
            code: conv.code,
            value: self.converter.reconstruct(conv.code),
        }
    }

    fn sample_rate_hz(&self) -> u64 {
        self.converter.spec().sample_rate_hz
    }

    fn quantity(&self) -> Quantity {
        self.converter.spec().quantity()
    }

    fn full_scale(&self) -> f64 {
        self.converter.full_scale()
    }
}

/// Sample the whole timeline.
pub fn sample(timeline: &StimulusTimeline, spec: &AdcSpec, seed: u64) -> Result<SampleTrace, InstrumentError> {
    let converter = Converter::new(spec.clone())?;
    Ok(SimulatedTrace::new(&converter, timeline, seed).materialize())
}
