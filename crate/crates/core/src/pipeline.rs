//! File-chained commands: plan, sweep, pair, calibrate, the end-to-end demo
//! and manifest replay.
//!
//! Every output is a pure function of the inputs and the seed, and no file
//! records paths or wall-clock times, so repeated runs are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibration::{calibrate, Calibration, CalibrationError, Method};
use crate::circuit::{enumerate_outputs, Board, CircuitError, MaskSet, OutputRange, Quantity};
use crate::config::{board_from_kv, board_to_kv, ConfigError, KvFile, REFERENCE_BOARD};
use crate::hal::{HalError, MockTransport};
use crate::instruments::{Converter, InstrumentError, SampleTrace, SimulatedTrace, StimulusTimeline, TraceSource};
use crate::presets::{load_preset, parse_preset, Preset, PresetError, DEMO_CASES};
use crate::sweep::{build_plan, execute, SettlingLog, SweepAbort, SweepError, SweepParams, SweepPlan, Threshold, VirtualClock};
use crate::sync::{check_rate, pair, PairedObservations, SyncError};
use crate::units::{Current, Voltage};

pub const TOOL_VERSION: &str = concat!("calrig ", env!("CARGO_PKG_VERSION"));

/// Traces longer than this are captured in bursts around settling instants.
pub const FULL_CAPTURE_LIMIT: usize = 4_000_000;
/// Burst half-width in sample periods.
pub const BURST_HALF_WIDTH_SAMPLES: u64 = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Failure(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Validation(_) => 2,
            PipelineError::Failure(_) => 3,
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => PipelineError::Failure(e.to_string()),
            _ => PipelineError::Validation(e.to_string()),
        }
    }
}

impl From<CircuitError> for PipelineError {
    fn from(e: CircuitError) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<SweepError> for PipelineError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Io(_) => PipelineError::Failure(e.to_string()),
            _ => PipelineError::Validation(e.to_string()),
        }
    }
}

impl From<Box<SweepAbort>> for PipelineError {
    fn from(e: Box<SweepAbort>) -> Self {
        PipelineError::Failure(e.to_string())
    }
}

impl From<HalError> for PipelineError {
    fn from(e: HalError) -> Self {
        PipelineError::Failure(e.to_string())
    }
}

impl From<InstrumentError> for PipelineError {
    fn from(e: InstrumentError) -> Self {
        match e {
            InstrumentError::Io(_) | InstrumentError::Hal(_) => PipelineError::Failure(e.to_string()),
            _ => PipelineError::Validation(e.to_string()),
        }
    }
}

impl From<PresetError> for PipelineError {
    fn from(e: PresetError) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<SyncError> for PipelineError {
    fn from(e: SyncError) -> Self {
        match e {
            SyncError::RateTooLow { .. } | SyncError::Parse { .. } | SyncError::Config(_) => {
                PipelineError::Validation(e.to_string())
            }
            _ => PipelineError::Failure(e.to_string()),
        }
    }
}

impl From<CalibrationError> for PipelineError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::InvalidMethod(_) => PipelineError::Usage(e.to_string()),
            CalibrationError::Config(_) => PipelineError::Validation(e.to_string()),
            _ => PipelineError::Failure(e.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    std::fs::write(path, contents).map_err(|e| PipelineError::Failure(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Failure(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path).map_err(|e| PipelineError::Failure(format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Board configuration text: the file at `path`, or the reference board.
pub fn board_text(path: Option<&Path>) -> Result<String, PipelineError> {
    match path {
        Some(p) => read_file(p),
        None => Ok(REFERENCE_BOARD.to_string()),
    }
}

pub fn parse_board(text: &str) -> Result<Board, PipelineError> {
    Ok(board_from_kv(&KvFile::parse(text)?)?)
}

/// Threshold from the mode and the optional limit flags.
pub fn threshold_for(
    quantity: Quantity,
    i_max: Option<Current>,
    v_min: Option<Voltage>,
) -> Result<Threshold, PipelineError> {
    match (quantity, i_max, v_min) {
        (_, Some(_), Some(_)) => Err(PipelineError::Usage(
            "give at most one of --i-max-ua and --v-min-uv".into(),
        )),
        (Quantity::Current, Some(i), None) => Ok(Threshold::MaxCurrent(i)),
        (Quantity::Voltage, None, Some(v)) => Ok(Threshold::MinVoltage(v)),
        (_, None, None) => Ok(Threshold::Unbounded),
        (Quantity::Current, None, Some(_)) => Err(PipelineError::Usage(
            "--v-min-uv applies only in voltage mode".into(),
        )),
        (Quantity::Voltage, Some(_), None) => Err(PipelineError::Usage(
            "--i-max-ua applies only in current mode".into(),
        )),
    }
}

// ---------------------------------------------------------------- plan

#[derive(Debug)]
pub struct PlanOutcome {
    pub plan: SweepPlan,
    pub range: OutputRange,
    pub range_text: String,
}

fn format_value(quantity: Quantity, raw: i64) -> String {
    match quantity {
        Quantity::Current => Current::from_nanoamps(raw).to_microamp_string(),
        Quantity::Voltage => raw.to_string(),
    }
}

/// Range summary of the ladder plus the plan length.
pub fn range_report(plan: &SweepPlan, range: &OutputRange) -> String {
    let q = range.quantity;
    let mut f = KvFile::new();
    f.set("quantity", q.as_str());
    f.set("unit", q.unit());
    f.set("ladder_outputs", range.outputs.len());
    f.set("min", format_value(q, range.min));
    f.set("max", format_value(q, range.max));
    f.set(
        "finest_step",
        range.finest_step.map_or("none".into(), |s| format_value(q, s)),
    );
    f.set(
        "largest_gap",
        range.largest_gap.map_or("none".into(), |s| format_value(q, s)),
    );
    f.set("plan_steps", plan.len());
    f.set("plan_truncated", plan.truncated);
    f.set("threshold", plan.params.threshold.to_text());
    f.to_text()
}

pub fn plan_from_board(board: &Board, params: &SweepParams) -> Result<PlanOutcome, PipelineError> {
    let plan = build_plan(params, board)?;
    let mode = board.mode_for(params.quantity);
    let range = enumerate_outputs(board, mode, board.v_in, &MaskSet::Ladder)?;
    let range_text = range_report(&plan, &range);
    Ok(PlanOutcome {
        plan,
        range,
        range_text,
    })
}

/// Writes `plan.csv` and `range.txt` into `out_dir`.
pub fn cmd_plan(board_cfg: &str, params: &SweepParams, out_dir: &Path) -> Result<PlanOutcome, PipelineError> {
    let board = parse_board(board_cfg)?;
    let outcome = plan_from_board(&board, params)?;
    create_dir(out_dir)?;
    write_file(&out_dir.join(files::PLAN), &outcome.plan.to_text())?;
    write_file(&out_dir.join(files::RANGE), &outcome.range_text)?;
    Ok(outcome)
}

// ---------------------------------------------------------------- sweep

/// Output file names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "board.cfg";
    pub const DUT_PRESET: &str = "dut.cfg";
    pub const DMM_PRESET: &str = "dmm.cfg";
    pub const PLAN: &str = "plan.csv";
    pub const RANGE: &str = "range.txt";
    pub const EVENTS: &str = "events.log";
    pub const SETTLING: &str = "settling.csv";
    pub const DUT_TRACE: &str = "dut_trace.csv";
    pub const REF_TRACE: &str = "ref_trace.csv";
    pub const PAIRS: &str = "pairs.csv";
    pub const MODEL: &str = "model.cfg";
    pub const REPORT: &str = "report.txt";
    pub const RESIDUALS: &str = "residuals.csv";
    pub const MANIFEST: &str = "manifest.cfg";
}

/// Per-run random draws, all derived from the one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub dut_phase_us: u64,
    pub dut_noise_seed: u64,
    pub ref_noise_seed: u64,
}

impl SeedPlan {
    pub fn derive(seed: u64, dut_period_us: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SeedPlan {
            dut_phase_us: rng.random_range(0..dut_period_us),
            dut_noise_seed: rng.random(),
            ref_noise_seed: rng.random(),
        }
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub log: SettlingLog,
    pub dut_trace: SampleTrace,
    pub ref_trace: SampleTrace,
    pub pairs: PairedObservations,
    pub seeds: SeedPlan,
}

fn capture(sim: &SimulatedTrace<'_>, log: &SettlingLog) -> SampleTrace {
    if sim.len() <= FULL_CAPTURE_LIMIT {
        sim.materialize()
    } else {
        let instants: Vec<u64> = log.entries.iter().map(|e| e.t_settle_us).collect();
        let period = 1_000_000 / sim.sample_rate_hz();
        sim.bursts(&instants, BURST_HALF_WIDTH_SAMPLES * period)
    }
}

/// Execute the plan against the mock board and simulate both instruments.
/// The device's sampling phase and both noise streams come from `seed`.
pub fn simulate_sweep(plan: &SweepPlan, dut: &Preset, dmm: &Preset, seed: u64) -> Result<(SweepOutcome, String), PipelineError> {
    let q = plan.params.quantity;
    for (role, p) in [("device", dut), ("reference", dmm)] {
        if p.adc.quantity() != q {
            return Err(PipelineError::Validation(format!(
                "{role} preset {} measures {}, but the plan sweeps {}",
                p.name,
                p.adc.quantity().as_str(),
                q.as_str()
            )));
        }
        if !check_rate(plan.params.period_us, p.adc.sample_rate_hz) {
            return Err(SyncError::RateTooLow {
                name: role,
                period_us: plan.params.period_us,
                rate_hz: p.adc.sample_rate_hz,
            }
            .into());
        }
    }

    let mut dut_spec = dut.adc.clone();
    let seeds = SeedPlan::derive(seed, dut_spec.sample_period_us());
    dut_spec.phase_us = seeds.dut_phase_us;

    let mock = MockTransport::new(plan.board.clone(), plan.mode());
    let run = execute(plan, mock, &mut VirtualClock::new())?;
    let end = plan.schedule().capture_end(plan.len());
    let timeline = StimulusTimeline::from_events(&plan.board, plan.mode(), &run.events, end)?;

    let dut_conv = Converter::new(dut_spec)?;
    let ref_conv = Converter::new(dmm.adc.clone())?;
    let dut_trace = capture(&SimulatedTrace::new(&dut_conv, &timeline, seeds.dut_noise_seed), &run.log);
    let ref_trace = capture(&SimulatedTrace::new(&ref_conv, &timeline, seeds.ref_noise_seed), &run.log);
    let pairs = pair(&run.log, &dut_trace, &ref_trace)?;
    Ok((
        SweepOutcome {
            log: run.log,
            dut_trace,
            ref_trace,
            pairs,
            seeds,
        },
        run.events.to_text(),
    ))
}

/// Writes the event log, settling log, both traces and the pairs file.
pub fn cmd_sweep(
    plan_path: &Path,
    dut_preset: &str,
    dmm_preset: &str,
    seed: u64,
    period_us: Option<u64>,
    out_dir: &Path,
) -> Result<SweepOutcome, PipelineError> {
    let mut plan = SweepPlan::load(plan_path)?;
    if let Some(t) = period_us {
        plan.params.period_us = t;
        plan.params.validate()?;
    }
    let (dut, _) = load_preset(dut_preset)?;
    let (dmm, _) = load_preset(dmm_preset)?;
    let (outcome, events) = simulate_sweep(&plan, &dut, &dmm, seed)?;
    create_dir(out_dir)?;
    write_sweep_files(out_dir, &outcome, &events)?;
    Ok(outcome)
}

fn write_sweep_files(out_dir: &Path, o: &SweepOutcome, events: &str) -> Result<(), PipelineError> {
    write_file(&out_dir.join(files::EVENTS), events)?;
    write_file(&out_dir.join(files::SETTLING), &o.log.to_text())?;
    write_file(&out_dir.join(files::DUT_TRACE), &o.dut_trace.to_text())?;
    write_file(&out_dir.join(files::REF_TRACE), &o.ref_trace.to_text())?;
    write_file(&out_dir.join(files::PAIRS), &o.pairs.to_text())
}

/// Re-pair saved traces against a saved settling log.
pub fn cmd_pair(settling: &Path, dut_trace: &Path, ref_trace: &Path, out: &Path) -> Result<PairedObservations, PipelineError> {
    let log = SettlingLog::load(settling)?;
    let dut = SampleTrace::load(dut_trace)?;
    let reference = SampleTrace::load(ref_trace)?;
    let pairs = pair(&log, &dut, &reference)?;
    write_file(out, &pairs.to_text())?;
    Ok(pairs)
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug)]
pub struct CalibrateOutcome {
    pub calibration: Calibration,
    pub report_text: String,
}

fn calibrate_pairs(
    pairs: &PairedObservations,
    pairs_text: &str,
    method: Method,
    holdout: bool,
    out_dir: &Path,
) -> Result<CalibrateOutcome, PipelineError> {
    let calibration = calibrate(pairs, method, holdout)?;
    let provenance = vec![("pairs_sha256".to_string(), sha256_hex(pairs_text.as_bytes()))];
    let report_text = calibration.report_text();
    create_dir(out_dir)?;
    write_file(&out_dir.join(files::MODEL), &calibration.model_text(&provenance))?;
    write_file(&out_dir.join(files::REPORT), &report_text)?;
    write_file(&out_dir.join(files::RESIDUALS), &calibration.residuals_csv(&pairs.pairs))?;
    Ok(CalibrateOutcome {
        calibration,
        report_text,
    })
}

fn require_improvement(o: &CalibrateOutcome) -> Result<(), PipelineError> {
    let r = &o.calibration.report;
    if r.post.mean_pct_fs >= r.pre.mean_pct_fs {
        return Err(PipelineError::Failure(format!(
            "calibration did not reduce the error: before {:.4}% FS, after {:.4}% FS",
            r.pre.mean_pct_fs, r.post.mean_pct_fs
        )));
    }
    Ok(())
}

/// Writes the model, report and residuals. Fails (after writing) when the
/// corrected error is not below the raw error.
pub fn cmd_calibrate(pairs_path: &Path, method: Method, holdout: bool, out_dir: &Path) -> Result<CalibrateOutcome, PipelineError> {
    let text = read_file(pairs_path)?;
    let pairs = PairedObservations::parse(&text)?;
    let outcome = calibrate_pairs(&pairs, &text, method, holdout, out_dir)?;
    require_improvement(&outcome)?;
    Ok(outcome)
}

// ---------------------------------------------------------------- full runs

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInputs {
    pub board_cfg: String,
    pub dut_preset: String,
    pub dmm_preset: String,
    pub quantity: Quantity,
    pub threshold: Threshold,
    pub period_us: u64,
    pub method: Method,
    pub holdout: bool,
    pub seed: u64,
    pub case: Option<String>,
}

impl RunInputs {
    /// Inputs of a named demo case on the reference board.
    pub fn demo(case: &str, seed: u64) -> Result<RunInputs, PipelineError> {
        if !DEMO_CASES.contains(&case) {
            return Err(PipelineError::Usage(format!(
                "unknown case {case:?}; valid cases: {}",
                DEMO_CASES.join(", ")
            )));
        }
        let (dut, dut_text) = load_preset(case)?;
        let settings = dut
            .case
            .ok_or_else(|| PipelineError::Validation(format!("preset {case} has no case settings")))?;
        let (_, dmm_text) = load_preset(&settings.reference)?;
        Ok(RunInputs {
            board_cfg: REFERENCE_BOARD.to_string(),
            dut_preset: dut_text,
            dmm_preset: dmm_text,
            quantity: settings.quantity,
            threshold: settings.threshold,
            period_us: settings.period_us,
            method: settings.method,
            holdout: true,
            seed,
            case: Some(case.to_string()),
        })
    }
}

/// Manifest of a run directory: inputs, settings, outputs and their hashes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub seed: u64,
    pub case: Option<String>,
    pub quantity: Quantity,
    pub threshold: Threshold,
    pub period_us: u64,
    pub method: Method,
    pub holdout: bool,
    /// (role, file name relative to the manifest, sha256).
    pub files: Vec<(String, String, String)>,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut f = KvFile::new();
        f.set("tool", &self.tool);
        f.set("seed", self.seed);
        if let Some(c) = &self.case {
            f.set("case", c);
        }
        f.set("mode", self.quantity.as_str());
        f.set("threshold", self.threshold.to_text());
        f.set("period_us", self.period_us);
        f.set("method", self.method);
        f.set("holdout", self.holdout);
        for (role, name, hash) in &self.files {
            f.set(format!("file.{role}"), name);
            f.set(format!("sha256.{role}"), hash);
        }
        f.to_text()
    }

    pub fn parse(text: &str) -> Result<RunManifest, PipelineError> {
        let f = KvFile::parse(text)?;
        let quantity = Quantity::parse(f.require("mode")?)
            .ok_or_else(|| ConfigError::invalid("mode", "expected current or voltage"))?;
        let threshold = Threshold::parse(f.require("threshold")?)
            .ok_or_else(|| ConfigError::invalid("threshold", "unrecognised threshold"))?;
        let mut files = Vec::new();
        for (k, v) in f.entries() {
            if let Some(role) = k.strip_prefix("file.") {
                let hash = f.require(&format!("sha256.{role}"))?;
                files.push((role.to_string(), v.to_string(), hash.to_string()));
            }
        }
        Ok(RunManifest {
            tool: f.require("tool")?.to_string(),
            seed: f.parse_value("seed")?,
            case: f.get("case").map(str::to_string),
            quantity,
            threshold,
            period_us: f.parse_value("period_us")?,
            method: Method::parse(f.require("method")?)?,
            holdout: f.parse_value("holdout")?,
            files,
        })
    }

    pub fn file(&self, role: &str) -> Option<&str> {
        self.files.iter().find(|(r, _, _)| r == role).map(|(_, n, _)| n.as_str())
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub inputs: RunInputs,
    pub plan: PlanOutcome,
    pub sweep: SweepOutcome,
    pub calibrate: CalibrateOutcome,
    pub manifest: RunManifest,
}

/// plan → sweep → pair → calibrate into `out_dir`, then the manifest.
/// Does not judge the result; see [`cmd_demo`].
pub fn run_pipeline(inputs: &RunInputs, out_dir: &Path) -> Result<RunOutcome, PipelineError> {
    let board = parse_board(&inputs.board_cfg)?;
    let dut = parse_preset(&inputs.dut_preset)?;
    let dmm = parse_preset(&inputs.dmm_preset)?;
    let params = SweepParams {
        period_us: inputs.period_us,
        quantity: inputs.quantity,
        threshold: inputs.threshold,
    };
    create_dir(out_dir)?;
    // Inputs are stored normalised so the manifest alone reproduces the run.
    let board_text = board_to_kv(&board).to_text();
    write_file(&out_dir.join(files::CONFIG), &board_text)?;
    write_file(&out_dir.join(files::DUT_PRESET), &inputs.dut_preset)?;
    write_file(&out_dir.join(files::DMM_PRESET), &inputs.dmm_preset)?;

    let plan = plan_from_board(&board, &params)?;
    write_file(&out_dir.join(files::PLAN), &plan.plan.to_text())?;
    write_file(&out_dir.join(files::RANGE), &plan.range_text)?;

    let (sweep, events) = simulate_sweep(&plan.plan, &dut, &dmm, inputs.seed)?;
    write_sweep_files(out_dir, &sweep, &events)?;

    let pairs_text = sweep.pairs.to_text();
    let calibrate = calibrate_pairs(&sweep.pairs, &pairs_text, inputs.method, inputs.holdout, out_dir)?;

    let roles = [
        ("config", files::CONFIG),
        ("dut_preset", files::DUT_PRESET),
        ("dmm_preset", files::DMM_PRESET),
        ("plan", files::PLAN),
        ("range", files::RANGE),
        ("events", files::EVENTS),
        ("settling", files::SETTLING),
        ("dut_trace", files::DUT_TRACE),
        ("ref_trace", files::REF_TRACE),
        ("pairs", files::PAIRS),
        ("model", files::MODEL),
        ("report", files::REPORT),
        ("residuals", files::RESIDUALS),
    ];
    let mut manifest_files = Vec::with_capacity(roles.len());
    for (role, name) in roles {
        let bytes = std::fs::read(out_dir.join(name))
            .map_err(|e| PipelineError::Failure(format!("{name}: {e}")))?;
        manifest_files.push((role.to_string(), name.to_string(), sha256_hex(&bytes)));
    }
    let manifest = RunManifest {
        tool: TOOL_VERSION.to_string(),
        seed: inputs.seed,
        case: inputs.case.clone(),
        quantity: inputs.quantity,
        threshold: inputs.threshold,
        period_us: inputs.period_us,
        method: inputs.method,
        holdout: inputs.holdout,
        files: manifest_files,
    };
    write_file(&out_dir.join(files::MANIFEST), &manifest.to_text())?;
    Ok(RunOutcome {
        inputs: inputs.clone(),
        plan,
        sweep,
        calibrate,
        manifest,
    })
}

/// One row of the before/after table.
pub fn summary_row(case: &str, outcome: &RunOutcome) -> String {
    let r = &outcome.calibrate.calibration.report;
    format!(
        "{:<20} {:<8} {:>9} {:>9} {:>9}  {}",
        case,
        outcome.inputs.quantity.as_str(),
        format!("{:.4}%", r.pre.mean_pct_fs),
        format!("{:.4}%", r.post.mean_pct_fs),
        format!("{:.1}x", r.reduction()),
        outcome.calibrate.calibration.model.describe()
    )
}

pub fn summary_header() -> String {
    format!(
        "{:<20} {:<8} {:>9} {:>9} {:>9}  {}",
        "case", "quantity", "before", "after", "reduction", "model"
    )
}

/// Run one demo case under a fresh manifest in `out_dir`.
pub fn cmd_demo(case: &str, seed: u64, out_dir: &Path) -> Result<RunOutcome, PipelineError> {
    let inputs = RunInputs::demo(case, seed)?;
    let outcome = run_pipeline(&inputs, out_dir)?;
    require_improvement(&outcome.calibrate)?;
    Ok(outcome)
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub identical: Vec<String>,
    pub differing: Vec<String>,
}

/// Re-run a recorded run from its manifest and stored inputs into `out_dir`
/// and compare every output against the recorded hashes.
pub fn cmd_replay(manifest_path: &Path, out_dir: &Path) -> Result<ReplayOutcome, PipelineError> {
    let base: PathBuf = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = RunManifest::parse(&read_file(manifest_path)?)?;
    for (role, name, _) in &manifest.files {
        if !base.join(name).is_file() {
            return Err(PipelineError::Validation(format!(
                "manifest entry {role} refers to missing file {name}"
            )));
        }
    }
    let input = |role: &str| -> Result<String, PipelineError> {
        let name = manifest
            .file(role)
            .ok_or_else(|| PipelineError::Validation(format!("manifest lacks file.{role}")))?;
        read_file(&base.join(name))
    };
    let inputs = RunInputs {
        board_cfg: input("config")?,
        dut_preset: input("dut_preset")?,
        dmm_preset: input("dmm_preset")?,
        quantity: manifest.quantity,
        threshold: manifest.threshold,
        period_us: manifest.period_us,
        method: manifest.method,
        holdout: manifest.holdout,
        seed: manifest.seed,
        case: manifest.case.clone(),
    };
    let rerun = run_pipeline(&inputs, out_dir)?;
    let mut identical = Vec::new();
    let mut differing = Vec::new();
    for (role, _, hash) in &manifest.files {
        let same = rerun
            .manifest
            .files
            .iter()
            .any(|(r, _, h)| r == role && h == hash);
        if same {
            identical.push(role.clone());
        } else {
            differing.push(role.clone());
        }
    }
    Ok(ReplayOutcome { identical, differing })
}
