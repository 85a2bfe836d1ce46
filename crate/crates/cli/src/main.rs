use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use calrig::calibration::Method;
use calrig::circuit::Quantity;
use calrig::pipeline::{
    board_text, cmd_calibrate, cmd_demo, cmd_pair, cmd_plan, cmd_replay, cmd_sweep, files, summary_header,
    summary_row, threshold_for, PipelineError,
};
use calrig::presets::DEMO_CASES;
use calrig::sweep::SweepParams;
use calrig::units::{Current, Voltage};

#[derive(Parser)]
#[command(name = "calrig", version, about = "Programmable current/voltage source twin for ADC calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Current,
    Voltage,
}

impl From<Mode> for Quantity {
    fn from(m: Mode) -> Quantity {
        match m {
            Mode::Current => Quantity::Current,
            Mode::Voltage => Quantity::Voltage,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a sweep plan and a range report for a board.
    Plan {
        /// Board configuration file (default: the reference board).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "current")]
        mode: Mode,
        /// Configuration period in microseconds (even).
        #[arg(long, default_value_t = 5000)]
        period_us: u64,
        /// Stop once the expected current reaches this many microamps.
        #[arg(long)]
        i_max_ua: Option<String>,
        /// Stop once the expected voltage falls to this many microvolts.
        #[arg(long)]
        v_min_uv: Option<i64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Execute a plan on the simulated board and capture both instruments.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
        /// Device preset name or file.
        #[arg(long)]
        dut_preset: String,
        /// Reference meter preset name or file.
        #[arg(long)]
        dmm_preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the plan's configuration period.
        #[arg(long)]
        period_us: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pair saved traces against a settling log.
    Pair {
        #[arg(long)]
        settling: PathBuf,
        #[arg(long)]
        dut_trace: PathBuf,
        #[arg(long)]
        ref_trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a correction model to paired observations.
    Calibrate {
        #[arg(long)]
        pairs: PathBuf,
        /// poly:N, lut:N or auto.
        #[arg(long, default_value = "auto")]
        method: String,
        /// Score on the training pairs instead of held-out steps.
        #[arg(long)]
        no_holdout: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a shipped case end to end and print before/after errors.
    Demo {
        /// One of the shipped cases, or "all".
        case: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (default: calrig-out/<case>).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Re-run a recorded run from its manifest and compare outputs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn usage(msg: impl Into<String>) -> PipelineError {
    PipelineError::Usage(msg.into())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Plan {
            config,
            mode,
            period_us,
            i_max_ua,
            v_min_uv,
            out_dir,
        } => {
            let i_max = i_max_ua
                .map(|s| Current::parse_microamps(&s).ok_or_else(|| usage(format!("invalid --i-max-ua {s:?}"))))
                .transpose()?;
            let v_min = v_min_uv.map(Voltage::from_microvolts);
            let quantity = Quantity::from(mode);
            let params = SweepParams {
                period_us,
                quantity,
                threshold: threshold_for(quantity, i_max, v_min)?,
            };
            let outcome = cmd_plan(&board_text(config.as_deref())?, &params, &out_dir)?;
            print!("{}", outcome.range_text);
        }
        Command::Sweep {
            plan,
            dut_preset,
            dmm_preset,
            seed,
            period_us,
            out_dir,
        } => {
            let o = cmd_sweep(&plan, &dut_preset, &dmm_preset, seed, period_us, &out_dir)?;
            println!("steps = {}", o.log.entries.len());
            println!("pairs = {}", o.pairs.pairs.len());
            println!("skipped = {}", o.pairs.skipped_total);
            println!("dut_samples = {}", o.dut_trace.samples.len());
            println!("ref_samples = {}", o.ref_trace.samples.len());
        }
        Command::Pair {
            settling,
            dut_trace,
            ref_trace,
            out,
        } => {
            let p = cmd_pair(&settling, &dut_trace, &ref_trace, &out)?;
            println!("pairs = {}", p.pairs.len());
            println!("skipped = {}", p.skipped_total);
        }
        Command::Calibrate {
            pairs,
            method,
            no_holdout,
            out_dir,
        } => {
            let method = Method::parse(&method).map_err(|e| usage(e.to_string()))?;
            let o = cmd_calibrate(&pairs, method, !no_holdout, &out_dir)?;
            print!("{}", o.report_text);
        }
        Command::Demo { case, seed, out_dir } => {
            let cases: Vec<&str> = if case == "all" {
                DEMO_CASES.to_vec()
            } else {
                vec![case.as_str()]
            };
            if let Some(bad) = cases.iter().find(|c| !DEMO_CASES.contains(c)) {
                return Err(usage(format!(
                    "unknown case {bad:?}; valid cases: {}, all",
                    DEMO_CASES.join(", ")
                )));
            }
            let root = out_dir.unwrap_or_else(|| PathBuf::from("calrig-out"));
            println!("{}", summary_header());
            let mut first_err = None;
            for c in cases {
                let dir = if case == "all" || root == Path::new("calrig-out") {
                    root.join(c)
                } else {
                    root.clone()
                };
                match cmd_demo(c, seed, &dir) {
                    Ok(o) => println!("{}", summary_row(c, &o)),
                    Err(e) if case == "all" => {
                        eprintln!("{c}: {e}");
                        first_err.get_or_insert(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
        Command::Replay { manifest, out_dir } => {
            let o = cmd_replay(&manifest, &out_dir)?;
            for role in &o.identical {
                println!("{role}: identical");
            }
            for role in &o.differing {
                println!("{role}: DIFFERS");
            }
            if !o.differing.is_empty() {
                return Err(PipelineError::Failure(format!(
                    "{} of {} outputs differ from {}",
                    o.differing.len(),
                    o.identical.len() + o.differing.len(),
                    files::MANIFEST
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
