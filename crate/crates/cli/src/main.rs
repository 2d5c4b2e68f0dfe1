use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use duty_energy::presets::preset_source;
use duty_energy::validation::{load_suite, DEFAULT_THRESHOLD_PCT};
use duty_energy::{
    bundled_suite, integrate_trace, label_segments, parse_trace_csv, predict, run_sweep, run_validation_suite,
    segment_trace, synthesize_trace, write_trace_csv, ConfigTable, DurationSeconds, OperatingMode, ParameterCatalog,
    ScenarioProfile, SegmentConfig, SweepAxis,
};

mod render;

pub const CATALOG_ENV: &str = "DUTY_ENERGY_CATALOG";

#[derive(Parser)]
#[command(name = "duty-energy", version, about = "Duty-cycle charge and energy models for a BLE sensor node")]
struct Cli {
    /// Catalog file layered over the built-in parameter catalog.
    #[arg(long, global = true, env = CATALOG_ENV, value_name = "PATH")]
    catalog: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
    /// Write output to a file instead of stdout.
    #[arg(short = 'o', long = "output", global = true, value_name = "PATH")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Predict charge, energy and average current for a scenario.
    Predict {
        /// Scenario file or preset name.
        scenario: String,
        #[arg(long)]
        mode: Option<OperatingMode>,
        /// Override one config key, e.g. `--set t_s=7200`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Compare predictions with measured energies.
    Validate {
        /// Suite index, case file or directory of cases.
        suite: Option<PathBuf>,
        /// Run the bundled eleven-case suite.
        #[arg(long, conflicts_with = "suite")]
        bundled: bool,
        /// Minimum accuracy in percent.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Evaluate a scenario over a grid of config values.
    Sweep {
        scenario: String,
        /// `key=v1,v2,...`; repeat for more axes (first varies slowest).
        #[arg(long = "vary", value_name = "KEY=VALUES")]
        vary: Vec<String>,
    },
    /// Synthesize, integrate and segment current traces.
    #[command(subcommand)]
    Trace(TraceCommand),
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Sample a scenario's current profile to CSV.
    Synth {
        scenario: String,
        #[arg(long, default_value_t = 10_000.0)]
        rate: f64,
        /// Operating time in seconds (overrides the scenario's).
        #[arg(long, conflicts_with = "cycles")]
        duration: Option<f64>,
        /// Operating time as the init sequence plus this many cycles.
        #[arg(long)]
        cycles: Option<u32>,
        /// Relative uniform noise amplitude, e.g. 0.02.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Integrate a trace CSV.
    Integrate {
        file: PathBuf,
        /// Supply voltage for the energy figure.
        #[arg(long, default_value_t = 3.3)]
        voltage: f64,
    },
    /// Split a trace CSV into constant-current segments.
    Segment {
        file: PathBuf,
        #[command(flatten)]
        seg: SegmentArgs,
        /// Label segments with the nearest phase current of this scenario.
        #[arg(long, value_name = "SCENARIO")]
        label_with: Option<String>,
    },
}

#[derive(Args)]
struct SegmentArgs {
    /// Band half-width as a fraction of the trace's current range.
    #[arg(long, default_value_t = 0.05)]
    hysteresis: f64,
    /// Absolute band half-width in mA.
    #[arg(long)]
    band_ma: Option<f64>,
    /// Comma-separated current levels (mA) separating phases.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Shorter segments are absorbed into a neighbour.
    #[arg(long, default_value_t = 0.010)]
    min_duration: f64,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<duty_energy::Error> for Failure {
    fn from(e: duty_energy::Error) -> Self {
        Self {
            code: if e.is_input_error() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let catalog = load_catalog(cli.catalog.as_deref())?;
    let out = Output {
        format: cli.format,
        path: cli.output,
    };
    match cli.command {
        Command::Predict { scenario, mode, set } => {
            let mut table = scenario_table(&scenario)?;
            if let Some(m) = mode {
                table.set("mode", m.as_str())?;
            }
            for kv in &set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Failure::usage(format!("--set `{kv}` must look like key=value")))?;
                table.set(k.trim(), v.trim())?;
            }
            let profile = resolve(&table, &scenario, &catalog)?;
            let report = predict(&profile)?;
            out.emit(|f| render::predict(f, &profile, &report))?;
            Ok(0)
        }
        Command::Validate {
            suite,
            bundled,
            threshold,
        } => {
            let (cases, file_threshold) = match (suite, bundled) {
                (_, true) => (bundled_suite()?, None),
                (Some(p), false) => {
                    let s = load_suite(&p).map_err(|e| Failure::usage(e.to_string()))?;
                    (s.cases, s.threshold_pct)
                }
                (None, false) => return Err(Failure::usage("give a suite path or --bundled")),
            };
            let threshold = threshold.or(file_threshold).unwrap_or(DEFAULT_THRESHOLD_PCT);
            if !threshold.is_finite() {
                return Err(Failure::usage("threshold must be a number"));
            }
            let report = run_validation_suite(&cases, &catalog, threshold);
            if report.aggregate.empty_suite {
                eprintln!("warning: the suite has no cases");
            }
            out.emit(|f| render::validation(f, &report))?;
            Ok(if report.aggregate.pass { 0 } else { 1 })
        }
        Command::Sweep { scenario, vary } => {
            let table = scenario_table(&scenario)?;
            let axes = vary
                .iter()
                .map(|v| SweepAxis::parse(v))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = run_sweep(&table, &axes, &catalog)?;
            out.emit(|f| render::sweep(f, &axes, &rows))?;
            Ok(if rows.iter().any(|r| r.error.is_some()) { 1 } else { 0 })
        }
        Command::Trace(cmd) => run_trace(cmd, &catalog, &out),
    }
}

fn run_trace(cmd: TraceCommand, catalog: &ParameterCatalog, out: &Output) -> CmdResult {
    match cmd {
        TraceCommand::Synth {
            scenario,
            rate,
            duration,
            cycles,
            noise,
            seed,
        } => {
            let mut profile = resolve(&scenario_table(&scenario)?, &scenario, catalog)?;
            let total = match (duration, cycles) {
                (Some(d), _) => Some(d),
                (None, Some(n)) => Some(profile.t_init().value() + f64::from(n) * profile.t_one_cycle().value()),
                (None, None) => None,
            };
            if let Some(t) = total {
                let t = DurationSeconds::new(t).map_err(|e| Failure::usage(e.to_string()))?;
                profile = profile.with_total_time(t).map_err(|e| Failure::usage(e.to_string()))?;
            }
            let mut trace = synthesize_trace(&profile, rate).map_err(|e| Failure::usage(e.to_string()))?;
            if let Some(a) = noise {
                trace = trace.with_uniform_noise(a, seed).map_err(|e| Failure::usage(e.to_string()))?;
            }
            out.write_with(|w| write_trace_csv(&trace, w))?;
            if out.path.is_some() {
                eprintln!(
                    "wrote {} samples at {rate} Hz covering {} s",
                    trace.len(),
                    profile.total_time.value()
                );
            }
            Ok(0)
        }
        TraceCommand::Integrate { file, voltage } => {
            if !(voltage.is_finite() && voltage > 0.0) {
                return Err(Failure::usage("voltage must be positive"));
            }
            let trace = read_trace(&file)?;
            let q = integrate_trace(&trace)?;
            out.emit(|f| render::integration(f, &file, &trace, q, voltage))?;
            Ok(0)
        }
        TraceCommand::Segment { file, seg, label_with } => {
            let trace = read_trace(&file)?;
            let config = SegmentConfig {
                hysteresis_frac: seg.hysteresis,
                band_ma: seg.band_ma,
                thresholds: seg.thresholds,
                min_segment_duration_s: seg.min_duration,
            };
            let mut segments = segment_trace(&trace, &config)?;
            if let Some(s) = label_with {
                let profile = resolve(&scenario_table(&s)?, &s, catalog)?;
                let phases: Vec<_> = profile
                    .init_phases()
                    .iter()
                    .chain(profile.cycle_phases())
                    .copied()
                    .collect();
                label_segments(&mut segments, &phases);
            }
            out.emit(|f| render::segments(f, &file, &segments))?;
            Ok(0)
        }
    }
}

fn load_catalog(path: Option<&Path>) -> Result<ParameterCatalog, Failure> {
    let base = ParameterCatalog::builtin();
    let Some(path) = path.filter(|p| !p.as_os_str().is_empty()) else {
        return Ok(base);
    };
    let src = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read catalog {}: {e}", path.display())))?;
    base.with_overlay_str(&src)
        .map_err(|e| Failure::usage(format!("catalog {}: {e}", path.display())))
}

/// A scenario argument names a file, a file without its `.toml` suffix,
/// or a bundled preset.
fn scenario_table(arg: &str) -> Result<ConfigTable, Failure> {
    let direct = PathBuf::from(arg);
    let with_ext = PathBuf::from(format!("{arg}.toml"));
    for p in [&direct, &with_ext] {
        if p.is_file() {
            return Ok(ConfigTable::from_file(p)?);
        }
    }
    match preset_source(arg) {
        Some(src) => Ok(ConfigTable::parse(src, None)?),
        None => Err(Failure::usage(format!("no scenario file or preset named `{arg}`"))),
    }
}

fn resolve(table: &ConfigTable, arg: &str, catalog: &ParameterCatalog) -> Result<ScenarioProfile, Failure> {
    let mut profile = table.to_config()?.resolve(catalog)?;
    if profile.name.is_none() {
        let stem = Path::new(arg).file_stem().map(|s| s.to_string_lossy().into_owned());
        profile.name = stem;
    }
    Ok(profile)
}

fn read_trace(path: &Path) -> Result<duty_energy::CurrentTrace, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    parse_trace_csv(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

struct Output {
    format: Format,
    path: Option<PathBuf>,
}

impl Output {
    fn emit(&self, f: impl FnOnce(Format) -> String) -> Result<(), Failure> {
        let text = f(self.format);
        self.write_with(|w| w.write_all(text.as_bytes()))
    }

    fn write_with(&self, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
        let result = match &self.path {
            Some(p) => fs::File::create(p).and_then(|file| {
                let mut w = io::BufWriter::new(file);
                f(&mut w)?;
                w.flush()
            }),
            None => {
                let stdout = io::stdout();
                let mut w = io::BufWriter::new(stdout.lock());
                f(&mut w).and_then(|_| w.flush())
            }
        };
        match result {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            Err(e) => Err(Failure::usage(format!("cannot write output: {e}"))),
            Ok(()) => Ok(()),
        }
    }
}
