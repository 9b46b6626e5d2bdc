//! Command-line front end.
//!
//! All logic lives here so it can be driven from tests; the binary only
//! forwards `std::env::args` to [`run`]. Every command is deterministic in
//! its flags and `--seed`.
//!
//! Grid flags of `scan` take comma-separated items, each either a number or
//! an inclusive linear range `start:stop:count` (`count = 0` is empty).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::geometry::{self, BilliardTable, GeometryError, GrowthMode, GrowthRecord, VerificationReport, CLOSURE_TOL};
use crate::numfmt::{fmt17, serialize_f64, Fixed17};
use crate::stability::{self, Classification, SolverOptions, StabilityError, StabilityReport, PARABOLIC_TOL};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_250_101;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFICATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "billiard3d", version, about = "Stability of periodic orbits in 3D billiards with spherical mirrors")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    pub format: Format,
    /// Seed for perturbation directions.
    #[arg(long, default_value_t = DEFAULT_SEED, global = true)]
    pub seed: u64,
    /// Classification band (trace, scan), root tolerance (intervals) or
    /// verification tolerance (build-verify, simulate).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct Angle {
    /// Reflection angle in degrees.
    #[arg(long, allow_negative_numbers = true)]
    pub phi_deg: Option<f64>,
    /// Reflection angle in radians.
    #[arg(long, allow_negative_numbers = true)]
    pub phi_rad: Option<f64>,
}

impl Angle {
    fn radians(&self) -> f64 {
        to_radians(self.phi_deg, self.phi_rad).expect("clap enforces one angle flag")
    }
}

#[derive(Debug, Clone, Args)]
#[group(required = false, multiple = false)]
pub struct OptionalAngle {
    /// Reflection angle in degrees.
    #[arg(long, allow_negative_numbers = true)]
    pub phi_deg: Option<f64>,
    /// Reflection angle in radians.
    #[arg(long, allow_negative_numbers = true)]
    pub phi_rad: Option<f64>,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct AngleGrid {
    /// Angles in degrees: list and/or `start:stop:count` ranges.
    #[arg(long)]
    pub phi_deg: Option<String>,
    /// Angles in radians: list and/or `start:stop:count` ranges.
    #[arg(long)]
    pub phi_rad: Option<String>,
}

fn to_radians(deg: Option<f64>, rad: Option<f64>) -> Option<f64> {
    deg.map(f64::to_radians).or(rad)
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Trace and eigenvalues of the period block at one (l, phi).
    Trace {
        #[arg(long, allow_negative_numbers = true)]
        l: f64,
        #[command(flatten)]
        angle: Angle,
    },
    /// Stable intervals and the window above 1/cos(phi).
    Intervals {
        #[arg(long, allow_negative_numbers = true)]
        l_max: f64,
        #[command(flatten)]
        angle: Angle,
    },
    /// Trace and class over a (phi, l) grid as CSV.
    Scan {
        #[command(flatten)]
        phi: AngleGrid,
        /// Flight lengths: list and/or `start:stop:count` ranges.
        #[arg(long, allow_hyphen_values = true)]
        l: String,
    },
    /// Build a table and run the verification checks on it.
    BuildVerify {
        /// 3: six spheres at 45°; 4: spheres plus flat mirrors.
        #[arg(long, value_parser = clap::value_parser!(u8).range(3..=4))]
        section: u8,
        #[arg(long, allow_negative_numbers = true)]
        l: f64,
        #[command(flatten)]
        angle: OptionalAngle,
        /// Also write the verification report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-period perturbation growth on a table written by build-verify.
    Simulate {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 100)]
        periods: usize,
        #[arg(long, value_enum, default_value_t = SimMode::Both)]
        mode: SimMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimMode {
    Linearized,
    Nonlinear,
    Both,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Verification(String),
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Verification(m) | CliError::Solver(m) => m,
        }
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::BadAngle(..) | StabilityError::BadLength(_) => CliError::Usage(e.to_string()),
            StabilityError::SolverFailure { .. } | StabilityError::DegenerateWindow { .. } => {
                CliError::Solver(e.to_string())
            }
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::BadParameter(_) | GeometryError::Json(_) => CliError::Usage(e.to_string()),
            GeometryError::Richardson(_) | GeometryError::Differencing { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Verification(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Usage(format!("{}: {e}", path.display()))
}

/// Parse `args` (program name first) and run. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match execute(&config, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Run an already-parsed configuration.
pub fn execute(config: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let common = &config.common;
    if let Some(t) = common.tol {
        if !(t.is_finite() && t > 0.0) {
            return Err(CliError::Usage(format!("--tol must be positive, got {t}")));
        }
    }
    let text = match &config.command {
        Command::Trace { l, angle } => cmd_trace(*l, angle.radians(), common)?,
        Command::Intervals { l_max, angle } => cmd_intervals(*l_max, angle.radians(), common)?,
        Command::Scan { phi, l } => cmd_scan(phi, l, common)?,
        Command::BuildVerify { section, l, angle, report } => {
            let phi = to_radians(angle.phi_deg, angle.phi_rad);
            return cmd_build_verify(*section, *l, phi, report.as_deref(), common, stdout, stderr);
        }
        Command::Simulate { table, eps, periods, mode } => cmd_simulate(table, *eps, *periods, *mode, common, stderr)?,
    };
    emit(&text, common.out.as_deref(), stdout)?;
    Ok(EXIT_OK)
}

fn emit(text: &str, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(io_err(path)),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| CliError::Solver(format!("serialization: {e}")))
}

#[derive(Serialize)]
struct TraceRecord {
    #[serde(serialize_with = "serialize_f64")]
    phi: f64,
    #[serde(serialize_with = "serialize_f64")]
    l: f64,
    #[serde(serialize_with = "serialize_f64")]
    trace: f64,
    class: stability::StabilityClass,
    eigenvalues: [[Fixed17; 2]; 2],
}

/// Trace and eigenvalues at one point.
pub fn cmd_trace(l: f64, phi: f64, common: &Common) -> Result<String, CliError> {
    let trace = stability::trace_value(l, phi)?;
    let c = Classification::with_band(trace, common.tol.unwrap_or(PARABOLIC_TOL));
    let eig = c.eigenvalues.map(|z| [Fixed17(z.re), Fixed17(z.im)]);
    match common.format {
        Format::Json => to_json(&TraceRecord { phi, l, trace, class: c.class, eigenvalues: eig }),
        Format::Csv => {
            let e = c.eigenvalues;
            Ok(format!(
                "phi,l,trace,class,lambda1_re,lambda1_im,lambda2_re,lambda2_im\n{},{},{},{},{},{},{},{}\n",
                fmt17(phi),
                fmt17(l),
                fmt17(trace),
                c.class,
                fmt17(e[0].re),
                fmt17(e[0].im),
                fmt17(e[1].re),
                fmt17(e[1].im)
            ))
        }
    }
}

pub const INTERVALS_CSV_HEADER: &str = "kind,l_lo,l_hi,trace,level,flag";

/// Intervals report.
///
/// CSV rows: `interval` (flag = truncated at `l_max`), `crossing`,
/// `tangency` or `exception` (flag = tangency), and a final `window` row
/// spanning `(1/cos phi, 1/cos phi + eps)` when one exists.
pub fn cmd_intervals(l_max: f64, phi: f64, common: &Common) -> Result<String, CliError> {
    let mut opts = SolverOptions::default();
    if let Some(t) = common.tol {
        opts.root_tol = t;
    }
    let report = stability::stability_intervals_with(phi, l_max, &opts)?;
    match common.format {
        Format::Json => to_json(&report),
        Format::Csv => Ok(intervals_csv(&report)),
    }
}

fn intervals_csv(report: &StabilityReport) -> String {
    let mut s = format!("{INTERVALS_CSV_HEADER}\n");
    for iv in &report.intervals {
        s += &format!("interval,{},{},,,{}\n", fmt17(iv.lo), fmt17(iv.hi), iv.truncated);
    }
    for cp in &report.critical_points {
        let kind = if report.exception_points.contains(cp) {
            "exception"
        } else if cp.tangency {
            "tangency"
        } else {
            "crossing"
        };
        s += &format!(
            "{kind},{},{},{},{},{}\n",
            fmt17(cp.l),
            fmt17(cp.l),
            fmt17(cp.trace),
            fmt17(cp.level),
            cp.tangency
        );
    }
    if let Some(eps) = report.window {
        let start = 1.0 / report.phi.cos();
        let trace = stability::trace_value(start, report.phi).unwrap_or(f64::NAN);
        s += &format!("window,{},{},{},{},false\n", fmt17(start), fmt17(start + eps), fmt17(trace), fmt17(-2.0));
    }
    s
}

/// Parse a grid flag: comma-separated numbers and `start:stop:count` ranges.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = |item: &str| CliError::Usage(format!("bad grid item '{item}' (want a number or start:stop:count)"));
    let num = |t: &str, item: &str| {
        t.trim().parse::<f64>().map_err(|_| bad(item)).and_then(|x| if x.is_finite() { Ok(x) } else { Err(bad(item)) })
    };
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            [x] => out.push(num(x, item)?),
            [a, b, n] => {
                let (a, b) = (num(a, item)?, num(b, item)?);
                let n: usize = n.trim().parse().map_err(|_| bad(item))?;
                match n {
                    0 => {}
                    1 => out.push(a),
                    _ => out.extend((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64)),
                }
            }
            _ => return Err(bad(item)),
        }
    }
    Ok(out)
}

/// Grid scan as CSV (`--format json` gives an array of rows).
pub fn cmd_scan(phi: &AngleGrid, l: &str, common: &Common) -> Result<String, CliError> {
    let phis = match (&phi.phi_deg, &phi.phi_rad) {
        (Some(d), _) => parse_grid(d)?.into_iter().map(f64::to_radians).collect(),
        (_, Some(r)) => parse_grid(r)?,
        _ => unreachable!("clap enforces one angle grid"),
    };
    let ls = parse_grid(l)?;
    let mut rows = stability::sweep(&phis, &ls)?;
    if let Some(band) = common.tol {
        for r in &mut rows {
            r.class = Classification::with_band(r.trace, band).class;
        }
    }
    match common.format {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut buf = Vec::new();
            stability::write_sweep_csv(&rows, &mut buf).map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(String::from_utf8(buf).expect("ascii output"))
        }
    }
}

fn report_text(report: &VerificationReport, format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => to_json(report),
        Format::Csv => {
            let mut s = String::from("check,passed,residual,tolerance\n");
            for c in &report.checks {
                s += &format!("{},{},{},{}\n", c.name, c.passed, fmt17(c.residual), fmt17(c.tolerance));
            }
            Ok(s)
        }
    }
}

/// Build and verify a table. The table JSON goes to `--out`
/// (default `table.json`); the report goes to stdout and optionally to
/// `--report`. Exit code 2 if any check fails.
pub fn cmd_build_verify(
    section: u8,
    l: f64,
    phi: Option<f64>,
    report_path: Option<&Path>,
    common: &Common,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, CliError> {
    let table = match section {
        3 => {
            if let Some(p) = phi {
                if (p - std::f64::consts::FRAC_PI_4).abs() > 1e-12 {
                    return Err(CliError::Usage(format!("--section 3 is fixed at 45°, got phi = {p} rad")));
                }
            }
            geometry::build_section3(l)?
        }
        _ => {
            let phi = phi.ok_or_else(|| CliError::Usage("--section 4 needs --phi-deg or --phi-rad".into()))?;
            geometry::build_section4(l, phi)?
        }
    };
    let table_path = common.out.clone().unwrap_or_else(|| PathBuf::from("table.json"));
    fs::write(&table_path, table.to_json()?).map_err(io_err(&table_path))?;

    let report = geometry::verify_table_with(&table, common.tol.unwrap_or(CLOSURE_TOL))?;
    let text = report_text(&report, common.format)?;
    stdout.write_all(text.as_bytes()).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(p) = report_path {
        fs::write(p, &text).map_err(io_err(p))?;
    }
    if report.all_passed() {
        Ok(EXIT_OK)
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        let _ = writeln!(stderr, "verification failed: {}", failed.join(", "));
        Ok(EXIT_VERIFICATION)
    }
}

#[derive(Serialize)]
struct GrowthSummary {
    #[serde(serialize_with = "serialize_f64")]
    max_amplification: f64,
    #[serde(serialize_with = "serialize_f64")]
    mean_log_growth: f64,
    escaped_at: Option<usize>,
    deviations: Vec<Fixed17>,
}

impl From<&GrowthRecord> for GrowthSummary {
    fn from(g: &GrowthRecord) -> Self {
        GrowthSummary {
            max_amplification: g.max_amplification,
            mean_log_growth: g.mean_log_growth,
            escaped_at: g.escaped_at,
            deviations: g.deviations.iter().map(|&d| Fixed17(d)).collect(),
        }
    }
}

#[derive(Serialize)]
struct SimulationOutput {
    #[serde(serialize_with = "serialize_f64")]
    l: f64,
    #[serde(serialize_with = "serialize_f64")]
    phi: f64,
    #[serde(serialize_with = "serialize_f64")]
    eps: f64,
    periods: usize,
    seed: u64,
    linearized: Option<GrowthSummary>,
    nonlinear: Option<GrowthSummary>,
}

/// Growth run on a table file. CSV columns are
/// `period,linearized,nonlinear`, deviation norms after each period; a
/// column is empty when its mode was not run or the orbit had escaped.
pub fn cmd_simulate(
    table_path: &Path,
    eps: f64,
    periods: usize,
    mode: SimMode,
    common: &Common,
    stderr: &mut dyn Write,
) -> Result<String, CliError> {
    let text = fs::read_to_string(table_path).map_err(io_err(table_path))?;
    let table = BilliardTable::from_json(&text)?;
    let report = geometry::verify_table_with(&table, common.tol.unwrap_or(CLOSURE_TOL))?;
    if !report.all_passed() {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(CliError::Verification(format!("table does not verify: {}", failed.join(", "))));
    }

    let run = |m: GrowthMode| geometry::perturbation_growth(&table, eps, periods, m, common.seed);
    let lin = matches!(mode, SimMode::Linearized | SimMode::Both).then(|| run(GrowthMode::Linearized)).transpose()?;
    let non = matches!(mode, SimMode::Nonlinear | SimMode::Both).then(|| run(GrowthMode::Nonlinear)).transpose()?;

    for (name, g) in [("linearized", &lin), ("nonlinear", &non)] {
        if let Some(g) = g {
            let _ = write!(
                stderr,
                "{name}: max amplification {}, mean log-growth {}",
                fmt17(g.max_amplification),
                fmt17(g.mean_log_growth)
            );
            let _ = match g.escaped_at {
                Some(k) => writeln!(stderr, ", escaped during period {}", k + 1),
                None => writeln!(stderr),
            };
        }
    }

    let out = match common.format {
        Format::Json => to_json(&SimulationOutput {
            l: table.params.l,
            phi: table.params.phi,
            eps,
            periods,
            seed: common.seed,
            linearized: lin.as_ref().map(GrowthSummary::from),
            nonlinear: non.as_ref().map(GrowthSummary::from),
        })?,
        Format::Csv => {
            let col = |g: &Option<GrowthRecord>, k: usize| {
                g.as_ref().and_then(|g| g.deviations.get(k)).map(|&d| fmt17(d)).unwrap_or_default()
            };
            let mut s = String::from("period,linearized,nonlinear\n");
            for k in 0..periods {
                s += &format!("{},{},{}\n", k + 1, col(&lin, k), col(&non, k));
            }
            s
        }
    };
    Ok(out)
}
