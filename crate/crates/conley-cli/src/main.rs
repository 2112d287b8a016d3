//! Command line front end: `analyze` drives the box-grid pipeline from a
//! JSON config; `close`, `exponents`, and `shadow` expose the orbit-level
//! tools on CSV/JSON data. Exit codes: 0 success, 2 configuration error,
//! 3 numerical failure, 4 search budget exhausted.

use clap::{Args, Parser, Subcommand};
use conley::closing::{close_to_periodic, weak_shadow_check, ClosingError, PseudoOrbit};
use conley::cocycle::{lyapunov_qr, CocycleError};
use conley::report::{run_analyze, write_artifacts, ReportError, RunConfig};
use conley::systems::{make_system, System, SystemError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "conley",
    version,
    about = "Set-oriented analysis of discrete dynamical systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analysis pipeline from a JSON config and write its artifacts
    Analyze(AnalyzeArgs),
    /// Close a pseudo-orbit (CSV, one row per point) to a periodic orbit
    Close(CloseArgs),
    /// Estimate Lyapunov exponents along a forward orbit by QR iteration
    Exponents(ExponentsArgs),
    /// Search for a true orbit segment that delta-shadows a pseudo-orbit
    Shadow(ShadowArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Report JSON destination (overrides the config; default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Condensation DOT destination (overrides the config)
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Spectra CSV destination (overrides the config)
    #[arg(long)]
    csv: Option<PathBuf>,
    /// RNG seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SystemArgs {
    /// System name (e.g. cat_map, morse_gradient_t1, user_defined)
    #[arg(long)]
    system: String,
    /// System parameters as a JSON object
    #[arg(long)]
    params: Option<String>,
}

#[derive(Args)]
struct CloseArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Pseudo-orbit CSV: one row per point, d columns, header optional
    #[arg(long)]
    input: PathBuf,
    /// Accepted residual d(f^T(x), x) of the closed orbit
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Closing result JSON destination (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExponentsArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Start point, comma separated (e.g. "0.1,0.2")
    #[arg(long)]
    start: String,
    /// Number of orbit steps
    #[arg(long)]
    steps: usize,
    /// Steps discarded before accumulation (default: steps/100)
    #[arg(long)]
    burn_in: Option<usize>,
}

#[derive(Args)]
struct ShadowArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Pseudo-orbit CSV: one row per point, d columns, header optional
    #[arg(long)]
    input: PathBuf,
    /// Shadowing distance bound
    #[arg(long)]
    delta: f64,
    /// Candidate search budget
    #[arg(long, default_value_t = 2000)]
    budget: usize,
    /// Shadow report JSON destination (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<ClosingError> for CliError {
    fn from(e: ClosingError) -> Self {
        let code = match &e {
            ClosingError::TooShort(_) => 2,
            ClosingError::System(_) => 2,
            _ => 3,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<CocycleError> for CliError {
    fn from(e: CocycleError) -> Self {
        CliError {
            code: 3,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Close(args) => cmd_close(args),
        Command::Exponents(args) => cmd_exponents(args),
        Command::Shadow(args) => cmd_shadow(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("invalid config {}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = run_analyze(&cfg)?;
    write_artifacts(
        &report,
        args.out.as_deref(),
        args.dot.as_deref(),
        args.csv.as_deref(),
    )?;
    let json_goes_to_file = args.out.is_some() || cfg.outputs.json.is_some();
    if json_goes_to_file {
        eprintln!(
            "{} classes, {} orbits closed, {} edges",
            report.classes.len(),
            report.orbits.len(),
            report.condensation_edges.len()
        );
    } else {
        print!("{}", conley::report::report_to_json(&report));
    }
    Ok(())
}

fn cmd_close(args: CloseArgs) -> Result<(), CliError> {
    let sys = build_system(&args.system)?;
    let mut points = read_pseudo_orbit_csv(&args.input, sys.dim())?;
    // The last row is the return point of the cycle: identify it with the
    // first row, folding any residual return gap into the jump bound.
    if points.len() >= 2 {
        let first = points[0].clone();
        *points.last_mut().expect("nonempty") = first;
    }
    let po = PseudoOrbit::from_points(&sys, points)?;
    let result = close_to_periodic(&sys, &po, args.tol)?;
    emit_json(&result, args.out.as_deref())
}

fn cmd_exponents(args: ExponentsArgs) -> Result<(), CliError> {
    let sys = build_system(&args.system)?;
    let start = parse_point(&args.start)?;
    let burn_in = args.burn_in.unwrap_or(args.steps / 100);
    let spectrum = lyapunov_qr(&sys, &start, args.steps, burn_in)?;
    emit_json(&spectrum, None)
}

fn cmd_shadow(args: ShadowArgs) -> Result<(), CliError> {
    if !(args.delta > 0.0) {
        return Err(CliError::config("delta must be positive"));
    }
    let sys = build_system(&args.system)?;
    let points = read_pseudo_orbit_csv(&args.input, sys.dim())?;
    let po = PseudoOrbit::from_points(&sys, points)?;
    let report = weak_shadow_check(&sys, &po, args.delta, args.budget)?;
    let found = report.found;
    emit_json(&report, args.out.as_deref())?;
    if found {
        Ok(())
    } else {
        Err(CliError {
            code: 4,
            message: format!(
                "no {}-shadowing segment found within the budget ({} candidates tried); \
                 this bounds the search, not the dynamics",
                args.delta, report.candidates_tried
            ),
        })
    }
}

fn build_system(args: &SystemArgs) -> Result<System, CliError> {
    let params = match &args.params {
        Some(text) => serde_json::from_str(text)
            .map_err(|e| CliError::config(format!("invalid --params JSON: {e}")))?,
        None => serde_json::Value::Null,
    };
    Ok(make_system(&args.system, &params)?)
}

fn parse_point(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| CliError::config(format!("invalid coordinate {:?}", part.trim())))
        })
        .collect()
}

/// One row per point, d columns; a non-numeric first row is a header.
fn read_pseudo_orbit_csv(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::config(format!("{} row {}: {e}", path.display(), row)))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(point) => {
                if point.len() != dim {
                    return Err(CliError::config(format!(
                        "{} row {}: expected {} columns, found {}",
                        path.display(),
                        row,
                        dim,
                        point.len()
                    )));
                }
                points.push(point);
            }
            Err(_) if row == 0 => continue,
            Err(e) => {
                return Err(CliError::config(format!(
                    "{} row {}: {e}",
                    path.display(),
                    row
                )))
            }
        }
    }
    if points.is_empty() {
        return Err(CliError::config(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(points)
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError {
            code: 3,
            message: format!("cannot write {}: {e}", path.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
