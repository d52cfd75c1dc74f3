//! `specsurg` command-line front end.
//!
//! Exit codes: 0 success, 1 checks failed, 2 invalid input, 3 plan does not
//! fit the spectrum, 4 unknown fixture, 5 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use specsurg::fixtures::{self, FixtureError};
use specsurg::io::{parse_grid, to_canonical_string};
use specsurg::problem::ProblemSpec;
use specsurg::settings::Settings;
use specsurg::spectral::{self, SpectralError};
use specsurg::surgery::{self, SurgeryError};

#[derive(Parser)]
#[command(name = "specsurg", version, about = "Bound-state analysis and surgery for half-line matrix Schrodinger operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Locate bound states and compute their normalization data.
    Analyze {
        problem: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Apply a surgery plan and write the perturbed problem.
    Surgery {
        problem: PathBuf,
        /// Plan file: one step, an array of steps, or {"steps": [...]}.
        #[arg(long)]
        plan: PathBuf,
        /// Also write the perturbed problem (re-readable by `analyze`).
        #[arg(long)]
        problem_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the invariant battery on a problem.
    Verify {
        problem: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a worked-example fixture, a tag ("surgery", "decay", ...) or "all".
    Reproduce {
        target: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Momentum grid min:max:count.
    #[arg(long, default_value = "0.1:5:50")]
    k_grid: String,
    /// Position grid min:max:count.
    #[arg(long, default_value = "0:10:101")]
    x_grid: String,
    /// Output file (standard output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Override a numerical setting, e.g. --tol rank_tol=1e-9 (repeatable).
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    tol: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }
}

type CliResult<T> = Result<T, Failure>;

impl From<SpectralError> for Failure {
    fn from(e: SpectralError) -> Self {
        Failure { code: 5, msg: e.to_string() }
    }
}

impl From<SurgeryError> for Failure {
    fn from(e: SurgeryError) -> Self {
        let msg = e.to_string();
        let code = match e.root() {
            SurgeryError::Problem(_) | SurgeryError::Plan { .. } => 2,
            SurgeryError::NoSuchState(_)
            | SurgeryError::Collision { .. }
            | SurgeryError::InvalidSubprojection(_)
            | SurgeryError::ProjectionOverlap(_)
            | SurgeryError::InvalidNormalization(_)
            | SurgeryError::InvalidRank { .. } => 3,
            _ => 5,
        };
        Failure { code, msg }
    }
}

fn settings(tols: &[String]) -> CliResult<Settings> {
    let mut s = Settings::default();
    for t in tols {
        let (name, value) = t
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("--tol expects NAME=VALUE, got '{t}'")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Failure::input(format!("--tol {name}: '{value}' is not a number")))?;
        s.set(name.trim(), value).map_err(Failure::input)?;
    }
    Ok(s)
}

fn load_problem(path: &Path, common: &Common) -> CliResult<ProblemSpec> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let spec = ProblemSpec::from_json_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(spec.with_settings(settings(&common.tol)?))
}

fn grid(s: &str, flag: &str) -> CliResult<Vec<f64>> {
    parse_grid(s).map_err(|e| Failure::input(format!("{flag}: {e}")))
}

fn emit(out: Option<&Path>, body: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, body).map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn analyze(problem: &Path, common: &Common) -> CliResult<u8> {
    let spec = load_problem(problem, common)?;
    let ks = grid(&common.k_grid, "--k-grid")?;
    let report = spectral::assemble_spectrum(&spec)?;
    let body = match common.format.unwrap_or(Format::Json) {
        Format::Csv => report.to_csv(&ks),
        Format::Json => to_canonical_string(&report.to_json(&ks)),
        Format::Text => {
            let mut s = format!("{} bound state(s)\n", report.count());
            for st in &report.states {
                s.push_str(&format!("kappa = {:.10}  multiplicity = {}\n", st.kappa, st.multiplicity));
            }
            for w in &report.warnings {
                s.push_str(&format!("warning: {w}\n"));
            }
            s
        }
    };
    emit(common.out.as_deref(), &body)?;
    Ok(0)
}

fn run_surgery(problem: &Path, plan: &Path, problem_out: Option<&Path>, common: &Common) -> CliResult<u8> {
    let spec = load_problem(problem, common)?;
    let text = fs::read_to_string(plan).map_err(|e| Failure::input(format!("{}: {e}", plan.display())))?;
    let plans = surgery::parse_plans(&text).map_err(|e| Failure::input(format!("{}: {e}", plan.display())))?;
    let (xs, ks) = (grid(&common.x_grid, "--x-grid")?, grid(&common.k_grid, "--k-grid")?);
    let result = surgery::compose(&plans, &spec)?;
    // The perturbed potential has no closed-form description; it is
    // tabulated densely enough for re-analysis.
    let table: Vec<f64> = (0..=3000).map(|i| i as f64 * 0.01).collect();
    let perturbed = result.perturbed_spec.to_json(&table);
    if let Some(p) = problem_out {
        emit(Some(p), &to_canonical_string(&perturbed))?;
    }
    let body = match common.format.unwrap_or(Format::Json) {
        Format::Csv => result.potential_csv(&xs),
        Format::Json | Format::Text => {
            let mut v = result.to_json(&xs, &ks)?;
            if let Value::Object(m) = &mut v {
                m.insert("perturbed_problem".into(), perturbed);
            }
            to_canonical_string(&v)
        }
    };
    emit(common.out.as_deref(), &body)?;
    Ok(0)
}

fn verify(problem: &Path, common: &Common) -> CliResult<u8> {
    let spec = load_problem(problem, common)?;
    let ks = grid(&common.k_grid, "--k-grid")?;
    let ks: Vec<f64> = if ks.len() > 20 {
        (0..20).map(|i| ks[i * (ks.len() - 1) / 19]).collect()
    } else {
        ks
    };
    let (checks, notes) = fixtures::invariant_suite(&spec, &ks).map_err(|msg| Failure { code: 5, msg })?;
    let passed = checks.iter().all(|c| c.passed);
    let body = match common.format.unwrap_or(Format::Text) {
        Format::Json | Format::Csv => to_canonical_string(&json!({"passed": passed, "checks": checks, "notes": notes})),
        Format::Text => {
            let mut s = String::new();
            for c in &checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                s.push_str(&format!("{status}  {}  (residual {:.3e}, tol {:.1e})\n", c.label, c.residual, c.tol));
            }
            for n in &notes {
                s.push_str(&format!("note: {n}\n"));
            }
            s
        }
    };
    emit(common.out.as_deref(), &body)?;
    Ok(if passed { 0 } else { 1 })
}

fn reproduce(target: &str, common: &Common) -> CliResult<u8> {
    let summary = if target == "all" {
        fixtures::run_all(None)
    } else if fixtures::fixture_ids().contains(&target) {
        let report = fixtures::run_fixture(target).map_err(|e| Failure { code: 4, msg: e.to_string() })?;
        fixtures::Summary { reports: vec![report] }
    } else {
        let s = fixtures::run_all(Some(target));
        if s.reports.is_empty() {
            let e = FixtureError::Unknown {
                id: target.to_string(),
                known: fixtures::fixture_ids().iter().map(|s| s.to_string()).collect(),
            };
            return Err(Failure { code: 4, msg: e.to_string() });
        }
        s
    };
    let body = match common.format.unwrap_or(Format::Text) {
        Format::Json | Format::Csv => to_canonical_string(&summary.to_json()),
        Format::Text => summary.to_text(),
    };
    emit(common.out.as_deref(), &body)?;
    Ok(if summary.all_passed() { 0 } else { 1 })
}

fn configure_threads() {
    if let Some(n) = std::env::var("SPECSURG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match &cli.command {
        Command::Analyze { problem, common } => analyze(problem, common),
        Command::Surgery {
            problem,
            plan,
            problem_out,
            common,
        } => run_surgery(problem, plan, problem_out.as_deref(), common),
        Command::Verify { problem, common } => verify(problem, common),
        Command::Reproduce { target, common } => reproduce(target, common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
