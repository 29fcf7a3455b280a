use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nilflow::io::{load_bracket, write_json};
use nilflow::soliton::SOLITON_TOL;
use nilflow_cli::commands;
use nilflow_cli::experiment::{self, Check, ExperimentConfig, FlowKind, Outputs, Tolerances};
use nilflow_cli::source::{BracketSource, Generator};
use nilflow_cli::sweep::{self, SweepConfig, FINGERPRINT_TOL};
use nilflow_cli::{CliError, CliResult};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "nilflow",
    version,
    about = "Ricci flow on nilmanifolds via the bracket flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check skew-symmetry, the Jacobi identity and nilpotency.
    Validate {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = commands::VALIDATE_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ricci operator, spectrum, scalar curvature and ‖Riem‖ as JSON.
    Curvature {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        rescale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate a bracket flow and run checks.
    Flow(FlowArgs),
    /// Nilsoliton certificate; exit 1 if the bracket is not a soliton.
    Soliton {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = SOLITON_TOL)]
        tol: f64,
        #[arg(long)]
        rescale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare bracket flow, h(t) and the inner-product Ricci flow.
    Equivalence {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        kind: KindArgs,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        #[command(flatten)]
        tolerances: TolArgs,
        #[arg(long)]
        rescale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run many seeded experiments concurrently.
    Sweep(SweepArgs),
    /// Polynomial metric field in exponential coordinates.
    MetricField {
        #[command(flatten)]
        source: SourceArgs,
        /// Second bracket file; reports the metric distance to it.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Highest derivative order in the distance.
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// Bracket JSON file.
    #[arg(long, value_name = "PATH")]
    bracket: Option<PathBuf>,
    /// Bracket JSON given on the command line.
    #[arg(long, value_name = "JSON")]
    inline: Option<String>,
    /// heisenberg[:c], filiform-model:c1,c2,…, filiform:n, two-step:n[:m], nilpotent:n
    #[arg(long, value_name = "FAMILY")]
    generate: Option<Generator>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SourceArgs {
    fn source(self) -> CliResult<BracketSource> {
        BracketSource::from_options(self.bracket, self.inline, self.generate, self.seed)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindName {
    Unnormalized,
    Normalized,
    Constant,
}

#[derive(Args)]
struct KindArgs {
    #[arg(long, value_enum, default_value = "unnormalized")]
    kind: KindName,
    /// Rate for `--kind constant`.
    #[arg(long)]
    rho: Option<f64>,
}

impl KindArgs {
    fn kind(&self) -> CliResult<FlowKind> {
        match (self.kind, self.rho) {
            (KindName::Constant, Some(rho)) if rho.is_finite() => Ok(FlowKind::Constant { rho }),
            (KindName::Constant, _) => Err(CliError::Config(
                "--kind constant needs a finite --rho".into(),
            )),
            (_, Some(_)) => Err(CliError::Config(
                "--rho only applies to --kind constant".into(),
            )),
            (KindName::Unnormalized, None) => Ok(FlowKind::Unnormalized),
            (KindName::Normalized, None) => Ok(FlowKind::Normalized),
        }
    }
}

#[derive(Args)]
struct TolArgs {
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    /// Largest step, which is also the largest sample spacing.
    #[arg(long)]
    h_max: Option<f64>,
}

impl TolArgs {
    fn tolerances(&self) -> Tolerances {
        let d = Tolerances::default();
        Tolerances {
            rtol: self.rtol.unwrap_or(d.rtol),
            atol: self.atol.unwrap_or(d.atol),
            h_max: self.h_max.unwrap_or(d.h_max),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckName {
    Identities,
    Type3,
    Equivalence,
    Convergence,
}

impl From<CheckName> for Check {
    fn from(c: CheckName) -> Self {
        match c {
            CheckName::Identities => Check::Identities,
            CheckName::Type3 => Check::Type3,
            CheckName::Equivalence => Check::Equivalence,
            CheckName::Convergence => Check::Convergence,
        }
    }
}

#[derive(Args)]
struct FlowArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    kind: KindArgs,
    #[arg(long, default_value_t = 10.0)]
    t_max: f64,
    #[command(flatten)]
    tolerances: TolArgs,
    /// Scale the initial bracket onto ‖μ‖ = 2.
    #[arg(long)]
    rescale: bool,
    /// Integrate h(t) and store it with the snapshots.
    #[arg(long)]
    with_h: bool,
    /// Integrate the inner-product flow at the sample times.
    #[arg(long)]
    with_ip_flow: bool,
    /// Comma-separated checks to run.
    #[arg(long, value_enum, value_delimiter = ',')]
    check: Vec<CheckName>,
    /// Trace CSV; snapshots go next to it as `<trace>.brackets.json`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    certificate: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Dump the metric field of the final bracket.
    #[arg(long, value_name = "PATH")]
    metric_field: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_name = "FAMILY")]
    generate: Generator,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    kind: KindArgs,
    #[arg(long, default_value_t = 10.0)]
    t_max: f64,
    #[command(flatten)]
    tolerances: TolArgs,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Directory for per-item traces and results.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value_t = FINGERPRINT_TOL)]
    fingerprint_tol: f64,
}

/// Prints `value` as JSON and optionally writes it to `out`.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    if let Some(path) = out {
        experiment::check_writable(path)?;
        write_json(path, value)?;
    }
    print_json(value)
}

/// Pretty JSON on stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    let written = serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::from)
        .and_then(|()| writeln!(out));
    match written {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn verdict(ok: bool, what: &str) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::CheckFailed(what.into()))
    }
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Validate { source, tol, out } => {
            let v = commands::validate(&source.source()?.load()?, tol);
            emit(&v, out.as_deref())?;
            verdict(v.valid, "bracket is not a nilpotent Lie bracket")
        }
        Command::Curvature {
            source,
            rescale,
            out,
        } => {
            let b = experiment::initial_bracket(&source.source()?, rescale)?;
            emit(&commands::curvature(&b), out.as_deref())
        }
        Command::Flow(args) => {
            let config = ExperimentConfig {
                source: args.source.source()?,
                kind: args.kind.kind()?,
                t_max: args.t_max,
                tolerances: args.tolerances.tolerances(),
                rescale: args.rescale,
                with_h: args.with_h,
                with_ip_flow: args.with_ip_flow,
                checks: args.check.into_iter().map(Check::from).collect(),
                outputs: Outputs {
                    trace: args.trace,
                    certificate: args.certificate,
                    summary: args.summary,
                    metric_field: args.metric_field,
                },
            };
            let summary = experiment::run(&config)?;
            print_json(&summary)?;
            let failed: Vec<&str> = summary
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name)
                .collect();
            verdict(failed.is_empty(), &failed.join(", "))
        }
        Command::Soliton {
            source,
            tol,
            rescale,
            out,
        } => {
            let b = experiment::initial_bracket(&source.source()?, rescale)?;
            let rep = commands::soliton(&b, tol)?;
            emit(&rep, out.as_deref())?;
            verdict(rep.certificate.is_soliton, "bracket is not a nilsoliton")
        }
        Command::Equivalence {
            source,
            kind,
            t_max,
            tolerances,
            rescale,
            out,
        } => {
            let tolerances = tolerances.tolerances();
            tolerances.validate()?;
            if !(t_max > 0.0 && t_max.is_finite()) {
                return Err(CliError::Config(format!(
                    "--t-max must be positive and finite, got {t_max}"
                )));
            }
            let b = experiment::initial_bracket(&source.source()?, rescale)?;
            let rep = commands::equivalence(&b, kind.kind()?, t_max, &tolerances)?;
            emit(&rep, out.as_deref())?;
            verdict(rep.passed, "flows disagree")
        }
        Command::Sweep(args) => {
            let config = SweepConfig {
                generator: args.generate,
                count: args.count,
                seed: args.seed,
                kind: args.kind.kind()?,
                t_max: args.t_max,
                tolerances: args.tolerances.tolerances(),
                jobs: args.jobs,
                out_dir: args.out_dir,
                fingerprint_tol: args.fingerprint_tol,
            };
            if let Some(p) = &args.summary {
                experiment::check_writable(p)?;
            }
            let summary = sweep::sweep(&config)?;
            emit(&summary, args.summary.as_deref())?;
            let failing = summary
                .items
                .iter()
                .filter(|i| i.status != sweep::ItemStatus::Ok)
                .count();
            let msg = format!("{failing} of {} items did not pass", summary.count);
            match summary.exit_code() {
                0 => Ok(()),
                1 => Err(CliError::CheckFailed(msg)),
                2 => Err(CliError::Config(msg)),
                _ => Err(CliError::Numerical(msg)),
            }
        }
        Command::MetricField {
            source,
            compare,
            radius,
            order,
            out,
        } => {
            let b = source.source()?.load()?;
            let other = compare
                .map(|p| {
                    load_bracket(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
                })
                .transpose()?;
            emit(
                &commands::metric_field(&b, other.as_ref(), radius, order)?,
                out.as_deref(),
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NILFLOW_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nilflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
