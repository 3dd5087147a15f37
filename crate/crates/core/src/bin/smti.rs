use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smti::config::ConfigFile;
use smti::harness::{
    format_significant, run_convergence, Backend, Execution, InitialState, SweepConfig,
};
use smti::integrators::{run_trajectory, Discretization, Scheme};
use smti::noise::{sample_path, RngStream};
use smti::validation::{fem_suite, validate_suite, CheckOutcome};
use smti::{Error, Result};

#[derive(Parser)]
#[command(name = "smti", version, about = "Stochastic Magnus-type integrator for parabolic SPDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Strong-error sweep over dyadic time steps; writes CSV (and optionally SVG).
    Converge(ConvergeArgs),
    /// One trajectory; writes the final state as CSV.
    Simulate(SimulateArgs),
    /// Scheme identity, trace diagnostic, noise statistics and OU moment checks.
    Validate(ValidateArgs),
    /// Finite element mass, kernel and eigenvalue checks.
    FemCheck(FemCheckArgs),
}

#[derive(Args)]
struct ProblemArgs {
    /// Noise regularity exponent.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Cosine modes per direction.
    #[arg(long)]
    modes: Option<usize>,
    /// Final time.
    #[arg(long = "T")]
    t_final: Option<f64>,
    /// Reference steps per finest scheme step (power of two).
    #[arg(long)]
    fine_ratio: Option<usize>,
    #[arg(long, env = "SMTI_SEED")]
    seed: Option<u64>,
    /// smti | smti-exp | smti-alt
    #[arg(long)]
    scheme: Option<String>,
    /// spectral | fem
    #[arg(long)]
    backend: Option<String>,
    /// Mesh subdivisions per side for the fem backend.
    #[arg(long)]
    mesh: Option<usize>,
    /// Factor applied to every covariance weight.
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct ConvergeArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    samples: Option<usize>,
    /// Range `lo:hi` of k in dt = T·2^-k.
    #[arg(long)]
    dt_halvings: Option<String>,
    /// Worker threads for the sample loop.
    #[arg(long)]
    threads: Option<usize>,
    /// Run samples on the calling thread.
    #[arg(long)]
    sequential: bool,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG log-log plot destination.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct SimulateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Scheme steps on [0, T].
    #[arg(long)]
    steps: Option<usize>,
    /// Sample index selecting the noise stream.
    #[arg(long)]
    sample: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, env = "SMTI_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct FemCheckArgs {
    /// Mesh subdivisions per side.
    #[arg(long, default_value_t = 64)]
    nx: usize,
}

const PROBLEM_KEYS: [&str; 10] = [
    "beta",
    "delta",
    "modes",
    "T",
    "fine-ratio",
    "seed",
    "scheme",
    "backend",
    "mesh",
    "noise-scale",
];

fn parse_scheme(s: &str) -> Result<Scheme> {
    match s {
        "smti" => Ok(Scheme::Smti),
        "smti-exp" => Ok(Scheme::SmtiExpForm),
        "smti-alt" => Ok(Scheme::SmtiAlt),
        other => Err(Error::InvalidArgument(format!(
            "unknown scheme {other:?} (expected smti, smti-exp or smti-alt)"
        ))),
    }
}

fn parse_halvings(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidArgument(format!("dt halvings {s:?} must look like lo:hi"));
    match s.split_once(':') {
        Some((a, b)) => Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)),
        None => {
            let k = s.trim().parse().map_err(|_| bad())?;
            Ok((k, k))
        }
    }
}

fn load_config(path: &Option<PathBuf>, extra: &[&str]) -> Result<ConfigFile> {
    let cfg = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let allowed: Vec<&str> = PROBLEM_KEYS.iter().chain(extra).copied().collect();
    cfg.check_keys(&allowed)?;
    Ok(cfg)
}

fn sweep_config(p: &ProblemArgs, file: &ConfigFile) -> Result<SweepConfig> {
    let d = SweepConfig::default();
    let scheme = parse_scheme(&file.resolve(p.scheme.clone(), "scheme", "smti".to_string())?)?;
    let backend = match file.resolve(p.backend.clone(), "backend", "spectral".to_string())?.as_str() {
        "spectral" => Backend::Spectral,
        "fem" => Backend::Fem {
            nx: file.resolve(p.mesh, "mesh", 16)?,
        },
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown backend {other:?} (expected spectral or fem)"
            )))
        }
    };
    Ok(SweepConfig {
        beta: file.resolve(p.beta, "beta", d.beta)?,
        delta: file.resolve(p.delta, "delta", d.delta)?,
        t_final: file.resolve(p.t_final, "T", d.t_final)?,
        fine_ratio: file.resolve(p.fine_ratio, "fine-ratio", d.fine_ratio)?,
        modes: file.resolve(p.modes, "modes", d.modes)?,
        base_seed: file.resolve(p.seed, "seed", d.base_seed)?,
        noise_scale: file.resolve(p.noise_scale, "noise-scale", d.noise_scale)?,
        scheme,
        backend,
        ..d
    })
}

fn write_output(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::InvalidArgument(format!("cannot write stdout: {e}"))),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", path.display())))
}

fn converge(args: ConvergeArgs) -> Result<()> {
    let file = load_config(
        &args.problem.config,
        &["samples", "dt-halvings", "threads", "sequential", "out", "plot"],
    )?;
    let mut cfg = sweep_config(&args.problem, &file)?;
    cfg.samples = file.resolve(args.samples, "samples", cfg.samples)?;
    let halvings = file.resolve(args.dt_halvings, "dt-halvings", "4:9".to_string())?;
    cfg.halvings = parse_halvings(&halvings)?;
    let sequential = args.sequential || file.get::<bool>("sequential")?.unwrap_or(false);
    let threads = match args.threads {
        Some(t) => Some(t),
        None => file.get("threads")?,
    };
    cfg.execution = if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel { threads }
    };
    let out = args.out.or(file.get::<PathBuf>("out")?);
    let plot = args.plot.or(file.get::<PathBuf>("plot")?);

    let report = run_convergence(&cfg)?;
    write_output(&out, &report.to_csv())?;
    if let Some(p) = plot {
        write_file(&p, &report.to_svg())?;
    }
    eprintln!(
        "slope={} fit_residual={}",
        format_significant(report.fitted_slope, 6),
        format_significant(report.fit_residual, 3)
    );
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let file = load_config(&args.problem.config, &["steps", "sample", "out"])?;
    let mut cfg = sweep_config(&args.problem, &file)?;
    let steps: usize = file.resolve(args.steps, "steps", 512)?;
    if !steps.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("steps must be a power of two, got {steps}")));
    }
    let k = steps.trailing_zeros();
    cfg.halvings = (k, k);
    cfg.initial = InitialState::Zero;
    let sample = file.resolve(args.sample, "sample", 0)?;
    let spec = cfg.problem()?;
    let fine = cfg.fine_grid()?;
    let path = sample_path(spec.discretization().basis().modes(), fine, RngStream::new(cfg.base_seed, sample));
    let x = run_trajectory(&spec, &path, cfg.scheme, cfg.fine_ratio)?;

    let mut csv = String::new();
    match spec.discretization() {
        Discretization::Spectral(basis) => {
            csv.push_str("i,j,value\n");
            for (&(i, j), v) in basis.modes().indices().iter().zip(x.values()) {
                csv.push_str(&format!("{i},{j},{}\n", format_significant(*v, 17)));
            }
        }
        Discretization::Fem { op, .. } => {
            csv.push_str("x,y,value\n");
            for (&node, v) in op.dof_nodes().iter().zip(x.values()) {
                let [px, py] = op.mesh().nodes()[node];
                csv.push_str(&format!(
                    "{},{},{}\n",
                    format_significant(px, 17),
                    format_significant(py, 17),
                    format_significant(*v, 17)
                ));
            }
        }
    }
    let out = args.out.or(file.get::<PathBuf>("out")?);
    write_output(&out, &csv)
}

fn report(checks: &[CheckOutcome]) -> Result<()> {
    for c in checks {
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("checks failed: {}", failed.join(","))))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Converge(a) => converge(a),
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => report(&validate_suite(a.seed.unwrap_or(42))?),
        Command::FemCheck(a) => report(&fem_suite(a.nx)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
