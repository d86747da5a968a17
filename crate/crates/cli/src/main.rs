use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sparse_ratio::config::{write_vector, RunConfig};
use sparse_ratio::harness::{run_batch, run_instance, write_summary_csv, write_trials_csv, BatchConfig, TrialStatus};
use sparse_ratio::{instance_io, selfcheck, Error, GenSpec};

const CONFIG_ENV: &str = "SPARSE_RATIO_CONFIG";

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_SOLVER: u8 = 4;

/// Sparse recovery with squared L1/L2 regularization.
#[derive(Debug, Parser)]
#[command(name = "sparse-ratio", version)]
struct Cli {
    /// TOML key-value config file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one instance file; prints a JSON report on stdout.
    Solve {
        /// Instance file written by `gen`.
        instance: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Emit one JSON line per iteration before the report.
        #[arg(long)]
        trace: bool,
        /// Write the solution vector here, one value per line.
        #[arg(long)]
        x_out: Option<PathBuf>,
    },
    /// Run a seeded batch and write trials.csv and summary.csv.
    Bench {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the built-in property checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// robust, cauchy or dct.
    #[arg(long)]
    family: Option<String>,
    /// Scale index for robust and cauchy.
    #[arg(long)]
    i: Option<u32>,
    /// Sparsity for dct.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Coherence for dct.
    #[arg(long = "F")]
    f: Option<f64>,
    /// Dynamic range for dct.
    #[arg(long = "D")]
    d: Option<f64>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Trimmed entry count for the robust loss.
    #[arg(long)]
    outliers: Option<usize>,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Relative step tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha_min: Option<f64>,
    #[arg(long)]
    alpha_max: Option<f64>,
    #[arg(long)]
    shrink: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// pseudoinverse, ridge or user.
    #[arg(long)]
    init: Option<String>,
    /// Ridge parameter.
    #[arg(long)]
    mu: Option<f64>,
    /// Starting point file for `--init user`.
    #[arg(long)]
    x0: Option<PathBuf>,
}

impl ModelArgs {
    fn layer(&self) -> RunConfig {
        RunConfig {
            lambda: self.lambda,
            gamma: self.gamma,
            outliers: self.outliers,
            ..RunConfig::default()
        }
    }
}

impl ProblemArgs {
    fn layer(&self) -> RunConfig {
        RunConfig {
            family: self.family.clone(),
            i: self.i,
            k: self.k,
            f: self.f,
            d: self.d,
            seed: self.seed,
            ..self.model.layer()
        }
    }
}

impl SolverArgs {
    fn layer(&self) -> RunConfig {
        RunConfig {
            tol: self.tol,
            sigma: self.sigma,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            shrink: self.shrink,
            max_iters: self.max_iters,
            init: self.init.clone(),
            mu: self.mu,
            x0: self.x0.clone(),
            ..RunConfig::default()
        }
    }
}

/// Error carrying its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::LineSearchFailure { .. } => EXIT_SOLVER,
            _ => EXIT_INPUT,
        };
        Failure::new(code, e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::new(EXIT_INPUT, e)
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for spec in &cli.set {
        cfg = cfg.merge(RunConfig::from_override(spec)?);
    }
    Ok(cfg)
}

fn require_path(path: Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    path.ok_or_else(|| Failure::new(EXIT_USAGE, anyhow::anyhow!("no {what} given")))
}

fn cmd_gen(cfg: RunConfig) -> Result<(), Failure> {
    cfg.check_rng()?;
    let family = cfg.family()?;
    let out = require_path(cfg.out.clone(), "output path (--out)")?;
    let spec = GenSpec::new(family, cfg.seed.unwrap_or(0));
    let mut inst = spec.generate()?;
    cfg.overrides().apply(&mut inst.model)?;
    instance_io::save(&out, &inst).with_context(|| format!("writing {}", out.display()))?;
    log::info!("wrote {}", out.display());
    let line = json!({
        "family": family.name(),
        "params": family.params_label(),
        "seed": spec.seed,
        "m": inst.model.nrows(),
        "n": inst.model.ncols(),
        "lambda": inst.model.lambda,
        "path": out,
    });
    println!("{line}");
    Ok(())
}

fn cmd_solve(cfg: RunConfig) -> Result<(), Failure> {
    cfg.check_rng()?;
    let path = require_path(cfg.instance.clone(), "instance file")?;
    let mut inst = instance_io::load(&path).with_context(|| format!("reading {}", path.display()))?;
    cfg.overrides().apply(&mut inst.model)?;

    let mut batch = BatchConfig::protocol(inst.spec.family);
    batch.solver = cfg.solver(batch.solver)?;
    batch.init = cfg.init_strategy()?;
    batch.trials = 1;
    batch.root_seed = inst.spec.seed;

    let record = run_instance(&inst, &batch);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if cfg.trace.unwrap_or(false) {
        if let Some(trace) = &record.trace {
            writeln!(out, "{}", json!({"type": "iter", "k": 0, "f": trace.initial_f_value}))
                .context("writing trace")?;
            for (k, it) in trace.iterations.iter().enumerate() {
                let line = json!({
                    "type": "iter",
                    "k": k + 1,
                    "f": it.f_value,
                    "alpha": it.alpha,
                    "step": it.step_norm,
                    "trials": it.line_search_trials,
                });
                writeln!(out, "{line}").context("writing trace")?;
            }
        }
    }
    let mut report = serde_json::to_value(&record.report).context("encoding report")?;
    report["type"] = json!("report");
    report["protocol"] = json!(batch.protocol_label());
    writeln!(out, "{report}").context("writing report")?;

    if let (Some(x_path), Some(x)) = (&cfg.x_out, &record.x_final) {
        write_vector(x_path, x)?;
    }
    match record.report.status {
        TrialStatus::Ok => Ok(()),
        TrialStatus::InitFailed => Err(Failure::new(
            EXIT_INPUT,
            anyhow::anyhow!(record.report.error.unwrap_or_default()),
        )),
        TrialStatus::SolverFailed => Err(Failure::new(
            EXIT_SOLVER,
            anyhow::anyhow!(record.report.error.unwrap_or_default()),
        )),
    }
}

fn create(dir: &Path, name: &str) -> Result<File, Failure> {
    let path = dir.join(name);
    File::create(&path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::from)
}

fn cmd_bench(cfg: RunConfig) -> Result<(), Failure> {
    let batch = cfg.batch()?;
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    log::info!(
        "{} {} trials={} seed={} jobs={} fingerprint={}",
        batch.family.name(),
        batch.family.params_label(),
        batch.trials,
        batch.root_seed,
        batch.jobs,
        batch.fingerprint()
    );
    let result = run_batch(&batch)?;
    let reports: Vec<_> = result.trials.iter().map(|t| t.report.clone()).collect();
    write_trials_csv(create(&dir, "trials.csv")?, &reports)?;
    write_summary_csv(create(&dir, "summary.csv")?, std::slice::from_ref(&result.summary))?;
    write_summary_csv(std::io::stdout().lock(), std::slice::from_ref(&result.summary))?;
    for r in reports.iter().filter(|r| r.status != TrialStatus::Ok) {
        log::warn!("seed {} {:?}: {}", r.seed, r.status, r.error.as_deref().unwrap_or(""));
    }
    if reports.iter().any(|r| r.status == TrialStatus::SolverFailed) {
        return Err(Failure::new(EXIT_SOLVER, anyhow::anyhow!("{} trial(s) failed", result.summary.failed)));
    }
    if result.summary.failed > 0 {
        return Err(Failure::new(EXIT_INPUT, anyhow::anyhow!("{} trial(s) failed", result.summary.failed)));
    }
    Ok(())
}

fn cmd_verify(seed: u64) -> Result<(), Failure> {
    let checks = selfcheck::run_all(seed);
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict}  {:width$}  {}", c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::new(EXIT_SOLVER, anyhow::anyhow!("{failed} check(s) failed")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen { problem, out } => cmd_gen(cfg.merge(RunConfig { out, ..problem.layer() })),
        Command::Solve {
            instance,
            model,
            solver,
            trace,
            x_out,
        } => {
            let flags = RunConfig {
                instance,
                x_out,
                trace: trace.then_some(true),
                ..model.layer().merge(solver.layer())
            };
            cmd_solve(cfg.merge(flags))
        }
        Command::Bench {
            problem,
            solver,
            trials,
            jobs,
            out_dir,
        } => {
            let flags = RunConfig {
                trials,
                jobs,
                out_dir,
                ..problem.layer().merge(solver.layer())
            };
            cmd_bench(cfg.merge(flags))
        }
        Command::Verify { seed } => cmd_verify(seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
