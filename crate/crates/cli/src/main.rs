use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dpd::algorithm::Engine;
use dpd::experiments::{
    build_graph, build_problem, run_experiment, write_outputs, ExperimentConfig, Family, GammaChoice, QuadraticConfig,
};
use dpd::weights::{build_weight_matrices, validate_assumption2};
use dpd::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
/// A check ran to completion and failed.
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "dpd", version, about = "Decentralized primal-dual solver and experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment and write metrics, constants and a manifest.
    Run(RunArgs),
    /// Generate a problem instance as JSON.
    Gen(GenArgs),
    /// Check the mixing matrices of a graph.
    ValidateWeights(WeightArgs),
    /// Run an experiment and check the 1/k bounds against oracle constants.
    CheckBounds(RunArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FamilyArg {
    LinearLog,
    CoupledQuadratic,
    CustomFile,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum EngineArg {
    Stacked,
    Decentralized,
}

#[derive(Args, Debug, Clone)]
struct ProblemArgs {
    #[arg(long, value_enum, default_value = "linear-log")]
    family: FamilyArg,
    /// Problem JSON, required with `--family custom-file`.
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Edge list, one `i j` pair per line (1-based).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Variables per node (coupled-quadratic).
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Equality rows (coupled-quadratic).
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Inequality rows (coupled-quadratic).
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Right-hand side of the linear-log constraint.
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Primal step size, or `auto` for the theoretical bound.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, value_enum, default_value = "stacked")]
    engine: EngineArg,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Record per-round message counts (decentralized engine only).
    #[arg(long)]
    audit: bool,
    #[arg(long, default_value_t = 1.0)]
    shrink: f64,
    #[arg(long, default_value_t = 1e-6)]
    ref_tol: f64,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct WeightArgs {
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    shrink: f64,
}

#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::InvalidShrink(_) => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow::anyhow!(msg.into()))
}

fn base_config(args: &ProblemArgs) -> Result<ExperimentConfig, Failure> {
    let family = match args.family {
        FamilyArg::LinearLog => Family::LinearLog,
        FamilyArg::CoupledQuadratic => Family::CoupledQuadratic,
        FamilyArg::CustomFile => Family::CustomFile(
            args.problem
                .clone()
                .ok_or_else(|| config_error("--family custom-file needs --problem <FILE>"))?,
        ),
    };
    if args.d == 0 {
        return Err(config_error("--d must be at least 1"));
    }
    let mut cfg = ExperimentConfig::new(family, args.n, args.seed);
    cfg.graph_file = args.graph.clone();
    cfg.quadratic = QuadraticConfig {
        d: args.d,
        m: args.m,
        p: args.p,
    };
    cfg.linear_log_b = args.b;
    Ok(cfg)
}

fn run_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = base_config(&args.problem)?;
    match args.gamma.as_deref() {
        None => {}
        Some("auto") => cfg.gamma = GammaChoice::Auto,
        Some(s) => {
            let g: f64 = s
                .parse()
                .map_err(|_| config_error(format!("--gamma expects a number or `auto`, got `{s}`")))?;
            cfg.gamma = GammaChoice::Value(g);
        }
    }
    if let Some(rho) = args.rho {
        cfg.rho = rho;
    }
    cfg.max_iter = args.iters;
    cfg.engine = match args.engine {
        EngineArg::Stacked => Engine::Stacked,
        EngineArg::Decentralized => Engine::Decentralized,
    };
    cfg.audit = args.audit;
    cfg.shrink = args.shrink;
    cfg.reference_tol = args.ref_tol;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs, check: bool) -> Result<(), Failure> {
    let cfg = run_config(args)?;
    let res = run_experiment(&cfg)?;
    write_outputs(&res, &args.out)?;
    let last = res.trajectory.records.last();
    println!(
        "{} n={} gamma={:.6e} rho={} iters={} f*={:.9} guarantee={}",
        res.manifest.family,
        res.manifest.n,
        res.params.gamma,
        res.params.rho,
        res.trajectory.records.len(),
        res.reference.f,
        res.constants.theoretical_guarantee
    );
    if let Some(r) = last {
        println!(
            "final: |f(avg)-f*|={:.3e} ineq_avg={:.3e} eq_avg={:.3e} dist_avg={:.3e}",
            (r.f_avg - res.reference.f).abs(),
            r.ineq_max_avg,
            r.eq_norm_avg,
            r.opt_dist_avg.unwrap_or(f64::NAN)
        );
    }
    println!("wrote {}", args.out.display());
    if !check {
        return Ok(());
    }
    for c in &res.bounds.checks {
        println!(
            "{:<20} failures={:<6} worst_ratio={:.4}",
            c.name, c.failures, c.worst_ratio
        );
    }
    for s in &res.bounds.slopes {
        let slope = s.slope.map_or("none".to_string(), |v| format!("{v:.4}"));
        let zero = s.zero_from.map_or(String::new(), |k| format!(" zero_from={k}"));
        println!("slope {:<20} {}{} passed={}", s.name, slope, zero, s.passed);
    }
    if !res.bounds.theoretical_guarantee {
        println!("note: step-size condition not met; bounds are advisory");
    }
    if res.bounds.all_bounds_hold() && res.bounds.slopes.iter().all(|s| s.passed) {
        Ok(())
    } else {
        Err(Failure::Check("rate bounds violated".into()))
    }
}

fn cmd_gen(args: &GenArgs) -> Result<(), Failure> {
    let cfg = base_config(&args.problem)?;
    cfg.validate()?;
    let graph = build_graph(&cfg)?;
    let (problem, note) = build_problem(&cfg, graph)?;
    let file = problem.to_file(cfg.family.name())?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::Runtime)?;
    }
    file.save(&args.out)?;
    println!("{} ({note}) -> {}", cfg.family.name(), args.out.display());
    Ok(())
}

fn cmd_validate_weights(args: &WeightArgs) -> Result<(), Failure> {
    if !(args.shrink > 0.0 && args.shrink <= 1.0) {
        return Err(Error::InvalidShrink(args.shrink).into());
    }
    let graph = match &args.graph {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Runtime)?;
            dpd::graph::Graph::parse_edge_list(&text)?
        }
        None => dpd::graph::Graph::geometric_default(args.n, args.seed)?,
    };
    let wp = build_weight_matrices(&graph, args.shrink)?;
    let report = validate_assumption2(&wp, &graph);
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?
    );
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Check("mixing matrices failed validation".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a, false),
        Command::CheckBounds(a) => cmd_run(a, true),
        Command::Gen(a) => cmd_gen(a),
        Command::ValidateWeights(a) => cmd_validate_weights(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
    }
}
