use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use osl_core::report::{
    flexible_report, onestep_report, write_json, write_samples_csv, write_steps_csv,
    write_tail_csv, RunConfig, DEFAULT_THRESHOLDS,
};
use osl_core::verify::{run_suite, Fault, Suite};
use osl_core::{Error, EtaSpec, MatrixDistribution, Mode};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "osl",
    version,
    about = "Lyapunov exponents, Oseledets angles and skyscraper constructions"
)]
struct Cli {
    /// Worker threads for Monte Carlo trials (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exponents, splitting and angle tail of an i.i.d. matrix product.
    Onestep(OnestepArgs),
    /// Build a cocycle with prescribed exponents and Oseledets law, then verify it.
    Flexible(FlexibleArgs),
    /// Run the self-check battery.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Input spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "OSL_DEFAULT_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct OnestepArgs {
    #[command(flatten)]
    common: Common,
    /// Length of the window used for exponents and the splitting at time 0.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    /// Independent orbits for the angle tail.
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    /// Truncation levels for the angle tail, comma separated.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Lowcost,
    Bounded,
}

#[derive(Args, Debug)]
struct FlexibleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Mean cost target (lowcost mode).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Per-step cost budget (bounded mode).
    #[arg(long)]
    budget: Option<f64>,
    /// Prescribed exponents.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    r1: f64,
    #[arg(long, default_value_t = -0.5, allow_negative_numbers = true)]
    r2: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Fast,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    Svd2,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(value_enum)]
    suite: SuiteArg,
    /// Corrupt a kernel to confirm the battery catches it.
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<FaultArg>,
}

/// A failure already mapped to its exit code.
struct Exit(u8, String);

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        match e {
            Error::UnboundedGap { witness, .. } => Exit(
                EXIT_INFEASIBLE,
                format!("infeasible construction: {witness}"),
            ),
            Error::Io(msg) => Exit(1, format!("i/o failure: {msg}")),
            other => Exit(EXIT_USAGE, other.to_string()),
        }
    }
}

fn read_spec(path: &Path) -> Result<String, Exit> {
    fs::read_to_string(path)
        .map_err(|e| Exit(EXIT_USAGE, format!("cannot read {}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), Exit> {
    fs::create_dir_all(dir)
        .map_err(|e| Exit(EXIT_USAGE, format!("cannot create {}: {e}", dir.display())))
}

fn create(path: PathBuf) -> Result<fs::File, Exit> {
    fs::File::create(&path).map_err(|e| Exit(1, format!("cannot write {}: {e}", path.display())))
}

fn onestep(args: OnestepArgs) -> Result<(), Exit> {
    let nu = MatrixDistribution::from_json(&read_spec(&args.common.spec)?)?;
    let mut config = RunConfig::new("onestep", args.steps, args.trials, args.common.seed);
    config.spec = Some(args.common.spec.display().to_string());
    config.thresholds = args
        .thresholds
        .unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
    let (report, values) = onestep_report(&nu, &config)?;
    let out = &args.common.out;
    prepare_out(out)?;
    write_json(&out.join("onestep.json"), &report)?;
    write_tail_csv(create(out.join("onestep_tail.csv"))?, &report.angle_tail)?;
    write_samples_csv(create(out.join("onestep_samples.csv"))?, &values)?;
    println!(
        "lambda_hat: {} {}",
        report.lambda_hat[0], report.lambda_hat[1]
    );
    println!(
        "E1 angle: {}  E2 angle: {}",
        report.e1_angle, report.e2_angle
    );
    for t in &report.angle_tail.truncated_means {
        println!(
            "E[min(-log sin, {})] = {} ± {}",
            t.threshold, t.mean, t.std_err
        );
    }
    let verdict = serde_json::to_string(&report.angle_tail.verdict).expect("verdict serializes");
    println!("verdict: {}", verdict.trim_matches('"'));
    Ok(())
}

fn flexible(args: FlexibleArgs) -> Result<bool, Exit> {
    let mode = match (args.mode, args.epsilon, args.budget) {
        (ModeArg::Lowcost, Some(epsilon), _) => Mode::Lowcost { epsilon },
        (ModeArg::Bounded, _, Some(budget)) => Mode::Bounded { budget },
        (ModeArg::Lowcost, None, _) => {
            return Err(Exit(EXIT_USAGE, "lowcost mode needs --epsilon".into()))
        }
        (ModeArg::Bounded, _, None) => {
            return Err(Exit(EXIT_USAGE, "bounded mode needs --budget".into()))
        }
    };
    let eta = EtaSpec::from_json(&read_spec(&args.common.spec)?)?;
    let mut config = RunConfig::new("flexible", args.steps, 0, args.common.seed);
    config.spec = Some(args.common.spec.display().to_string());
    config.mode = Some(mode);
    config.r1 = Some(args.r1);
    config.r2 = Some(args.r2);
    let (report, window) = flexible_report(&eta, &config)?;
    let out = &args.common.out;
    prepare_out(out)?;
    write_json(&out.join("flexible.json"), &report)?;
    write_steps_csv(create(out.join("flexible_steps.csv"))?, &window)?;
    let c = &report.construction;
    println!("lambda_hat: {} {}", c.lambda_hat[0], c.lambda_hat[1]);
    println!("cell TV: {}  theta KS: {}", c.cell_tv, c.theta_ks);
    println!("max step cost: {}", c.max_step_cost);
    println!(
        "mean step cost: {} ± {}",
        c.mean_step_cost, c.mean_step_cost_se
    );
    if let Some(a) = &c.agreement {
        println!("Oseledets agreement: {} at depth {}", a.fraction, a.depth);
    }
    for check in &report.checks {
        println!(
            "{}",
            if check.passed {
                format!("ok {}", check.name)
            } else {
                format!("FAILED {}: {}", check.name, check.detail)
            }
        );
    }
    Ok(report.passed())
}

fn verify(args: VerifyArgs) -> bool {
    let suite = match args.suite {
        SuiteArg::Fast => Suite::Fast,
        SuiteArg::All => Suite::All,
    };
    let fault = match args.inject_fault {
        Some(FaultArg::Svd2) => Fault::CorruptSvd2,
        None => Fault::None,
    };
    let outcomes = run_suite(suite, fault);
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} checks, {failed} failed", outcomes.len());
    failed == 0
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("cannot start {jobs} workers: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Onestep(a) => onestep(a).map(|()| true),
        Command::Flexible(a) => flexible(a),
        Command::Verify(a) => Ok(verify(a)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY_FAILED),
        Err(Exit(code, msg)) => {
            eprintln!("osl: {msg}");
            ExitCode::from(code)
        }
    }
}
