use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sir_control::experiment::write_comparison;
use sir_control::{
    load_config, load_weekly_data, run_comparison, run_verification, Alpha1Form, ComparisonOptions,
    EpidemicParams, Error, PolicySpec, SuiteOptions, TreatmentRate,
};

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFICATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "sir-control", version, about = "Optimal treatment control of a stochastic SIR model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the policies and write summary and trajectory CSVs.
    Compare(CompareArgs),
    /// Run the oracle suite and write verification.csv.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// key=value parameter file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weekly CSV whose first row sets I(0) and S(0).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1,-5")]
    gammas: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Extra policy to run besides none, full and low-constant (repeatable).
    #[arg(long = "policy")]
    policies: Vec<PolicySpec>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    expansion_order: Option<u8>,
    #[arg(long, default_value = "appendix")]
    alpha1_form: Alpha1Form,
    #[arg(long, default_value = "constant")]
    treatment_rate: TreatmentRate,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 20_200_607)]
    seed: u64,
    /// Draws per tau node of the Monte-Carlo g oracle.
    #[arg(long, default_value_t = 100_000)]
    g_draws: usize,
    #[arg(long, default_value_t = 10_000)]
    martingale_paths: usize,
    /// I and t nodes of the finite-difference HJB grid, as `NI,NT`.
    #[arg(long, value_parser = parse_grid, default_value = "400,400")]
    hjb_grid: (usize, usize),
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected NI,NT")?;
    let node = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((node(a)?, node(b)?))
}

fn params(config: Option<&Path>) -> Result<EpidemicParams, Error> {
    match config {
        Some(path) => load_config(path),
        None => Ok(EpidemicParams::default()),
    }
}

fn failure(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE })
}

fn compare(args: CompareArgs) -> ExitCode {
    let run = || -> Result<(), Error> {
        let p = params(args.config.as_deref())?;
        let data = args.data.as_deref().map(load_weekly_data).transpose()?;
        let opts = ComparisonOptions {
            gammas: args.gammas,
            n_paths: args.paths,
            seed: args.seed,
            extra_policies: args.policies,
            expansion_order: args.expansion_order,
            alpha1_form: args.alpha1_form,
            treatment_rate: args.treatment_rate,
        };
        let results = run_comparison(&p, data.as_deref(), &opts)?;
        for r in &results {
            println!(
                "gamma={:<4} {:<28} utility {:>13.6e} +- {:.3e}  I(T) {:.4e}",
                r.gamma,
                r.policy.to_string(),
                r.utility.mean,
                r.utility.std_error,
                r.utility.terminal_i_mean
            );
        }
        let written = write_comparison(&args.out, &results)?;
        log::info!("wrote {} files to {}", written.len(), args.out.display());
        Ok(())
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => failure(&e),
    }
}

fn verify(args: VerifyArgs) -> ExitCode {
    let p = match params(args.config.as_deref()) {
        Ok(p) => p,
        Err(e) => return failure(&e),
    };
    let opts = SuiteOptions {
        hjb_grid: args.hjb_grid,
        g_draws: args.g_draws,
        martingale_paths: args.martingale_paths,
        seed: args.seed,
        ..SuiteOptions::default()
    };
    let reports = match run_verification(&p, &args.out, &opts) {
        Ok(r) => r,
        Err(e) => return failure(&e),
    };
    let mut failed = 0;
    for r in &reports {
        println!(
            "{} {:<48} residual {:.3e} (tolerance {:.3e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.check_name,
            r.max_abs_residual,
            r.tolerance
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", reports.len());
        ExitCode::from(EXIT_VERIFICATION)
    } else {
        ExitCode::SUCCESS
    }
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
    match cli.command {
        Command::Compare(args) => compare(args),
        Command::Verify(args) => verify(args),
    }
}
