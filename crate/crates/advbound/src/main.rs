use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advbound::cli::{
    self, cmd_basis_dump, cmd_oa_check, cmd_scaling, cmd_verify, QRule, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "advbound",
    version,
    about = "Adversary-matrix construction and certification for k-orthogonal-array problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an instance and run the full verification suite; prints a JSON report.
    Verify(VerifyArgs),
    /// Sweep instance sizes and write a CSV of certified and measured quantities.
    Scaling(ScalingArgs),
    /// Check that a plain-text tuple file is an orthogonal array.
    OaCheck(OaCheckArgs),
    /// Dump the deterministic eigenbasis for an alphabet size.
    BasisDump(BasisDumpArgs),
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    q: usize,
    /// Array family: ksum, distinctness, or file.
    #[arg(long, default_value = "ksum")]
    array: String,
    /// k-sum target in [0, q).
    #[arg(long, default_value_t = 0)]
    t: u32,
    /// dense, structured, or auto.
    #[arg(long, default_value = "auto")]
    mode: String,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Tuple file for array=file (one space-separated tuple per line).
    #[arg(long)]
    array_file: Option<PathBuf>,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long)]
    k: usize,
    /// Comma-separated list of n values, e.g. 2,3,4.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Alphabet rule: "nk" for q = n^k, or "fixed" with --q.
    #[arg(long, default_value = "nk")]
    q_rule: String,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct OaCheckArgs {
    #[arg(long)]
    file: PathBuf,
    #[arg(long)]
    q: usize,
    #[arg(long)]
    k: usize,
}

#[derive(Args)]
struct BasisDumpArgs {
    #[arg(long)]
    q: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Verify(args) => run_verify(args),
        Command::Scaling(args) => run_scaling(args),
        Command::OaCheck(args) => cmd_oa_check(&args.file, args.q, args.k),
        Command::BasisDump(args) => match cmd_basis_dump(args.q, args.out.as_deref()) {
            Ok(()) => cli::EXIT_PASS,
            Err(e) => {
                eprintln!("error: {e}");
                cli::exit_code_for_error(&e)
            }
        },
    };
    ExitCode::from(code as u8)
}

fn run_verify(args: VerifyArgs) -> i32 {
    let config = RunConfig {
        n: args.n,
        k: args.k,
        q: args.q,
        array: args.array,
        t: args.t,
        mode: args.mode,
        tol: args.tol,
        max_iter: args.max_iter,
        seed: args.seed,
        array_file: args.array_file.map(|p| p.display().to_string()),
    };
    match cmd_verify(&config) {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            report.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code_for_error(&e)
        }
    }
}

fn run_scaling(args: ScalingArgs) -> i32 {
    let rule = match args.q_rule.as_str() {
        "nk" => QRule::Nk,
        "fixed" => match args.q {
            Some(q) => QRule::Fixed(q),
            None => {
                eprintln!("error: --q-rule fixed needs --q");
                return cli::EXIT_INVALID_CONFIG;
            }
        },
        other => {
            eprintln!("error: unknown q rule '{other}'");
            return cli::EXIT_INVALID_CONFIG;
        }
    };
    let opts = advbound::spectral::SpectralOpts {
        tol: args.tol,
        max_iter: args.max_iter,
        seed: args.seed,
    };
    match cmd_scaling(args.k, &args.n, rule, &args.out, &opts) {
        Ok(()) => cli::EXIT_PASS,
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code_for_error(&e)
        }
    }
}
