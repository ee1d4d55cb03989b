use clap::{Parser, Subcommand};
use cocycle_lab::config::ExperimentConfig;
use cocycle_lab::runner::{run, Command};
use std::path::PathBuf;
use std::process::ExitCode;

/// Numerical laboratory for linear cocycles over hyperbolic toral
/// automorphisms.
#[derive(Parser)]
#[command(name = "cocycle-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and CSV data.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// RNG seed; identical seeds reproduce identical scalars.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Orbit Lyapunov exponents with a convergence history CSV.
    Exponents(CommonArgs),
    /// Eigenvalue exponents over all periodic orbits up to max_period.
    PeriodicExponents(CommonArgs),
    /// Quasiconformal distortion growth table and certificate.
    Distortion(CommonArgs),
    /// Holonomy axioms: composition, equivariance, tail certificates.
    HolonomyCheck(CommonArgs),
    /// Invariant field of unordered line pairs, with monodromy.
    InvariantPairs(CommonArgs),
    /// Invariant conformal structure from windowed pullbacks.
    InvariantStructure(CommonArgs),
    /// Uniformly negative level of a subadditive family on a grid.
    SubaddCert(CommonArgs),
    /// Log-log growth fit of norms and distortion.
    GrowthFit(CommonArgs),
    /// Full battery for the rotation-diagonal example family.
    Example46(CommonArgs),
}

impl CliCommand {
    fn split(self) -> (Command, CommonArgs) {
        match self {
            CliCommand::Exponents(a) => (Command::Exponents, a),
            CliCommand::PeriodicExponents(a) => (Command::PeriodicExponents, a),
            CliCommand::Distortion(a) => (Command::Distortion, a),
            CliCommand::HolonomyCheck(a) => (Command::HolonomyCheck, a),
            CliCommand::InvariantPairs(a) => (Command::InvariantPairs, a),
            CliCommand::InvariantStructure(a) => (Command::InvariantStructure, a),
            CliCommand::SubaddCert(a) => (Command::SubaddCert, a),
            CliCommand::GrowthFit(a) => (Command::GrowthFit, a),
            CliCommand::Example46(a) => (Command::Example46, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = cli.command.split();
    if let Some(threads) = args.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let text = match std::fs::read_to_string(&args.config) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", args.config.display());
            return ExitCode::from(1);
        }
    };
    let cfg = match ExperimentConfig::parse_with_env(&text) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: ConfigParse: {e}");
            return ExitCode::from(1);
        }
    };
    match run(command, &cfg, &args.out, args.seed) {
        Ok(report) => {
            match report.write(&args.out) {
                Ok(path) => println!("{}", path.display()),
                Err(e) => {
                    eprintln!("error: Io: {e}");
                    return ExitCode::from(1);
                }
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            let payload = serde_json::json!({
                "error": { "kind": err.machine_kind(), "detail": err.to_string() }
            });
            let _ = std::fs::create_dir_all(&args.out);
            let _ = std::fs::write(
                args.out.join("report.json"),
                serde_json::to_string_pretty(&payload).expect("error payload") + "\n",
            );
            eprintln!("error: {}: {err}", err.machine_kind());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
