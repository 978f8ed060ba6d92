use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hypersde_cli::{run, CliError, Command, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "hypersde",
    version,
    about = "Simulate and certify SDEs with a drift that jumps across a hyperplane"
)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, visible_alias = "model-config")]
    config: PathBuf,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Occupation bandwidth; defaults to sqrt(dt).
    #[arg(long)]
    eps: Option<f64>,
    /// Master seed; takes precedence over HYPERSDE_SEED and the config.
    #[arg(long, env = "HYPERSDE_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    depth: Option<f64>,
    #[arg(long)]
    t_eval: Option<f64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, short)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("hypersde: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<bool, CliError> {
    if let Some(n) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Run(e.to_string()))?;
    }
    let cfg = RunConfig::load(&args.config)?;
    let overrides = Overrides {
        t_end: args.t_end,
        dt: args.dt,
        eps: args.eps,
        seed: args.seed,
        paths: args.paths,
        out: args.out.clone(),
        depth: args.depth,
        t_eval: args.t_eval,
        realizations: args.realizations,
    };
    Ok(run(args.command, cfg, &overrides, args.quiet)?.pass)
}
