use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hjrl_cli::config::ExperimentConfig;
use hjrl_cli::{
    cmd_compare, cmd_properties, cmd_solve_pde, cmd_stage1, cmd_train_rl, init_threads,
};

/// Travel-cost reachability and discounted value learning on the double
/// integrator: PDE solves, tube extraction, fitted-value training, and the
/// operator property suites.
#[derive(Parser)]
#[command(name = "hjrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (missing keys take defaults).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts and the run manifest.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the stationary discounted value PDE on the configured grid.
    SolvePde(CommonArgs),
    /// Travel-cost vs reach-cost solves, tube masks, and the oracle check.
    Stage1(CommonArgs),
    /// Train the sinusoidal value network against TD targets.
    TrainRl(CommonArgs),
    /// Compare a stored PDE field against a trained checkpoint.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Stationary value field written by solve-pde.
        #[arg(long)]
        pde: PathBuf,
        /// Network checkpoint written by train-rl.
        #[arg(long)]
        net: PathBuf,
    },
    /// Run the contraction, monotonicity, consistency, and gradient suites.
    Properties(CommonArgs),
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::SolvePde(args) => {
            let cfg = args.load()?;
            let report = cmd_solve_pde(&cfg, &args.out)?;
            println!(
                "solve-pde: converged={} iterations={} final_delta={:e}",
                report.converged, report.iterations, report.final_delta
            );
            Ok(report.ok())
        }
        Command::Stage1(args) => {
            let cfg = args.load()?;
            let report = cmd_stage1(&cfg, &args.out)?;
            println!(
                "stage1: oracle_disagreements={} out_of_band={} discount_out_of_band={} \
                 interior_nodes={} interior_max_travel={:e}",
                report.oracle_disagreements,
                report.oracle_out_of_band,
                report.discount_out_of_band,
                report.interior_count,
                report.interior_max_travel
            );
            Ok(report.ok())
        }
        Command::TrainRl(args) => {
            let cfg = args.load()?;
            let report = cmd_train_rl(&cfg, &args.out)?;
            println!(
                "train-rl: checkpoint={} final_probe_mse={:e} non_increasing={:.2}",
                report.checkpoint_path.display(),
                report.final_probe_mse,
                report.non_increasing_fraction
            );
            Ok(report.ok())
        }
        Command::Compare { common, pde, net } => {
            let cfg = common.load()?;
            let report = cmd_compare(&cfg, &pde, &net, &common.out)?;
            println!(
                "compare: max_abs={:.6} mean_abs={:.6}",
                report.max_abs, report.mean_abs
            );
            Ok(report.ok())
        }
        Command::Properties(args) => {
            let cfg = args.load()?;
            let report = cmd_properties(&cfg, &args.out)?;
            println!(
                "properties: contraction_violations={} monotonicity_violations={} \
                 consistency_violations={} gradient_violations={}",
                report.contraction_violations,
                report.monotonicity_violations,
                report.consistency_violations,
                report.gradient_violations
            );
            Ok(report.ok())
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
