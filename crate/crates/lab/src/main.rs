use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scl_lab::acceptance::{run_acceptance, ALL};
use scl_lab::convergence::{convergence, Axis};
use scl_lab::io::out_root;
use scl_lab::run::{simulate_limit, simulate_nls, synthesize, verify_identities, LabResult, RunRecord};
use scl_lab::scenario::{Scenario, IDENTITY_CFG};

#[derive(Parser)]
#[command(name = "scl", version, about = "Control synthesis and semiclassical verification runs")]
struct Cli {
    /// Scenario file (key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides SCL_OUT_DIR (default ./runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for randomized checks; overrides the scenario's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize E0 controls for the scenario's target and replay them.
    Synthesize,
    /// Run the limit system under the scenario's forcing.
    SimulateLimit,
    /// Run the NLS at the scenario's hbar under the scenario's forcing.
    SimulateNls,
    /// Check the trigonometric identities and adjoint cancellation.
    VerifyIdentities {
        /// Largest space index n (modes of E_{n+1}).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Sweep one numerical axis and fit log-log slopes.
    Convergence {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; defaults to the scenario's sweeps.<axis>.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Run the acceptance criteria and print one verdict per criterion.
    RunAcceptance {
        /// Subset of criteria ids (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u32>>,
    },
}

fn scenario(cli: &Cli) -> LabResult<Scenario> {
    let s = match &cli.config {
        Some(p) => Scenario::load(p)?,
        None => Scenario::parse(IDENTITY_CFG)?,
    };
    match cli.seed {
        Some(seed) => Ok(s.with("seed", seed.to_string())?),
        None => Ok(s),
    }
}

fn report(rec: &RunRecord, dir: &std::path::Path) -> bool {
    for c in &rec.checks {
        println!("{}", c.line());
    }
    println!("{} -> {}", rec.command, dir.join(format!("{}-{}", rec.scenario, rec.hash)).display());
    rec.pass
}

fn run(cli: &Cli) -> LabResult<bool> {
    let root = out_root(cli.out.as_deref());
    match &cli.command {
        Command::Synthesize => Ok(report(&synthesize(&scenario(cli)?, &root)?, &root)),
        Command::SimulateLimit => Ok(report(&simulate_limit(&scenario(cli)?, &root)?, &root)),
        Command::SimulateNls => Ok(report(&simulate_nls(&scenario(cli)?, &root)?, &root)),
        Command::VerifyIdentities { n } => {
            let s = scenario(cli)?;
            let (rec, table) = verify_identities(&s, &root, n.unwrap_or(s.identities_n), s.seed)?;
            print!("{table}");
            Ok(report(&rec, &root))
        }
        Command::Convergence { axis, values } => {
            let (rec, st) = convergence(&scenario(cli)?, &root, *axis, values.clone())?;
            println!("{:>12} {:<20} {:>14}", st.axis.name(), "metric", "value");
            for r in &st.rows {
                println!("{:>12} {:<20} {:>14.6e}", r.at, r.metric, r.value);
            }
            for (m, s) in &st.slopes {
                println!("slope {m}: {s:.4}");
            }
            Ok(report(&rec, &root))
        }
        Command::RunAcceptance { only } => {
            let seed = cli.seed.unwrap_or(0);
            let ids = only.clone().unwrap_or_else(|| ALL.to_vec());
            let (dir, criteria) = run_acceptance(&root, seed, &ids)?;
            for c in &criteria {
                print!("{}", c.lines());
            }
            println!("run-acceptance -> {}", dir.display());
            Ok(criteria.iter().all(|c| c.pass))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
